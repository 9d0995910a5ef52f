import os

from hypothesis import HealthCheck, settings

from cascadelab.bb84 import SessionConfig
from cascadelab.harness import simulate_session

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def small_sessions(count, *, raw_len, max_n, rhos=(0.0, 0.4, 0.8), k1_choices=(3, 4, 5),
                   start_seed=0, passes=3):
    """Sessions forced through Cascade (explicit k1, detection ignored) with n <= max_n."""
    runs = []
    seed = start_seed
    while len(runs) < count:
        rho = rhos[seed % len(rhos)]
        k1 = k1_choices[(seed // len(rhos)) % len(k1_choices)]
        cfg = SessionConfig(raw_len=raw_len, rho=rho, seed=seed, k1=k1, passes=passes)
        seed += 1
        run = simulate_session(cfg, ignore_detection=True)
        if run.transcript is None or run.outcome.n_reconciled > max_n:
            continue
        runs.append(run)
    return runs


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
