"""End-to-end sessions, seed sweeps, experiments and fixture replay."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .bb84 import (
    ConfigError,
    EmptySample,
    ExchangeSummary,
    SessionConfig,
    estimate_qber,
    exchange_summary,
    generate_raw,
    sift,
    transmit,
)
from .bitcore import BitKey, Permutation, seeded_permutation
from .cascade import Transcript, block_schedule, run_cascade
from .intercept import EveKnowledge, eve_sift, plan_interception, project_knowledge
from .leakage import cascade_bound, secure_after_partial
from .sieve import SieveResult, oracle_search_space, run_sieve

PROFILES: dict[str, dict] = {
    # reference parameters; reconciled keys come out near 100 bits
    "standard": {"raw_len": 317, "basis_bias_delta": 0.5, "eve_basis_bias_delta": 0.5,
               "detector_noise": 0.0, "sample_rate": 0.37, "qber_threshold": 0.11, "passes": 3},
    # Same protocol, scaled so that the sieve runs on a desk (n of roughly 24-32 bits).
    "desk": {"raw_len": 96, "basis_bias_delta": 0.5, "eve_basis_bias_delta": 0.5,
             "detector_noise": 0.0, "sample_rate": 0.37, "qber_threshold": 0.11, "passes": 3},
}
PROFILE_TARGET_N = {"standard": (100, 100), "desk": (24, 32)}


# -- configuration ------------------------------------------------------------

def _coerce(name: str, text: str):
    kinds = {f.name: f.type for f in fields(SessionConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    kind = str(kinds[name])
    text = text.strip()
    try:
        if name == "pass_seeds":
            return tuple(int(s) for s in text.replace(",", " ").split()) if text else None
        if kind.startswith("int | None"):
            return None if text.lower() in ("", "none") else int(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc
    raise ConfigError(f"cannot parse config key {name!r}")


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; keys are SessionConfig fields."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = _coerce(key, value)
    return values


def load_config(path: str | Path | None = None, profile: str = "standard", **overrides) -> SessionConfig:
    """Profile defaults, then the config file, then explicit overrides (``None`` skipped)."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    values = dict(PROFILES[profile])
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SessionConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# -- single session -------------------------------------------------------------

@dataclass
class SessionOutcome:
    seed: int
    rho: float
    status: str
    p_est: float | None = None
    detected: bool = False
    n_reconciled: int | None = None
    eve_fraction: float | None = None
    k1: int | None = None
    leaked_count: int | None = None
    residual_errors: int | None = None
    space_pass1_log2: float | None = None
    space_log2: float | None = None
    rank_log2: int | None = None
    secure_after_partial: float | None = None
    secure_after_moa: float | None = None
    runtime_ms: float | None = None

    def row(self, timing: bool = False) -> dict:
        out = asdict(self)
        if not timing:
            out.pop("runtime_ms")
        return out


OUTCOME_COLUMNS = [f.name for f in fields(SessionOutcome) if f.name != "runtime_ms"]


@dataclass
class SessionRun:
    """Everything one session produced; ``outcome`` is the summary row."""

    outcome: SessionOutcome
    alice: BitKey | None = None
    bob_reconciled: BitKey | None = None
    knowledge: EveKnowledge | None = None
    transcript: Transcript | None = None
    sieve: SieveResult | None = None


def pass_permutations(n: int, cfg: SessionConfig) -> list[Permutation]:
    """Identity for pass 1, then one seeded shuffle per later pass."""
    seeds = cfg.resolved_pass_seeds()
    return [Permutation.identity(n)] + [seeded_permutation(n, s) for s in seeds[1:]]


def simulate_session(cfg: SessionConfig, *, run_sieve_phase: bool = True,
                     ignore_detection: bool = False,
                     permutations: Sequence[Permutation] | None = None) -> SessionRun:
    """generate -> transmit -> sift -> estimate -> (abort | cascade -> sieve -> accounting).

    ``ignore_detection`` carries on through reconciliation even when the QBER
    estimate would abort, which test harnesses use to get small sessions.
    ``permutations`` replaces the seeded per-pass shuffles.
    """
    started = time.perf_counter()
    out = SessionOutcome(seed=cfg.seed, rho=cfg.rho, status="aborted")
    run = SessionRun(out)

    def done() -> SessionRun:
        out.runtime_ms = (time.perf_counter() - started) * 1e3
        return run

    record = transmit(generate_raw(cfg), plan_interception(cfg), cfg)
    sifted = sift(record)
    try:
        est = estimate_qber(sifted, cfg)
    except EmptySample:
        return done()
    out.p_est = est.p_est
    out.detected = est.detected
    if est.detected and not ignore_detection:
        out.status = "detected"
        return done()

    n = len(est.remaining_alice)
    out.n_reconciled = n
    if n < 2:
        return done()
    knowledge = project_knowledge(eve_sift(record, sifted), est)
    run.alice, run.knowledge = est.remaining_alice, knowledge
    f = knowledge.fraction(n)
    out.eve_fraction = f

    if est.p_est == 0 and cfg.k1 is None:
        # nothing to reconcile: only Eve's own bits constrain the key
        out.status = "zero-qber"
        out.leaked_count = 0
        out.secure_after_partial = secure_after_partial(n, float(n), f)
        out.rank_log2 = oracle_search_space([], knowledge.known_bits, n)
        out.space_log2 = float(out.rank_log2)
        out.secure_after_moa = out.space_log2
        run.bob_reconciled = est.remaining_bob
        return done()

    schedule = block_schedule(est.p_est, n, cfg.passes, override=cfg.k1)
    out.k1 = schedule.k1
    if permutations is None:
        permutations = pass_permutations(n, cfg)
    elif len(permutations) != cfg.passes or any(len(q) != n for q in permutations):
        raise ConfigError(f"need {cfg.passes} permutations of {n} bits")
    bob, transcript = run_cascade(est.remaining_alice, est.remaining_bob, schedule,
                                  list(permutations))
    run.bob_reconciled, run.transcript = bob, transcript
    out.leaked_count = transcript.leaked_count
    out.residual_errors = transcript.residual_errors
    bound = cascade_bound(n, min(est.p_est, 0.5), cfg.passes, k1=schedule.k1)
    out.secure_after_partial = secure_after_partial(n, bound, f)
    out.rank_log2 = oracle_search_space(transcript, knowledge.known_bits, n)
    out.status = "reconciled"

    if run_sieve_phase:
        result = run_sieve(transcript, knowledge.known_bits, max_candidates=cfg.max_candidates,
                           chunk_size=cfg.chunk_size, workers=cfg.workers,
                           max_width=cfg.max_block_width)
        run.sieve = result
        out.space_pass1_log2 = result.log2_pass1
        if result.candidates.truncated:
            out.status = "truncated"
        else:
            out.space_log2 = result.candidates.log2_space
            out.secure_after_moa = out.space_log2
    return done()


def run_session(cfg: SessionConfig, **kwargs) -> SessionOutcome:
    return simulate_session(cfg, **kwargs).outcome


# -- seed sweeps -----------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    rho_values: tuple[float, ...]
    seed_range: tuple[int, int]
    target_n: tuple[int, int] | None = None
    stop_after: int = 20
    p_bins: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.rho_values:
            raise ConfigError("rho_values must not be empty")
        lo, hi = self.seed_range
        if hi <= lo:
            raise ConfigError("seed_range must be a non-empty interval [start, stop)")
        if self.stop_after < 1:
            raise ConfigError("stop_after must be >= 1")
        if isinstance(self.target_n, int):
            object.__setattr__(self, "target_n", (self.target_n, self.target_n))

    def seeds(self) -> range:
        return range(*self.seed_range)


def _summary_or_none(cfg: SessionConfig) -> ExchangeSummary | None:
    try:
        return exchange_summary(cfg)
    except EmptySample:
        return None


def _summarise_chunk(args) -> list[ExchangeSummary | None]:
    cfg, seeds = args
    return [_summary_or_none(cfg.with_(seed=s)) for s in seeds]


def iter_summaries(cfg: SessionConfig, seeds: Sequence[int], workers: int = 1,
                   chunk: int = 4096) -> Iterator[ExchangeSummary | None]:
    """Exchange summaries in seed order; ``None`` where sifting left no sample."""
    if workers <= 1:
        for s in seeds:
            yield _summary_or_none(cfg.with_(seed=s))
        return
    parts = [(cfg, seeds[i:i + chunk]) for i in range(0, len(seeds), chunk)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for batch in pool.map(_summarise_chunk, parts):
            yield from batch


@dataclass(frozen=True)
class SuccessRow:
    rho: float
    seeds: int
    undetected: int
    success_rate: float


def sweep_success_rate(spec: SweepSpec, cfg: SessionConfig) -> list[SuccessRow]:
    """Fraction of sessions per rho whose QBER estimate stays under the threshold."""
    rows = []
    seeds = spec.seeds()
    for rho in spec.rho_values:
        c = cfg.with_(rho=rho)
        ok = sum(1 for s in iter_summaries(c, seeds, cfg.workers) if s is not None and not s.detected)
        rows.append(SuccessRow(rho, len(seeds), ok, ok / len(seeds)))
    return rows


@dataclass
class Cell:
    rho: float
    p_bin: float
    results: int = 0
    seeds_consumed: int = 0
    truncated: int = 0
    mean_secure_partial: float | None = None
    se_secure_partial: float | None = None
    mean_secure_moa: float | None = None
    se_secure_moa: float | None = None
    full_recoveries: int = 0

    @property
    def success_frequency(self) -> float:
        return self.results / self.seeds_consumed if self.seeds_consumed else 0.0

    def row(self) -> dict:
        out = asdict(self)
        out["success_frequency"] = self.success_frequency
        return out


CELL_COLUMNS = [f.name for f in fields(Cell)] + ["success_frequency"]


def _mean_se(values: Sequence[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return float(arr.mean()), se


@dataclass
class ExperimentResult:
    outcomes: list[SessionOutcome]
    cells: list[Cell]
    runs: list[SessionRun] = field(default_factory=list, repr=False)


def p_bin(p_est: float) -> float:
    return round(p_est, 3)


def run_attack_experiment(spec: SweepSpec, cfg: SessionConfig, *, phase: str = "full",
                          keep_runs: bool = False) -> ExperimentResult:
    """Collect up to ``stop_after`` attacked sessions per (rho, p-bin) cell.

    Seeds are scanned in order; a seed counts when Eve goes undetected, the
    reconciled size is within ``target_n`` and the estimated QBER is non-zero
    (there is no Cascade run to observe otherwise).  With ``p_bins`` only those
    cells are filled and scanning stops once all are full.  A cell's success
    frequency is its result count over the seeds scanned until its last result.
    """
    if phase not in ("full", "partial"):
        raise ConfigError(f"unknown phase {phase!r}")
    outcomes: list[SessionOutcome] = []
    runs: list[SessionRun] = []
    cells: dict[tuple[float, float], Cell] = {}
    collected: dict[tuple[float, float], list[SessionOutcome]] = {}
    wanted = None if spec.p_bins is None else {p_bin(p) for p in spec.p_bins}
    seeds = spec.seeds()
    for rho in spec.rho_values:
        c = cfg.with_(rho=rho)
        for consumed, summary in enumerate(iter_summaries(c, seeds, cfg.workers), start=1):
            if summary is None or summary.detected or summary.mismatches == 0:
                continue
            if spec.target_n and not spec.target_n[0] <= summary.n <= spec.target_n[1]:
                continue
            key = (rho, p_bin(summary.p_est))
            if wanted is not None and key[1] not in wanted:
                continue
            bucket = collected.setdefault(key, [])
            if len(bucket) >= spec.stop_after:
                continue
            run = simulate_session(c.with_(seed=summary.seed), run_sieve_phase=(phase == "full"))
            bucket.append(run.outcome)
            cells.setdefault(key, Cell(rho, key[1])).seeds_consumed = consumed
            if keep_runs:
                runs.append(run)
            if wanted is not None and all(len(collected.get((rho, p), [])) >= spec.stop_after
                                          for p in wanted):
                break

    for key, bucket in collected.items():
        cell = cells[key]
        cell.results = len(bucket)
        cell.truncated = sum(o.status == "truncated" for o in bucket)
        cell.mean_secure_partial, cell.se_secure_partial = _mean_se(
            [o.secure_after_partial for o in bucket])
        moa = [o.secure_after_moa for o in bucket if o.secure_after_moa is not None]
        cell.mean_secure_moa, cell.se_secure_moa = _mean_se(moa)
        cell.full_recoveries = sum(o.space_log2 == 0 for o in bucket)
        outcomes.extend(bucket)
    outcomes.sort(key=lambda o: (o.rho, o.p_est, o.seed))
    ordered = [cells[k] for k in sorted(cells)]
    return ExperimentResult(outcomes, ordered, runs)


# -- output -------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(round(value, 10))
    return str(value)


def to_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def to_ndjson(rows: Iterable[dict], columns: Sequence[str]) -> str:
    def clean(v):
        return round(v, 10) if isinstance(v, float) else v
    return "".join(json.dumps({c: clean(r.get(c)) for c in columns}, separators=(",", ":")) + "\n"
                   for r in rows)


def render(rows: Iterable[dict], columns: Sequence[str], fmt: str = "csv") -> str:
    if fmt == "csv":
        return to_csv(rows, columns)
    if fmt == "ndjson":
        return to_ndjson(rows, columns)
    raise ConfigError(f"unknown format {fmt!r}")


# -- fixture replay ---------------------------------------------------------------------

class MismatchReport(AssertionError):
    def __init__(self, name: str, mismatches: list[tuple[str, object, object]]):
        lines = [f"{field}: expected {exp!r}, got {got!r}" for field, exp, got in mismatches]
        super().__init__(f"fixture {name} mismatched:\n  " + "\n  ".join(lines))
        self.name = name
        self.mismatches = mismatches


@dataclass
class ReplayReport:
    name: str
    checked: dict
    mismatches: list[tuple[str, object, object]]
    transcript: Transcript
    sieve: SieveResult

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def raise_for_mismatch(self) -> None:
        if self.mismatches:
            raise MismatchReport(self.name, self.mismatches)


BUILTIN_FIXTURES = ("example1", "example2", "example3", "example4")


def load_fixture(source: str | Path) -> dict:
    """A fixture JSON file, or one of the bundled names in ``BUILTIN_FIXTURES``."""
    if str(source) in BUILTIN_FIXTURES:
        text = resources.files("cascadelab.fixtures").joinpath(f"{source}.json").read_text()
    else:
        text = Path(source).read_text()
    fixture = json.loads(text)
    fixture.setdefault("name", Path(str(source)).stem)
    return fixture


def permutations_from_lists(lists: Sequence[Sequence[int]], passes: int, n: int) -> list[Permutation]:
    """One gather order per pass; the pass-1 identity may be left out."""
    try:
        perms = [Permutation(tuple(int(i) for i in p)) for p in lists]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad permutation: {exc}") from exc
    if len(perms) == passes - 1:
        perms.insert(0, Permutation.identity(n))
    if len(perms) != passes or any(len(p) != n for p in perms):
        raise ConfigError(f"need one permutation of {n} bits per pass (pass 1 may be omitted)")
    return perms


def fixture_permutations(fixture: dict, n: int) -> list[Permutation]:
    return permutations_from_lists(fixture.get("permutations", []), fixture["passes"], n)


def replay(fixture: dict | str | Path, *, workers: int = 1) -> ReplayReport:
    """Run Cascade and the sieve on a fixture and compare with its expectations."""
    if not isinstance(fixture, dict):
        fixture = load_fixture(fixture)
    alice = BitKey.from_string(fixture["alice"])
    bob = BitKey.from_string(fixture["bob"])
    n = len(alice)
    schedule = block_schedule(0.0, n, fixture["passes"], override=fixture["k1"])
    reconciled, transcript = run_cascade(alice, bob, schedule, fixture_permutations(fixture, n))
    eve_bits = {int(k): int(v) for k, v in fixture.get("eve_bits", {}).items()}
    result = run_sieve(transcript, eve_bits, workers=workers)
    actual = {
        "reconciled": str(reconciled),
        "leaked_count": transcript.leaked_count,
        "valid_keys": result.candidates.bitstrings(),
        "space": result.candidates.space,
        "space_pass1": result.space_pass1,
        "parity_bit_ids": sorted(transcript.parity_bit_ids),
        "rank_space": 2 ** oracle_search_space(transcript, eve_bits, n),
    }
    expected = fixture.get("expect", {})
    mismatches = [(k, v, actual.get(k, "<unknown field>")) for k, v in expected.items()
                  if actual.get(k, "<unknown field>") != v]
    return ReplayReport(fixture["name"], actual, mismatches, transcript, result)
