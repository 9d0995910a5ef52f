"""Command line entry point: ``cascadelab <subcommand>``.

Configuration precedence: profile defaults < ``--config`` file < flags.
Exit codes: 0 success, 2 fixture mismatch, 3 configuration error.
"""

from __future__ import annotations

import functools
import io
import json
import sys
from dataclasses import asdict
from pathlib import Path

import click

from . import harness
from .bb84 import ConfigError, EmptySample, exchange_summary
from .bitcore import BitKey
from .cascade import block_schedule, run_cascade

EXIT_MISMATCH = 2
EXIT_CONFIG = 3


def _seed_range(text: str) -> tuple[int, int]:
    """``start:stop`` (half-open) or a single count ``N`` meaning ``0:N``."""
    try:
        if ":" in text:
            lo, hi = (int(x) for x in text.split(":", 1))
        else:
            lo, hi = 0, int(text)
    except ValueError as exc:
        raise ConfigError(f"bad seed range {text!r}") from exc
    if hi <= lo:
        raise ConfigError(f"empty seed range {text!r}")
    return lo, hi


def session_options(fn):
    """Flags shared by every subcommand; they map onto SessionConfig fields."""
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="Flat key = value file of SessionConfig fields."),
        click.option("--profile", type=click.Choice(sorted(harness.PROFILES)), default="standard",
                     show_default=True),
        click.option("--seed", type=int),
        click.option("--rho", type=float, multiple=True, help="Interception density; repeatable for sweeps."),
        click.option("--raw-len", type=int),
        click.option("--sample-rate", type=float),
        click.option("--threshold", "qber_threshold", type=float),
        click.option("--passes", type=int),
        click.option("--k1", type=int, help="Override the initial block size."),
        click.option("--perm-file", type=click.Path(exists=True, dir_okay=False),
                     help="JSON list of per-pass gather orders (pass 1 may be omitted)."),
        click.option("--max-candidates", type=int),
        click.option("--chunk-size", type=int),
        click.option("--workers", type=int),
        click.option("--out-dir", type=click.Path(file_okay=False),
                     help="Write files here instead of printing to stdout."),
        click.option("--format", "fmt", type=click.Choice(["csv", "ndjson"]), default="csv",
                     show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _config(o: dict, rho: float | None = None):
    return harness.load_config(
        o["config_path"], o["profile"], seed=o["seed"], rho=rho, raw_len=o["raw_len"],
        sample_rate=o["sample_rate"], qber_threshold=o["qber_threshold"], passes=o["passes"],
        k1=o["k1"], max_candidates=o["max_candidates"], chunk_size=o["chunk_size"],
        workers=o["workers"])


def _single_rho(o: dict) -> float | None:
    if len(o["rho"]) > 1:
        raise ConfigError("this subcommand takes a single --rho")
    return o["rho"][0] if o["rho"] else None


def _perm_lists(o: dict) -> list | None:
    if not o["perm_file"]:
        return None
    try:
        data = json.loads(Path(o["perm_file"]).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"perm file is not JSON: {exc}") from exc
    if not isinstance(data, list):
        raise ConfigError("perm file must hold a JSON list of permutations")
    return data


def _emit(o: dict, files: dict[str, str]) -> None:
    """Write ``name -> text`` into ``--out-dir`` or concatenate on stdout."""
    if o["out_dir"]:
        out = Path(o["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text)
            click.echo(str(out / name))
    else:
        for text in files.values():
            click.echo(text, nl=False)


def _ext(o: dict) -> str:
    return "csv" if o["fmt"] == "csv" else "ndjson"


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
    return wrapper


@click.group()
def cli():
    """BB84 + Cascade simulation lab with a passive keyspace sieve."""


@cli.command()
@session_options
@handle_errors
def exchange(**o):
    """Run the BB84 exchange only and report the QBER estimate."""
    cfg = _config(o, _single_rho(o))
    try:
        row = asdict(exchange_summary(cfg))
    except EmptySample as exc:
        raise ConfigError(str(exc)) from exc
    cols = list(row) + ["eve_fraction"]
    row["eve_fraction"] = row["eve_known"] / row["n"] if row["n"] else 0.0
    _emit(o, {f"exchange.{_ext(o)}": harness.render([row], cols, o["fmt"])})


@cli.command()
@session_options
@click.option("--alice", help="Alice's key as a bitstring.")
@click.option("--bob", help="Bob's key as a bitstring.")
@click.option("--fixture", help="Fixture file or bundled name (example1..example4) to take keys from.")
@handle_errors
def reconcile(alice, bob, fixture, **o):
    """Run Cascade on explicit keys and write the transcript."""
    if fixture:
        fx = harness.load_fixture(fixture)
        alice, bob = fx["alice"], fx["bob"]
        k1, passes = o["k1"] or fx["k1"], o["passes"] or fx["passes"]
        lists = _perm_lists(o) or fx.get("permutations", [])
    else:
        if not alice or not bob:
            raise ConfigError("give --alice and --bob, or --fixture")
        if o["k1"] is None:
            raise ConfigError("--k1 is required with explicit keys")
        k1, passes = o["k1"], o["passes"] or 3
        lists = _perm_lists(o)
    try:
        a, b = BitKey.from_string(alice), BitKey.from_string(bob)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if len(a) != len(b):
        raise ConfigError("keys differ in length")
    n = len(a)
    if lists is None:
        cfg = _config(o).with_(passes=passes)
        perms = harness.pass_permutations(n, cfg)
    else:
        perms = harness.permutations_from_lists(lists, passes, n)
    reconciled, transcript = run_cascade(a, b, block_schedule(0.0, n, passes, override=k1), perms)
    summary = {"reconciled": str(reconciled), "leaked_count": transcript.leaked_count,
               "residual_errors": transcript.residual_errors}
    _emit(o, {"transcript.ndjson": transcript.dumps(),
              "reconcile.json": json.dumps(summary, separators=(",", ":")) + "\n"})


@cli.command()
@session_options
@handle_errors
def attack(**o):
    """Full pipeline for one seed: exchange, Cascade, sieve and accounting."""
    cfg = _config(o, _single_rho(o))
    lists = _perm_lists(o)
    perms = None
    if lists is not None:
        n = exchange_summary(cfg).n
        perms = harness.permutations_from_lists(lists, cfg.passes, n)
    run = harness.simulate_session(cfg, permutations=perms)
    files = {f"outcome.{_ext(o)}": harness.render([run.outcome.row()], harness.OUTCOME_COLUMNS,
                                                  o["fmt"])}
    if o["out_dir"]:
        if run.transcript is not None:
            files["transcript.ndjson"] = run.transcript.dumps()
        if run.sieve is not None:
            buf = io.StringIO()
            run.sieve.candidates.write(buf)
            files["candidates.txt"] = buf.getvalue()
    _emit(o, files)


@cli.command()
@session_options
@click.option("--seeds", default="100000", show_default=True, help="N or start:stop.")
@handle_errors
def sweep(seeds, **o):
    """Undetected-session rate per interception density."""
    cfg = _config(o)
    rhos = o["rho"] or (0.7, 0.8, 0.9, 1.0)
    spec = harness.SweepSpec(tuple(rhos), _seed_range(seeds))
    rows = [asdict(r) for r in harness.sweep_success_rate(spec, cfg)]
    cols = ["rho", "seeds", "undetected", "success_rate"]
    _emit(o, {f"sweep.{_ext(o)}": harness.render(rows, cols, o["fmt"])})


@cli.command()
@session_options
@click.option("--seeds", default="200000", show_default=True, help="N or start:stop.")
@click.option("--target-n", help="Reconciled size N or lo:hi (inclusive).")
@click.option("--stop-after", type=int, default=20, show_default=True)
@click.option("--p-bin", "p_bins", type=float, multiple=True, help="Only fill these QBER cells.")
@click.option("--phase", type=click.Choice(["full", "partial"]), default="full", show_default=True)
@handle_errors
def experiment(seeds, target_n, stop_after, p_bins, phase, **o):
    """Per-(rho, QBER) cells of attacked sessions with secure-bit statistics."""
    cfg = _config(o)
    if target_n is None:
        target = harness.PROFILE_TARGET_N[o["profile"]]
    else:
        try:
            lo, _, hi = target_n.partition(":")
            target = (int(lo), int(hi or lo))
        except ValueError as exc:
            raise ConfigError(f"bad --target-n {target_n!r}") from exc
    rhos = o["rho"] or (0.7, 0.8, 0.9, 1.0)
    spec = harness.SweepSpec(tuple(rhos), _seed_range(seeds), target, stop_after,
                             tuple(p_bins) or None)
    res = harness.run_attack_experiment(spec, cfg, phase=phase)
    ext = _ext(o)
    _emit(o, {
        f"outcomes.{ext}": harness.render([x.row() for x in res.outcomes],
                                          harness.OUTCOME_COLUMNS, o["fmt"]),
        f"cells.{ext}": harness.render([c.row() for c in res.cells], harness.CELL_COLUMNS, o["fmt"]),
    })


@cli.command()
@click.argument("fixtures", nargs=-1)
@click.option("--workers", type=int, default=1, show_default=True)
@handle_errors
def replay(fixtures, workers):
    """Check fixtures (files or bundled example1..example4); exit 2 on any mismatch."""
    failed = False
    for name in fixtures or harness.BUILTIN_FIXTURES:
        try:
            report = harness.replay(name, workers=workers)
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load fixture {name}: {exc}") from exc
        click.echo(f"{report.name}: {'PASS' if report.passed else 'FAIL'}")
        for field, exp, got in report.mismatches:
            click.echo(f"  {field}: expected {exp!r}, got {got!r}")
        failed |= not report.passed
    if failed:
        sys.exit(EXIT_MISMATCH)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="cascadelab", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as exc:
        exc.show()
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
