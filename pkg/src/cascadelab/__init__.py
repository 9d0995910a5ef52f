"""Simulation lab for BB84 with partial intercept-resend and passive attacks on Cascade."""

from .bb84 import ConfigError, EmptySample, SessionConfig, exchange_summary
from .bitcore import BitKey, Permutation, gf2_rank, seeded_permutation
from .cascade import ParityConstraint, Transcript, block_schedule, run_cascade
from .harness import SessionOutcome, SweepSpec, replay, run_attack_experiment, run_session, sweep_success_rate
from .leakage import binary_entropy, cascade_bound, l_max, l_min, per_block_bound, secure_after_partial
from .sieve import CandidateSet, build_codebook, oracle_search_space, run_sieve

__all__ = [
    "BitKey", "CandidateSet", "ConfigError", "EmptySample", "ParityConstraint", "Permutation",
    "SessionConfig", "SessionOutcome", "SweepSpec", "Transcript", "binary_entropy",
    "block_schedule", "build_codebook", "cascade_bound", "exchange_summary", "gf2_rank", "l_max",
    "l_min", "oracle_search_space", "per_block_bound", "replay", "run_attack_experiment",
    "run_cascade", "run_session", "run_sieve", "secure_after_partial", "seeded_permutation",
    "sweep_success_rate",
]
