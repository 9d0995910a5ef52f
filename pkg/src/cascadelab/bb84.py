"""Idealised BB84 exchange: raw generation, (intercepted) transmission, sifting, QBER sampling.

Bases are encoded as 0 = rectilinear, 1 = diagonal.  A measurement in the
preparation basis returns the prepared bit; any other measurement returns a
uniformly random bit.

All randomness of one exchange comes from a single ``(8, raw_len)`` block of
uniforms drawn from ``rng(seed, STREAM_EXCHANGE)``, one row per purpose (see
the ``ROW_*`` constants).  A bit is ``u < 0.5``; a rectilinear basis is
``u < delta``; the QBER sample is the ``size`` sifted positions with the
smallest sample keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .bitcore import STREAM_EXCHANGE, STREAM_PASS_SEEDS, BitKey, rng

RECTILINEAR = 0
DIAGONAL = 1

(ROW_ALICE_BITS, ROW_ALICE_BASES, ROW_BOB_BASES, ROW_INTERCEPT,
 ROW_EVE_BASES, ROW_EVE_COIN, ROW_BOB_COIN, ROW_SAMPLE) = range(8)


class ConfigError(ValueError):
    pass


class EmptySample(ValueError):
    """The QBER sample size rounds to zero."""


@dataclass(frozen=True)
class SessionConfig:
    raw_len: int = 317
    basis_bias_delta: float = 0.5
    eve_basis_bias_delta: float = 0.5
    detector_noise: float = 0.0
    sample_rate: float = 0.37
    qber_threshold: float = 0.11
    passes: int = 3
    rho: float = 0.0
    seed: int = 0
    pass_seeds: tuple[int, ...] | None = None
    k1: int | None = None
    max_candidates: int = 1 << 26
    chunk_size: int = 1 << 16
    workers: int = 1
    max_block_width: int = 20

    def __post_init__(self):
        for name in ("basis_bias_delta", "eve_basis_bias_delta", "detector_noise",
                     "sample_rate", "qber_threshold", "rho"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name}={value} outside [0, 1]")
        if self.raw_len < 1:
            raise ConfigError("raw_len must be >= 1")
        if self.passes < 1:
            raise ConfigError("passes must be >= 1")
        if self.max_candidates < 1:
            raise ConfigError("max_candidates must be >= 1")
        if self.chunk_size < 1 or self.workers < 1:
            raise ConfigError("chunk_size and workers must be >= 1")
        if self.k1 is not None and self.k1 < 1:
            raise ConfigError("k1 must be >= 1")
        if self.pass_seeds is not None:
            object.__setattr__(self, "pass_seeds", tuple(int(s) for s in self.pass_seeds))
            if len(self.pass_seeds) != self.passes:
                raise ConfigError(f"need {self.passes} pass seeds, got {len(self.pass_seeds)}")

    def with_(self, **changes) -> "SessionConfig":
        return replace(self, **changes)

    def resolved_pass_seeds(self) -> tuple[int, ...]:
        """Explicit pass seeds, or ones derived from the session seed."""
        if self.pass_seeds is not None:
            return self.pass_seeds
        draws = rng(self.seed, STREAM_PASS_SEEDS).integers(0, 2**63 - 1, size=self.passes)
        return tuple(int(s) for s in draws)


@lru_cache(maxsize=16)
def session_draws(seed: int, raw_len: int) -> np.ndarray:
    """The read-only ``(8, raw_len)`` uniform block behind one exchange."""
    u = rng(seed, STREAM_EXCHANGE).random((8, raw_len))
    u.setflags(write=False)
    return u


@dataclass
class ExchangeRecord:
    seed: int
    alice_bits: np.ndarray
    alice_bases: np.ndarray
    bob_bases: np.ndarray
    bob_bits: np.ndarray | None = None
    eve_intercepted: np.ndarray | None = None
    eve_bases: np.ndarray | None = None
    eve_bits: np.ndarray | None = None

    @property
    def completed(self) -> bool:
        return self.bob_bits is not None


@dataclass(frozen=True)
class SiftedKeys:
    alice: BitKey
    bob: BitKey
    kept_positions: np.ndarray
    seed: int = 0
    raw_len: int = 0

    def __len__(self) -> int:
        return len(self.alice)


@dataclass(frozen=True)
class QberEstimate:
    p_est: float
    sample_positions: np.ndarray
    detected: bool
    remaining_alice: BitKey
    remaining_bob: BitKey
    remaining_positions: np.ndarray = field(repr=False)


def generate_raw(cfg: SessionConfig) -> ExchangeRecord:
    u = session_draws(cfg.seed, cfg.raw_len)
    return ExchangeRecord(
        cfg.seed,
        alice_bits=(u[ROW_ALICE_BITS] < 0.5).astype(np.uint8),
        alice_bases=(u[ROW_ALICE_BASES] >= cfg.basis_bias_delta).astype(np.uint8),
        bob_bases=(u[ROW_BOB_BASES] >= cfg.basis_bias_delta).astype(np.uint8),
    )


def transmit(record: ExchangeRecord, plan, cfg: SessionConfig) -> ExchangeRecord:
    """Send Alice's qubits to Bob, through Eve wherever ``plan.mask`` is set."""
    if cfg.detector_noise != 0:
        raise ConfigError("detector noise is not modelled; detector_noise must be 0")
    mask = np.asarray(plan.mask, dtype=bool)
    n = len(record.alice_bits)
    if len(mask) != n:
        raise ValueError(f"plan mask length {len(mask)} != raw length {n}")
    u = session_draws(record.seed, n)

    eve_bases = (u[ROW_EVE_BASES] >= cfg.eve_basis_bias_delta).astype(np.uint8)
    eve_coin = (u[ROW_EVE_COIN] < 0.5).astype(np.uint8)
    eve_bits = np.where(eve_bases == record.alice_bases, record.alice_bits, eve_coin)

    sent_bases = np.where(mask, eve_bases, record.alice_bases)
    sent_bits = np.where(mask, eve_bits, record.alice_bits)
    bob_coin = (u[ROW_BOB_COIN] < 0.5).astype(np.uint8)
    bob_bits = np.where(record.bob_bases == sent_bases, sent_bits, bob_coin).astype(np.uint8)

    return replace(
        record,
        bob_bits=bob_bits,
        eve_intercepted=mask.copy(),
        eve_bases=np.where(mask, eve_bases, 0).astype(np.uint8),
        eve_bits=np.where(mask, eve_bits, 0).astype(np.uint8),
    )


def sift(record: ExchangeRecord) -> SiftedKeys:
    if not record.completed:
        raise ValueError("record has not been transmitted")
    kept = np.flatnonzero(record.alice_bases == record.bob_bases)
    return SiftedKeys(
        alice=BitKey.from_bits(record.alice_bits[kept]),
        bob=BitKey.from_bits(record.bob_bits[kept]),
        kept_positions=kept,
        seed=record.seed,
        raw_len=len(record.alice_bits),
    )


def sample_size(m: int, rate: float) -> int:
    """Round-half-up of ``rate * m``."""
    # the epsilon stops products such as 0.37 * 50 landing just under .5
    return int(math.floor(rate * m + 0.5 + 1e-9))


def _sample_positions(seed: int, raw_len: int, m: int, size: int) -> np.ndarray:
    keys = session_draws(seed, raw_len)[ROW_SAMPLE, :m]
    return np.sort(np.argsort(keys, kind="stable")[:size])


def estimate_qber(sifted: SiftedKeys, cfg: SessionConfig) -> QberEstimate:
    """Sacrifice a uniform sample of the sifted keys to estimate the QBER."""
    m = len(sifted)
    if m == 0:
        raise EmptySample("sifted key is empty")
    size = sample_size(m, cfg.sample_rate)
    if size == 0:
        raise EmptySample(f"sample of {cfg.sample_rate} x {m} bits rounds to zero")
    raw_len = sifted.raw_len or m
    chosen = _sample_positions(sifted.seed, raw_len, m, size)
    mismatches = int(np.count_nonzero(sifted.alice.bits[chosen] != sifted.bob.bits[chosen]))
    p_est = mismatches / size
    keep = np.ones(m, dtype=bool)
    keep[chosen] = False
    remaining = np.flatnonzero(keep)
    return QberEstimate(
        p_est=p_est,
        sample_positions=chosen,
        detected=p_est >= cfg.qber_threshold,
        remaining_alice=sifted.alice.take(remaining, renumber=True),
        remaining_bob=sifted.bob.take(remaining, renumber=True),
        remaining_positions=remaining,
    )


@dataclass(frozen=True)
class ExchangeSummary:
    """The scalar outcome of one exchange; what seed sweeps need."""

    seed: int
    sifted_len: int
    sample_len: int
    mismatches: int
    p_est: float
    detected: bool
    n: int
    eve_known: int

    @property
    def eve_fraction(self) -> float:
        return self.eve_known / self.n if self.n else 0.0


def exchange_summary(cfg: SessionConfig) -> ExchangeSummary:
    """Same draws and rules as generate/transmit/sift/estimate, without building keys.

    Raises EmptySample exactly where :func:`estimate_qber` would.
    """
    if cfg.detector_noise != 0:
        raise ConfigError("detector noise is not modelled; detector_noise must be 0")
    u = session_draws(cfg.seed, cfg.raw_len)
    alice_bases = u[ROW_ALICE_BASES] >= cfg.basis_bias_delta
    kept = np.flatnonzero(alice_bases == (u[ROW_BOB_BASES] >= cfg.basis_bias_delta))
    m = len(kept)
    if m == 0:
        raise EmptySample("sifted key is empty")
    size = sample_size(m, cfg.sample_rate)
    if size == 0:
        raise EmptySample(f"sample of {cfg.sample_rate} x {m} bits rounds to zero")
    alice_bit = u[ROW_ALICE_BITS, kept] < 0.5
    bob_basis = u[ROW_BOB_BASES, kept] >= cfg.basis_bias_delta
    intercepted = u[ROW_INTERCEPT, kept] < cfg.rho
    eve_basis = u[ROW_EVE_BASES, kept] >= cfg.eve_basis_bias_delta
    eve_match = eve_basis == alice_bases[kept]
    eve_bit = np.where(eve_match, alice_bit, u[ROW_EVE_COIN, kept] < 0.5)
    sent_basis = np.where(intercepted, eve_basis, alice_bases[kept])
    sent_bit = np.where(intercepted, eve_bit, alice_bit)
    bob_bit = np.where(bob_basis == sent_basis, sent_bit, u[ROW_BOB_COIN, kept] < 0.5)

    chosen = _sample_positions(cfg.seed, cfg.raw_len, m, size)
    mismatches = int(np.count_nonzero(alice_bit[chosen] != bob_bit[chosen]))
    p_est = mismatches / size
    known = intercepted & eve_match
    return ExchangeSummary(
        seed=cfg.seed, sifted_len=m, sample_len=size, mismatches=mismatches, p_est=p_est,
        detected=p_est >= cfg.qber_threshold, n=m - size,
        eve_known=int(np.count_nonzero(known)) - int(np.count_nonzero(known[chosen])),
    )
