"""Closed-form leakage and secure-bit accounting for Cascade sessions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .cascade import BlockSchedule, initial_block_size


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def l_min(n: int, p: float) -> float:
    """Minimum leakage for reconciling ``n`` bits over a BSC(p)."""
    return n * binary_entropy(p)


def ceil_log2(k: int) -> int:
    return (int(k) - 1).bit_length() if k > 1 else 0


def l_max(n: int, schedule: BlockSchedule | Sequence[int], corrections: Sequence[int]) -> int:
    """Worst-case disclosures: top blocks plus ``ceil(log2 k_i)`` per correction.

    ``corrections[i]`` counts corrections made inside blocks of pass ``i + 1``
    (look-back corrections are charged to the pass of the block they hit).
    The top-block count of a pass is ``ceil(n / k_i)``, remainder included.
    """
    sizes = schedule.k if isinstance(schedule, BlockSchedule) else tuple(schedule)
    if len(corrections) != len(sizes):
        raise ValueError("corrections must align with the schedule")
    return sum(-(-n // k) + c * ceil_log2(k) for k, c in zip(sizes, corrections))


def per_block_bound(omega: int, p: float, k1: int) -> float:
    """Upper bound on information leaked per pass-1 block over ``omega`` passes."""
    if omega < 1 or k1 < 1:
        raise ValueError("omega and k1 must be >= 1")
    if not 0.0 <= p <= 0.5:
        raise ValueError(f"p={p} outside [0, 0.5]")
    odd = (1 - (1 - 2 * p) ** k1) / 2
    lg = ceil_log2(k1)
    later = sum(2.0 ** -(l - 1) for l in range(2, omega + 1))
    return 2 + odd * lg + later * (k1 * p - odd) * lg


def pass1_blocks(n: int, k1: int) -> int:
    return -(-n // k1)


def cascade_bound(n: int, p: float, omega: int, k1: int | None = None) -> float:
    """``n - m * I(omega)`` with ``m`` pass-1 blocks (remainder block counted)."""
    if k1 is None:
        k1 = min(initial_block_size(p), max(1, n // 2))
    return n - pass1_blocks(n, k1) * per_block_bound(omega, p, k1)


def secure_after_partial(n: int, cascade_bound: float, eve_fraction: float,
                         reading: str = "rescale") -> float:
    """Secure bits left once Eve's intercepted share is taken off Cascade's bound.

    ``"rescale"`` removes Eve's share from the bound itself,
    ``bound * (1 - eve_fraction)``; ``"subtract"`` removes her known bits from
    the key, ``bound - eve_fraction * n``.
    """
    if not 0.0 <= eve_fraction <= 1.0:
        raise ValueError(f"eve_fraction={eve_fraction} outside [0, 1]")
    if reading == "rescale":
        return cascade_bound * (1 - eve_fraction)
    if reading == "subtract":
        return cascade_bound - eve_fraction * n
    raise ValueError(f"unknown reading {reading!r}")


def search_space_laws(n: int, l: int, u: int) -> tuple[int | float, int | float]:
    """``(2**(n-l), 2**(n-u))`` as ints when ``n - u <= 63``, otherwise as log2 values."""
    if not 0 <= u <= l <= n:
        raise ValueError("need 0 <= u <= l <= n")
    if n - u <= 63:
        return 2 ** (n - l), 2 ** (n - u)
    return float(n - l), float(n - u)


@dataclass(frozen=True)
class LeakageReport:
    n: int
    p: float
    omega: int
    k1: int
    m: int
    l_max: float
    l_min: float
    per_block_bound: float
    cascade_bound: float
    max_security: float


def leakage_report(n: int, p: float, schedule: BlockSchedule,
                   corrections: Sequence[int] | None = None) -> LeakageReport:
    """Bounds for one session; ``l_max`` uses ``corrections`` or, if absent, one error per block."""
    k1, omega = schedule.k1, schedule.passes
    if corrections is None:
        corrections = [pass1_blocks(n, k) for k in schedule.k]
    ib = per_block_bound(omega, p, k1)
    m = pass1_blocks(n, k1)
    lm = l_min(n, p)
    return LeakageReport(n, p, omega, k1, m, l_max(n, schedule, corrections), lm,
                         ib, n - m * ib, n - lm)


@dataclass(frozen=True)
class SecurityLedger:
    n: int
    eve_fraction: float
    secure_after_partial: float
    secure_after_moa: float | None

    def __post_init__(self):
        if not 0.0 <= self.eve_fraction <= 1.0:
            raise ValueError("eve_fraction outside [0, 1]")


def secure_bits_from_space(space: int) -> float:
    if space < 1:
        raise ValueError("search space must contain at least one key")
    return math.log2(space)
