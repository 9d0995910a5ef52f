"""Bit sequences with stable IDs, seeded randomness, permutations and GF(2) rank.

Randomness
----------
Every random draw in the package goes through :func:`rng`, which builds a
``numpy.random.Generator`` over the PCG64 bit generator, seeded with
``SeedSequence([seed, stream])``.  ``stream`` separates independent uses of
one seed: the quantum exchange, derivation of per-pass seeds, and
permutations.  Permutations are ``Generator.permutation`` (a Fisher-Yates
shuffle) on the permutation stream.

Integer packing
---------------
Whenever a key is packed into an integer, bit ID 0 is the most significant
bit, so ``"1111000011110000"`` packs to ``0xF0F0`` and ascending integer order
equals lexicographic bitstring order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Stream identifiers for rng(); fixed so transcripts stay reproducible.
STREAM_EXCHANGE = 1
STREAM_PASS_SEEDS = 2
STREAM_PERMUTATION = 3


def rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic generator for ``(seed, stream)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


def parity(bits) -> int:
    """XOR of all bits; 0 for an empty sequence.

    Accepts a packed Python ``int`` (popcount parity), a numpy array or any
    iterable of 0/1 values.
    """
    if isinstance(bits, (int, np.integer)):
        return int(bits).bit_count() & 1
    if isinstance(bits, np.ndarray):
        return int(np.count_nonzero(bits)) & 1
    return sum(1 for b in bits if b) & 1


def bits_to_int(bits: Sequence[int]) -> int:
    """Pack bits MSB-first (index 0 is the most significant bit)."""
    value = 0
    for b in bits:
        value = (value << 1) | (1 if b else 0)
    return value


def int_to_bits(value: int, n: int) -> list[int]:
    return [(value >> (n - 1 - i)) & 1 for i in range(n)]


def bitstring(bits: Iterable[int]) -> str:
    return "".join("1" if b else "0" for b in bits)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BitKey:
    """Fixed-length bit sequence whose bits carry identifiers through shuffles."""

    bits: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).copy()
        ids = np.asarray(self.ids, dtype=np.int64).copy()
        if bits.ndim != 1 or ids.ndim != 1 or len(bits) != len(ids):
            raise ValueError("bits and ids must be 1-D sequences of equal length")
        if np.any(bits > 1):
            raise ValueError("bits must be 0 or 1")
        object.__setattr__(self, "bits", _frozen(bits))
        object.__setattr__(self, "ids", _frozen(ids))

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "BitKey":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(bits, np.arange(len(bits)))

    @classmethod
    def from_string(cls, text: str) -> "BitKey":
        if set(text) - {"0", "1"}:
            raise ValueError(f"not a bitstring: {text!r}")
        return cls.from_bits([int(c) for c in text])

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return bitstring(self.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitKey):
            return NotImplemented
        return np.array_equal(self.bits, other.bits) and np.array_equal(self.ids, other.ids)

    def __hash__(self):
        return hash((self.bits.tobytes(), self.ids.tobytes()))

    def to_int(self) -> int:
        return bits_to_int(self.bits)

    def by_id(self) -> np.ndarray:
        """Bits reordered so that entry ``i`` holds the bit whose ID is ``i``."""
        out = np.empty_like(self.bits)
        out[self.ids] = self.bits
        return out

    def take(self, positions: Sequence[int], renumber: bool = False) -> "BitKey":
        positions = np.asarray(positions, dtype=np.int64)
        ids = np.arange(len(positions)) if renumber else self.ids[positions]
        return BitKey(self.bits[positions], ids)


@dataclass(frozen=True)
class Permutation:
    """Gather-form permutation: position ``j`` of the output holds source index ``order[j]``."""

    order: tuple[int, ...]

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError("order must be a bijection on 0..n-1")
        object.__setattr__(self, "order", order)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    def __len__(self) -> int:
        return len(self.order)

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.order)
        for j, src in enumerate(self.order):
            inv[src] = j
        return Permutation(tuple(inv))

    def is_identity(self) -> bool:
        return all(i == j for i, j in enumerate(self.order))


def apply_permutation(key: BitKey, perm: Permutation) -> BitKey:
    if len(perm) != len(key):
        raise ValueError(f"permutation length {len(perm)} != key length {len(key)}")
    order = np.asarray(perm.order, dtype=np.int64)
    return BitKey(key.bits[order], key.ids[order])


def seeded_permutation(n: int, seed: int) -> Permutation:
    if n < 1:
        raise ValueError("n must be >= 1")
    return Permutation(tuple(int(i) for i in rng(seed, STREAM_PERMUTATION).permutation(n)))


class InconsistentSystem(ValueError):
    """Elimination produced ``0 = 1``: the parity system has no solution."""


@dataclass(frozen=True)
class Gf2Matrix:
    """Rows over GF(2) packed as ints (bit ID ``i`` at ``1 << (width-1-i)``), with parities."""

    rows: tuple[int, ...]
    rhs: tuple[int, ...]
    width: int

    def __post_init__(self):
        rows = tuple(int(r) for r in self.rows)
        rhs = tuple(int(b) & 1 for b in self.rhs)
        if len(rows) != len(rhs):
            raise ValueError("rows and rhs differ in length")
        if any(r < 0 or r >> self.width for r in rows):
            raise ValueError(f"row wider than {self.width} bits")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "rhs", rhs)

    @classmethod
    def from_index_sets(cls, sets: Iterable[Iterable[int]], rhs: Iterable[int], width: int) -> "Gf2Matrix":
        return cls(tuple(index_mask(s, width) for s in sets), tuple(rhs), width)

    @classmethod
    def from_dense(cls, dense, rhs=None) -> "Gf2Matrix":
        dense = np.atleast_2d(np.asarray(dense, dtype=np.uint8))
        width = dense.shape[1]
        rhs = [0] * dense.shape[0] if rhs is None else rhs
        return cls(tuple(bits_to_int(r) for r in dense), tuple(rhs), width)


def index_mask(indices: Iterable[int], width: int) -> int:
    mask = 0
    for i in indices:
        if not 0 <= i < width:
            raise ValueError(f"index {i} outside 0..{width - 1}")
        mask |= 1 << (width - 1 - i)
    return mask


def gf2_rank(m: Gf2Matrix) -> int:
    """Rank over GF(2) by elimination on packed rows.

    Raises InconsistentSystem if some combination of rows is zero while the
    same combination of right-hand sides is one.
    """
    pivots: dict[int, tuple[int, int]] = {}  # leading bit -> (row, rhs)
    for row, b in zip(m.rows, m.rhs):
        while row:
            lead = row.bit_length() - 1
            hit = pivots.get(lead)
            if hit is None:
                pivots[lead] = (row, b)
                break
            row ^= hit[0]
            b ^= hit[1]
        else:
            if b:
                raise InconsistentSystem("parity system reduces to 0 = 1")
    return len(pivots)
