"""Eve's keyspace sieve over a Cascade transcript.

Pass-1 blocks are filtered independently against a codebook of every
``k``-bit pattern and its parity block; the survivors are combined into
pass-1 candidate keys, which are then streamed in chunks through the parities
disclosed in later passes.

Keys are packed MSB-first (bit ID 0 is the top bit).  Keys of up to 64 bits
live in ``uint64`` arrays; longer keys fall back to object arrays of Python
ints, which is correct but slow.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .bitcore import Gf2Matrix, gf2_rank, index_mask
from .cascade import ParityConstraint, Transcript

DEFAULT_MAX_WIDTH = 20
DEFAULT_MAX_CANDIDATES = 1 << 26
WORD_BITS = 64


class WidthTooLarge(ValueError):
    pass


class SearchSpaceExceeded(RuntimeError):
    """Pass-1 candidates would not fit under ``max_candidates``."""

    def __init__(self, log2_size: float, limit: int):
        super().__init__(f"pass-1 search space 2^{log2_size:.2f} exceeds cap {limit}")
        self.log2_size = log2_size
        self.limit = limit


def canonical_checks(k: int) -> tuple[tuple[int, int], ...]:
    """Half-open offset ranges Binary can disclose on a ``k``-bit block, by final offset.

    That is the whole block plus, recursively, the left half of every
    sub-block Binary may visit (left half gets the extra bit).
    """
    ranges = [(0, k)]

    def visit(start: int, end: int) -> None:
        if end - start < 2:
            return
        mid = start + (end - start + 1) // 2
        ranges.append((start, mid))
        visit(start, mid)
        visit(mid, end)

    visit(0, k)
    return tuple(sorted(ranges, key=lambda r: r[1]))


def _range_mask(start: int, end: int, k: int) -> int:
    return index_mask(range(start, end), k)


def _popparity(values: np.ndarray, mask) -> np.ndarray:
    if values.dtype == object:
        return np.fromiter(((int(v) & mask).bit_count() & 1 for v in values),
                           dtype=np.uint8, count=len(values))
    return (np.bitwise_count(values & np.uint64(mask)) & 1).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class BlockCodebook:
    k: int
    blocks: np.ndarray
    parity_blocks: np.ndarray
    checks: tuple[tuple[int, int], ...]

    def column(self, start: int, end: int) -> int | None:
        try:
            return self.checks.index((start, end))
        except ValueError:
            return None

    def parity_rows(self) -> np.ndarray:
        """Parity blocks unpacked to a ``(2**k, k)`` 0/1 array."""
        shifts = np.arange(self.k - 1, -1, -1, dtype=np.uint64)
        return ((self.parity_blocks[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)


@lru_cache(maxsize=32)
def build_codebook(k: int, max_width: int = DEFAULT_MAX_WIDTH) -> BlockCodebook:
    if k < 1:
        raise ValueError("block width must be >= 1")
    if k > max_width:
        raise WidthTooLarge(f"2^{k} block patterns exceed the width limit of {max_width}")
    blocks = np.arange(1 << k, dtype=np.uint64)
    checks = canonical_checks(k)
    parity_blocks = np.zeros_like(blocks)
    for col, (start, end) in enumerate(checks):
        bit = np.uint64(1 << (k - 1 - col))
        parity_blocks |= np.where(_popparity(blocks, _range_mask(start, end, k)) == 1, bit, np.uint64(0))
    blocks.setflags(write=False)
    parity_blocks.setflags(write=False)
    return BlockCodebook(k, blocks, parity_blocks, checks)


def filter_block(codebook: BlockCodebook, block_ids: Sequence[int],
                 constraints: Iterable[ParityConstraint],
                 eve_bits: Mapping[int, int] | None = None) -> np.ndarray:
    """Every ``k``-bit pattern consistent with the block's constraints and Eve's bits.

    Canonical sub-range checks become one (care, want) test on the parity
    blocks; any other subset is checked by masked XOR on the patterns.  All
    tests are combined into a single boolean pass over the codebook.
    """
    k = codebook.k
    if len(block_ids) != k:
        raise ValueError(f"block has {len(block_ids)} IDs, codebook width is {k}")
    offset = {int(b): j for j, b in enumerate(block_ids)}
    care = want = 0
    extra: list[tuple[int, int]] = []
    for c in constraints:
        try:
            offs = sorted(offset[i] for i in c.bit_ids)
        except KeyError:
            raise ValueError(f"constraint {c.bit_ids} reaches outside the block") from None
        col = None
        if offs == list(range(offs[0], offs[-1] + 1)):
            col = codebook.column(offs[0], offs[-1] + 1)
        if col is None:
            extra.append((index_mask(offs, k), c.parity))
            continue
        bit = 1 << (k - 1 - col)
        if care & bit and bool(want & bit) != bool(c.parity):
            return np.empty(0, dtype=np.uint64)
        care |= bit
        if c.parity:
            want |= bit
    known_mask = known_val = 0
    for i, v in (eve_bits or {}).items():
        j = offset.get(int(i))
        if j is not None:
            known_mask |= 1 << (k - 1 - j)
            if v:
                known_val |= 1 << (k - 1 - j)

    keep = ((codebook.parity_blocks & np.uint64(care)) == np.uint64(want)) & \
           ((codebook.blocks & np.uint64(known_mask)) == np.uint64(known_val))
    for mask, p in extra:
        keep &= _popparity(codebook.blocks, mask) == p
    return codebook.blocks[keep]


@dataclass(frozen=True, eq=False)
class CandidateSet:
    n: int
    keys: np.ndarray
    truncated: bool = False
    log2_bound: float | None = None

    @property
    def space(self) -> int:
        return len(self.keys)

    @property
    def log2_space(self) -> float | None:
        if self.truncated or not self.space:
            return None
        return math.log2(self.space)

    def bitstrings(self) -> list[str]:
        return [format(int(v), f"0{self.n}b") for v in self.keys]

    def __contains__(self, key) -> bool:
        if isinstance(key, str):
            key = int(key, 2)
        return bool(np.any(self.keys == (np.uint64(key) if self.keys.dtype != object else key)))

    def summary(self) -> dict:
        return {"n": self.n, "space": self.space, "log2_space": self.log2_space,
                "truncated": self.truncated}

    def write(self, fh: IO[str]) -> None:
        """First line ``# {summary json}``, then one bitstring per line."""
        fh.write("# " + json.dumps(self.summary(), separators=(",", ":")) + "\n")
        for s in self.bitstrings():
            fh.write(s + "\n")


def read_candidates(fh: IO[str]) -> CandidateSet:
    lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError("candidate file lacks its summary line")
    head = json.loads(lines[0][2:])
    keys = [int(s, 2) for s in lines[1:] if s]
    n = head["n"]
    arr = np.array(keys, dtype=np.uint64 if n <= WORD_BITS else object)
    return CandidateSet(n, arr, head["truncated"])


def _empty_keys(n: int) -> np.ndarray:
    return np.empty(0, dtype=np.uint64 if n <= WORD_BITS else object)


def combine(valid_blocks: Sequence[np.ndarray], widths: Sequence[int],
            max_candidates: int = DEFAULT_MAX_CANDIDATES) -> CandidateSet:
    """Cartesian product of per-block survivors, first block in the top bits."""
    if len(valid_blocks) != len(widths):
        raise ValueError("one width per block list is required")
    n = int(sum(widths))
    sizes = [len(v) for v in valid_blocks]
    if any(s == 0 for s in sizes):
        return CandidateSet(n, _empty_keys(n))
    total = math.prod(sizes)
    if total > max_candidates:
        raise SearchSpaceExceeded(sum(math.log2(s) for s in sizes), max_candidates)
    if n <= WORD_BITS:
        keys = np.zeros(1, dtype=np.uint64)
        for vals, w in zip(valid_blocks, widths):
            vals = np.sort(np.asarray(vals, dtype=np.uint64))
            keys = ((keys[:, None] << np.uint64(w)) | vals[None, :]).ravel()
    else:
        keys = np.array([0], dtype=object)
        for vals, w in zip(valid_blocks, widths):
            vals = sorted(int(v) for v in vals)
            keys = np.array([(int(k) << w) | v for k in keys for v in vals], dtype=object)
    return CandidateSet(n, keys)


def constraint_mask(c: ParityConstraint, n: int) -> int:
    return index_mask(c.bit_ids, n)


def _filter_chunk(keys: np.ndarray, stages: Sequence[Sequence[tuple[int, int]]]) -> tuple[np.ndarray, list[int]]:
    counts = []
    for stage in stages:
        for mask, p in stage:
            if not len(keys):
                break
            keys = keys[_popparity(keys, mask) == p]
        counts.append(len(keys))
    return keys, counts


def _chunks(keys: np.ndarray, size: int) -> list[np.ndarray]:
    return [keys[i:i + size] for i in range(0, len(keys), size)] or [keys]


def filter_candidates(candidates: CandidateSet, transcript: Transcript, *,
                      chunk_size: int = 1 << 16, workers: int = 1,
                      per_pass: list[int] | None = None) -> CandidateSet:
    """Keep candidates satisfying every parity disclosed during passes 2 and later.

    Chunks are filtered independently (in a thread pool when ``workers > 1``)
    and merged in chunk order, so the output is ascending whatever the
    chunking.  If ``per_pass`` is given, survivor counts after each later
    pass are appended to it.
    """
    if chunk_size < 1 or workers < 1:
        raise ValueError("chunk_size and workers must be >= 1")
    n = candidates.n
    stages = []
    for p in range(2, transcript.passes + 1):
        stages.append([(constraint_mask(c, n), c.parity)
                       for c in transcript.constraints if c.disclosed_in == p])
    chunks = _chunks(candidates.keys, chunk_size)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda ch: _filter_chunk(ch, stages), chunks))
    else:
        results = [_filter_chunk(ch, stages) for ch in chunks]
    if per_pass is not None:
        per_pass.extend(int(sum(r[1][i] for r in results)) for i in range(len(stages)))
    parts = [r[0] for r in results]
    keys = np.concatenate(parts) if parts else _empty_keys(n)
    return CandidateSet(n, keys)


def oracle_search_space(transcript: Transcript | Sequence[ParityConstraint],
                        eve_bits: Mapping[int, int] | None, n: int) -> int:
    """``n - rank`` of the disclosed parities plus one unit row per known bit."""
    constraints = transcript.constraints if isinstance(transcript, Transcript) else transcript
    rows = [constraint_mask(c, n) for c in constraints]
    rhs = [c.parity for c in constraints]
    for i, v in sorted((eve_bits or {}).items()):
        rows.append(1 << (n - 1 - int(i)))
        rhs.append(int(v))
    return n - gf2_rank(Gf2Matrix(tuple(rows), tuple(rhs), n))


def brute_force_keys(constraints: Sequence[ParityConstraint], eve_bits: Mapping[int, int] | None,
                     n: int) -> np.ndarray:
    """All ``n``-bit keys consistent with ``constraints`` and ``eve_bits``, by enumeration."""
    if n > 26:
        raise WidthTooLarge("exhaustive enumeration is limited to 26 bits")
    keys = np.arange(1 << n, dtype=np.uint64)
    for c in constraints:
        keys = keys[_popparity(keys, constraint_mask(c, n)) == c.parity]
    for i, v in (eve_bits or {}).items():
        bit = np.uint64(1 << (n - 1 - int(i)))
        keys = keys[((keys & bit) != 0) == bool(v)]
    return keys


@dataclass
class SieveResult:
    candidates: CandidateSet
    space_pass1: int | None
    log2_pass1: float
    space_per_pass: list[int] = field(default_factory=list)

    @property
    def space(self) -> int | None:
        return None if self.candidates.truncated else self.candidates.space


def pass1_block_constraints(transcript: Transcript) -> list[list[ParityConstraint]]:
    per_block: list[list[ParityConstraint]] = [[] for _ in transcript.blocks(1)]
    for c in transcript.constraints:
        if c.disclosed_in == 1:
            per_block[c.block_idx].append(c)
    return per_block


def run_sieve(transcript: Transcript, eve_bits: Mapping[int, int] | None = None, *,
              max_candidates: int = DEFAULT_MAX_CANDIDATES, chunk_size: int = 1 << 16,
              workers: int = 1, max_width: int = DEFAULT_MAX_WIDTH) -> SieveResult:
    """Full passive phase: per-block filtering, combination, then later-pass filtering.

    A pass-1 space above ``max_candidates`` gives a truncated, empty result
    carrying the log2 of the would-be size rather than raising.
    """
    if not transcript.permutations[0].is_identity():
        raise ValueError("pass 1 must be unpermuted")
    eve_bits = dict(eve_bits or {})
    blocks = transcript.blocks(1)
    per_block = pass1_block_constraints(transcript)

    def one(bi: int) -> np.ndarray:
        ids = blocks[bi]
        return filter_block(build_codebook(len(ids), max_width), ids, per_block[bi], eve_bits)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            valid = list(pool.map(one, range(len(blocks))))
    else:
        valid = [one(bi) for bi in range(len(blocks))]
    widths = [len(b) for b in blocks]
    sizes = [len(v) for v in valid]
    log2_pass1 = float("-inf") if 0 in sizes else sum(math.log2(s) for s in sizes)
    try:
        pass1 = combine(valid, widths, max_candidates)
    except SearchSpaceExceeded as exc:
        empty = CandidateSet(transcript.n, _empty_keys(transcript.n), True, exc.log2_size)
        return SieveResult(empty, None, exc.log2_size)
    per_pass: list[int] = []
    final = filter_candidates(pass1, transcript, chunk_size=chunk_size, workers=workers,
                              per_pass=per_pass)
    return SieveResult(final, pass1.space, log2_pass1, [pass1.space] + per_pass)
