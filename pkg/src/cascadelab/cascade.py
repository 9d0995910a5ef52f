"""Cascade reconciliation with a full record of every parity Alice discloses.

Protocol details that the transcript depends on:

* pass 1 runs on the unpermuted keys; pass ``i > 1`` gathers bits through its
  permutation and uses blocks of ``k_i`` bits, the last block holding the
  remainder when ``k_i`` does not divide ``n``;
* Binary splits a block of odd length with the extra bit on the left and
  discloses Alice's parity of the left half at every level;
* after a correction in pass ``i > 1``, the blocks of passes ``1..i-1`` holding
  the corrected bit go on a look-back list, processed smallest first ordered
  by (pass, block size, block index).  Look-back Binary reuses the top-block
  parity already on record and discloses only half parities.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .bitcore import BitKey, Permutation

TOP_BLOCK = "top-block"
BINARY_HALF = "binary-half"
LOOKBACK = "lookback"
ORIGINS = (TOP_BLOCK, BINARY_HALF, LOOKBACK)

BLOCK_SIZE_FACTOR = 0.73


class ZeroQber(ValueError):
    """No initial block size can be derived from an estimated QBER of zero."""


class EvenErrorBlock(RuntimeError):
    """Binary was asked to search a block whose parities agree."""


@dataclass(frozen=True)
class BlockSchedule:
    k: tuple[int, ...]
    override: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(x) for x in self.k))
        if not self.k or min(self.k) < 1:
            raise ValueError("block sizes must be >= 1")

    @property
    def k1(self) -> int:
        return self.k[0]

    @property
    def passes(self) -> int:
        return len(self.k)


def initial_block_size(p_est: float) -> int:
    if p_est <= 0:
        raise ZeroQber("estimated QBER is zero; nothing to size blocks from")
    # 1e-9 absorbs float noise such as 0.73 / 0.073 = 10.000000000000002
    return max(1, math.ceil(BLOCK_SIZE_FACTOR / p_est - 1e-9))


def block_schedule(p_est: float, n: int, passes: int, override: int | None = None) -> BlockSchedule:
    """Block sizes per pass: ``ceil(0.73/p)`` then doubling, each capped at ``n // 2``."""
    if n < 2:
        raise ValueError("key must have at least 2 bits")
    if passes < 1:
        raise ValueError("passes must be >= 1")
    size = initial_block_size(p_est) if override is None else int(override)
    cap = n // 2
    sizes = []
    for _ in range(passes):
        sizes.append(max(1, min(size, cap)))
        size *= 2
    return BlockSchedule(tuple(sizes), override)


def partition(order: Sequence[int], k: int) -> list[tuple[int, ...]]:
    """Split a gathered ID order into consecutive blocks of ``k`` (last one shorter)."""
    return [tuple(order[i:i + k]) for i in range(0, len(order), k)]


@dataclass(frozen=True)
class ParityConstraint:
    """One parity Alice disclosed.

    ``pass_idx`` (1-based) and ``block_idx`` name the top block the bits belong
    to; ``disclosed_in`` is the pass that was running when it was sent, which
    differs from ``pass_idx`` for look-back disclosures.
    """

    pass_idx: int
    block_idx: int
    bit_ids: tuple[int, ...]
    parity: int
    origin: str
    disclosed_in: int = 0
    parity_bit_id: int = -1

    def __post_init__(self):
        ids = tuple(sorted(int(i) for i in self.bit_ids))
        if not ids or len(set(ids)) != len(ids):
            raise ValueError("bit_ids must be non-empty and distinct")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        object.__setattr__(self, "bit_ids", ids)
        object.__setattr__(self, "parity", int(self.parity) & 1)
        if not self.disclosed_in:
            object.__setattr__(self, "disclosed_in", self.pass_idx)

    def holds_for(self, bits_by_id) -> bool:
        return (sum(int(bits_by_id[i]) for i in self.bit_ids) & 1) == self.parity


@dataclass
class Transcript:
    n: int
    schedule: BlockSchedule
    permutations: list[Permutation]
    constraints: list[ParityConstraint] = field(default_factory=list)
    parity_bit_ids: set[int] = field(default_factory=set)
    corrections: list[int] = field(default_factory=list)
    residual_errors: int = 0

    @property
    def leaked_count(self) -> int:
        return len(self.constraints)

    @property
    def passes(self) -> int:
        return self.schedule.passes

    def blocks(self, pass_idx: int) -> list[tuple[int, ...]]:
        """Top blocks (as bit-ID tuples in protocol order) of a 1-based pass."""
        return partition(self.permutations[pass_idx - 1].order, self.schedule.k[pass_idx - 1])

    def add(self, constraint: ParityConstraint) -> None:
        self.constraints.append(constraint)
        if constraint.parity_bit_id >= 0:
            self.parity_bit_ids.add(constraint.parity_bit_id)

    # -- line-delimited serialisation -------------------------------------

    def records(self) -> Iterable[dict]:
        yield {"type": "header", "n": self.n, "passes": self.passes,
               "k": list(self.schedule.k), "k1_override": self.schedule.override}
        for i, perm in enumerate(self.permutations, start=1):
            yield {"type": "permutation", "pass": i, "order": list(perm.order)}
        for c in self.constraints:
            yield {"type": "constraint", "pass": c.pass_idx, "block": c.block_idx,
                   "origin": c.origin, "disclosed_in": c.disclosed_in,
                   "parity_bit": c.parity_bit_id, "bit_ids": list(c.bit_ids),
                   "parity": c.parity}
        yield {"type": "summary", "leaked_count": self.leaked_count,
               "corrections": list(self.corrections),
               "residual_errors": self.residual_errors,
               "parity_bit_ids": sorted(self.parity_bit_ids)}

    def dumps(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.records())

    def dump(self, fh: IO[str]) -> None:
        fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Transcript":
        header = None
        perms: dict[int, Permutation] = {}
        constraints = []
        summary = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("type")
            if kind == "header":
                header = rec
            elif kind == "permutation":
                perms[rec["pass"]] = Permutation(tuple(rec["order"]))
            elif kind == "constraint":
                constraints.append(ParityConstraint(
                    rec["pass"], rec["block"], tuple(rec["bit_ids"]), rec["parity"],
                    rec["origin"], rec.get("disclosed_in", 0), rec.get("parity_bit", -1)))
            elif kind == "summary":
                summary = rec
            else:
                raise ValueError(f"unknown transcript record type {kind!r}")
        if header is None:
            raise ValueError("transcript has no header record")
        schedule = BlockSchedule(tuple(header["k"]), header.get("k1_override"))
        if sorted(perms) != list(range(1, schedule.passes + 1)):
            raise ValueError("transcript permutations do not match its pass count")
        t = cls(header["n"], schedule, [perms[i] for i in sorted(perms)])
        for c in constraints:
            t.add(c)
        t.corrections = list(summary.get("corrections", []))
        t.residual_errors = summary.get("residual_errors", 0)
        return t

    @classmethod
    def load(cls, fh: IO[str]) -> "Transcript":
        return cls.loads(fh.read())


def _parity(bits, ids) -> int:
    p = 0
    for i in ids:
        p ^= bits[i]
    return p


def _binary(ids, alice, bob, transcript: Transcript, *, pass_idx, block_idx, origin, current_pass) -> int:
    """Locate and flip one error of ``bob`` inside ``ids``; returns its bit ID."""
    ids = tuple(ids)
    while len(ids) > 1:
        half = (len(ids) + 1) // 2
        left = ids[:half]
        a = _parity(alice, left)
        transcript.add(ParityConstraint(pass_idx, block_idx, left, a, origin,
                                        current_pass, left[-1]))
        ids = left if a != _parity(bob, left) else ids[half:]
    bob[ids[0]] ^= 1
    return ids[0]


def run_binary(alice_block: BitKey, bob_block: BitKey, sink: Transcript | None = None, *,
               pass_idx: int = 1, block_idx: int = 0, origin: str = BINARY_HALF) -> tuple[int, BitKey]:
    """Binary search on one block; returns the corrected bit ID and Bob's corrected block.

    The blocks are given in protocol order and carry original bit IDs.
    Disclosures go to ``sink`` when one is supplied.
    """
    if len(alice_block) != len(bob_block) or not np.array_equal(alice_block.ids, bob_block.ids):
        raise ValueError("blocks must cover the same bit IDs in the same order")
    if len(alice_block) == 0:
        raise EvenErrorBlock("empty block")
    ids = [int(i) for i in alice_block.ids]
    alice = dict(zip(ids, (int(b) for b in alice_block.bits)))
    bob = dict(zip(ids, (int(b) for b in bob_block.bits)))
    if _parity(alice, ids) == _parity(bob, ids):
        raise EvenErrorBlock("block parities agree; Binary needs an odd error count")
    if sink is None:
        sink = Transcript(len(ids), BlockSchedule((len(ids),)), [Permutation.identity(len(ids))])
    corrected = _binary(ids, alice, bob, sink, pass_idx=pass_idx, block_idx=block_idx,
                        origin=origin, current_pass=pass_idx)
    return corrected, BitKey([bob[i] for i in ids], ids)


def run_cascade(alice: BitKey, bob: BitKey, schedule: BlockSchedule,
                permutations: Sequence[Permutation]) -> tuple[BitKey, Transcript]:
    """Reconcile ``bob`` towards ``alice``; returns Bob's final key and the transcript."""
    n = len(alice)
    if len(bob) != n:
        raise ValueError(f"key lengths differ: {n} != {len(bob)}")
    if len(permutations) != schedule.passes:
        raise ValueError(f"{schedule.passes} passes need as many permutations, got {len(permutations)}")
    if any(len(p) != n for p in permutations):
        raise ValueError("permutation length differs from key length")
    if not permutations[0].is_identity():
        raise ValueError("pass 1 must use the identity permutation")

    a = [int(b) for b in alice.by_id()]
    b_ = [int(b) for b in bob.by_id()]
    transcript = Transcript(n, schedule, list(permutations), corrections=[0] * schedule.passes)

    blocks = [partition(p.order, k) for p, k in zip(permutations, schedule.k)]
    owner = []
    for pass_blocks in blocks:
        where = [0] * n
        for bi, ids in enumerate(pass_blocks):
            for i in ids:
                where[i] = bi
        owner.append(where)

    def look_back(bit: int, current: int) -> None:
        heap: list[tuple[int, int, int]] = []
        queued: set[tuple[int, int]] = set()

        def enqueue(x: int) -> None:
            for p in range(current):
                bi = owner[p][x]
                if (p, bi) not in queued:
                    queued.add((p, bi))
                    heapq.heappush(heap, (p, len(blocks[p][bi]), bi))

        enqueue(bit)
        while heap:
            p, _, bi = heapq.heappop(heap)
            queued.discard((p, bi))
            ids = blocks[p][bi]
            if _parity(a, ids) != _parity(b_, ids):
                fixed = _binary(ids, a, b_, transcript, pass_idx=p + 1, block_idx=bi,
                                origin=LOOKBACK, current_pass=current + 1)
                transcript.corrections[p] += 1
                enqueue(fixed)

    for p, pass_blocks in enumerate(blocks):
        for bi, ids in enumerate(pass_blocks):
            top = _parity(a, ids)
            transcript.add(ParityConstraint(p + 1, bi, ids, top, TOP_BLOCK, p + 1, ids[-1]))
            if top != _parity(b_, ids):
                fixed = _binary(ids, a, b_, transcript, pass_idx=p + 1, block_idx=bi,
                                origin=BINARY_HALF, current_pass=p + 1)
                transcript.corrections[p] += 1
                if p > 0:
                    look_back(fixed, p)

    transcript.residual_errors = sum(x != y for x, y in zip(a, b_))
    reconciled = BitKey(np.asarray(b_, dtype=np.uint8), np.arange(n))
    return reconciled, transcript
