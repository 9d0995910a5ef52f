import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadelab.bitcore import BitKey, Permutation, seeded_permutation
from cascadelab.cascade import (
    BINARY_HALF,
    LOOKBACK,
    TOP_BLOCK,
    EvenErrorBlock,
    ParityConstraint,
    Transcript,
    ZeroQber,
    block_schedule,
    initial_block_size,
    partition,
    run_binary,
    run_cascade,
)
from cascadelab.harness import fixture_permutations, load_fixture
from cascadelab.leakage import l_max

ALICE = "1111000011110000"
BOB = "1110000111100111"


def fixture_run(name):
    fx = load_fixture(name)
    n = len(fx["alice"])
    schedule = block_schedule(0.0, n, fx["passes"], override=fx["k1"])
    return fx, run_cascade(BitKey.from_string(fx["alice"]), BitKey.from_string(fx["bob"]),
                           schedule, fixture_permutations(fx, n))


def test_initial_block_size():
    assert initial_block_size(0.103) == 8
    assert initial_block_size(0.073) == 10
    assert initial_block_size(0.05) == 15
    with pytest.raises(ZeroQber):
        initial_block_size(0.0)


def test_schedule_doubles_and_caps():
    assert block_schedule(0.103, 100, 3).k == (8, 16, 32)
    assert block_schedule(0.05, 28, 3).k == (14, 14, 14)
    assert block_schedule(0.0, 16, 2, override=4).k == (4, 8)


def test_partition_keeps_remainder_last():
    assert partition(range(10), 4) == [(0, 1, 2, 3), (4, 5, 6, 7), (8, 9)]


def test_binary_splits_left_heavy():
    alice = BitKey.from_bits([0, 0, 0, 0, 0])
    bob = BitKey.from_bits([0, 0, 0, 1, 0])
    sink = Transcript(5, block_schedule(0.0, 5, 1, override=5), [Permutation.identity(5)])
    fixed, corrected = run_binary(alice, bob, sink)
    assert fixed == 3 and str(corrected) == "00000"
    assert [c.bit_ids for c in sink.constraints] == [(0, 1, 2), (3,)]
    with pytest.raises(EvenErrorBlock):
        run_binary(alice, alice)


@pytest.mark.parametrize("name,leaked,corrections,reconciled", [
    ("example1", 19, [5, 1], "1111000011110000"),
    ("example2", 19, [5, 1], "1111000011110000"),
    ("example3", 19, [5, 1], "1111000011110000"),
    ("example4", 14, [4, 0], "1111000011110011"),
])
def test_fixture_transcripts(name, leaked, corrections, reconciled):
    fx, (key, tr) = fixture_run(name)
    assert str(key) == reconciled
    assert tr.leaked_count == leaked
    assert tr.corrections == corrections
    assert tr.leaked_count <= l_max(16, tr.schedule, tr.corrections)


def test_lookback_constraints_are_tagged():
    _, (_, tr) = fixture_run("example1")
    back = [c for c in tr.constraints if c.origin == LOOKBACK]
    assert back and all(c.pass_idx == 1 and c.disclosed_in == 2 for c in back)
    tops = [c for c in tr.constraints if c.origin == TOP_BLOCK]
    assert len(tops) == 4 + 2


def test_transcript_roundtrip():
    _, (_, tr) = fixture_run("example3")
    text = tr.dumps()
    back = Transcript.loads(text)
    assert back.dumps() == text
    buf = io.StringIO()
    tr.dump(buf)
    assert Transcript.load(io.StringIO(buf.getvalue())).constraints == tr.constraints


def test_constraint_validation():
    with pytest.raises(ValueError):
        ParityConstraint(1, 0, (), 0, TOP_BLOCK)
    with pytest.raises(ValueError):
        ParityConstraint(1, 0, (1, 1), 0, TOP_BLOCK)
    with pytest.raises(ValueError):
        ParityConstraint(1, 0, (1,), 0, "nonsense")
    c = ParityConstraint(2, 0, (3, 1), 1, BINARY_HALF)
    assert c.bit_ids == (1, 3) and c.disclosed_in == 2


def test_pass_one_must_be_identity():
    a = BitKey.from_string(ALICE)
    with pytest.raises(ValueError):
        run_cascade(a, a, block_schedule(0.0, 16, 2, override=4),
                    [seeded_permutation(16, 1), seeded_permutation(16, 2)])


@st.composite
def key_pairs(draw):
    n = draw(st.integers(4, 48))
    alice = np.array(draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)), dtype=np.uint8)
    flips = np.array(draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    k1 = draw(st.integers(2, max(2, n // 2)))
    passes = draw(st.integers(1, 4))
    seeds = draw(st.lists(st.integers(0, 2**32), min_size=passes, max_size=passes))
    return alice, alice ^ flips.astype(np.uint8), k1, passes, seeds


@given(key_pairs())
def test_every_disclosure_is_alices_parity(case):
    alice, bob, k1, passes, seeds = case
    n = len(alice)
    perms = [Permutation.identity(n)] + [seeded_permutation(n, s) for s in seeds[1:]]
    key, tr = run_cascade(BitKey.from_bits(alice), BitKey.from_bits(bob),
                          block_schedule(0.0, n, passes, override=k1), perms)
    assert all(c.holds_for(alice) for c in tr.constraints)
    assert tr.residual_errors == int(np.count_nonzero(key.bits != alice))
    # every later flip re-checks its pass-1 block, so those end with even error counts
    for ids in tr.blocks(1):
        assert np.count_nonzero(key.bits[list(ids)] != alice[list(ids)]) % 2 == 0
    # Binary only ever flips genuine errors
    assert tr.residual_errors == np.count_nonzero(bob != alice) - sum(tr.corrections)
    assert tr.leaked_count <= l_max(n, tr.schedule, tr.corrections)


@given(key_pairs())
def test_identical_keys_leak_top_parities_only(case):
    alice, _, k1, passes, seeds = case
    n = len(alice)
    perms = [Permutation.identity(n)] + [seeded_permutation(n, s) for s in seeds[1:]]
    key, tr = run_cascade(BitKey.from_bits(alice), BitKey.from_bits(alice),
                          block_schedule(0.0, n, passes, override=k1), perms)
    assert np.array_equal(key.bits, alice)
    assert tr.leaked_count == sum(len(tr.blocks(p)) for p in range(1, passes + 1))
