import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadelab.bitcore import BitKey, InconsistentSystem, Permutation, bits_to_int, seeded_permutation
from cascadelab.cascade import TOP_BLOCK, ParityConstraint, block_schedule, run_cascade
from cascadelab.harness import replay
from cascadelab.sieve import (
    CandidateSet,
    SearchSpaceExceeded,
    WidthTooLarge,
    brute_force_keys,
    build_codebook,
    canonical_checks,
    combine,
    filter_block,
    filter_candidates,
    oracle_search_space,
    read_candidates,
    run_sieve,
)

from conftest import small_sessions

# Block -> (P0, P01, P2, P0123) for every 4-bit pattern
CODEBOOK_4 = {
    "0000": "0000", "0001": "0001", "0010": "0011", "0011": "0010",
    "0100": "0101", "0101": "0100", "0110": "0110", "0111": "0111",
    "1000": "1101", "1001": "1100", "1010": "1110", "1011": "1111",
    "1100": "1000", "1101": "1001", "1110": "1011", "1111": "1010",
}


def test_canonical_checks():
    assert canonical_checks(4) == ((0, 1), (0, 2), (2, 3), (0, 4))
    assert canonical_checks(1) == ((0, 1),)
    assert canonical_checks(3) == ((0, 1), (0, 2), (0, 3))


def test_codebook_width_four():
    cb = build_codebook(4)
    got = {format(int(b), "04b"): format(int(p), "04b") for b, p in zip(cb.blocks, cb.parity_blocks)}
    assert got == CODEBOOK_4
    assert cb.parity_rows().shape == (16, 4)


@pytest.mark.parametrize("k", range(1, 13))
def test_codebook_is_a_bijection(k):
    cb = build_codebook(k)
    assert len(np.unique(cb.parity_blocks)) == 2**k


def test_codebook_width_limit():
    with pytest.raises(WidthTooLarge):
        build_codebook(21)
    with pytest.raises(ValueError):
        build_codebook(0)


def test_filter_block_with_eve_bits():
    cb = build_codebook(4)
    top = ParityConstraint(1, 0, (0, 1, 2, 3), 0, TOP_BLOCK)
    assert len(filter_block(cb, (0, 1, 2, 3), [top])) == 8
    assert len(filter_block(cb, (0, 1, 2, 3), [top], {0: 1, 3: 1})) == 2
    # a non-canonical subset goes through the masked-XOR path
    odd = ParityConstraint(1, 0, (1, 3), 1, TOP_BLOCK)
    got = filter_block(cb, (0, 1, 2, 3), [top, odd])
    assert len(got) == 4
    assert all(((int(v) >> 2) ^ int(v)) & 1 for v in got)


def test_combine_and_limits():
    cs = combine([np.array([1, 2], np.uint64), np.array([0, 3], np.uint64)], [2, 2])
    assert cs.bitstrings() == ["0100", "0111", "1000", "1011"]
    assert cs.space == 4 and cs.log2_space == 2.0
    with pytest.raises(SearchSpaceExceeded):
        combine([np.arange(8, dtype=np.uint64)] * 3, [3, 3, 3], max_candidates=100)
    assert combine([np.array([], np.uint64)], [2]).space == 0


def test_candidate_file_roundtrip():
    cs = replay("example4").sieve.candidates
    buf = io.StringIO()
    cs.write(buf)
    back = read_candidates(io.StringIO(buf.getvalue()))
    assert back.bitstrings() == cs.bitstrings()
    assert buf.getvalue().startswith("# {")


@pytest.mark.parametrize("name,space,per_pass", [
    ("example1", 1, [16, 1]), ("example2", 2, [16, 2]), ("example3", 4, [16, 4]), ("example4", 8, [16, 8]),
])
def test_fixture_spaces(name, space, per_pass):
    res = replay(name).sieve
    assert res.space == space and res.space_per_pass == per_pass
    tr = replay(name).transcript
    assert 2 ** oracle_search_space(tr, {}, 16) == space
    assert "1111000011110000" in res.candidates


def test_oracle_examples():
    assert oracle_search_space([], {}, 12) == 12
    assert oracle_search_space([], {i: 0 for i in range(6)}, 6) == 0
    bad = [ParityConstraint(1, 0, (0, 1), 0, TOP_BLOCK), ParityConstraint(1, 0, (0, 1), 1, TOP_BLOCK)]
    with pytest.raises(InconsistentSystem):
        oracle_search_space(bad, {}, 4)


def test_truncation_is_reported():
    runs = small_sessions(1, raw_len=96, max_n=32, rhos=(0.0,), k1_choices=(8,))
    tr = runs[0].transcript
    res = run_sieve(tr, {}, max_candidates=4)
    assert res.candidates.truncated and res.space is None and res.candidates.log2_space is None
    assert res.log2_pass1 > 2


@pytest.fixture(scope="module")
def sessions():
    return small_sessions(25, raw_len=48, max_n=16)


def test_sieve_equals_brute_force_and_rank(sessions):
    for run in sessions:
        tr, n = run.transcript, run.outcome.n_reconciled
        eve = run.knowledge.known_bits
        res = run_sieve(tr, eve)
        brute = brute_force_keys(tr.constraints, eve, n)
        assert np.array_equal(np.sort(res.candidates.keys), np.sort(brute))
        assert res.space == 2 ** oracle_search_space(tr, eve, n)
        assert bits_to_int(run.alice.bits) in set(int(k) for k in res.candidates.keys)


@pytest.mark.parametrize("chunk", [1, 7, 64, None])
@pytest.mark.parametrize("workers", [1, 4])
def test_chunk_and_worker_invariance(sessions, chunk, workers):
    for run in sessions[:8]:
        ref = run_sieve(run.transcript, run.knowledge.known_bits)
        size = chunk or max(1, ref.space_pass1 or 1)
        got = run_sieve(run.transcript, run.knowledge.known_bits, chunk_size=size, workers=workers)
        assert np.array_equal(got.candidates.keys, ref.candidates.keys)
        assert got.space_per_pass == ref.space_per_pass


@st.composite
def constraint_systems(draw):
    n = draw(st.integers(2, 12))
    truth = draw(st.integers(0, 2**n - 1))
    bits = [(truth >> (n - 1 - i)) & 1 for i in range(n)]
    sets = draw(st.lists(st.sets(st.integers(0, n - 1), min_size=1), max_size=10))
    cons = [ParityConstraint(1, 0, tuple(s), sum(bits[i] for i in s) & 1, TOP_BLOCK) for s in sets]
    return n, truth, cons


@given(constraint_systems())
def test_adding_constraints_never_grows_the_set(case):
    n, truth, cons = case
    previous = None
    for j in range(len(cons) + 1):
        keys = set(int(k) for k in brute_force_keys(cons[:j], {}, n))
        assert truth in keys
        assert len(keys) == 2 ** oracle_search_space(cons[:j], {}, n)
        if previous is not None:
            assert keys <= previous
        previous = keys


@given(st.integers(4, 24), st.integers(2, 8), st.integers(0, 2**32), st.data())
def test_identical_keys_sieve_matches_rank(n, k1, seed, data):
    k1 = min(k1, n // 2)
    bits = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    flips = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    alice = BitKey.from_bits(bits)
    bob = BitKey.from_bits([a ^ f for a, f in zip(bits, flips)])
    perms = [Permutation.identity(n), seeded_permutation(n, seed)]
    _, tr = run_cascade(alice, bob, block_schedule(0.0, n, 2, override=k1), perms)
    res = run_sieve(tr, {})
    assert res.space == 2 ** oracle_search_space(tr, {}, n)
    assert bits_to_int(bits) in set(int(k) for k in res.candidates.keys)
    staged = filter_candidates(CandidateSet(n, res.candidates.keys), tr)
    assert np.array_equal(staged.keys, res.candidates.keys)
