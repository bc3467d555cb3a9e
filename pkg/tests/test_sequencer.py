import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtss.ahp import derive_priorities, score_snapshot
from dtss.config import DEFAULT_IMPORTANCE, DEFAULT_LEAF
from dtss.core import AttackBundle, StructuralError, Transaction, TransactionType, TxTable
from dtss.sequencer import (
    AdversarialInsertion,
    Compliant,
    FeeGreedy,
    LeafParams,
    _leaves,
    adjust_scores,
    form_block,
    form_unit_block,
    kendall_tau,
    leaf_space,
    lognormal_cdf,
    normalize_tau,
    rank_mempool,
)

from conftest import random_table
from oracles import erf_series, kendall_all_pairs, lognormal_cdf_hp

POLICIES = [Compliant(), FeeGreedy()]


def test_rank_examples():
    assert rank_mempool([1, 2, 3], [3.0, 1.0, 2.0]).ids.tolist() == [1, 3, 2]
    assert rank_mempool([9, 4, 7], [1.0, 1.0, 1.0]).ids.tolist() == [4, 7, 9]


def test_rank_matches_stable_sort_oracle():
    rng = np.random.default_rng(5)
    ids = rng.permutation(10_000)
    scores = rng.integers(0, 500, 10_000).astype(float) / 7
    expected = [i for _, i in sorted(zip(scores.tolist(), ids.tolist()), key=lambda p: (-p[0], p[1]))]
    got = rank_mempool(ids, scores)
    assert got.ids.tolist() == expected
    assert np.all(np.diff(got.scores) <= 0)


def test_kendall_examples():
    assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert kendall_tau([4, 3, 2, 1], [1, 2, 3, 4]) == -1.0
    assert kendall_tau([1, 3, 2], [1, 2, 3]) == pytest.approx(1 / 3, abs=0)
    assert kendall_tau([2, 3], [1, 2, 3, 4]) == 1.0
    with pytest.raises(StructuralError):
        kendall_tau([1, 5], [1, 2, 3])
    with pytest.raises(StructuralError):
        kendall_tau([1, 1], [1, 2, 3])


@given(st.permutations(range(12)))
def test_kendall_matches_brute_force(perm):
    ref = list(range(12))
    assert kendall_tau(perm, ref) == kendall_all_pairs(perm, ref)


def test_normalize_and_adjust():
    assert normalize_tau(1.0) == 1.0 and normalize_tau(-1.0) == 0.0 and normalize_tau(0.0) == 0.5
    with pytest.raises(ValueError):
        normalize_tau(1.01)
    s = np.array([10.0, 0.3, 7.25])
    assert np.array_equal(adjust_scores(s, 1.0), s)
    assert adjust_scores([10.0], 0.5)[0] == 5.0


def test_lognormal_examples():
    assert lognormal_cdf(math.e ** 1.3, 1.3, 0.7) == pytest.approx(0.5, abs=1e-12)
    z = (math.log(500) - 5.42) / 0.16
    assert z == pytest.approx(4.97, abs=0.01)
    oracle = 0.5 + 0.5 * erf_series(z / math.sqrt(2))
    assert lognormal_cdf(500, 5.42, 0.16) == pytest.approx(oracle, abs=1e-12)
    assert abs(lognormal_cdf(500, 5.42, 0.16) - 1.0) <= 1e-6
    with pytest.raises(ValueError):
        lognormal_cdf(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        lognormal_cdf(1.0, 0.0, 0.0)


@given(st.floats(1e-3, 1e3), st.floats(-3, 3), st.floats(0.05, 3))
def test_lognormal_matches_high_precision(x, mu, sigma):
    assert lognormal_cdf(x, mu, sigma) == pytest.approx(lognormal_cdf_hp(x, mu, sigma), abs=1e-14)


def test_leaf_examples():
    leaf = LeafParams(scale=0.4, shape=0.3, leaf_scale=100)
    assert leaf_space(math.exp(0.4), leaf) == 50
    assert leaf_space(1e-12, leaf) == 1
    assert _leaves(np.array([0.0]), leaf).tolist() == [1]
    big = leaf_space(np.full(21, 1e6), leaf)
    assert big.tolist() == [100] * 21 and big.sum() == 2100
    with pytest.raises(ValueError):
        leaf_space(0.0, leaf)
    with pytest.raises(ValueError):
        LeafParams(shape=0.0)
    with pytest.raises(ValueError):
        LeafParams(leaf_scale=100, budget=50)


def _mempool(seed, n):
    table = random_table(np.random.default_rng(seed), n)
    scores = score_snapshot(table, derive_priorities(DEFAULT_IMPORTANCE))
    return table, rank_mempool(table.ids, scores)


def test_empty_mempool():
    table = TxTable.from_transactions([])
    b = form_block(Compliant(), table, rank_mempool([], []), DEFAULT_LEAF)
    assert b.txs == () and b.total_leaves == 0 and b.kendall_c == 1.0


@settings(max_examples=150)
@given(st.integers(0, 2**32 - 1), st.integers(1, 400), st.floats(-1.0, 2.0), st.floats(0.1, 1.0),
       st.integers(1, 200), st.integers(0, 2))
def test_block_invariants_under_fuzz(seed, n, scale, shape, leaf_scale, pol):
    leaf = LeafParams(scale, shape, leaf_scale, max(leaf_scale, 2100))
    table, ranked = _mempool(seed, n)
    if pol == 2:
        r = ranked.ids[::-1]
        bundles = tuple(AttackBundle("sandwich", int(r[i + 1]), (int(r[i]),), (int(r[i + 2]),))
                        for i in range(0, min(n, 30) - 2, 3))
        policy = AdversarialInsertion(bundles)
    else:
        policy = POLICIES[pol]
    b = form_block(policy, table, ranked, leaf)
    assert b.total_leaves <= leaf.budget
    assert len(set(b.txs)) == len(b.txs)
    assert b.kendall_c == pytest.approx(kendall_all_pairs(b.txs, ranked.ids.tolist()), abs=1e-12)
    s_prime = ranked.scores[ranked.positions(b.txs)] * b.z
    assert list(b.leaf_allocs) == _leaves(s_prime, leaf).tolist()
    # Stopping at the first overflow: the next candidate could not have been added.
    if len(b.txs) < n and pol == 0:
        nxt = ranked.scores[len(b.txs)]
        assert b.total_leaves + _leaves(np.array([nxt]), leaf)[0] > leaf.budget


@given(st.integers(0, 2**32 - 1), st.integers(1, 300))
def test_compliant_identity(seed, n):
    table, ranked = _mempool(seed, n)
    b = form_block(Compliant(), table, ranked, DEFAULT_LEAF)
    assert b.kendall_c == 1.0 and b.z == 1.0
    assert b.txs == tuple(ranked.ids[: len(b.txs)].tolist())
    s = ranked.scores[: len(b.txs)]
    assert np.array_equal(adjust_scores(s, b.z), s)
    assert list(b.leaf_allocs) == _leaves(s, DEFAULT_LEAF).tolist()


def test_fee_greedy_orders_by_fee():
    table, ranked = _mempool(3, 200)
    b = form_unit_block(FeeGreedy(), table, ranked, 50)
    fees = table.fee_pct[table.rows_of(b.txs)]
    assert len(b.txs) == 50 and np.all(np.diff(fees) <= 0)
    assert b.leaf_allocs == (1,) * 50


def _crafted_snapshot():
    txs = [Transaction(i, TransactionType(i % 5), float(100 + 10 * i), 0.001 + 0.0001 * (i % 7), float(i))
           for i in range(50)]
    table = TxTable.from_transactions(txs)
    ranked = rank_mempool(table.ids, score_snapshot(table, derive_priorities(DEFAULT_IMPORTANCE)))
    low = [int(t) for t in ranked.ids[-6:]]
    bundles = (AttackBundle("sandwich", low[1], (low[0],), (low[2],)),
               AttackBundle("sandwich", low[4], (low[3],), (low[5],)))
    return table, ranked, bundles


def test_adversarial_insertion_packs_more_transactions():
    leaf = LeafParams(scale=0.0, shape=0.5, leaf_scale=100, budget=1000)
    table, ranked, bundles = _crafted_snapshot()
    honest = form_block(Compliant(), table, ranked, leaf)
    attack = form_block(AdversarialInsertion(bundles), table, ranked, leaf)
    assert attack.z < 1
    assert len(attack.txs) > len(honest.txs) and attack.byte_size > honest.byte_size
    assert (len(honest.txs), honest.byte_size) == (10, 5000)
    assert (len(attack.txs), attack.byte_size) == (18, 9000)
    assert attack.kendall_c == pytest.approx(1 / 17, abs=1e-15)
    assert attack.txs[:6] == (bundles[0].front[0], bundles[0].victim, bundles[0].back[0],
                              bundles[1].front[0], bundles[1].victim, bundles[1].back[0])


def test_block_formation_is_deterministic():
    table, ranked, bundles = _crafted_snapshot()
    runs = [form_block(AdversarialInsertion(bundles), table, ranked, DEFAULT_LEAF) for _ in range(2)]
    assert runs[0] == runs[1]
