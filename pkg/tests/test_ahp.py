import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtss.ahp import (
    EPS,
    ImportanceParams,
    ParameterError,
    PriorityVectors,
    build_attr_matrix,
    build_type_matrix,
    derive_priorities,
    is_hierarchy_admissible,
    is_reciprocal,
    normalize_attributes,
    priority_vector,
    score_snapshot,
    score_transaction,
)
from dtss.core import Transaction, TransactionType as T

from conftest import random_table
from oracles import dense_score
from reference_vectors import GA_IMPORTANCE as GA_ROW

levels = st.floats(0.01, 100.0)


def test_all_ones_matrices():
    p = ImportanceParams()
    assert np.array_equal(build_type_matrix(p), np.ones((5, 5)))
    assert np.array_equal(build_attr_matrix(p), np.ones((3, 3)))
    assert np.allclose(priority_vector(np.ones((5, 5))), 1.0)


def test_ga_row_entries():
    p = ImportanceParams.from_sequence(GA_ROW)
    m = build_type_matrix(p)
    assert m[T.SecurityTrading, T.Payment] == 0.68
    assert m[T.Payment, T.SecurityTrading] == 1 / 0.68
    assert build_attr_matrix(p)[2, 0] == 9952.0
    assert build_attr_matrix(p)[2, 1] == 9644.0


def test_non_positive_level_rejected():
    with pytest.raises(ParameterError):
        ImportanceParams(a3=0.0)
    with pytest.raises(ParameterError):
        ImportanceParams(a12=-2.0)


def test_two_by_two_hand_computation():
    assert np.allclose(priority_vector(np.array([[1, 2], [0.5, 1]])), [4 / 3, 2 / 3], atol=1e-15)


@given(st.lists(levels, min_size=13, max_size=13))
def test_matrices_reciprocal_and_weights_sum_to_n(vals):
    p = ImportanceParams.from_sequence(vals)
    for m in (build_type_matrix(p), build_attr_matrix(p)):
        assert is_reciprocal(m, tol=1e-9)
        w = priority_vector(m)
        # Direct summation oracle: each column of the normalised matrix sums to 1.
        total = sum(sum(m[i, j] / sum(m[r, j] for r in range(len(m))) for i in range(len(m))) for j in range(len(m)))
        assert abs(w.sum() - len(m)) < 1e-12
        assert abs(total - len(m)) < 1e-12


@given(st.lists(levels, min_size=10, max_size=10), st.permutations(range(5)))
def test_priority_vector_permutation_equivariance(vals, perm):
    m = build_type_matrix(ImportanceParams.from_sequence([*vals, 1, 1, 1]))
    perm = np.array(perm)
    assert np.allclose(priority_vector(m[np.ix_(perm, perm)]), priority_vector(m)[perm], rtol=1e-12)


def test_admissibility():
    assert not is_hierarchy_admissible(ImportanceParams())
    from dtss.config import DEFAULT_IMPORTANCE

    pv = derive_priorities(DEFAULT_IMPORTANCE)
    assert is_hierarchy_admissible(pv)
    v1 = pv.v1
    assert v1[T.SecurityTrading] > v1[T.Instruction] > v1[T.Payment] > v1[T.Transfer] > v1[T.Statement]


def test_normalization_examples():
    one = [Transaction(0, T.Payment, 5.0, 0.01, 3.0)]
    assert np.array_equal(normalize_attributes(one)[1], [[1.0, 1.0, 1.0]])
    two = [Transaction(0, T.Payment, 0.0, 0.01, 3.0), Transaction(1, T.Payment, 100.0, 0.01, 3.0)]
    assert np.allclose(normalize_attributes(two)[1][:, 0], [EPS, 1.0], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        normalize_attributes([])


@given(st.integers(0, 2**32 - 1), st.integers(2, 60))
def test_latest_initiated_has_minimum_time_score(seed, n):
    table = random_table(np.random.default_rng(seed), n)
    _, tri = normalize_attributes(table)
    latest = sorted(range(n), key=lambda i: table.init_time[i])[-1]
    assert tri[latest, 1] == tri[:, 1].min()
    assert np.all((tri >= EPS) & (tri <= 1.0))
    cheapest = int(np.argmin(table.fee_pct))
    assert tri[cheapest, 2] == tri[:, 2].max()


def test_single_attribute_reduction():
    pv = PriorityVectors((1.0,) * 5, (1.0, 0.0, 0.0))
    assert score_transaction(Transaction(0, T.Transfer, 1, 0, 0), pv, (0.7, 0.3, 0.2)) == pytest.approx(0.7)


@given(st.integers(0, 2**32 - 1), st.lists(levels, min_size=13, max_size=13))
def test_score_matches_dense_matrix_product(seed, vals):
    table = random_table(np.random.default_rng(seed), 20)
    pv = derive_priorities(ImportanceParams.from_sequence(vals))
    _, tri = normalize_attributes(table)
    got = score_snapshot(table, pv)
    for i in range(len(table)):
        assert got[i] == pytest.approx(dense_score(pv.v1, pv.v2, int(table.tx_type[i]), tri[i]), rel=1e-12)
        tx = table.transaction(i)
        assert score_transaction(tx, pv, tri[i]) == pytest.approx(got[i], rel=1e-12)
