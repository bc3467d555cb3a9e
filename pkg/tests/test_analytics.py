import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from dtss.analytics import (
    AllocationSample,
    MetricError,
    ShiftRow,
    execution_order,
    fork_rate_report,
    nadm,
    priority_report,
    rows_to_csv,
    shift,
    welch_t,
)
from dtss.core import AdversaryLabel as L, Block

from oracles import welch_t_hp


def _sample(groups):
    labels, leaves = [], []
    for lab, vals in groups.items():
        labels += [int(lab)] * len(vals)
        leaves += list(vals)
    return AllocationSample(np.array(labels), np.array(leaves))


def test_nadm_examples():
    assert nadm(_sample({L.Normal: [95] * 4, L.Clogging: [2] * 3}), 100) == pytest.approx(0.93)
    assert nadm(_sample({L.Normal: [5, 7], L.SandwichFront: [6, 6]}), 100) == 0.0
    assert nadm(_sample({L.Normal: [1], L.ReplayBack: [9]}), 100) < 0
    # Decoys belong to neither group.
    assert nadm(_sample({L.Normal: [50], L.ReplayDecoy: [1], L.Clogging: [10]}), 100) == pytest.approx(0.4)
    with pytest.raises(MetricError):
        nadm(_sample({L.Normal: [3]}), 100)


@given(st.lists(st.integers(1, 100), min_size=1, max_size=30), st.lists(st.integers(1, 100), min_size=1, max_size=30),
       st.integers(1, 20))
def test_nadm_scale_invariance(honest, attack, k):
    s = _sample({L.Normal: honest, L.Clogging: attack})
    scaled = AllocationSample(s.labels, s.leaves * k)
    assert nadm(scaled, 100 * k) == pytest.approx(nadm(s, 100), abs=1e-12)


def test_welch_examples():
    assert welch_t([2, 4, 6], [1, 2, 3]) == pytest.approx(2 / math.sqrt(4 / 3 + 1 / 3), rel=1e-15)
    assert welch_t([2, 4, 6], [1, 2, 3]) == pytest.approx(1.549, abs=1e-3)
    assert welch_t([1, 2, 3], [1, 2, 3]) == 0.0
    with pytest.raises(MetricError):
        welch_t([1], [1, 2])
    with pytest.raises(MetricError):
        welch_t([1, 1], [2, 2])


def test_welch_matches_references():
    rng = np.random.default_rng(8)
    for _ in range(100):
        a = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 3), rng.integers(2, 40))
        b = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 3), rng.integers(2, 40))
        t = welch_t(a, b)
        assert t == pytest.approx(stats.ttest_ind(a, b, equal_var=False).statistic, rel=1e-10)
        assert t == pytest.approx(welch_t_hp(a, b), rel=1e-12)


def test_shift_examples():
    assert shift(5.0, 5.0) == 0.0
    assert shift(386488.467742, 242159.379336) == pytest.approx(59.60, abs=0.005)
    assert shift(210036.537174, 223491.145347) == pytest.approx(-6.02, abs=0.005)
    with pytest.raises(MetricError):
        shift(1.0, 0.0)


def _blk(i, txs):
    return Block(i, None, 0, tuple(txs), (1,) * len(txs), 1.0, 0)


def test_execution_order_examples():
    one = execution_order([_blk(0, [7, 8, 9])])
    assert one.order.tolist() == [1, 2, 3]
    two = execution_order([_blk(0, [4, 2]), _blk(1, [9])])
    assert two.positions_of(np.array([9, 4, 2])).tolist() == [3, 1, 2]
    with pytest.raises(MetricError):
        two.positions_of(np.array([5]))
    with pytest.raises(MetricError):
        execution_order([_blk(0, [1]), _blk(1, [1])])


def test_priority_report():
    o1 = execution_order([_blk(0, [1, 2, 3, 4])])
    o2 = execution_order([_blk(0, [3, 4, 1, 2])])
    rows = priority_report(o1, o2, {"a": np.array([1, 2]), "b": np.array([3, 4]), "none": np.array([])})
    assert [r.group for r in rows] == ["a", "b"]
    assert rows[0].mean_o1 == 1.5 and rows[0].mean_o2 == 3.5
    assert rows[0].shift_pct == pytest.approx(shift(1.5, 3.5))
    assert rows[1].shift_pct > 0
    text = rows_to_csv(rows, ["group", "count", "shift_pct"])
    assert text.splitlines()[0] == "group,count,shift_pct" and text.splitlines()[1].startswith("a,2,")


def test_fork_rate_report():
    assert fork_rate_report([]) == []
    only = fork_rate_report([("normal", 0.013, 0.0015), ("normal", 0.013, 0.0017)])
    assert len(only) == 1 and only[0].blocks == 2 and only[0].fork_probability == pytest.approx(0.0016)
    rows = fork_rate_report([
        ("clogging", 0.1485, 0.002413), ("sandwich", 0.0265, 0.001785),
        ("normal", 0.013, 0.001562), ("replay", 0.0265, 0.001785),
    ])
    assert [r.category for r in rows] == ["normal", "replay", "sandwich", "clogging"]
