"""Allocation disparity, execution-order shift, Welch t statistics and fork-rate tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ATTACK_LABELS, HONEST_LABELS, AdversaryLabel, Block


class MetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AllocationSample:
    labels: np.ndarray  # AdversaryLabel values
    leaves: np.ndarray

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.leaves):
            raise MetricError("labels and leaves differ in length")
        if len(self.leaves) and np.min(self.leaves) < 1:
            raise MetricError("leaf allocations must be at least 1")

    def mean_by_label(self) -> dict[str, float]:
        out = {}
        for lab in AdversaryLabel:
            mask = self.labels == int(lab)
            if np.any(mask):
                out[lab.name] = float(self.leaves[mask].mean())
        return out


def _in(labels: np.ndarray, group: Iterable[AdversaryLabel]) -> np.ndarray:
    return np.isin(labels, [int(g) for g in group])


def nadm(sample: AllocationSample, leaf_scale: float) -> float:
    """Gap between honest and attack mean leaf allocation, as a fraction of the per-tx cap."""
    honest = sample.leaves[_in(sample.labels, HONEST_LABELS)]
    attack = sample.leaves[_in(sample.labels, ATTACK_LABELS)]
    if len(honest) == 0 or len(attack) == 0:
        raise MetricError("NADM needs both honest and attack transactions")
    return float((honest.mean() - attack.mean()) / leaf_scale)


def welch_t(group1: Sequence[float], group2: Sequence[float]) -> float:
    a = np.asarray(group1, dtype=float)
    b = np.asarray(group2, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise MetricError("each group needs at least two observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 and vb == 0:
        raise MetricError("both groups have zero variance")
    return float((a.mean() - b.mean()) / math.sqrt(va / len(a) + vb / len(b)))


def shift(o1_mean: float, o2_mean: float) -> float:
    """Relative change of mean execution position, in percent."""
    if o2_mean == 0:
        raise MetricError("baseline mean execution index is zero")
    return (o1_mean - o2_mean) / o2_mean * 100.0


@dataclass(frozen=True, eq=False)
class ExecutionOrderSample:
    ids: np.ndarray
    order: np.ndarray  # 1-based global position

    def positions_of(self, ids: np.ndarray) -> np.ndarray:
        idx = np.argsort(self.ids)
        pos = np.searchsorted(self.ids[idx], ids)
        if np.any(pos >= len(idx)) or np.any(self.ids[idx][np.minimum(pos, len(idx) - 1)] != ids):
            raise MetricError("some transactions were never executed in this run")
        return self.order[idx[pos]]


def execution_order(chain: Sequence[Block]) -> ExecutionOrderSample:
    ids = np.fromiter((t for b in chain for t in b.txs), dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise MetricError("a transaction appears twice in the chain")
    return ExecutionOrderSample(ids, np.arange(1, len(ids) + 1))


@dataclass(frozen=True)
class ShiftRow:
    group: str
    count: int
    mean_o1: float
    mean_o2: float
    shift_pct: float
    t_stat: float


def priority_report(o1: ExecutionOrderSample, o2: ExecutionOrderSample,
                    groups: Mapping[str, np.ndarray]) -> list[ShiftRow]:
    """One row per group of transaction ids comparing their positions across two runs."""
    rows = []
    for name, ids in groups.items():
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            continue
        p1, p2 = o1.positions_of(ids).astype(float), o2.positions_of(ids).astype(float)
        try:
            t = welch_t(p1, p2)
        except MetricError:
            t = float("nan")
        rows.append(ShiftRow(name, len(ids), float(p1.mean()), float(p2.mean()), shift(p1.mean(), p2.mean()), t))
    return rows


@dataclass(frozen=True)
class ForkRow:
    category: str
    blocks: int
    mean_size_mb: float
    fork_probability: float


def fork_rate_report(rows: Iterable[tuple[str, float, float]]) -> list[ForkRow]:
    """Aggregate (category, size_mb, fork_probability) per block into one row per category.

    Rows come back ordered by fork probability, then category name.
    """
    acc: dict[str, list[tuple[float, float]]] = {}
    for cat, size, prob in rows:
        acc.setdefault(cat, []).append((size, prob))
    table = [
        ForkRow(cat, len(v), float(np.mean([s for s, _ in v])), float(np.mean([p for _, p in v])))
        for cat, v in acc.items()
    ]
    return sorted(table, key=lambda r: (r.fork_probability, r.category))


def rows_to_csv(rows: Sequence, fields: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(getattr(r, f) if not isinstance(r, Mapping) else r[f]) for f in fields])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
