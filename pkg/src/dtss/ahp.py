"""Pairwise comparison matrices, priority vectors and transaction scores."""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from .core import CANONICAL_PRIORITY, Transaction, TransactionType, TxTable

EPS = 1e-6

# (row, col) cells of the type matrix holding a1..a10; the mirrored cell holds the reciprocal.
_T = TransactionType
TYPE_CELLS: tuple[tuple[int, int], ...] = (
    (_T.SecurityTrading, _T.Payment),
    (_T.Transfer, _T.Payment),
    (_T.Transfer, _T.SecurityTrading),
    (_T.Instruction, _T.Payment),
    (_T.Instruction, _T.SecurityTrading),
    (_T.Instruction, _T.Transfer),
    (_T.Statement, _T.Payment),
    (_T.Statement, _T.SecurityTrading),
    (_T.Statement, _T.Transfer),
    (_T.Statement, _T.Instruction),
)

AMOUNT, INIT_TIME, FEE_PCT = 0, 1, 2
ATTRIBUTE_NAMES = ("Amount", "InitiationTime", "FeePercentage")
# a11..a13 in the attribute matrix.
ATTR_CELLS: tuple[tuple[int, int], ...] = ((INIT_TIME, AMOUNT), (FEE_PCT, AMOUNT), (FEE_PCT, INIT_TIME))


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ImportanceParams:
    a1: float = 1.0
    a2: float = 1.0
    a3: float = 1.0
    a4: float = 1.0
    a5: float = 1.0
    a6: float = 1.0
    a7: float = 1.0
    a8: float = 1.0
    a9: float = 1.0
    a10: float = 1.0
    a11: float = 1.0
    a12: float = 1.0
    a13: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{f.name} must be a positive finite number, got {v}")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "ImportanceParams":
        if len(values) != 13:
            raise ParameterError(f"expected 13 importance levels, got {len(values)}")
        return cls(*(float(v) for v in values))

    @classmethod
    def from_mapping(cls, d: Mapping[str, float]) -> "ImportanceParams":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ParameterError(f"unknown importance keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)

    def to_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def _reciprocal_matrix(n: int, cells, levels) -> np.ndarray:
    m = np.ones((n, n))
    for (i, j), a in zip(cells, levels):
        if not a > 0:
            raise ParameterError(f"importance level must be positive, got {a}")
        m[i, j] = a
        m[j, i] = 1.0 / a
    return m


def build_type_matrix(params: ImportanceParams) -> np.ndarray:
    """5x5 comparison matrix over transaction types, indexed by TransactionType."""
    return _reciprocal_matrix(5, TYPE_CELLS, params.as_tuple()[:10])


def build_attr_matrix(params: ImportanceParams) -> np.ndarray:
    """3x3 comparison matrix over (amount, initiation time, fee percentage)."""
    return _reciprocal_matrix(3, ATTR_CELLS, params.as_tuple()[10:])


def is_reciprocal(m: np.ndarray, tol: float = 1e-12) -> bool:
    m = np.asarray(m, dtype=float)
    return bool(np.all(m > 0) and np.allclose(m * m.T, 1.0, rtol=0, atol=tol))


def priority_vector(m: np.ndarray) -> np.ndarray:
    """Row sums of the column-normalised matrix; the result sums to n."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or np.any(m <= 0):
        raise ParameterError("priority_vector needs a square positive matrix")
    return (m / m.sum(axis=0)).sum(axis=1)


@dataclass(frozen=True)
class PriorityVectors:
    v1: tuple[float, ...]  # indexed by TransactionType
    v2: tuple[float, ...]  # (amount, init_time, fee_pct)

    @property
    def v1_array(self) -> np.ndarray:
        return np.asarray(self.v1)

    @property
    def v2_array(self) -> np.ndarray:
        return np.asarray(self.v2)


def derive_priorities(params: ImportanceParams) -> PriorityVectors:
    v1 = priority_vector(build_type_matrix(params))
    v2 = priority_vector(build_attr_matrix(params))
    return PriorityVectors(tuple(float(x) for x in v1), tuple(float(x) for x in v2))


def admissibility_report(pv: PriorityVectors | ImportanceParams) -> list[str]:
    """Violations of the strict type ordering; empty means admissible."""
    if isinstance(pv, ImportanceParams):
        pv = derive_priorities(pv)
    problems = []
    for hi, lo in zip(CANONICAL_PRIORITY, CANONICAL_PRIORITY[1:]):
        if not pv.v1[hi] > pv.v1[lo]:
            problems.append(f"v1[{hi.name}]={pv.v1[hi]:.6g} is not above v1[{lo.name}]={pv.v1[lo]:.6g}")
    return problems


def is_hierarchy_admissible(pv: PriorityVectors | ImportanceParams) -> bool:
    return not admissibility_report(pv)


@dataclass(frozen=True)
class AttributeContext:
    amount_min: float
    amount_max: float
    time_min: float
    time_max: float
    fee_min: float
    fee_max: float

    @classmethod
    def from_arrays(cls, amount: np.ndarray, init_time: np.ndarray, fee_pct: np.ndarray) -> "AttributeContext":
        if len(amount) == 0:
            raise ValueError("cannot normalise an empty snapshot")
        return cls(
            float(np.min(amount)), float(np.max(amount)),
            float(np.min(init_time)), float(np.max(init_time)),
            float(np.min(fee_pct)), float(np.max(fee_pct)),
        )


def _scale(x: np.ndarray, lo: float, hi: float, invert: bool = False) -> np.ndarray:
    if hi <= lo:
        return np.ones_like(x, dtype=float)
    frac = (hi - x) / (hi - lo) if invert else (x - lo) / (hi - lo)
    return EPS + (1.0 - EPS) * frac


def normalized_triples(ctx: AttributeContext, amount, init_time, fee_pct) -> np.ndarray:
    """(n, 3) array of (amount, time, fee) mapped into [EPS, 1].

    Time and fee are inverted so earlier and cheaper transactions land near 1.
    A zero-width range maps everything to 1.
    """
    amount, init_time, fee_pct = (np.asarray(a, dtype=float) for a in (amount, init_time, fee_pct))
    a_hat = _scale(amount, ctx.amount_min, ctx.amount_max)
    t_hat = _scale(init_time, ctx.time_min, ctx.time_max, invert=True)
    f_hat = _scale(fee_pct, ctx.fee_min, ctx.fee_max, invert=True)
    return np.column_stack([a_hat, t_hat, f_hat])


def normalize_attributes(snapshot: Sequence[Transaction] | TxTable) -> tuple[AttributeContext, np.ndarray]:
    if not isinstance(snapshot, TxTable):
        snapshot = TxTable.from_transactions(list(snapshot))
    ctx = AttributeContext.from_arrays(snapshot.amount, snapshot.init_time, snapshot.fee_pct)
    return ctx, normalized_triples(ctx, snapshot.amount, snapshot.init_time, snapshot.fee_pct)


def score_transaction(tx: Transaction, pv: PriorityVectors, triple: Sequence[float]) -> float:
    triple = np.asarray(triple, dtype=float)
    if triple.shape != (3,) or np.any(triple <= 0) or np.any(triple > 1):
        raise ValueError(f"normalised attributes must lie in (0, 1], got {triple}")
    return float(pv.v1[int(tx.tx_type)] * float(np.dot(pv.v2_array, triple)))


def score_triples(tx_type: np.ndarray, triples: np.ndarray, pv: PriorityVectors) -> np.ndarray:
    return pv.v1_array[np.asarray(tx_type, dtype=np.intp)] * (triples @ pv.v2_array)


def score_snapshot(snapshot: TxTable, pv: PriorityVectors) -> np.ndarray:
    """Score every row of a mempool snapshot against that snapshot's own ranges."""
    _, triples = normalize_attributes(snapshot)
    return score_triples(snapshot.tx_type, triples, pv)
