"""Ranking, compliance measurement, leaf allocation and block formation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import erf

from .core import DEFAULT_LEAF_BUDGET, AttackBundle, Block, StructuralError, TxTable

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class LeafParams:
    scale: float = 0.0
    shape: float = 0.5
    leaf_scale: int = 100
    budget: int = DEFAULT_LEAF_BUDGET

    def __post_init__(self) -> None:
        if not self.shape > 0:
            raise ValueError(f"shape must be positive, got {self.shape}")
        if self.leaf_scale < 1:
            raise ValueError(f"leaf_scale must be >= 1, got {self.leaf_scale}")
        if self.budget < self.leaf_scale:
            raise ValueError(f"budget {self.budget} is below leaf_scale {self.leaf_scale}")


@dataclass(frozen=True, eq=False)
class RankedList:
    ids: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def positions(self, ids: Sequence[int] | np.ndarray) -> np.ndarray:
        """Rank position of each id; unknown ids raise StructuralError."""
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(self.ids, kind="stable")
        sorted_ids = self.ids[order]
        pos = np.searchsorted(sorted_ids, ids)
        ok = pos < len(sorted_ids)
        ok[ok] = sorted_ids[pos[ok]] == ids[ok]
        if not np.all(ok):
            raise StructuralError(f"ids absent from ranking: {ids[~ok][:5].tolist()}")
        return order[pos]


def rank_mempool(ids: Sequence[int] | np.ndarray, scores: Sequence[float] | np.ndarray) -> RankedList:
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((ids, -scores))
    return RankedList(ids[order], scores[order])


def _count_inversions(seq: list[int]) -> int:
    if len(seq) < 2:
        return 0
    mid = len(seq) // 2
    left, right = seq[:mid], seq[mid:]
    inv = _count_inversions(left) + _count_inversions(right)
    i = j = 0
    merged = []
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            inv += len(left) - i
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    seq[:] = merged
    return inv


def _tau_from_discordant(n: int, discordant: int) -> float:
    if n <= 1:
        return 1.0
    pairs = n * (n - 1) // 2
    return (pairs - 2 * discordant) / pairs


def kendall_tau(block_order: Sequence[int], reference_order: Sequence[int]) -> float:
    """Rank agreement of ``block_order`` with ``reference_order`` restricted to the same ids."""
    ref_pos = {int(tid): i for i, tid in enumerate(reference_order)}
    try:
        seq = [ref_pos[int(tid)] for tid in block_order]
    except KeyError as exc:
        raise StructuralError(f"id {exc.args[0]} is not in the reference order") from None
    if len(set(seq)) != len(seq):
        raise StructuralError("block order repeats an id")
    return _tau_from_discordant(len(seq), _count_inversions(seq))


def normalize_tau(c: float) -> float:
    if not -1.0 <= c <= 1.0:
        raise ValueError(f"Kendall coefficient {c} outside [-1, 1]")
    return (1.0 + c) / 2.0


def adjust_scores(scores, z: float) -> np.ndarray:
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"z {z} outside [0, 1]")
    return np.asarray(scores, dtype=float) * z


def lognormal_cdf(x, mu: float, sigma: float):
    """P(X <= x) for ln X ~ N(mu, sigma^2). Scalar in, float out; array in, array out."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("log-normal CDF is only defined for x > 0")
    out = 0.5 + 0.5 * erf((np.log(arr) - mu) / (sigma * _SQRT2))
    return float(out) if out.ndim == 0 else out


def _leaves(s_prime: np.ndarray, leaf: LeafParams) -> np.ndarray:
    # S' == 0 happens for a fully reversed block (z = 0); the CDF limit there is 0.
    s_prime = np.asarray(s_prime, dtype=float)
    f = np.zeros_like(s_prime)
    pos = s_prime > 0
    if np.any(pos):
        f[pos] = 0.5 + 0.5 * erf((np.log(s_prime[pos]) - leaf.scale) / (leaf.shape * _SQRT2))
    return np.maximum(1, np.floor(leaf.leaf_scale * f + 0.5)).astype(np.int64)


def leaf_space(s_prime, leaf: LeafParams):
    """Leaves charged for adjusted score(s) ``s_prime``: max(1, round(leaf_scale * F))."""
    arr = np.asarray(s_prime, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("adjusted score must be positive")
    out = _leaves(arr, leaf)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Compliant:
    name: str = "compliant"


@dataclass(frozen=True)
class FeeGreedy:
    name: str = "fee_greedy"


@dataclass(frozen=True)
class AdversarialInsertion:
    """Places each present victim's bundle (front, victim, back) at the head of the block."""

    bundles: tuple[AttackBundle, ...] = ()
    name: str = "adversarial"


MinerPolicy = Union[Compliant, FeeGreedy, AdversarialInsertion]


def candidate_order(policy: MinerPolicy, snapshot: TxTable, ranked: RankedList) -> np.ndarray:
    if isinstance(policy, Compliant):
        return ranked.ids
    if isinstance(policy, FeeGreedy):
        order = np.lexsort((snapshot.ids, -snapshot.fee_pct))
        return snapshot.ids[order]
    if isinstance(policy, AdversarialInsertion):
        present = set(ranked.ids.tolist())
        head: list[int] = []
        placed: set[int] = set()
        for b in policy.bundles:
            if b.victim not in present or b.victim in placed:
                continue
            for tid in (*b.front, b.victim, *b.back):
                if tid in present and tid not in placed:
                    head.append(tid)
                    placed.add(tid)
        rest = [tid for tid in ranked.ids.tolist() if tid not in placed]
        return np.asarray(head + rest, dtype=np.int64)
    raise TypeError(f"unknown miner policy {policy!r}")


def _admit(ref_pos: np.ndarray, scores: np.ndarray, leaf: LeafParams) -> tuple[int, float, np.ndarray]:
    """Longest candidate prefix whose leaves fit the budget under its own Kendall coefficient.

    Returns (prefix length, coefficient, leaves). Admission stops at the first
    transaction whose inclusion would overflow the budget.
    """
    n = len(ref_pos)
    if n == 0:
        return 0, 1.0, np.zeros(0, dtype=np.int64)
    # Each transaction costs at least one leaf, so no prefix beyond budget+1 matters.
    n = min(n, leaf.budget + 1)
    ref_pos = ref_pos[:n]
    scores = scores[:n]
    if n == 1 or np.all(ref_pos[1:] > ref_pos[:-1]):
        # Candidate order agrees with the ranking: coefficient 1 throughout.
        leaves = _leaves(scores, leaf)
        k = int(np.searchsorted(np.cumsum(leaves), leaf.budget, side="right"))
        return k, 1.0, leaves[:k]

    best_k, best_c, best_leaves = 0, 1.0, np.zeros(0, dtype=np.int64)
    discordant = 0
    for k in range(1, n + 1):
        discordant += int(np.count_nonzero(ref_pos[: k - 1] > ref_pos[k - 1]))
        c = _tau_from_discordant(k, discordant)
        leaves = _leaves(scores[:k] * ((1.0 + c) / 2.0), leaf)
        if leaves.sum() > leaf.budget:
            break
        best_k, best_c, best_leaves = k, c, leaves
    return best_k, best_c, best_leaves


def form_block(
    policy: MinerPolicy,
    snapshot: TxTable,
    ranked: RankedList,
    leaf: LeafParams,
    *,
    block_id: int = 0,
    parent_id: int | None = None,
    miner_id: int = 0,
    header_bytes: int = 0,
) -> Block:
    """Select and charge transactions from one mempool snapshot."""
    cand = candidate_order(policy, snapshot, ranked)
    ref_pos = ranked.positions(cand) if len(cand) else np.zeros(0, dtype=np.int64)
    k, c, leaves = _admit(ref_pos, ranked.scores[ref_pos], leaf)
    chosen = cand[:k]
    size = int(header_bytes)
    if k:
        size += int(snapshot.byte_size[snapshot.rows_of(chosen)].sum())
    return Block(
        id=block_id,
        parent_id=parent_id,
        miner_id=miner_id,
        txs=tuple(chosen.tolist()),
        leaf_allocs=tuple(leaves.tolist()),
        kendall_c=c,
        byte_size=size,
        policy=policy.name,
    )


def form_unit_block(
    policy: MinerPolicy,
    snapshot: TxTable,
    ranked: RankedList,
    capacity: int = DEFAULT_LEAF_BUDGET,
    *,
    block_id: int = 0,
    parent_id: int | None = None,
    miner_id: int = 0,
    header_bytes: int = 0,
) -> Block:
    """Block without leaf pricing: one leaf per transaction, first ``capacity`` candidates."""
    cand = candidate_order(policy, snapshot, ranked)[:capacity]
    c = 1.0
    if len(cand) > 1:
        c = _tau_from_discordant(len(cand), _count_inversions(ranked.positions(cand).tolist()))
    size = int(header_bytes)
    if len(cand):
        size += int(snapshot.byte_size[snapshot.rows_of(cand)].sum())
    return Block(
        id=block_id,
        parent_id=parent_id,
        miner_id=miner_id,
        txs=tuple(cand.tolist()),
        leaf_allocs=(1,) * len(cand),
        kendall_c=c,
        byte_size=size,
        policy=policy.name,
    )
