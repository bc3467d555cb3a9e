"""Mempool draining and time-progressive chain runs built on the sequencer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ahp import ImportanceParams, derive_priorities, score_snapshot
from .analytics import AllocationSample
from .core import AttackBundle, Block, TxTable
from .netsim import ForkModel, Topology, fork_rate
from .sequencer import (
    AdversarialInsertion,
    Compliant,
    FeeGreedy,
    LeafParams,
    MinerPolicy,
    _leaves,
    form_block,
    form_unit_block,
    rank_mempool,
)

POLICY_NAMES = ("compliant", "fee_greedy", "adversarial")


def allocation_sample(table: TxTable, params: ImportanceParams, leaf: LeafParams) -> AllocationSample:
    """Leaves every transaction receives when the whole workload is one compliant mempool snapshot.

    Compliant blocks have z = 1, so each transaction's charge depends only on
    its own score; this equals draining the snapshot block by block.
    """
    scores = score_snapshot(table, derive_priorities(params))
    return AllocationSample(table.label.copy(), _leaves(scores, leaf))


def drain_snapshot(table: TxTable, params: ImportanceParams, leaf: LeafParams, policy: MinerPolicy = Compliant(),
                   max_blocks: int | None = None) -> list[Block]:
    """Form consecutive blocks from one fixed snapshot until it is empty."""
    scores = score_snapshot(table, derive_priorities(params))
    remaining = np.ones(len(table), dtype=bool)
    blocks: list[Block] = []
    parent = None
    while remaining.any() and (max_blocks is None or len(blocks) < max_blocks):
        rows = np.flatnonzero(remaining)
        snap = table.take(rows)
        ranked = rank_mempool(snap.ids, scores[rows])
        b = form_block(policy, snap, ranked, leaf, block_id=len(blocks), parent_id=parent)
        if not b.txs:
            break
        blocks.append(b)
        parent = b.id
        remaining[table.rows_of(list(b.txs))] = False
    return blocks


@dataclass(frozen=True)
class MinerMix:
    compliant: float = 1.0
    fee_greedy: float = 0.0
    adversarial: float = 0.0

    def __post_init__(self) -> None:
        w = self.weights()
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("miner mix weights must be non-negative with a positive total")

    def weights(self) -> np.ndarray:
        return np.array([self.compliant, self.fee_greedy, self.adversarial], dtype=float)


@dataclass(frozen=True)
class ChainConfig:
    arrivals_per_block: int = 2100
    dtss: bool = True
    header_bytes: int = 0
    max_blocks: int | None = None
    fork_origins_per_block: int = 1


@dataclass
class ChainRun:
    blocks: list[Block] = field(default_factory=list)  # canonical chain, in order
    orphaned: list[Block] = field(default_factory=list)
    fork_probs: dict[int, float] = field(default_factory=dict)  # block id -> fork probability
    inclusion_scores: dict[int, float] = field(default_factory=dict)  # tx id -> score when mined


def _policy(index: int, bundles: tuple[AttackBundle, ...]) -> MinerPolicy:
    if index == 0:
        return Compliant()
    if index == 1:
        return FeeGreedy()
    return AdversarialInsertion(bundles)


def run_chain(
    table: TxTable,
    params: ImportanceParams,
    leaf: LeafParams,
    *,
    mix: MinerMix = MinerMix(),
    bundles: tuple[AttackBundle, ...] = (),
    cfg: ChainConfig = ChainConfig(),
    topology: Topology | None = None,
    fork_model: ForkModel = ForkModel(),
    seed: int = 0,
) -> ChainRun:
    """Mine blocks while transactions arrive in initiation-time order.

    Before each block the next ``arrivals_per_block`` transactions join the
    mempool. With ``cfg.dtss`` the block is formed under leaf pricing;
    otherwise each transaction costs one leaf. When a topology is given, each
    block is orphaned with its fork probability and its transactions return
    to the mempool.
    """
    pv = derive_priorities(params)
    rng = np.random.default_rng([seed, 0xC4A1])
    p = mix.weights() / mix.weights().sum()
    arrival = np.lexsort((table.ids, table.init_time))
    pending = np.zeros(len(table), dtype=bool)
    ptr = 0
    run = ChainRun()
    parent: int | None = None
    next_id = 0
    while ptr < len(arrival) or pending.any():
        if cfg.max_blocks is not None and len(run.blocks) >= cfg.max_blocks:
            break
        take = arrival[ptr: ptr + cfg.arrivals_per_block]
        pending[take] = True
        ptr += len(take)
        # Fixed draw order per block keeps runs reproducible whatever the branch taken.
        pol_idx = int(rng.choice(3, p=p))
        miner = int(rng.integers(topology.n)) if topology is not None else pol_idx
        u = rng.random()
        rows = np.flatnonzero(pending)
        snap = table.take(rows)
        scores = score_snapshot(snap, pv)
        ranked = rank_mempool(snap.ids, scores)
        policy = _policy(pol_idx, bundles)
        kw = dict(block_id=next_id, parent_id=parent, miner_id=miner, header_bytes=cfg.header_bytes)
        if cfg.dtss:
            block = form_block(policy, snap, ranked, leaf, **kw)
        else:
            block = form_unit_block(policy, snap, ranked, leaf.budget, **kw)
        next_id += 1
        prob = 0.0
        if topology is not None:
            prob = fork_rate(block.byte_size / 1e6, topology, fork_model, origins=miner)
        run.fork_probs[block.id] = prob
        if u < prob:
            run.orphaned.append(block)
            continue
        run.blocks.append(block)
        parent = block.id
        mined_rows = snap.rows_of(list(block.txs))
        for tid, s in zip(block.txs, scores[mined_rows]):
            run.inclusion_scores[tid] = float(s)
        pending[rows[mined_rows]] = False
    return run
