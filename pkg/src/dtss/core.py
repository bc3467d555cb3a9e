"""Domain types shared by every module: transactions, blocks and their accounting."""
from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

DEFAULT_TX_BYTES = 500
DEFAULT_LEAF_BUDGET = 2100


class StructuralError(ValueError):
    """A block or workload references something that does not exist or repeats."""


class TransactionType(enum.IntEnum):
    # Integer values index the rows of the type comparison matrix.
    Payment = 0
    SecurityTrading = 1
    Transfer = 2
    Instruction = 3
    Statement = 4


# Strictly decreasing importance required of an admissible type weighting.
CANONICAL_PRIORITY: tuple[TransactionType, ...] = (
    TransactionType.SecurityTrading,
    TransactionType.Instruction,
    TransactionType.Payment,
    TransactionType.Transfer,
    TransactionType.Statement,
)


class AdversaryLabel(enum.IntEnum):
    Normal = 0
    Victim = 1
    SandwichFront = 2
    SandwichBack = 3
    ReplayDecoy = 4
    ReplayFront = 5
    ReplayBack = 6
    Clogging = 7


HONEST_LABELS = frozenset({AdversaryLabel.Normal, AdversaryLabel.Victim})
# Decoys replicate their victim byte for byte (same type, amount, fee), so no
# ordering rule can tell them apart; they count in neither NADM group.
ATTACK_LABELS = frozenset(
    {
        AdversaryLabel.SandwichFront,
        AdversaryLabel.SandwichBack,
        AdversaryLabel.ReplayFront,
        AdversaryLabel.ReplayBack,
        AdversaryLabel.Clogging,
    }
)


@dataclass(frozen=True)
class Transaction:
    id: int
    tx_type: TransactionType
    amount: float
    fee_pct: float
    init_time: float
    byte_size: int = DEFAULT_TX_BYTES
    label: AdversaryLabel = AdversaryLabel.Normal

    def to_dict(self) -> dict:
        return {
            "id": int(self.id),
            "tx_type": TransactionType(self.tx_type).name,
            "amount": float(self.amount),
            "fee_pct": float(self.fee_pct),
            "init_time": float(self.init_time),
            "byte_size": int(self.byte_size),
            "label": AdversaryLabel(self.label).name,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Transaction":
        return cls(
            id=int(d["id"]),
            tx_type=TransactionType[d["tx_type"]],
            amount=float(d["amount"]),
            fee_pct=float(d["fee_pct"]),
            init_time=float(d["init_time"]),
            byte_size=int(d.get("byte_size", DEFAULT_TX_BYTES)),
            label=AdversaryLabel[d.get("label", "Normal")],
        )


@dataclass(frozen=True)
class AttackBundle:
    """Attack transactions built around one victim, in intended execution order."""

    kind: str  # "sandwich" or "replay"
    victim: int
    front: tuple[int, ...]
    back: tuple[int, ...]
    decoy: int | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "victim": self.victim, "front": list(self.front),
                "back": list(self.back), "decoy": self.decoy}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttackBundle":
        return cls(d["kind"], int(d["victim"]), tuple(d["front"]), tuple(d["back"]), d.get("decoy"))


@dataclass(frozen=True)
class Block:
    """An ordered list of transaction ids with the leaf space charged to each.

    ``z`` is derived from ``kendall_c`` on construction so the two can never
    disagree.
    """

    id: int
    parent_id: int | None
    miner_id: int
    txs: tuple[int, ...]
    leaf_allocs: tuple[int, ...]
    kendall_c: float
    byte_size: int
    policy: str = "compliant"
    z: float = field(init=False)
    total_leaves: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "txs", tuple(int(t) for t in self.txs))
        object.__setattr__(self, "leaf_allocs", tuple(int(a) for a in self.leaf_allocs))
        if len(self.txs) != len(self.leaf_allocs):
            raise StructuralError("txs and leaf_allocs differ in length")
        if any(a < 1 for a in self.leaf_allocs):
            raise StructuralError("leaf allocations must be positive")
        if not -1.0 <= self.kendall_c <= 1.0:
            raise StructuralError(f"kendall_c {self.kendall_c} outside [-1, 1]")
        object.__setattr__(self, "z", (1.0 + self.kendall_c) / 2.0)
        object.__setattr__(self, "total_leaves", sum(self.leaf_allocs))

    def __len__(self) -> int:
        return len(self.txs)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent_id": self.parent_id,
            "miner_id": self.miner_id,
            "policy": self.policy,
            "txs": list(self.txs),
            "leaf_allocs": list(self.leaf_allocs),
            "kendall_c": self.kendall_c,
            "z": self.z,
            "total_leaves": self.total_leaves,
            "byte_size": self.byte_size,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Block":
        return cls(
            id=int(d["id"]),
            parent_id=None if d["parent_id"] is None else int(d["parent_id"]),
            miner_id=int(d["miner_id"]),
            txs=tuple(d["txs"]),
            leaf_allocs=tuple(d["leaf_allocs"]),
            kendall_c=float(d["kendall_c"]),
            byte_size=int(d["byte_size"]),
            policy=d.get("policy", "compliant"),
        )


def block_byte_size(block: Block, txs: Mapping[int, Transaction], header_bytes: int = 0) -> int:
    """Payload bytes of ``block`` plus a fixed header."""
    total = int(header_bytes)
    for tid in block.txs:
        try:
            total += int(txs[tid].byte_size)
        except KeyError:
            raise StructuralError(f"block {block.id} references unknown transaction {tid}") from None
    return total


def validate_transaction(tx: Transaction) -> list[str]:
    """Return every violated field invariant; an empty list means valid."""
    problems = []
    if not isinstance(tx.id, (int, np.integer)) or not -(2**63) <= int(tx.id) < 2**63:
        problems.append(f"id {tx.id!r}: must be a 64-bit integer")
    try:
        TransactionType(tx.tx_type)
    except ValueError:
        problems.append(f"tx_type {tx.tx_type!r}: unknown transaction type")
    try:
        AdversaryLabel(tx.label)
    except ValueError:
        problems.append(f"label {tx.label!r}: unknown adversary label")
    for name in ("amount", "fee_pct", "init_time"):
        value = getattr(tx, name)
        if not math.isfinite(value) or value < 0:
            problems.append(f"{name} non-negative: got {value}")
    if tx.byte_size <= 0:
        problems.append(f"byte_size positive: got {tx.byte_size}")
    return problems


def validate_workload(txs: Iterable[Transaction]) -> list[str]:
    problems = []
    seen: Counter[int] = Counter()
    for tx in txs:
        problems.extend(f"tx {tx.id}: {p}" for p in validate_transaction(tx))
        seen[tx.id] += 1
    problems.extend(f"duplicate id {tid} ({n} occurrences)" for tid, n in sorted(seen.items()) if n > 1)
    return problems


@dataclass(frozen=True, eq=False)
class TxTable:
    """Column-oriented view of a workload used by the numeric code paths."""

    ids: np.ndarray
    tx_type: np.ndarray
    amount: np.ndarray
    fee_pct: np.ndarray
    init_time: np.ndarray
    byte_size: np.ndarray
    label: np.ndarray

    @classmethod
    def from_transactions(cls, txs: Sequence[Transaction]) -> "TxTable":
        return cls(
            ids=np.array([t.id for t in txs], dtype=np.int64),
            tx_type=np.array([int(t.tx_type) for t in txs], dtype=np.int8),
            amount=np.array([t.amount for t in txs], dtype=np.float64),
            fee_pct=np.array([t.fee_pct for t in txs], dtype=np.float64),
            init_time=np.array([t.init_time for t in txs], dtype=np.float64),
            byte_size=np.array([t.byte_size for t in txs], dtype=np.int64),
            label=np.array([int(t.label) for t in txs], dtype=np.int8),
        )

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, rows: np.ndarray) -> "TxTable":
        return TxTable(*(col[rows] for col in self._columns()))

    def _columns(self):
        return (self.ids, self.tx_type, self.amount, self.fee_pct, self.init_time, self.byte_size, self.label)

    @cached_property
    def _sorted_index(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.ids, kind="stable")
        sorted_ids = self.ids[order]
        if len(sorted_ids) > 1 and np.any(sorted_ids[1:] == sorted_ids[:-1]):
            raise StructuralError("duplicate transaction ids in table")
        return order, sorted_ids

    def rows_of(self, ids: Sequence[int] | np.ndarray) -> np.ndarray:
        """Row positions of ``ids``; raises StructuralError for unknown ids."""
        order, sorted_ids = self._sorted_index
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(sorted_ids, ids)
        pos_clipped = np.minimum(pos, max(len(sorted_ids) - 1, 0))
        if len(sorted_ids) == 0 or np.any(sorted_ids[pos_clipped] != ids):
            missing = ids[(len(sorted_ids) == 0) | (sorted_ids[pos_clipped] != ids)] if len(ids) else ids
            raise StructuralError(f"unknown transaction ids: {missing[:5].tolist()}")
        return order[pos_clipped]

    def transaction(self, row: int) -> Transaction:
        return Transaction(
            id=int(self.ids[row]),
            tx_type=TransactionType(int(self.tx_type[row])),
            amount=float(self.amount[row]),
            fee_pct=float(self.fee_pct[row]),
            init_time=float(self.init_time[row]),
            byte_size=int(self.byte_size[row]),
            label=AdversaryLabel(int(self.label[row])),
        )

    def to_transactions(self) -> list[Transaction]:
        return [self.transaction(i) for i in range(len(self))]


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_transactions(path: str | Path, txs: Iterable[Transaction]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tx in txs:
            fh.write(dumps_canonical(tx.to_dict()) + "\n")


def iter_transactions(path: str | Path) -> Iterator[Transaction]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield Transaction.from_dict(json.loads(line))


def write_blocks(path: str | Path, blocks: Iterable[Block]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for b in blocks:
            fh.write(dumps_canonical(b.to_dict()) + "\n")


def read_blocks(path: str | Path) -> list[Block]:
    with open(path, encoding="utf-8") as fh:
        return [Block.from_dict(json.loads(line)) for line in fh if line.strip()]
