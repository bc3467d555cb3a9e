"""Market-data ingestion, transaction synthesis and labelled attack injection."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .core import (
    DEFAULT_TX_BYTES,
    AdversaryLabel,
    AttackBundle,
    Transaction,
    TransactionType,
)

log = logging.getLogger(__name__)

OHLC_HEADER = ("timestamp", "open", "high", "low", "close", "volume_btc", "weighted_price")
# Spacing between a victim and the attack transactions that follow it.
OFFSET_STEP = 0.001


class IngestionError(ValueError):
    def __init__(self, message: str, problems: Sequence[tuple[int, str]] = ()):
        self.problems = list(problems)
        if self.problems:
            shown = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems[:10])
            more = f" (+{len(self.problems) - 10} more)" if len(self.problems) > 10 else ""
            message = f"{message}: {shown}{more}"
        super().__init__(message)


@dataclass(frozen=True, slots=True)
class OhlcRecord:
    timestamp: float
    open: float
    high: float
    low: float
    close: float
    volume_btc: float
    weighted_price: float


def _check_record(r: OhlcRecord) -> str | None:
    values = (r.timestamp, r.open, r.high, r.low, r.close, r.volume_btc, r.weighted_price)
    if not all(math.isfinite(v) for v in values):
        return "non-finite value"
    if r.high < r.low:
        return f"high {r.high} below low {r.low}"
    if not (r.low <= r.open <= r.high and r.low <= r.close <= r.high):
        return "open/close outside [low, high]"
    if r.volume_btc < 0:
        return f"negative volume {r.volume_btc}"
    if r.weighted_price < 0:
        return f"negative weighted price {r.weighted_price}"
    return None


def iter_ohlc(path: str | Path, *, skip_malformed: bool = False) -> Iterator[OhlcRecord]:
    """Stream validated records from an OHLC CSV.

    Malformed rows raise IngestionError with their line numbers once the whole
    file has been read, unless ``skip_malformed`` is set, in which case they
    are logged and dropped. Timestamps must strictly increase.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"OHLC file not found: {path}")
    problems: list[tuple[int, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != OHLC_HEADER:
            raise IngestionError(f"header mismatch in {path}: expected {','.join(OHLC_HEADER)}, got {header}")
        last_ts = -math.inf
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) != len(OHLC_HEADER):
                    raise ValueError(f"expected {len(OHLC_HEADER)} fields, got {len(row)}")
                rec = OhlcRecord(*(float(c) for c in row))
            except ValueError as exc:
                problems.append((line, str(exc)))
                continue
            err = _check_record(rec)
            if err:
                problems.append((line, err))
                continue
            if rec.timestamp <= last_ts:
                raise IngestionError(f"non-monotone timestamp at line {line} in {path}")
            last_ts = rec.timestamp
            yield rec
    if problems:
        if not skip_malformed:
            raise IngestionError(f"malformed rows in {path}", problems)
        for ln, msg in problems:
            log.warning("skipped %s line %d: %s", path, ln, msg)


def ingest_ohlc(path: str | Path, *, skip_malformed: bool = False) -> list[OhlcRecord]:
    return list(iter_ohlc(path, skip_malformed=skip_malformed))


def synth_ohlc(n: int, seed: int = 0, start: float = 1_575_158_400.0, step: float = 60.0) -> list[OhlcRecord]:
    """Minute bars from a geometric random walk with log-normal volume."""
    rng = np.random.default_rng(seed)
    price = 7500.0 * np.exp(np.cumsum(rng.normal(0.0, 0.001, n)))
    opens = np.concatenate(([7500.0], price[:-1]))
    spread = np.abs(rng.normal(0.0, 0.0005, (n, 2))) * price[:, None]
    high = np.maximum(opens, price) + spread[:, 0]
    low = np.minimum(opens, price) - spread[:, 1]
    volume = rng.lognormal(mean=0.0, sigma=1.2, size=n)
    weighted = (opens + price + high + low) / 4.0
    ts = start + step * np.arange(n)
    return [
        OhlcRecord(float(ts[i]), float(opens[i]), float(high[i]), float(low[i]), float(price[i]),
                   float(volume[i]), float(weighted[i]))
        for i in range(n)
    ]


def write_ohlc(path: str | Path, records: Sequence[OhlcRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OHLC_HEADER)
        for r in records:
            w.writerow([repr(v) for v in (r.timestamp, r.open, r.high, r.low, r.close, r.volume_btc, r.weighted_price)])


DEFAULT_TYPE_MIX = {t.name: 0.2 for t in TransactionType}


@dataclass(frozen=True)
class WorkloadConfig:
    type_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TYPE_MIX))
    # fee_pct ~ LogNormal(ln(fee_median), fee_sigma)
    fee_median: float = 0.002
    fee_sigma: float = 0.3
    seed: int = 0
    count: int | None = None
    byte_size: int = DEFAULT_TX_BYTES
    epoch: float | None = None  # defaults to the first record's timestamp

    def __post_init__(self) -> None:
        unknown = set(self.type_mix) - {t.name for t in TransactionType}
        if unknown:
            raise ValueError(f"unknown transaction types in type_mix: {sorted(unknown)}")
        mix = self.mix_array()
        if np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
            raise ValueError("type_mix fractions must be non-negative and sum to 1")
        if not (self.fee_median > 0 and self.fee_sigma >= 0):
            raise ValueError("fee_median must be positive and fee_sigma non-negative")

    def mix_array(self) -> np.ndarray:
        return np.array([float(self.type_mix.get(t.name, 0.0)) for t in TransactionType])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["type_mix"] = dict(self.type_mix)
        return d


@dataclass(frozen=True)
class AttackConfig:
    victim_percentile: float = 0.01
    sandwich_enabled: bool = True
    replay_enabled: bool = True
    # Per-victim chance that each enabled attack kind is actually mounted.
    sandwich_prob: float = 1.0
    replay_prob: float = 1.0
    fee_multiplier: tuple[float, float] = (1.5, 3.0)
    # Attacker position size as a fraction of the victim amount.
    amount_fraction: tuple[float, float] = (0.1, 1.0)
    clogging_rate: float = 10.0  # transactions per minute during a burst
    clogging_window: float = 120.0  # burst length, seconds
    clogging_interval: float = 43_200.0  # seconds between burst starts; 0 disables bursts
    clogging_amount: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.victim_percentile <= 1.0:
            raise ValueError("victim_percentile must lie in (0, 1]")
        lo, hi = self.fee_multiplier
        if lo < 1.0 or hi < lo:
            raise ValueError("fee multiplier range must satisfy 1 <= lo <= hi")
        flo, fhi = self.amount_fraction
        if flo < 0 or fhi < flo:
            raise ValueError("amount_fraction must satisfy 0 <= lo <= hi")
        if self.clogging_rate < 0 or self.clogging_window < 0 or self.clogging_interval < 0:
            raise ValueError("clogging rate, window and interval must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fee_multiplier"] = list(self.fee_multiplier)
        d["amount_fraction"] = list(self.amount_fraction)
        return d


def synthesize_transactions(records: Sequence[OhlcRecord], cfg: WorkloadConfig = WorkloadConfig()) -> list[Transaction]:
    if not records:
        raise ValueError("no OHLC records to synthesise from")
    if cfg.count is not None:
        records = records[: cfg.count]
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(records)
    types = rng.choice(len(TransactionType), size=n, p=cfg.mix_array())
    fees = cfg.fee_median * np.exp(cfg.fee_sigma * rng.standard_normal(n))
    epoch = records[0].timestamp if cfg.epoch is None else cfg.epoch
    return [
        Transaction(
            id=i,
            tx_type=TransactionType(int(types[i])),
            amount=r.volume_btc * r.weighted_price,
            fee_pct=float(fees[i]),
            init_time=r.timestamp - epoch,
            byte_size=cfg.byte_size,
            label=AdversaryLabel.Normal,
        )
        for i, r in enumerate(records)
    ]


def identify_victims(txs: Sequence[Transaction], percentile: float) -> tuple[list[int], list[Transaction]]:
    """Largest-amount ``ceil(percentile * N)`` ids and the list with those relabelled Victim."""
    if not txs:
        raise ValueError("empty transaction list")
    count = math.ceil(percentile * len(txs) - 1e-9)
    ranked = sorted(txs, key=lambda t: (-t.amount, t.id))
    victims = [t.id for t in ranked[:count]]
    chosen = set(victims)
    relabelled = [replace(t, label=AdversaryLabel.Victim) if t.id in chosen else t for t in txs]
    return victims, relabelled


def _victim_rng(cfg: AttackConfig, victim: Transaction, kind: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, int(victim.id), kind])


def _attacker(victim: Transaction, rng: np.random.Generator, cfg: AttackConfig, tid: int, offset: float,
              label: AdversaryLabel) -> Transaction:
    return Transaction(
        id=tid,
        tx_type=victim.tx_type,
        amount=victim.amount * rng.uniform(*cfg.amount_fraction),
        fee_pct=victim.fee_pct * rng.uniform(*cfg.fee_multiplier),
        init_time=victim.init_time + offset,
        byte_size=victim.byte_size,
        label=label,
    )


def inject_sandwich(victim: Transaction, cfg: AttackConfig, ids: tuple[int, int], offset_base: int = 0
                    ) -> tuple[Transaction, Transaction]:
    """Front-run and back-run pair for ``victim``; both start just after it."""
    rng = _victim_rng(cfg, victim, 0)
    step = OFFSET_STEP
    front = _attacker(victim, rng, cfg, ids[0], step * (offset_base + 1), AdversaryLabel.SandwichFront)
    back = _attacker(victim, rng, cfg, ids[1], step * (offset_base + 2), AdversaryLabel.SandwichBack)
    return front, back


def inject_replay(victim: Transaction, cfg: AttackConfig, ids: tuple[int, int, int], offset_base: int = 0
                  ) -> tuple[Transaction, Transaction, Transaction]:
    """Decoy copying the victim plus a front/back extraction pair."""
    rng = _victim_rng(cfg, victim, 1)
    step = OFFSET_STEP
    decoy = replace(victim, id=ids[0], init_time=victim.init_time + step * (offset_base + 1),
                    label=AdversaryLabel.ReplayDecoy)
    front = _attacker(victim, rng, cfg, ids[1], step * (offset_base + 2), AdversaryLabel.ReplayFront)
    back = _attacker(victim, rng, cfg, ids[2], step * (offset_base + 3), AdversaryLabel.ReplayBack)
    return decoy, front, back


def inject_clogging(cfg: AttackConfig, window: tuple[float, float], normal_fees: np.ndarray,
                    first_id: int, type_mix: np.ndarray | None = None, burst: int = 0) -> list[Transaction]:
    """Evenly spaced high-fee, minimal-amount burst inside ``window``."""
    t0, t1 = window
    count = int(round(cfg.clogging_rate * (t1 - t0) / 60.0))
    if count <= 0:
        return []
    rng = np.random.default_rng([cfg.seed, burst, 2])
    lo = float(np.quantile(normal_fees, 0.9))
    hi = float(np.max(normal_fees))
    fees = rng.uniform(lo, hi, count)
    mix = np.full(len(TransactionType), 1.0 / len(TransactionType)) if type_mix is None else type_mix
    types = rng.choice(len(TransactionType), size=count, p=mix)
    # Half-step phase keeps burst times off the minute grid of normal traffic.
    times = t0 + (np.arange(count) + 0.5) * (t1 - t0) / count
    return [
        Transaction(first_id + i, TransactionType(int(types[i])), cfg.clogging_amount, float(fees[i]),
                    float(times[i]), DEFAULT_TX_BYTES, AdversaryLabel.Clogging)
        for i in range(count)
    ]


@dataclass(frozen=True)
class Workload:
    txs: tuple[Transaction, ...]
    bundles: tuple[AttackBundle, ...]

    def label_counts(self) -> dict[str, int]:
        counts = {lab.name: 0 for lab in AdversaryLabel}
        for t in self.txs:
            counts[AdversaryLabel(t.label).name] += 1
        return counts


def build_workload(records: Sequence[OhlcRecord], wcfg: WorkloadConfig = WorkloadConfig(),
                   acfg: AttackConfig = AttackConfig()) -> Workload:
    """Synthesise normal traffic, mark victims, then append labelled attacks sorted by start time."""
    normals = synthesize_transactions(records, wcfg)
    victim_ids, txs = identify_victims(normals, acfg.victim_percentile)
    by_id = {t.id: t for t in txs}
    next_id = len(txs)
    injected: list[Transaction] = []
    bundles: list[AttackBundle] = []
    gate = np.random.default_rng([acfg.seed, 3])
    for vid in sorted(victim_ids, key=lambda i: by_id[i].init_time):
        victim = by_id[vid]
        offset = 0
        do_sandwich = acfg.sandwich_enabled and gate.random() < acfg.sandwich_prob
        do_replay = acfg.replay_enabled and gate.random() < acfg.replay_prob
        if do_sandwich:
            front, back = inject_sandwich(victim, acfg, (next_id, next_id + 1), offset)
            injected += [front, back]
            bundles.append(AttackBundle("sandwich", vid, (front.id,), (back.id,)))
            next_id += 2
            offset += 2
        if do_replay:
            decoy, front, back = inject_replay(victim, acfg, (next_id, next_id + 1, next_id + 2), offset)
            injected += [decoy, front, back]
            bundles.append(AttackBundle("replay", vid, (front.id,), (back.id,), decoy=decoy.id))
            next_id += 3
    if acfg.clogging_interval > 0 and acfg.clogging_rate > 0:
        normal_fees = np.array([t.fee_pct for t in normals])
        horizon = max(t.init_time for t in normals)
        starts = np.arange(acfg.clogging_interval / 2, horizon, acfg.clogging_interval)
        for b, start in enumerate(starts):
            burst = inject_clogging(acfg, (float(start), float(start + acfg.clogging_window)), normal_fees,
                                    next_id, wcfg.mix_array(), burst=b)
            injected += burst
            next_id += len(burst)
    merged = sorted(txs + injected, key=lambda t: (t.init_time, t.id))
    return Workload(tuple(merged), tuple(bundles))
