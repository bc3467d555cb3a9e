"""Command-line entry point: ``dtss <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage, configuration or input error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analytics import (
    execution_order,
    fork_rate_report,
    nadm,
    priority_report,
    rows_to_csv,
)
from .config import RunConfig, dump_config, load_config
from .core import (
    ATTACK_LABELS,
    AdversaryLabel,
    AttackBundle,
    Block,
    TxTable,
    iter_transactions,
    read_blocks,
    validate_workload,
    write_blocks,
    write_transactions,
)
from .netsim import ConfigError, build_topology, default_origins, fork_probability, mean_propagation, propagation_integrals
from .optimizer import AlgoConfig, NadmObjective, optimize
from .simulation import MinerMix, allocation_sample, run_chain
from .workload import IngestionError, build_workload, ingest_ohlc, synth_ohlc, write_ohlc

log = logging.getLogger("dtss")

SCHEMA_VERSION = 1


class UsageError(Exception):
    """Bad input that the user can fix; maps to exit code 2."""


# ---------------------------------------------------------------- helpers

def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out if getattr(args, "out", None) else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_workload(path: str) -> tuple[list, tuple[AttackBundle, ...], dict | None]:
    wpath = Path(path)
    if not wpath.is_file():
        raise UsageError(f"workload file not found: {wpath}")
    try:
        txs = list(iter_transactions(wpath))
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"malformed workload {wpath}: {exc}") from exc
    problems = validate_workload(txs)
    if problems:
        raise UsageError(f"invalid workload {wpath}: {problems[:5]}")
    manifest = None
    mpath = wpath.with_name("manifest.json")
    if mpath.is_file():
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    bundles = tuple(AttackBundle.from_dict(b) for b in (manifest or {}).get("bundles", []))
    return txs, bundles, manifest


def _check_manifest(cfg: RunConfig, manifest: dict | None, wpath: Path) -> None:
    if manifest is None:
        return
    if manifest.get("workload_sha256") not in (None, _sha256(wpath)):
        raise UsageError(f"{wpath} does not match the checksum recorded in its manifest")
    recorded = manifest.get("config", {})
    for section in ("workload", "attack"):
        if section in recorded and recorded[section] != cfg.to_dict()[section]:
            raise UsageError(f"config [{section}] differs from the one that generated {wpath}")


# ---------------------------------------------------------------- commands

def cmd_synth_ohlc(args) -> int:
    records = synth_ohlc(args.rows, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ohlc(out, records)
    print(f"wrote {len(records)} rows to {out}")
    return 0


def cmd_inject(args) -> int:
    cfg = _load_cfg(args)
    try:
        records = ingest_ohlc(args.ohlc, skip_malformed=args.skip_malformed)
    except IngestionError as exc:
        if not Path(args.ohlc).is_file():
            raise UsageError(str(exc)) from exc
        raise
    wl = build_workload(records, cfg.workload, cfg.attack)
    out = _out_dir(args, cfg)
    wpath = out / "workload.jsonl"
    write_transactions(wpath, wl.txs)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "source_rows": len(records),
        "transactions": len(wl.txs),
        "label_counts": wl.label_counts(),
        "config": {"workload": cfg.to_dict()["workload"], "attack": cfg.to_dict()["attack"]},
        "workload_sha256": _sha256(wpath),
        "bundles": [b.to_dict() for b in wl.bundles],
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(wl.txs)} transactions to {wpath}")
    return 0


def _block_category(block: Block, labels: dict[int, int]) -> str:
    present = {labels[t] for t in block.txs}
    if AdversaryLabel.Clogging in present:
        return "clogging"
    if present & {AdversaryLabel.SandwichFront, AdversaryLabel.SandwichBack}:
        return "sandwich"
    if present & {AdversaryLabel.ReplayFront, AdversaryLabel.ReplayBack, AdversaryLabel.ReplayDecoy}:
        return "replay"
    return "normal"


def build_report(table: TxTable, cfg: RunConfig, dtss_blocks: Sequence[Block], orphaned: Sequence[Block],
                 baseline_blocks: Sequence[Block], fork_probs: dict[int, float]) -> dict:
    """Metrics for one simulation: leaf allocation, execution-order shift and fork rates."""
    labels = dict(zip(table.ids.tolist(), table.label.tolist()))
    leaves: dict[int, int] = {}
    for b in dtss_blocks:
        leaves.update(zip(b.txs, b.leaf_allocs))
    by_label: dict[str, list[int]] = {}
    for tid, n in leaves.items():
        by_label.setdefault(AdversaryLabel(labels[tid]).name, []).append(n)
    alloc = {k: {"count": len(v), "mean_leaves": float(np.mean(v))} for k, v in sorted(by_label.items())}
    honest = [n for t, n in leaves.items() if labels[t] in (0, 1)]
    attack = [n for t, n in leaves.items() if labels[t] in {int(x) for x in ATTACK_LABELS}]
    chain_nadm = (float(np.mean(honest)) - float(np.mean(attack))) / cfg.leaf.leaf_scale if honest and attack else None
    snapshot_nadm = None
    label_set = set(table.label.tolist())
    if label_set & {0, 1} and label_set & {int(x) for x in ATTACK_LABELS}:
        snapshot_nadm = nadm(allocation_sample(table, cfg.ahp, cfg.leaf), cfg.leaf.leaf_scale)

    o1, o2 = execution_order(dtss_blocks), execution_order(baseline_blocks)
    executed = np.intersect1d(o1.ids, o2.ids)
    groups = {}
    for lab in AdversaryLabel:
        ids = table.ids[table.label == int(lab)]
        ids = ids[np.isin(ids, executed)]
        if len(ids):
            groups[lab.name] = ids
    shift_rows = priority_report(o1, o2, groups)

    fork_rows = fork_rate_report(
        (_block_category(b, labels), b.byte_size / 1e6, fork_probs.get(b.id, 0.0))
        for b in list(dtss_blocks) + list(orphaned)
    )
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "blocks": {"canonical": len(dtss_blocks), "orphaned": len(orphaned), "baseline": len(baseline_blocks)},
        "mean_z": float(np.mean([b.z for b in dtss_blocks])) if dtss_blocks else None,
        "nadm_chain": chain_nadm,
        "nadm_snapshot": snapshot_nadm,
        "allocation": alloc,
        "shift": [asdict(r) for r in shift_rows],
        "fork_rates": [asdict(r) for r in fork_rows],
    }


def _write_report(out: Path, report: dict) -> None:
    _write_json(out / "metrics.json", report)
    _write_text(out / "shift.csv", rows_to_csv(report["shift"], ["group", "count", "mean_o1", "mean_o2", "shift_pct", "t_stat"]))
    _write_text(out / "fork_rates.csv", rows_to_csv(report["fork_rates"], ["category", "blocks", "mean_size_mb", "fork_probability"]))
    alloc_rows = [{"label": k, **v} for k, v in report["allocation"].items()]
    _write_text(out / "allocation.csv", rows_to_csv(alloc_rows, ["label", "count", "mean_leaves"]))


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    if args.params:
        cfg = replace(cfg, ahp=load_config(args.params).ahp, leaf=load_config(args.params).leaf)
    txs, bundles, manifest = _load_workload(args.workload)
    _check_manifest(cfg, manifest, Path(args.workload))
    table = TxTable.from_transactions(txs)
    out = _out_dir(args, cfg)
    net = cfg.network
    topology = None
    if not args.no_forks:
        topology = build_topology(net.n, net.k, net.region_config(), seed=cfg.seed)
    chain_cfg = replace(cfg.chain, dtss=True, header_bytes=cfg.header_bytes)
    run = run_chain(table, cfg.ahp, cfg.leaf, mix=cfg.miners, bundles=bundles, cfg=chain_cfg,
                    topology=topology, fork_model=net.fork_model(), seed=cfg.seed)
    base = run_chain(table, cfg.ahp, cfg.leaf, mix=MinerMix(0.0, 1.0, 0.0),
                     cfg=replace(chain_cfg, dtss=False), seed=cfg.seed)
    write_blocks(out / "blocks_dtss.jsonl", run.blocks)
    write_blocks(out / "blocks_orphaned.jsonl", run.orphaned)
    write_blocks(out / "blocks_baseline.jsonl", base.blocks)
    _write_json(out / "fork_probs.json", {str(k): v for k, v in sorted(run.fork_probs.items())})
    labels = dict(zip(table.ids.tolist(), table.label.tolist()))
    block_rows = [
        {"id": b.id, "parent_id": "" if b.parent_id is None else b.parent_id, "miner_id": b.miner_id,
         "policy": b.policy, "status": status, "n_txs": len(b), "total_leaves": b.total_leaves,
         "kendall_c": b.kendall_c, "z": b.z, "byte_size": b.byte_size, "category": _block_category(b, labels),
         "fork_probability": run.fork_probs.get(b.id, 0.0)}
        for status, blocks in (("canonical", run.blocks), ("orphaned", run.orphaned)) for b in blocks
    ]
    _write_text(out / "blocks.csv", rows_to_csv(block_rows, list(block_rows[0]) if block_rows else ["id"]))
    pos_rows = []
    pos = 0
    for b in run.blocks:
        for tid in b.txs:
            pos += 1
            pos_rows.append({"position": pos, "block": b.id, "tx": tid, "label": AdversaryLabel(labels[tid]).name,
                             "score": run.inclusion_scores[tid]})
    _write_text(out / "score_position.csv", rows_to_csv(pos_rows, ["position", "block", "tx", "label", "score"]))
    _write_json(out / "run.json", {
        "schema_version": SCHEMA_VERSION,
        "workload": Path(args.workload).name,
        "workload_sha256": _sha256(Path(args.workload)),
        "config": cfg.to_dict(),
    })
    _write_text(out / "config.yaml", dump_config(cfg))
    _write_report(out, build_report(table, cfg, run.blocks, run.orphaned, base.blocks, run.fork_probs))
    print(f"simulated {len(run.blocks)} blocks ({len(run.orphaned)} orphaned); outputs in {out}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    meta_path = run_dir / "run.json"
    if not meta_path.is_file():
        raise UsageError(f"{run_dir} holds no run.json; point --run at a simulate output directory")
    cfg = load_config(run_dir / "config.yaml")
    wpath = Path(args.workload) if args.workload else None
    if wpath is None:
        raise UsageError("--workload is required to resolve transaction labels")
    txs, _, _ = _load_workload(str(wpath))
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("workload_sha256") != _sha256(wpath):
        raise UsageError(f"{wpath} is not the workload this run was simulated on")
    table = TxTable.from_transactions(txs)
    fork_probs = {int(k): v for k, v in json.loads((run_dir / "fork_probs.json").read_text()).items()}
    report = build_report(table, cfg, read_blocks(run_dir / "blocks_dtss.jsonl"),
                          read_blocks(run_dir / "blocks_orphaned.jsonl"),
                          read_blocks(run_dir / "blocks_baseline.jsonl"), fork_probs)
    out = Path(args.out) if args.out else run_dir
    _write_report(out, report)
    print(json.dumps({k: report[k] for k in ("blocks", "nadm_chain", "nadm_snapshot")}, sort_keys=True))
    return 0


def cmd_optimize(args) -> int:
    cfg = _load_cfg(args)
    algo = replace(cfg.optimizer, algorithm=args.algo or cfg.optimizer.algorithm,
                   n_pop=args.pop if args.pop is not None else cfg.optimizer.n_pop,
                   max_gen=args.gen if args.gen is not None else cfg.optimizer.max_gen,
                   workers=args.workers if args.workers is not None else cfg.optimizer.workers)
    try:
        algo = AlgoConfig(**asdict(algo))  # re-validate after overrides
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    txs, _, manifest = _load_workload(args.workload)
    _check_manifest(cfg, manifest, Path(args.workload))
    table = TxTable.from_transactions(txs)
    objective = NadmObjective(table, cfg.leaf.leaf_scale, cfg.leaf.budget)
    result = optimize(algo, objective)
    out = _out_dir(args, cfg)
    names = list(result.best.to_dict())
    rows = [{"gen": r.generation, "best_nadm": r.best_nadm, "mean_nadm": r.mean_nadm, "min_nadm": r.min_nadm,
             "evaluations": r.evaluations, **r.best.to_dict()} for r in result.history]
    _write_text(out / "history.csv", rows_to_csv(rows, ["gen", "best_nadm", "mean_nadm", "min_nadm", "evaluations"] + names))
    best_cfg = replace(cfg.with_params(result.best), optimizer=algo)
    _write_text(out / "best_params.yaml", dump_config(best_cfg))
    print(f"{algo.algorithm}: best NADM {result.best_nadm:.6f} after {len(result.history) - 1} generations")
    return 0


def _parse_sizes(text: str) -> list[float]:
    if not text.strip():
        return []
    try:
        sizes = [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"invalid size list {text!r}") from exc
    if any(s < 0 for s in sizes):
        raise UsageError("block sizes must be non-negative")
    return sizes


def cmd_fork_model(args) -> int:
    cfg = _load_cfg(args)
    sizes = _parse_sizes(args.sizes)
    out = _out_dir(args, cfg)
    fields = ["size_mb", "mean_propagation_s", "mean_arrival_s", "fork_probability"]
    rows = []
    if sizes:
        net = cfg.network
        topo = build_topology(net.n, net.k, net.region_config(), seed=cfg.seed)
        origins = default_origins(topo, args.origins or net.origins)
        model = net.fork_model()
        for s in sizes:
            integrals = propagation_integrals(s, topo, origins)
            rows.append({"size_mb": s, "mean_propagation_s": mean_propagation(s, topo, origins),
                         "mean_arrival_s": float(integrals.mean()),
                         "fork_probability": float(np.mean([fork_probability(i, model) for i in integrals]))})
    _write_text(out / "fork_model.csv", rows_to_csv(rows, fields))
    sys.stdout.write(rows_to_csv(rows, fields))
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtss", description="Transaction sequencing simulator and optimizer.")
    p.add_argument("--version", action="version", version=f"dtss {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="run configuration (YAML)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory (defaults to the config's output)")

    sp = sub.add_parser("synth-ohlc", help="write a synthetic minute-bar OHLC CSV")
    sp.add_argument("--rows", type=int, default=40_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="CSV path")
    sp.set_defaults(func=cmd_synth_ohlc)

    sp = sub.add_parser("inject", help="build a labelled workload from OHLC data")
    common(sp)
    sp.add_argument("--ohlc", required=True, help="OHLC CSV path")
    sp.add_argument("--skip-malformed", action="store_true", help="drop malformed rows instead of failing")
    sp.set_defaults(func=cmd_inject)

    sp = sub.add_parser("simulate", help="mine a chain over a workload and report metrics")
    common(sp)
    sp.add_argument("--workload", required=True, help="workload JSONL from inject")
    sp.add_argument("--params", help="config file whose ahp/leaf sections replace the run config's")
    sp.add_argument("--no-forks", action="store_true", help="skip propagation and orphaning")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("optimize", help="search parameters that maximise NADM")
    common(sp)
    sp.add_argument("--workload", required=True)
    sp.add_argument("--algo", choices=["de", "pso", "ga"])
    sp.add_argument("--pop", type=int)
    sp.add_argument("--gen", type=int)
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("fork-model", help="fork probability and propagation time per block size")
    common(sp)
    sp.add_argument("--sizes", default="1,10,20,30", help="comma-separated block sizes in MB")
    sp.add_argument("--origins", type=int, help="number of block origins to average over")
    sp.set_defaults(func=cmd_fork_model)

    sp = sub.add_parser("report", help="recompute metrics from a simulate output directory")
    sp.add_argument("--run", required=True, help="simulate output directory")
    sp.add_argument("--workload", help="workload JSONL the run used")
    sp.add_argument("--out", help="where to write the report (defaults to the run directory)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"dtss {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface any runtime failure as exit 1
        log.debug("failure", exc_info=True)
        print(f"dtss {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
