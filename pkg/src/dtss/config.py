"""Run configuration: one YAML file with workload, attack, scoring, network, miner and optimizer sections."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .ahp import ImportanceParams
from .netsim import PRESETS, ConfigError, ForkModel, RegionConfig, load_region_config
from .optimizer import AlgoConfig, ParamVector
from .sequencer import LeafParams
from .simulation import ChainConfig, MinerMix
from .workload import AttackConfig, WorkloadConfig

# Admissible within the optimizer bounds; fee dominates the attribute weights.
DEFAULT_IMPORTANCE = ImportanceParams(0.93, 0.95, 0.43, 0.96, 0.82, 0.80, 0.95, 0.78, 0.94, 0.43, 0.5, 100.0, 100.0)
DEFAULT_LEAF = LeafParams(scale=0.7, shape=0.5, leaf_scale=100, budget=2100)
DEFAULT_MINERS = MinerMix(compliant=1.0, fee_greedy=0.0, adversarial=0.0)


@dataclass(frozen=True)
class NetworkSettings:
    preset: str = "simblock-default"
    regions: Mapping | None = None  # inline override of the preset
    n: int = 6000
    k: int = 8
    p_b: float = 1.0 / 600.0
    origins: int = 32

    def region_config(self) -> RegionConfig:
        return load_region_config(self.regions if self.regions is not None else self.preset)

    def fork_model(self) -> ForkModel:
        return ForkModel(self.p_b)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output: str = "out"
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    ahp: ImportanceParams = DEFAULT_IMPORTANCE
    leaf: LeafParams = DEFAULT_LEAF
    header_bytes: int = 0
    network: NetworkSettings = field(default_factory=NetworkSettings)
    miners: MinerMix = DEFAULT_MINERS
    chain: ChainConfig = field(default_factory=ChainConfig)
    optimizer: AlgoConfig = field(default_factory=AlgoConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        """Thread one seed through every seeded component."""
        return replace(
            self,
            seed=seed,
            workload=replace(self.workload, seed=seed),
            attack=replace(self.attack, seed=seed),
            optimizer=replace(self.optimizer, seed=seed),
        )

    def with_params(self, p: ParamVector) -> "RunConfig":
        return replace(self, ahp=p.importance, leaf=replace(self.leaf, scale=p.scale, shape=p.shape))

    @property
    def param_vector(self) -> ParamVector:
        return ParamVector.from_parts(self.ahp, self.leaf.scale, self.leaf.shape)

    def to_dict(self) -> dict[str, Any]:
        chain = asdict(self.chain)
        chain.pop("header_bytes")
        return {
            "seed": self.seed,
            "output": self.output,
            "workload": self.workload.to_dict(),
            "attack": self.attack.to_dict(),
            "ahp": self.ahp.to_dict(),
            "leaf": {**asdict(self.leaf), "header_bytes": self.header_bytes},
            "network": {k: v for k, v in asdict(self.network).items() if not (k == "regions" and v is None)},
            "miners": asdict(self.miners),
            "chain": chain,
            "optimizer": {k: v for k, v in self.optimizer.to_dict().items() if k != "seed"},
        }


def _build(cls, section: Mapping | None, name: str, **extra):
    section = dict(section or {})
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    for k in ("fee_multiplier", "amount_fraction"):
        if k in section:
            section[k] = tuple(section[k])
    try:
        return cls(**{**section, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


def config_from_mapping(d: Mapping[str, Any] | None) -> RunConfig:
    d = dict(d or {})
    allowed = {"seed", "output", "workload", "attack", "ahp", "leaf", "network", "miners", "chain", "optimizer"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if "seed" not in d:
        raise ConfigError("config must set a seed")
    seed = int(d["seed"])
    leaf_section = dict(d.get("leaf") or {})
    header_bytes = int(leaf_section.pop("header_bytes", 0))
    leaf = _build(LeafParams, {**asdict(DEFAULT_LEAF), **leaf_section}, "leaf")
    ahp_section = {**DEFAULT_IMPORTANCE.to_dict(), **(d.get("ahp") or {})}
    try:
        ahp = ImportanceParams.from_mapping(ahp_section)
    except ValueError as exc:
        raise ConfigError(f"invalid [ahp] section: {exc}") from exc
    network = _build(NetworkSettings, d.get("network"), "network")
    if network.regions is None and network.preset not in PRESETS and not Path(network.preset).exists():
        raise ConfigError(f"unknown network preset {network.preset!r}")
    cfg = RunConfig(
        seed=seed,
        output=str(d.get("output", "out")),
        workload=_build(WorkloadConfig, d.get("workload"), "workload"),
        attack=_build(AttackConfig, d.get("attack"), "attack"),
        ahp=ahp,
        leaf=leaf,
        header_bytes=header_bytes,
        network=network,
        miners=_build(MinerMix, {**asdict(DEFAULT_MINERS), **(d.get("miners") or {})}, "miners"),
        chain=_build(ChainConfig, d.get("chain"), "chain", header_bytes=header_bytes),
        optimizer=_build(AlgoConfig, d.get("optimizer"), "optimizer"),
    )
    return cfg.with_seed(seed)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is not None and not isinstance(data, Mapping):
        raise ConfigError(f"{path} must hold a mapping at top level")
    return config_from_mapping(data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)
