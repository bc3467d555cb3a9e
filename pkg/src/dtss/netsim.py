"""Block propagation over a regional peer graph and the resulting fork probability."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .core import Block


class ConfigError(ValueError):
    pass


class TopologyError(RuntimeError):
    pass


REGION_NAMES = ("North America", "Europe", "South America", "Asia Pacific", "Japan", "Australia")


@dataclass(frozen=True, eq=False)
class RegionConfig:
    regions: tuple[str, ...]
    distribution: np.ndarray
    bandwidth: np.ndarray  # Mbps
    delay: np.ndarray  # milliseconds

    def __post_init__(self) -> None:
        n = len(self.regions)
        dist = np.asarray(self.distribution, dtype=float)
        bw = np.asarray(self.bandwidth, dtype=float)
        dl = np.asarray(self.delay, dtype=float)
        if dist.shape != (n,) or bw.shape != (n, n) or dl.shape != (n, n):
            raise ConfigError("distribution/bandwidth/delay shapes do not match the region list")
        if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
            raise ConfigError(f"region distribution must be non-negative and sum to 1 (got {dist.sum()!r})")
        if np.any(bw <= 0):
            raise ConfigError("bandwidth must be positive")
        if np.any(dl < 0):
            raise ConfigError("delay must be non-negative")
        if not (np.array_equal(bw, bw.T) and np.array_equal(dl, dl.T)):
            raise ConfigError("bandwidth and delay matrices must be symmetric")
        for name, arr in (("distribution", dist), ("bandwidth", bw), ("delay", dl)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def region_index(self, region: int | str) -> int:
        if isinstance(region, str):
            try:
                return self.regions.index(region)
            except ValueError:
                raise ConfigError(f"unknown region {region!r}") from None
        if not 0 <= int(region) < len(self.regions):
            raise ConfigError(f"unknown region index {region}")
        return int(region)

    def to_dict(self) -> dict:
        return {
            "regions": list(self.regions),
            "distribution": self.distribution.tolist(),
            "bandwidth": self.bandwidth.tolist(),
            "delay": self.delay.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RegionConfig":
        return cls(tuple(d["regions"]), np.asarray(d["distribution"]), np.asarray(d["bandwidth"]), np.asarray(d["delay"]))


SIMBLOCK_DEFAULT = RegionConfig(
    regions=REGION_NAMES,
    distribution=np.array([0.3316, 0.4998, 0.0090, 0.1177, 0.0224, 0.0195]),
    bandwidth=np.array(
        [
            [2.29, 2.29, 0.69, 1.87, 1.22, 1.35],
            [2.29, 2.47, 0.69, 1.87, 1.22, 1.35],
            [0.69, 0.69, 0.69, 0.69, 0.69, 0.69],
            [1.87, 1.87, 0.69, 1.87, 1.22, 1.35],
            [1.22, 1.22, 0.69, 1.22, 1.22, 1.22],
            [1.35, 1.35, 0.69, 1.35, 1.22, 1.35],
        ]
    ),
    delay=np.array(
        [
            [32, 124, 184, 198, 151, 189],
            [124, 11, 227, 237, 252, 294],
            [184, 227, 88, 325, 301, 322],
            [198, 237, 325, 85, 58, 198],
            [151, 252, 301, 58, 12, 126],
            [189, 294, 322, 198, 126, 16],
        ],
        dtype=float,
    ),
)

PRESETS = {"simblock-default": SIMBLOCK_DEFAULT}


def load_region_config(source: str | Path | Mapping) -> RegionConfig:
    """Resolve a preset name, a YAML/JSON file path, or an inline mapping."""
    if isinstance(source, Mapping):
        return RegionConfig.from_dict(source)
    if isinstance(source, str) and source in PRESETS:
        return PRESETS[source]
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"unknown network preset or missing file: {source}")
    with open(path, encoding="utf-8") as fh:
        return RegionConfig.from_dict(yaml.safe_load(fh))


def hop_time(size_mb: float, from_region: int | str, to_region: int | str, cfg: RegionConfig = SIMBLOCK_DEFAULT) -> float:
    """Seconds to push ``size_mb`` megabytes across one link."""
    if size_mb < 0:
        raise ValueError("block size must be non-negative")
    i, j = cfg.region_index(from_region), cfg.region_index(to_region)
    return 8.0 * size_mb / cfg.bandwidth[i, j] + cfg.delay[i, j] / 1000.0


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected peer graph; each node opened ``k`` connections to random peers."""

    n: int
    k: int
    seed: int
    regions: np.ndarray  # region index per node
    edges: np.ndarray  # (m, 2) unique undirected links, u < v
    cfg: RegionConfig

    def neighbors(self, node: int) -> np.ndarray:
        e = self.edges
        return np.sort(np.concatenate([e[e[:, 0] == node, 1], e[e[:, 1] == node, 0]]))

    def edge_weights(self, size_mb: float) -> np.ndarray:
        ru, rv = self.regions[self.edges[:, 0]], self.regions[self.edges[:, 1]]
        return 8.0 * size_mb / self.cfg.bandwidth[ru, rv] + self.cfg.delay[ru, rv] / 1000.0

    def graph(self, size_mb: float) -> csr_matrix:
        w = self.edge_weights(size_mb)
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        return csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(self.n, self.n))

    def is_connected(self) -> bool:
        adj = csr_matrix((np.ones(len(self.edges)), (self.edges[:, 0], self.edges[:, 1])), shape=(self.n, self.n))
        return connected_components(adj, directed=False, return_labels=False) == 1


def _sample_edges(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    pairs = np.empty((n * k, 2), dtype=np.int64)
    for u in range(n):
        peers = rng.choice(n - 1, size=k, replace=False)
        peers[peers >= u] += 1  # skip self
        pairs[u * k:(u + 1) * k, 0] = u
        pairs[u * k:(u + 1) * k, 1] = peers
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)


def build_topology(n: int = 6000, k: int = 8, cfg: RegionConfig = SIMBLOCK_DEFAULT, seed: int = 0,
                   max_attempts: int = 20) -> Topology:
    if n < 2 or k < 1:
        raise ConfigError("topology needs n >= 2 and k >= 1")
    if k >= n:
        raise ConfigError(f"out-degree k={k} must be below node count n={n}")
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        regions = rng.choice(len(cfg.regions), size=n, p=cfg.distribution)
        topo = Topology(n, k, seed, regions, _sample_edges(n, k, rng), cfg)
        if topo.is_connected():
            return topo
    raise TopologyError(f"no connected topology after {max_attempts} attempts")


@dataclass(frozen=True, eq=False)
class PropagationResult:
    origin: int
    arrival: np.ndarray  # seconds, per node
    predecessor: np.ndarray  # delivering neighbour per node, -1 at the origin
    coverage_times: np.ndarray  # sorted arrival events
    coverage: np.ndarray  # fraction of nodes reached at each event
    integral: float  # integral of (1 - coverage) over time
    mean_p: float  # delivering-tree hop sum divided by node count


def propagate(size_mb: float, topology: Topology, origin: int = 0) -> PropagationResult:
    """Earliest-arrival flooding of a ``size_mb`` block from ``origin``."""
    if size_mb < 0:
        raise ValueError("block size must be non-negative")
    dist, pred = dijkstra(topology.graph(size_mb), directed=True, indices=origin, return_predecessors=True)
    if not np.all(np.isfinite(dist)):
        raise TopologyError("topology is disconnected: some nodes never receive the block")
    n = topology.n
    times = np.sort(dist)
    coverage = np.arange(1, n + 1) / n
    integral = float(dist.sum() / n)
    pred = np.where(pred < 0, -1, pred)
    return PropagationResult(origin, dist, pred, times, coverage, integral, _tree_mean(size_mb, topology, pred))


def _tree_mean(size_mb: float, topology: Topology, pred: np.ndarray) -> float:
    child = np.flatnonzero(pred >= 0)
    ru, rv = topology.regions[pred[child]], topology.regions[child]
    hops = 8.0 * size_mb / topology.cfg.bandwidth[ru, rv] + topology.cfg.delay[ru, rv] / 1000.0
    return float(hops.sum() / topology.n)


def step_integral(result: PropagationResult) -> float:
    """Integral of (1 - f) computed directly from the coverage step function."""
    t = result.coverage_times
    f = result.coverage
    # The origin holds the block at t = 0; between events the uncovered share is 1 - f[i].
    return float(np.sum((1.0 - f[:-1]) * np.diff(t)))


@dataclass(frozen=True)
class ForkModel:
    p_b: float = 1.0 / 600.0

    def __post_init__(self) -> None:
        if not 0.0 < self.p_b < 1.0:
            raise ConfigError(f"p_b must lie in (0, 1), got {self.p_b}")


def fork_probability(result: PropagationResult | float, model: ForkModel = ForkModel()) -> float:
    """Chance that at least one competing block is found while this one spreads."""
    integral = result.integral if isinstance(result, PropagationResult) else float(result)
    if integral < 0:
        raise ValueError("propagation integral must be non-negative")
    return float(-np.expm1(integral * np.log1p(-model.p_b)))


def default_origins(topology: Topology, count: int = 32) -> np.ndarray:
    """A fixed, seed-derived sample of block origins used for averaged metrics."""
    rng = np.random.default_rng([topology.seed, 0xF0])
    return np.sort(rng.choice(topology.n, size=min(count, topology.n), replace=False))


def _origins(topology: Topology, origins: int | Sequence[int] | None) -> np.ndarray:
    if origins is None:
        return default_origins(topology)
    if isinstance(origins, (int, np.integer)):
        return np.array([int(origins)])
    return np.asarray(origins, dtype=np.int64)


def mean_propagation(size_mb: float, topology: Topology, origins: int | Sequence[int] | None = None) -> float:
    """Sum of hop times along the delivering tree divided by node count, averaged over origins."""
    dist_pred = [dijkstra(topology.graph(size_mb), directed=True, indices=int(o), return_predecessors=True)
                 for o in _origins(topology, origins)]
    return float(np.mean([_tree_mean(size_mb, topology, np.where(p < 0, -1, p)) for _, p in dist_pred]))


def propagation_integrals(size_mb: float, topology: Topology, origins: int | Sequence[int] | None = None
                          ) -> np.ndarray:
    """Mean arrival time (the integral of 1 - f) for each origin."""
    dist = np.atleast_2d(dijkstra(topology.graph(size_mb), directed=True, indices=_origins(topology, origins)))
    if not np.all(np.isfinite(dist)):
        raise TopologyError("topology is disconnected")
    return dist.sum(axis=1) / topology.n


def fork_rate(size_mb: float, topology: Topology, model: ForkModel = ForkModel(),
              origins: int | Sequence[int] | None = None) -> float:
    """Fork probability for a block of ``size_mb`` averaged over origins."""
    integrals = propagation_integrals(size_mb, topology, origins)
    return float(np.mean([fork_probability(i, model) for i in integrals]))


def block_fork_rate(block: Block, topology: Topology, model: ForkModel = ForkModel(),
                    origins: int | Sequence[int] | None = None) -> float:
    return fork_rate(block.byte_size / 1e6, topology, model, origins)
