"""Metaheuristic search over importance levels and leaf-curve parameters."""
from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .ahp import TYPE_CELLS, ImportanceParams, admissibility_report, derive_priorities, normalize_attributes, score_triples
from .analytics import AllocationSample, nadm
from .core import ATTACK_LABELS, CANONICAL_PRIORITY, HONEST_LABELS, TxTable
from .sequencer import LeafParams, _leaves

PARAM_NAMES = tuple(f"a{i}" for i in range(1, 14)) + ("scale", "shape")
DIM = len(PARAM_NAMES)


class InadmissibleError(ValueError):
    def __init__(self, report: Sequence[str]):
        self.report = list(report)
        super().__init__("; ".join(self.report))


@dataclass(frozen=True)
class Bounds:
    lo: tuple[float, ...] = (0.01,) * 11 + (1.0, 1.0, 0.1, 0.05)
    hi: tuple[float, ...] = (1.0,) * 11 + (10_000.0, 10_000.0, 10.0, 1.0)

    def __post_init__(self) -> None:
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValueError("lower and upper bounds need the same non-zero length")
        if any(not lo < hi for lo, hi in zip(self.lo, self.hi)):
            raise ValueError("every lower bound must be below its upper bound")

    @property
    def lo_array(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @property
    def hi_array(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo_array, self.hi_array)

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo_array) and np.all(x <= self.hi_array))

    def sample(self, rng: np.random.Generator, dims: np.ndarray | None = None) -> np.ndarray:
        lo, hi = self.lo_array, self.hi_array
        if dims is not None:
            lo, hi = lo[dims], hi[dims]
        return rng.uniform(lo, hi)


@dataclass(frozen=True)
class ParamVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != DIM:
            raise ValueError(f"parameter vector needs {DIM} values, got {len(self.values)}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "ParamVector":
        return cls(tuple(float(v) for v in x))

    @classmethod
    def from_parts(cls, importance: ImportanceParams, scale: float, shape: float) -> "ParamVector":
        return cls(importance.as_tuple() + (scale, shape))

    @classmethod
    def from_mapping(cls, d: Mapping[str, float]) -> "ParamVector":
        return cls(tuple(float(d[k]) for k in PARAM_NAMES))

    def array(self) -> np.ndarray:
        return np.asarray(self.values)

    @property
    def importance(self) -> ImportanceParams:
        return ImportanceParams.from_sequence(self.values[:13])

    @property
    def scale(self) -> float:
        return self.values[13]

    @property
    def shape(self) -> float:
        return self.values[14]

    def leaf(self, leaf_scale: int = 100, budget: int = 2100) -> LeafParams:
        return LeafParams(self.scale, self.shape, leaf_scale, budget)

    def to_dict(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES, self.values))


@dataclass(frozen=True)
class AlgoConfig:
    algorithm: str = "de"
    n_pop: int = 50
    max_gen: int = 100
    cr: float = 0.9
    f_w: float = 0.5
    inertia: float = 0.73
    c1: float = 1.5
    c2: float = 1.5
    ga_crossover: float = 0.9
    ga_mutation: float = 0.1
    ga_sigma_frac: float = 0.1
    tournament: int = 2
    elitism: int = 1
    patience: int = 20
    tol: float = 1e-4
    repair_attempts: int = 100
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        algo = self.algorithm.lower()
        if algo not in ("de", "pso", "ga"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose de, pso or ga")
        object.__setattr__(self, "algorithm", algo)
        if algo == "de" and self.n_pop < 4:
            raise ValueError("DE needs a population of at least 4")
        if self.n_pop < 1 or (algo == "ga" and self.n_pop < 2):
            raise ValueError("population too small")
        for name in ("cr", "ga_crossover", "ga_mutation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.max_gen < 0:
            raise ValueError("max_gen must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- hierarchy

def _type_violations(x: np.ndarray) -> list[tuple[int, int]]:
    v1 = derive_priorities(ImportanceParams.from_sequence(list(x[:10]) + [1.0, 1.0, 1.0])).v1
    return [(hi, lo) for hi, lo in zip(CANONICAL_PRIORITY, CANONICAL_PRIORITY[1:]) if not v1[hi] > v1[lo]]


def offending_dims(x: np.ndarray) -> np.ndarray:
    """Type-matrix dimensions touching any type involved in an ordering violation."""
    types = {t for pair in _type_violations(x) for t in pair}
    return np.array([d for d, (i, j) in enumerate(TYPE_CELLS) if i in types or j in types], dtype=np.intp)


def repair_hierarchy(x: np.ndarray, rng: np.random.Generator, bounds: Bounds = Bounds(),
                     attempts: int = 100) -> np.ndarray | None:
    """Return ``x`` if admissible, else resample offending dims up to ``attempts`` times; None on failure."""
    x = np.array(x, dtype=float)
    dims = offending_dims(x)
    if len(dims) == 0:
        return x
    for _ in range(attempts):
        x[dims] = bounds.sample(rng, dims)
        if not _type_violations(x):
            return x
    return None


def enforce_hierarchy(p: ParamVector, rng: np.random.Generator | None = None, bounds: Bounds = Bounds(),
                      attempts: int = 100) -> ParamVector:
    """Admissible version of ``p`` or InadmissibleError when the resample cap is hit."""
    if not bounds.contains(p.array()):
        raise InadmissibleError(["parameter vector outside bounds"])
    rng = rng if rng is not None else np.random.default_rng(0)
    fixed = repair_hierarchy(p.array(), rng, bounds, attempts)
    if fixed is None:
        raise InadmissibleError([f"no admissible resample in {attempts} attempts"]
                                + admissibility_report(p.importance))
    return ParamVector.from_array(fixed)


def sample_admissible(bounds: Bounds, rng: np.random.Generator, attempts: int = 100, max_restarts: int = 10_000
                      ) -> np.ndarray:
    for _ in range(max_restarts):
        x = repair_hierarchy(bounds.sample(rng), rng, bounds, attempts)
        if x is not None:
            return x
    raise RuntimeError("could not draw an admissible parameter vector")


# ---------------------------------------------------------------- fitness

class NadmObjective:
    """NADM of a parameter vector over a fixed workload scored as one compliant snapshot.

    Attribute normalisation does not depend on the parameters, so it is done
    once here and reused for every evaluation.
    """

    def __init__(self, table: TxTable, leaf_scale: int = 100, budget: int = 2100):
        self.table = table
        self.leaf_scale = leaf_scale
        self.budget = budget
        _, self._triples = normalize_attributes(table)
        self._honest = np.isin(table.label, [int(x) for x in HONEST_LABELS])
        self._attack = np.isin(table.label, [int(x) for x in ATTACK_LABELS])

    def leaves(self, p: ParamVector) -> np.ndarray:
        scores = score_triples(self.table.tx_type, self._triples, derive_priorities(p.importance))
        return _leaves(scores, p.leaf(self.leaf_scale, self.budget))

    def sample(self, p: ParamVector) -> AllocationSample:
        return AllocationSample(self.table.label.copy(), self.leaves(p))

    def __call__(self, x: Sequence[float] | ParamVector) -> float:
        p = x if isinstance(x, ParamVector) else ParamVector.from_array(x)
        leaves = self.leaves(p)
        return float((leaves[self._honest].mean() - leaves[self._attack].mean()) / self.leaf_scale)


def evaluate(p: ParamVector, table: TxTable, leaf_scale: int = 100, budget: int = 2100,
             bounds: Bounds = Bounds()) -> float:
    """NADM for an admissible, in-bounds vector; anything else is rejected with a report."""
    report = []
    if not bounds.contains(p.array()):
        report.append("parameter vector outside bounds")
    report += admissibility_report(p.importance)
    if report:
        raise InadmissibleError(report)
    return nadm(NadmObjective(table, leaf_scale, budget).sample(p), leaf_scale)


# ---------------------------------------------------------------- steps

Fitness = Callable[[np.ndarray], float]
Repair = Callable[[np.ndarray, np.random.Generator], "np.ndarray | None"]


def _evaluate_all(fn: Fitness, xs: Sequence[np.ndarray], workers: int = 1) -> np.ndarray:
    many = getattr(fn, "many", None)
    if many is not None:
        return many(xs)
    if workers > 1 and len(xs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(fn, xs)), dtype=float)
    return np.array([fn(x) for x in xs], dtype=float)


def de_step(pop: np.ndarray, fit: np.ndarray, fn: Fitness, bounds: Bounds, cfg: AlgoConfig,
            rng: np.random.Generator, repair: Repair | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One rand/1/bin generation with greedy parent/trial replacement (ties go to the trial)."""
    n, d = pop.shape
    trials = []
    for i in range(n):
        others = np.delete(np.arange(n), i)
        r1, r2, r3 = rng.choice(others, size=3, replace=False)
        mutant = pop[r1] + cfg.f_w * (pop[r2] - pop[r3])
        cross = rng.random(d) < cfg.cr
        cross[rng.integers(d)] = True
        trial = bounds.clip(np.where(cross, mutant, pop[i]))
        if repair is not None:
            trial = repair(trial, rng)
        trials.append(trial)
    live = [i for i, t in enumerate(trials) if t is not None]
    scores = _evaluate_all(fn, [trials[i] for i in live], cfg.workers)
    new_pop, new_fit = pop.copy(), fit.copy()
    for i, s in zip(live, scores):
        if s >= fit[i]:
            new_pop[i], new_fit[i] = trials[i], s
    return new_pop, new_fit


@dataclass
class Swarm:
    x: np.ndarray
    v: np.ndarray
    fit: np.ndarray
    pbest: np.ndarray
    pbest_fit: np.ndarray

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.pbest_fit))

    @property
    def gbest(self) -> np.ndarray:
        return self.pbest[self.best_index]

    @property
    def gbest_fit(self) -> float:
        return float(self.pbest_fit[self.best_index])

    @classmethod
    def start(cls, x: np.ndarray, fit: np.ndarray) -> "Swarm":
        return cls(x.copy(), np.zeros_like(x), fit.copy(), x.copy(), fit.copy())


def pso_step(swarm: Swarm, fn: Fitness, bounds: Bounds, cfg: AlgoConfig, rng: np.random.Generator,
             repair: Repair | None = None) -> Swarm:
    n, d = swarm.x.shape
    gbest = swarm.gbest
    r1 = rng.random((n, d))
    r2 = rng.random((n, d))
    v = cfg.inertia * swarm.v + cfg.c1 * r1 * (swarm.pbest - swarm.x) + cfg.c2 * r2 * (gbest - swarm.x)
    vmax = bounds.hi_array - bounds.lo_array
    v = np.clip(v, -vmax, vmax)
    x = bounds.clip(swarm.x + v)
    moved = np.ones(n, dtype=bool)
    if repair is not None:
        for i in range(n):
            fixed = repair(x[i], rng)
            if fixed is None:
                # Stay put rather than leave the admissible region.
                x[i], v[i], moved[i] = swarm.x[i], 0.0, False
            else:
                x[i] = fixed
    fit = swarm.fit.copy()
    idx = np.flatnonzero(moved)
    fit[idx] = _evaluate_all(fn, [x[i] for i in idx], cfg.workers)
    better = fit > swarm.pbest_fit
    pbest = np.where(better[:, None], x, swarm.pbest)
    pbest_fit = np.where(better, fit, swarm.pbest_fit)
    return Swarm(x, v, fit, pbest, pbest_fit)


def _tournament(fit: np.ndarray, k: int, rng: np.random.Generator) -> int:
    entrants = rng.choice(len(fit), size=min(k, len(fit)), replace=False)
    return int(entrants[np.argmax(fit[entrants])])


def ga_step(pop: np.ndarray, fit: np.ndarray, fn: Fitness, bounds: Bounds, cfg: AlgoConfig,
            rng: np.random.Generator, repair: Repair | None = None) -> tuple[np.ndarray, np.ndarray]:
    n, d = pop.shape
    sigma = cfg.ga_sigma_frac * (bounds.hi_array - bounds.lo_array)
    n_elite = min(cfg.elitism, n)
    elite = np.argsort(-fit, kind="stable")[:n_elite]
    children: list[np.ndarray] = []
    inherited: list[float | None] = []
    while len(children) < n - n_elite:
        a = _tournament(fit, cfg.tournament, rng)
        b = _tournament(fit, cfg.tournament, rng)
        if rng.random() < cfg.ga_crossover:
            child = np.where(rng.random(d) < 0.5, pop[a], pop[b])
        else:
            child = pop[a].copy()
        mutate = rng.random(d) < cfg.ga_mutation
        if mutate.any():
            child = child + mutate * rng.normal(0.0, sigma)
        child = bounds.clip(child)
        if repair is not None:
            fixed = repair(child, rng)
            child = pop[a].copy() if fixed is None else fixed
        children.append(child)
        inherited.append(float(fit[a]) if np.array_equal(child, pop[a]) else None)
    todo = [i for i, f in enumerate(inherited) if f is None]
    scores = _evaluate_all(fn, [children[i] for i in todo], cfg.workers)
    child_fit = np.array([f if f is not None else 0.0 for f in inherited], dtype=float)
    child_fit[todo] = scores
    new_pop = np.vstack([pop[elite]] + ([np.array(children)] if children else []))
    return new_pop, np.concatenate([fit[elite], child_fit])


# ---------------------------------------------------------------- driver

@dataclass(frozen=True)
class FitnessRecord:
    generation: int
    best: ParamVector
    best_nadm: float
    mean_nadm: float
    min_nadm: float
    evaluations: int


@dataclass
class OptimizeResult:
    best: ParamVector
    best_nadm: float
    history: list[FitnessRecord]
    candidates: list[np.ndarray] = field(default_factory=list)


class _Evaluator:
    """Counts and optionally records every evaluated candidate in submission order."""

    def __init__(self, fn: Fitness, workers: int, keep: bool):
        self.fn, self.workers, self.keep = fn, workers, keep
        self.count = 0
        self.candidates: list[np.ndarray] = []

    def __call__(self, x: np.ndarray) -> float:
        return float(self.many([x])[0])

    def many(self, xs: Sequence[np.ndarray]) -> np.ndarray:
        self.count += len(xs)
        if self.keep:
            self.candidates.extend(np.array(x) for x in xs)
        if self.workers > 1 and len(xs) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return np.array(list(pool.map(self.fn, xs)), dtype=float)
        return np.array([self.fn(x) for x in xs], dtype=float)


def optimize(cfg: AlgoConfig, fn: Fitness, bounds: Bounds = Bounds(), *, enforce: bool = True,
             keep_candidates: bool = False, on_record: Callable[[FitnessRecord], None] | None = None
             ) -> OptimizeResult:
    """Maximise ``fn`` over ``bounds`` with DE, PSO or GA.

    Stops after ``cfg.max_gen`` generations or when the best fitness has not
    improved by ``cfg.tol`` over the last ``cfg.patience`` generations.
    """
    rng = np.random.default_rng([cfg.seed, 0x0F7])
    ev = _Evaluator(fn, cfg.workers, keep_candidates)
    repair: Repair | None = None
    if enforce:
        repair = functools.partial(repair_hierarchy, bounds=bounds, attempts=cfg.repair_attempts)
        pop = np.array([sample_admissible(bounds, rng, cfg.repair_attempts) for _ in range(cfg.n_pop)])
    else:
        pop = np.array([bounds.sample(rng) for _ in range(cfg.n_pop)])
    fit = ev.many(list(pop))
    best_i = int(np.argmax(fit))
    best_x, best_f = pop[best_i].copy(), float(fit[best_i])
    history: list[FitnessRecord] = []

    def record(gen: int, current: np.ndarray) -> None:
        rec = FitnessRecord(gen, ParamVector.from_array(best_x), best_f, float(np.mean(current)),
                            float(np.min(current)), ev.count)
        history.append(rec)
        if on_record is not None:
            on_record(rec)

    record(0, fit)
    swarm = Swarm.start(pop, fit) if cfg.algorithm == "pso" else None
    for gen in range(1, cfg.max_gen + 1):
        if cfg.algorithm == "de":
            pop, fit = de_step(pop, fit, ev, bounds, cfg, rng, repair)
            cand_x, cand_f, current = pop, fit, fit
        elif cfg.algorithm == "ga":
            pop, fit = ga_step(pop, fit, ev, bounds, cfg, rng, repair)
            cand_x, cand_f, current = pop, fit, fit
        else:
            swarm = pso_step(swarm, ev, bounds, cfg, rng, repair)
            cand_x, cand_f, current = swarm.pbest, swarm.pbest_fit, swarm.fit
        i = int(np.argmax(cand_f))
        if cand_f[i] > best_f:
            best_x, best_f = cand_x[i].copy(), float(cand_f[i])
        record(gen, current)
        if gen >= cfg.patience and history[-1].best_nadm - history[-1 - cfg.patience].best_nadm < cfg.tol:
            break
    return OptimizeResult(ParamVector.from_array(best_x), best_f, history, ev.candidates)
