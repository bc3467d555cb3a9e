"""Straightforward reference implementations used to check the optimised code paths."""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np


def kendall_all_pairs(block_order, reference_order) -> float:
    pos = {t: i for i, t in enumerate(reference_order)}
    concordant = discordant = 0
    for a, b in itertools.combinations(block_order, 2):
        if pos[a] < pos[b]:
            concordant += 1
        else:
            discordant += 1
    n = len(block_order)
    if n <= 1:
        return 1.0
    return (concordant - discordant) / (n * (n - 1) / 2)


def erf_series(x: float, terms: int = 200) -> float:
    """Maclaurin series of erf, summed in exact rationals then rounded once."""
    xf = Fraction(x)
    total = Fraction(0)
    for n in range(terms):
        term = Fraction((-1) ** n, math.factorial(n) * (2 * n + 1)) * xf ** (2 * n + 1)
        total += term
        if abs(term) < Fraction(1, 10**30):
            break
    return float(total * 2 / Fraction(math.sqrt(math.pi)))


def lognormal_cdf_hp(x: float, mu: float, sigma: float) -> float:
    mpmath.mp.dps = 40
    z = (mpmath.log(x) - mu) / (sigma * mpmath.sqrt(2))
    return float(mpmath.mpf(0.5) + mpmath.erf(z) / 2)


def dense_score(v1, v2, tx_type: int, triple) -> float:
    c = np.zeros((5, 3))
    c[tx_type] = triple
    return float((np.asarray(v1)[None, :] @ c @ np.asarray(v2)[:, None])[0, 0])


def all_pairs_shortest(n: int, edges, weights) -> np.ndarray:
    """Bellman-Ford style exhaustive relaxation over an undirected edge list."""
    d = np.full((n, n), math.inf)
    np.fill_diagonal(d, 0.0)
    for _ in range(n):
        changed = False
        for (u, v), w in zip(edges, weights):
            for a, b in ((u, v), (v, u)):
                for s in range(n):
                    if d[s, a] + w < d[s, b]:
                        d[s, b] = d[s, a] + w
                        changed = True
        if not changed:
            break
    return d


def welch_t_hp(a, b) -> float:
    mpmath.mp.dps = 50
    a = [mpmath.mpf(x) for x in a]
    b = [mpmath.mpf(x) for x in b]
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    va = sum((x - ma) ** 2 for x in a) / (len(a) - 1)
    vb = sum((x - mb) ** 2 for x in b) / (len(b) - 1)
    return float((ma - mb) / mpmath.sqrt(va / len(a) + vb / len(b)))


def reference_de_generation(pop, fit, fn, lo, hi, cr, f_w, rng):
    """Plain-loop rand/1/bin generation drawing random numbers in the documented order."""
    n, d = len(pop), len(pop[0])
    trials = []
    for i in range(n):
        candidates = [j for j in range(n) if j != i]
        r1, r2, r3 = rng.choice(np.array(candidates), size=3, replace=False)
        cross = rng.random(d) < cr
        jrand = rng.integers(d)
        trial = []
        for j in range(d):
            if cross[j] or j == jrand:
                v = pop[r1][j] + f_w * (pop[r2][j] - pop[r3][j])
            else:
                v = pop[i][j]
            trial.append(min(max(v, lo[j]), hi[j]))
        trials.append(trial)
    new_pop, new_fit = [list(p) for p in pop], list(fit)
    for i, t in enumerate(trials):
        s = fn(np.array(t))
        if s >= fit[i]:
            new_pop[i], new_fit[i] = t, s
    return np.array(new_pop), np.array(new_fit)
