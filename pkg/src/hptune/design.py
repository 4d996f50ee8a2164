"""Experimental designs over the unit hypercube."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DomainError
from .space import SearchSpace

GRID_CAP = 100_000
LHS_CANDIDATES = 10


@dataclass(frozen=True)
class Design:
    points: np.ndarray
    generator: str
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def configs(self, space: SearchSpace) -> list[dict]:
        return [space.repair(row) for row in self.points]


def _dim(space: SearchSpace | int) -> int:
    return space if isinstance(space, int) else space.d


def _min_distance(points: np.ndarray) -> float:
    if points.shape[0] < 2:
        return np.inf
    return float(pdist(points).min())


def latin_hypercube(space: SearchSpace | int, n: int, seed: int = 0) -> Design:
    """Maximin Latin hypercube: best of ``LHS_CANDIDATES`` random stratified draws."""
    if n < 1:
        raise DomainError("design size must be >= 1")
    d = _dim(space)
    rng = np.random.default_rng(seed)
    best, best_dist = None, -np.inf
    for _ in range(LHS_CANDIDATES):
        strata = np.column_stack([rng.permutation(n) for _ in range(d)])
        pts = (strata + rng.random((n, d))) / n
        dist = _min_distance(pts)
        if dist > best_dist:
            best, best_dist = pts, dist
    return Design(best, "lhs", seed)


def random_design(space: SearchSpace | int, n: int, seed: int = 0) -> Design:
    if n < 1:
        raise DomainError("design size must be >= 1")
    rng = np.random.default_rng(seed)
    return Design(rng.random((n, _dim(space))), "random", seed)


def grid_design(space: SearchSpace | int, levels_per_dim, cap: int = GRID_CAP) -> Design:
    """Full factorial on stratum midpoints; ``levels_per_dim`` gives the count per axis."""
    levels = [int(k) for k in levels_per_dim]
    if len(levels) != _dim(space):
        raise DomainError(f"need {_dim(space)} level counts, got {len(levels)}")
    if any(k < 1 for k in levels):
        raise DomainError("each level count must be >= 1")
    total = 1
    for k in levels:
        total *= k
    if total > cap:
        raise DomainError(f"grid of {total} points exceeds cap {cap}")
    axes = [(np.arange(k) + 0.5) / k for k in levels]
    pts = np.array(list(itertools.product(*axes)), dtype=float)
    return Design(pts, "grid", None)


def maximin_fill(existing: np.ndarray, pool: np.ndarray, k: int) -> np.ndarray:
    """Greedily pick ``k`` pool points, each maximizing its distance to everything chosen so far."""
    chosen = []
    ref = np.asarray(existing, dtype=float).reshape(-1, pool.shape[1])
    dist = (np.full(pool.shape[0], np.inf) if ref.shape[0] == 0
            else np.min(np.linalg.norm(pool[:, None, :] - ref[None, :, :], axis=2), axis=1))
    for _ in range(min(k, pool.shape[0])):
        i = int(np.argmax(dist))
        chosen.append(pool[i])
        dist = np.minimum(dist, np.linalg.norm(pool - pool[i], axis=1))
        dist[i] = -np.inf
    return np.array(chosen)
