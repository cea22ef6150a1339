"""Neighborhood covers of label space: k-means charts and finite-label charts.

A chart atlas holds the representatives ``R = {r_1..r_q}`` that condition
the invertible map. Continuous labels are clustered with Lloyd's algorithm
(k-means++ seeding); finite label sets get one singleton chart per distinct
value. Assignment is nearest representative in Euclidean norm, ties broken
by the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_FINITE_CHARTS = 256


@dataclass
class ChartAtlas:
    reps: np.ndarray            # q x dim_y
    mode: str                   # "continuous" | "finite"

    def __post_init__(self):
        self.reps = np.asarray(self.reps, dtype=np.float64)
        if self.reps.ndim != 2 or self.reps.shape[0] < 1:
            raise ValueError("atlas needs at least one representative")
        if self.mode not in ("continuous", "finite"):
            raise ValueError(f"unknown atlas mode {self.mode!r}")

    @property
    def q(self) -> int:
        return self.reps.shape[0]

    @property
    def dim_y(self) -> int:
        return self.reps.shape[1]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "reps": self.reps.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChartAtlas":
        return cls(reps=np.asarray(d["reps"], dtype=np.float64), mode=d["mode"])


def assign(y, atlas: ChartAtlas) -> int:
    """Index of the nearest representative (lowest index on ties)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d2 = ((atlas.reps - y[None, :]) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def assign_many(ys, atlas: ChartAtlas) -> np.ndarray:
    """Vectorized assign over the rows of ``ys``."""
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    d2 = ((ys[:, None, :] - atlas.reps[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def within_cluster_ss(ys: np.ndarray, atlas: ChartAtlas) -> float:
    idx = assign_many(ys, atlas)
    return float(((ys - atlas.reps[idx]) ** 2).sum())


def _plusplus_seeds(ys: np.ndarray, q: int, rng: np.random.Generator) -> np.ndarray:
    n = ys.shape[0]
    centers = np.empty((q, ys.shape[1]))
    centers[0] = ys[rng.integers(n)]
    d2 = ((ys - centers[0]) ** 2).sum(axis=1)
    for i in range(1, q):
        total = d2.sum()
        if total <= 0:
            # all remaining mass at existing centers; pick any non-center point
            free = np.flatnonzero(d2 == d2.max())
            centers[i] = ys[free[0]]
        else:
            centers[i] = ys[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((ys - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(ys: np.ndarray, q: int, rng: np.random.Generator, max_iter: int,
           trace: list) -> np.ndarray:
    centers = _plusplus_seeds(ys, q, rng)
    prev_idx = None
    for _ in range(max_iter):
        d2 = ((ys[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        cost = d2[np.arange(ys.shape[0]), idx]
        trace.append(float(cost.sum()))
        for j in range(q):
            members = ys[idx == j]
            if members.shape[0] == 0:
                far = int(np.argmax(cost))
                centers[j] = ys[far]
                idx[far] = j
                cost[far] = 0.0
            else:
                centers[j] = members.mean(axis=0)
        if prev_idx is not None and np.array_equal(idx, prev_idx):
            break
        prev_idx = idx
    return centers


def kmeans(labels, q: int, seed: int = 0, max_iter: int = 300, n_init: int = 10,
           wcss_trace: list | None = None) -> ChartAtlas:
    """Best of ``n_init`` Lloyd runs with k-means++ seeding on the labels.

    Each run converges to an assignment fixed point or stops at ``max_iter``;
    empty clusters are repaired by reseeding at the point currently farthest
    from its assigned centroid. ``wcss_trace``, when given, collects the
    winning run's within-cluster sum of squares per assignment step.
    """
    ys = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    distinct = np.unique(ys, axis=0)
    if q > distinct.shape[0]:
        raise ValueError(
            f"kmeans: q={q} exceeds the {distinct.shape[0]} distinct label points")
    rng = np.random.default_rng(seed)
    best = None
    best_wcss = np.inf
    best_trace: list = []
    for _ in range(max(1, n_init)):
        trace: list = []
        centers = _lloyd(ys, q, rng, max_iter, trace)
        atlas = ChartAtlas(reps=centers, mode="continuous")
        wcss = within_cluster_ss(ys, atlas)
        if wcss < best_wcss:
            best, best_wcss, best_trace = atlas, wcss, trace
    if wcss_trace is not None:
        wcss_trace.extend(best_trace)
    return best


def finite_charts(labels) -> ChartAtlas:
    """One singleton chart per distinct label vector, sorted lexicographically."""
    ys = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    distinct = np.unique(ys, axis=0)  # sorted lexicographically by np.unique
    if distinct.shape[0] > MAX_FINITE_CHARTS:
        raise ValueError(
            f"{distinct.shape[0]} distinct labels exceed the finite-chart bound "
            f"of {MAX_FINITE_CHARTS}; use continuous (k-means) charts instead")
    return ChartAtlas(reps=distinct, mode="finite")
