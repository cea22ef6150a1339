"""Two-sample loss terms and evaluation metrics for point clouds.

``forward_loss``, ``msmd``, ``knn_kl`` and ``backward_loss`` accept either
engine Tensors (differentiable, used in training) or plain arrays (fast
numpy path, used in evaluation); both paths compute the same quantity.
``wasserstein`` and ``mmd`` are evaluation-only and take arrays.

Distance conventions: all distances are Euclidean; squared distances are
floored at ``DIST_FLOOR**2`` before logs so duplicated points stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from . import tensor as T
from .tensor import Tensor

DIST_FLOOR = 1e-12          # floor on Euclidean distances inside logs
_FLOOR2 = DIST_FLOOR ** 2   # same floor on squared distances
_SELF_MASK = 1e30           # sentinel excluding self-pairs from k-NN searches

ArrayLike = Union[np.ndarray, Tensor]


@dataclass(frozen=True)
class MetricConfig:
    """Knobs shared by the loss terms and the evaluation metrics."""

    knn_k: int = 5
    mmd_bandwidth: Union[float, str] = "median"
    wasserstein_method: str = "auto"      # auto | exact | entropic
    entropic_blur: float = 0.05
    exact_threshold: int = 512            # auto switches to entropic above this
    sinkhorn_scaling: float = 0.5         # epsilon-annealing factor

    def __post_init__(self):
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.entropic_blur <= 0:
            raise ValueError("entropic_blur must be positive")
        if self.wasserstein_method not in ("auto", "exact", "entropic"):
            raise ValueError(f"unknown wasserstein_method {self.wasserstein_method!r}")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term training loss values; ``total`` is their exact sum."""

    l_fwd: float
    l_kl_fwd: float
    l_kl_bwd: float
    l_msmd: float

    @property
    def total(self) -> float:
        return self.l_fwd + self.l_kl_fwd + self.l_kl_bwd + self.l_msmd


def _is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _rows(x) -> int:
    return (x.data if _is_tensor(x) else np.asarray(x)).shape[0]


def _cols(x) -> int:
    return (x.data if _is_tensor(x) else np.asarray(x)).shape[1]


# ----------------------------------------------------------------------
# forward loss
# ----------------------------------------------------------------------
def forward_loss(y_hat: ArrayLike, y: ArrayLike):
    """Mean squared Euclidean distance between predicted and true labels."""
    if _cols(y_hat) != _cols(y) or _rows(y_hat) != _rows(y):
        raise T.ShapeError(
            f"forward_loss: shape mismatch {np.shape(y_hat if not _is_tensor(y_hat) else y_hat.data)} "
            f"vs {np.shape(y if not _is_tensor(y) else y.data)}")
    if _is_tensor(y_hat) or _is_tensor(y):
        diff = T.sub(T.as_tensor(y_hat), T.as_tensor(y))
        return T.div(T.tsum(T.square(diff)), float(_rows(y_hat)))
    diff = np.asarray(y_hat, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float((diff * diff).sum() / diff.shape[0])


# ----------------------------------------------------------------------
# mean squared minimum distance
# ----------------------------------------------------------------------
def msmd(s1: ArrayLike, s2: ArrayLike):
    """One-sided nearest-point loss: mean over s1 of min over s2 of dist^2."""
    if _rows(s1) == 0 or _rows(s2) == 0:
        raise ValueError("msmd: empty point cloud")
    if _cols(s1) != _cols(s2):
        raise T.ShapeError("msmd: dimension mismatch")
    if _is_tensor(s1) or _is_tensor(s2):
        d2 = T.pairwise_sq_dists(T.as_tensor(s1), T.as_tensor(s2))
        return T.tmean(T.min_over_rows(d2))
    d2 = T._sq_dists(np.asarray(s1, dtype=np.float64), np.asarray(s2, dtype=np.float64))
    return float(d2.min(axis=1).mean())


# ----------------------------------------------------------------------
# k-NN KL-divergence estimator
# ----------------------------------------------------------------------
def knn_kl(p_sample: ArrayLike, q_sample: ArrayLike, k: int = 5):
    """k-th nearest-neighbor estimate of KL(P || Q) from two samples.

    rho_k(i) is the distance from P_i to its k-th neighbor within P minus
    itself; nu_k(i) the distance to its k-th neighbor in Q. The estimate is
    (d/n) * sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1)); it can be
    negative, and is differentiable through the selected distances.
    """
    n, m, d = _rows(p_sample), _rows(q_sample), _cols(p_sample)
    if _cols(q_sample) != d:
        raise T.ShapeError("knn_kl: dimension mismatch")
    if n <= k or m < k:
        raise ValueError(f"knn_kl: need n > k and m >= k (n={n}, m={m}, k={k})")
    const = math.log(m / (n - 1))
    if _is_tensor(p_sample) or _is_tensor(q_sample):
        p, q = T.as_tensor(p_sample), T.as_tensor(q_sample)
        d2_pp = T.add(T.pairwise_sq_dists(p, p), _SELF_MASK * np.eye(n))
        rho2 = T.kth_smallest_over_rows(d2_pp, k)
        nu2 = T.kth_smallest_over_rows(T.pairwise_sq_dists(p, q), k)
        logs = T.sub(T.log(T.add(nu2, _FLOOR2)), T.log(T.add(rho2, _FLOOR2)))
        return T.add(T.mul(T.tsum(logs), d / (2.0 * n)), const)
    p = np.asarray(p_sample, dtype=np.float64)
    q = np.asarray(q_sample, dtype=np.float64)
    d2_pp = T._sq_dists(p, p)
    np.fill_diagonal(d2_pp, _SELF_MASK)
    rho2 = np.partition(d2_pp, k - 1, axis=1)[:, k - 1]
    nu2 = np.partition(T._sq_dists(p, q), k - 1, axis=1)[:, k - 1]
    return float((d / (2.0 * n)) * (np.log(nu2 + _FLOOR2) - np.log(rho2 + _FLOOR2)).sum()
                 + const)


def knn_kl_from_d2(d2_pp: np.ndarray, d2_pq: np.ndarray, dim: int, k: int) -> float:
    """KL estimate from precomputed squared-distance blocks (diag unmasked)."""
    n, m = d2_pq.shape
    if n <= k or m < k:
        raise ValueError(f"knn_kl: need n > k and m >= k (n={n}, m={m}, k={k})")
    masked = d2_pp.copy()
    np.fill_diagonal(masked, _SELF_MASK)
    rho2 = np.partition(masked, k - 1, axis=1)[:, k - 1]
    nu2 = np.partition(d2_pq, k - 1, axis=1)[:, k - 1]
    return float((dim / (2.0 * n)) * (np.log(nu2 + _FLOOR2) - np.log(rho2 + _FLOOR2)).sum()
                 + math.log(m / (n - 1)))


# ----------------------------------------------------------------------
# Wasserstein distances
# ----------------------------------------------------------------------
def wasserstein(s1, s2, p: int = 1, config: MetricConfig | None = None) -> float:
    """W_p between equal-size empirical clouds; exact or entropic per config."""
    config = config or MetricConfig()
    a = np.asarray(s1, dtype=np.float64)
    b = np.asarray(s2, dtype=np.float64)
    if a.shape != b.shape:
        raise T.ShapeError(
            f"wasserstein: clouds must share shape, got {a.shape} vs {b.shape}; "
            "resample to equal sizes first")
    if p not in (1, 2):
        raise ValueError("wasserstein: p must be 1 or 2")
    d2 = T._sq_dists(a, b)
    method = config.wasserstein_method
    if method == "auto":
        method = "exact" if a.shape[0] <= config.exact_threshold else "entropic"
    if method == "exact":
        return _wasserstein_exact_from_d2(d2, p)
    d2_aa = T._sq_dists(a, a)
    d2_bb = T._sq_dists(b, b)
    return _sinkhorn_divergence_from_d2(d2, d2_aa, d2_bb, p, config)


def _wasserstein_exact_from_d2(d2: np.ndarray, p: int) -> float:
    cost = np.sqrt(d2) if p == 1 else d2
    r, c = linear_sum_assignment(cost)
    return float((cost[r, c].sum() / d2.shape[0]) ** (1.0 / p))


def _softmin(eps: float, cost: np.ndarray, h: np.ndarray) -> np.ndarray:
    # -eps * log sum_j (1/m) exp((h_j - C_ij) / eps)
    m = cost.shape[1]
    return -eps * (logsumexp((h[None, :] - cost) / eps, axis=1) - math.log(m))


def _ot_dual(cost: np.ndarray, eps_levels: list, extra: int) -> float:
    """Annealed log-domain Sinkhorn on uniform marginals; returns dual value."""
    n, m = cost.shape
    f = np.zeros(n)
    g = np.zeros(m)
    costT = cost.T
    for eps in eps_levels:
        f = _softmin(eps, cost, g)
        g = _softmin(eps, costT, f)
    eps = eps_levels[-1]
    for _ in range(extra):
        f_new = _softmin(eps, cost, g)
        g = _softmin(eps, costT, f_new)
        if np.abs(f_new - f).max() < 1e-9 * max(1.0, np.abs(f_new).max()):
            f = f_new
            break
        f = f_new
    return float(f.mean() + g.mean())


def _ot_dual_symmetric(cost: np.ndarray, eps_levels: list, extra: int) -> float:
    """Self-transport OT_eps(a, a) via the averaged symmetric fixed point."""
    n = cost.shape[0]
    f = np.zeros(n)
    for eps in eps_levels:
        f = 0.5 * (f + _softmin(eps, cost, f))
    eps = eps_levels[-1]
    for _ in range(extra):
        f_new = 0.5 * (f + _softmin(eps, cost, f))
        if np.abs(f_new - f).max() < 1e-9 * max(1.0, np.abs(f_new).max()):
            f = f_new
            break
        f = f_new
    return float(2.0 * f.mean())


def _sinkhorn_divergence_from_d2(d2_ab, d2_aa, d2_bb, p: int,
                                 config: MetricConfig) -> float:
    """Debiased entropic approximation of W_p on equal-size clouds."""
    cost_ab = np.sqrt(d2_ab) if p == 1 else d2_ab
    cost_aa = np.sqrt(d2_aa) if p == 1 else d2_aa
    cost_bb = np.sqrt(d2_bb) if p == 1 else d2_bb
    eps_final = config.entropic_blur ** p
    eps0 = max(float(cost_ab.max()), eps_final)
    levels = [eps0]
    while levels[-1] > eps_final:
        levels.append(max(levels[-1] * config.sinkhorn_scaling, eps_final))
    n = d2_ab.shape[0]
    extra = 200 if n <= 1024 else 10
    ot_ab = _ot_dual(cost_ab, levels, extra)
    ot_aa = _ot_dual_symmetric(cost_aa, levels, extra)
    ot_bb = _ot_dual_symmetric(cost_bb, levels, extra)
    div = max(ot_ab - 0.5 * (ot_aa + ot_bb), 0.0)
    return float(div ** (1.0 / p))


# ----------------------------------------------------------------------
# maximum mean discrepancy
# ----------------------------------------------------------------------
def mmd(s1, s2, bandwidth: Union[float, str] = "median") -> float:
    """Biased V-statistic MMD^2 with a single Gaussian kernel."""
    a = np.asarray(s1, dtype=np.float64)
    b = np.asarray(s2, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise T.ShapeError("mmd: dimension mismatch")
    d2_11 = T._sq_dists(a, a)
    d2_22 = T._sq_dists(b, b)
    d2_12 = T._sq_dists(a, b)
    return _mmd_from_d2(d2_11, d2_22, d2_12, bandwidth)


def _median_bandwidth(d2_11, d2_22, d2_12) -> float:
    n, m = d2_12.shape
    pooled = np.concatenate([
        d2_11[np.triu_indices(n, k=1)],
        d2_22[np.triu_indices(m, k=1)],
        d2_12.ravel(),
    ])
    return float(np.sqrt(np.median(pooled)))


def _mmd_from_d2(d2_11, d2_22, d2_12, bandwidth: Union[float, str]) -> float:
    if bandwidth == "median":
        sigma = _median_bandwidth(d2_11, d2_22, d2_12)
    else:
        sigma = float(bandwidth)
    sigma = max(sigma, DIST_FLOOR)
    s = -0.5 / (sigma * sigma)
    return float(np.exp(s * d2_11).mean() + np.exp(s * d2_22).mean()
                 - 2.0 * np.exp(s * d2_12).mean())


# ----------------------------------------------------------------------
# combined backward loss (training) and metric suite (evaluation)
# ----------------------------------------------------------------------
def backward_loss(generated: Tensor, real: ArrayLike, config: MetricConfig):
    """The three generation-side loss terms, differentiable w.r.t. generated.

    Returns (l_kl_fwd, l_kl_bwd, l_msmd) as graph tensors:
    KL(real || generated), KL(generated || real), msmd(generated, real).
    """
    real_t = T.as_tensor(real)
    k = config.knn_k
    l_kl_fwd = knn_kl(real_t, generated, k)
    l_kl_bwd = knn_kl(generated, real_t, k)
    l_msmd = msmd(generated, real_t)
    return l_kl_fwd, l_kl_bwd, l_msmd


METRIC_NAMES = ("msmd", "kl_fwd", "kl_bwd", "w1", "w2", "mmd")


def metric_suite(generated: np.ndarray, reference: np.ndarray,
                 config: MetricConfig | None = None) -> dict:
    """All six evaluation metrics, sharing the three distance-matrix blocks.

    Directional conventions: msmd(generated, reference); kl_fwd treats the
    reference as the true distribution P, kl_bwd the generated cloud.
    """
    config = config or MetricConfig()
    g = np.asarray(generated, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if g.shape[1] != r.shape[1]:
        raise T.ShapeError("metric_suite: dimension mismatch")
    d2_gg = T._sq_dists(g, g)
    d2_rr = T._sq_dists(r, r)
    d2_gr = T._sq_dists(g, r)
    k = config.knn_k
    out = {
        "msmd": float(d2_gr.min(axis=1).mean()),
        "kl_fwd": knn_kl_from_d2(d2_rr, d2_gr.T.copy(), r.shape[1], k),
        "kl_bwd": knn_kl_from_d2(d2_gg, d2_gr, g.shape[1], k),
        "mmd": _mmd_from_d2(d2_gg, d2_rr, d2_gr, config.mmd_bandwidth),
    }
    method = config.wasserstein_method
    if g.shape != r.shape:
        raise T.ShapeError("metric_suite: wasserstein requires equal-size clouds")
    if method == "auto":
        method = "exact" if g.shape[0] <= config.exact_threshold else "entropic"
    for p in (1, 2):
        if method == "exact":
            out[f"w{p}"] = _wasserstein_exact_from_d2(d2_gr, p)
        else:
            out[f"w{p}"] = _sinkhorn_divergence_from_d2(d2_gr, d2_gg, d2_rr, p, config)
    return out
