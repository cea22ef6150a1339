"""Training loop, evaluation regimes, ablations, and the prior experiment.

Training visits neighborhoods in shuffled order once per epoch. Each visit
runs the forward pass on the whole neighborhood (label loss), refreshes that
neighborhood's latent prior statistics, generates a matching-size cloud
through the inverse map, scores it with the two KL terms plus the
nearest-point term, and takes one Adam step on the summed loss. The
learning rate halves on a fixed epoch schedule and the final weights are
kept regardless of earlier convergence.

Evaluation compares generated clouds against references with six metrics in
two regimes (whole-distribution and per-fiber) and aggregates repeats with a
percentile bootstrap.
"""

from __future__ import annotations

import math
import multiprocessing as mp
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .charts import ChartAtlas, assign, assign_many, finite_charts, kmeans
from .datasets import (SYNTHETIC_KINDS, LabeledDataset, fiber_is_degenerate,
                       fiber_oracle, generate, label_angle)
from .losses import (LossBreakdown, MetricConfig, forward_loss, knn_kl,
                     metric_suite, msmd, wasserstein)
from .model import (BundleNet, ModelConfig, PriorSpec, build_model,
                    fit_prior_stats, pad_input, sample_fiber)

DEFAULT_METRIC_CONFIG = MetricConfig()


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    lr0: float = 1e-4
    lr_halve_every: int = 70
    q: int = 25
    seed: int = 0
    max_batch: int | None = None        # optional per-neighborhood subsample cap
    metric: MetricConfig = DEFAULT_METRIC_CONFIG

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.lr_halve_every < 1:
            raise ValueError("lr_halve_every must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    n_global: int = 4000
    n_fiber_points: int = 200
    n_base_points: int = 15
    n_repeats: int = 10
    bootstrap_resamples: int = 1000

    def __post_init__(self):
        for name in ("n_global", "n_fiber_points", "n_base_points",
                     "n_repeats", "bootstrap_resamples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for a 0-based epoch index."""
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_halve_every)


# ----------------------------------------------------------------------
# bootstrap aggregation
# ----------------------------------------------------------------------
@dataclass
class MetricSummary:
    mean: float
    ci_low: float
    ci_high: float
    values: list = field(default_factory=list)

    @property
    def halfwidth(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSummary":
        return cls(mean=d["mean"], ci_low=d["ci_low"], ci_high=d["ci_high"],
                   values=list(d.get("values", [])))


def bootstrap_summary(values, n_resamples: int = 1000, seed: int = 0) -> MetricSummary:
    """Percentile bootstrap of the sample mean with a 95% interval."""
    vals = np.asarray(values, dtype=np.float64)
    mean = float(vals.mean())
    rng = np.random.default_rng(seed)
    resampled = rng.choice(vals, size=(n_resamples, vals.size), replace=True)
    means = resampled.mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return MetricSummary(mean=mean, ci_low=min(float(lo), mean),
                         ci_high=max(float(hi), mean), values=vals.tolist())


@dataclass
class MetricReport:
    dataset: str
    regime: str
    seed: int
    metrics: dict
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "regime": self.regime, "seed": self.seed,
                "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
                "notes": list(self.notes)}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(dataset=d["dataset"], regime=d["regime"], seed=d["seed"],
                   metrics={k: MetricSummary.from_dict(v)
                            for k, v in d["metrics"].items()},
                   notes=list(d.get("notes", [])))


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------
@dataclass
class TrainResult:
    model: BundleNet
    atlas: ChartAtlas
    prior: PriorSpec
    loss_history: list        # one LossBreakdown per epoch (means over visits)


def build_atlas(dataset: LabeledDataset, q: int, seed: int) -> ChartAtlas:
    if dataset.label_kind == "finite":
        return finite_charts(dataset.y_train)
    return kmeans(dataset.y_train, q=q, seed=seed)


class _Hood:
    """Per-neighborhood training data, padded once per run."""

    __slots__ = ("x_raw", "x_pad", "y", "rep")

    def __init__(self, x_raw, x_pad, y, rep):
        self.x_raw = x_raw
        self.x_pad = x_pad
        self.y = y
        self.rep = rep


def train(dataset: LabeledDataset, model_config: ModelConfig,
          train_config: TrainConfig, progress=None) -> TrainResult:
    """Fit a model on the dataset's train split; returns final weights."""
    cfg = model_config
    if cfg.dim_x != dataset.dim_x or cfg.dim_y != dataset.dim_y:
        raise ValueError(
            f"model dims ({cfg.dim_x}, {cfg.dim_y}) do not match dataset "
            f"({dataset.dim_x}, {dataset.dim_y})")
    if dataset.train_idx.size == 0:
        raise ValueError("dataset has no training rows")

    rng = np.random.default_rng(train_config.seed)
    atlas = build_atlas(dataset, train_config.q, train_config.seed)
    x_train, y_train = dataset.x_train, dataset.y_train
    assignments = assign_many(y_train, atlas)

    hoods = []
    for i in range(atlas.q):
        members = np.flatnonzero(assignments == i)
        x_raw = x_train[members]
        hoods.append(_Hood(x_raw, pad_input(x_raw, cfg, rng) if len(members) else
                           np.zeros((0, cfg.working_dim)),
                           y_train[members], atlas.reps[i]))

    model = build_model(cfg)
    prior = PriorSpec.empty(atlas.q, cfg.n_circles, cfg.n_gaussians)
    opt = T.Adam(model.parameters(), lr=train_config.lr0)
    k = train_config.metric.knn_k
    cap = train_config.max_batch
    history = []

    for epoch in range(train_config.epochs):
        opt.lr = lr_at(epoch, train_config)
        sums = np.zeros(4)
        visits = 0
        for i in rng.permutation(atlas.q):
            hood = hoods[i]
            n_i = hood.x_raw.shape[0]
            if n_i == 0:
                continue
            if cap is not None and n_i > cap:
                pick = rng.choice(n_i, size=cap, replace=False)
                x_pad, x_raw, y_np = hood.x_pad[pick], hood.x_raw[pick], hood.y[pick]
                n_i = cap
            else:
                x_pad, x_raw, y_np = hood.x_pad, hood.x_raw, hood.y

            y_hat, z_lat = model.forward(x_pad, hood.rep)
            l_fwd = forward_loss(y_hat, T.Tensor(y_np))
            prior.update(i, z_lat.data)

            y_gen = y_np[rng.integers(0, n_i, size=n_i)]
            z_gen = prior.sample(i, n_i, rng)
            gen_pad = model.inverse(y_gen, z_gen, hood.rep)
            generated = T.slice_cols(gen_pad, 0, cfg.dim_x)

            k_i = min(k, n_i - 1)
            if k_i >= 1:
                real_t = T.Tensor(x_raw)
                l_kf = knn_kl(real_t, generated, k_i)
                l_kb = knn_kl(generated, real_t, k_i)
            else:
                l_kf = T.Tensor(0.0)
                l_kb = T.Tensor(0.0)
            l_ms = msmd(generated, T.Tensor(x_raw))

            total = T.add(T.add(l_fwd, l_kf), T.add(l_kb, l_ms))
            if not math.isfinite(total.item()):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, neighborhood {i}")
            opt.zero_grad()
            total.backward()
            opt.step()
            sums += (l_fwd.item(), l_kf.item(), l_kb.item(), l_ms.item())
            visits += 1
        history.append(LossBreakdown(*(sums / max(visits, 1))))
        if progress is not None:
            progress(epoch, history[-1])

    # refresh every neighborhood's statistics with the final weights
    nonempty = [h.x_pad for h in hoods if h.x_pad.shape[0]]
    reps = np.array([h.rep for h in hoods if h.x_pad.shape[0]])
    final_prior = fit_prior_stats(model, nonempty, reps)
    j = 0
    for i, h in enumerate(hoods):
        if h.x_pad.shape[0]:
            prior.circle_radius[i] = final_prior.circle_radius[j]
            prior.gaussian_mean[i] = final_prior.gaussian_mean[j]
            prior.gaussian_std[i] = final_prior.gaussian_std[j]
            prior.fitted[i] = True
            j += 1
    return TrainResult(model=model, atlas=atlas, prior=prior, loss_history=history)


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------
def _sample_eval_labels(dataset: LabeledDataset, n: int, rng, source: str):
    """Base points for evaluation: uniform angles (synthetic) or empirical rows."""
    if dataset.kind in SYNTHETIC_KINDS:
        phi = rng.uniform(0, 2 * np.pi, n)
        base = dataset.meta["params"]["base_radius"]
        return base * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    pool = dataset.y_train if source == "train" else dataset.y
    return pool[rng.integers(0, pool.shape[0], size=n)]


def _generate_over_labels(model, atlas, prior, labels, rng) -> np.ndarray:
    """One inverse-mapped point per label, batched chart by chart."""
    idx = assign_many(labels, atlas)
    out = np.empty((labels.shape[0], model.config.dim_x))
    with T.no_grad():
        for i in np.unique(idx):
            rows = np.flatnonzero(idx == i)
            z = prior.sample(int(i), rows.size, rng)
            x_pad = model.inverse(labels[rows], z, atlas.reps[i])
            out[rows] = x_pad.data[:, :model.config.dim_x]
    return out


def _global_reference(dataset: LabeledDataset, n: int, rng) -> np.ndarray:
    if dataset.kind in SYNTHETIC_KINDS:
        spec = replace(dataset.synthetic_spec(), n=n,
                       seed=int(rng.integers(2 ** 31)))
        return generate(spec, uniform_surface=True).x
    if dataset.test_idx.size == 0:
        raise ValueError("global evaluation on real data needs a test split")
    pool = dataset.x_test
    return pool[rng.integers(0, pool.shape[0], size=n)]


def eval_global(model: BundleNet, atlas: ChartAtlas, prior: PriorSpec,
                dataset: LabeledDataset, eval_config: EvalConfig,
                metric_config: MetricConfig = DEFAULT_METRIC_CONFIG,
                seed: int = 0) -> MetricReport:
    """Whole-distribution comparison: generated cloud vs data distribution."""
    rng = np.random.default_rng(seed)
    values = {}
    before = model.counters["inverse_points"]
    for _ in range(eval_config.n_repeats):
        labels = _sample_eval_labels(dataset, eval_config.n_global, rng, "train")
        generated = _generate_over_labels(model, atlas, prior, labels, rng)
        reference = _global_reference(dataset, eval_config.n_global, rng)
        for name, val in metric_suite(generated, reference, metric_config).items():
            values.setdefault(name, []).append(val)
    produced = model.counters["inverse_points"] - before
    expected = eval_config.n_repeats * eval_config.n_global
    if produced != expected:
        raise RuntimeError(
            f"instrumentation: {produced} points generated, expected {expected}")
    metrics = {k: bootstrap_summary(v, eval_config.bootstrap_resamples, seed)
               for k, v in values.items()}
    return MetricReport(dataset=dataset.meta.get("name", dataset.kind),
                        regime="global", seed=seed, metrics=metrics)


def eval_fiberwise(model: BundleNet, atlas: ChartAtlas, prior: PriorSpec,
                   dataset: LabeledDataset, eval_config: EvalConfig,
                   metric_config: MetricConfig = DEFAULT_METRIC_CONFIG,
                   seed: int = 0) -> MetricReport:
    """Per-base-point comparison of generated fibers against true fibers
    (synthetic) or same-chart data points (real).

    Exactly degenerate oracle fibers (single point) are excluded from the
    headline per-fiber averages; ``*_all`` entries include them.
    """
    rng = np.random.default_rng(seed)
    synthetic = dataset.kind in SYNTHETIC_KINDS
    spec = dataset.synthetic_spec() if synthetic else None
    combined_idx = None
    if not synthetic:
        combined_idx = assign_many(dataset.y, atlas)
    n_pts = eval_config.n_fiber_points
    values: dict = {}
    values_all: dict = {}
    notes = []
    saw_degenerate = False
    for _ in range(eval_config.n_repeats):
        labels = _sample_eval_labels(dataset, eval_config.n_base_points, rng, "all")
        per_fiber: dict = {}
        per_fiber_all: dict = {}
        for y in labels:
            i = assign(y, atlas)
            if synthetic:
                phi = label_angle(y)
                reference = fiber_oracle(dataset.kind, phi, n_pts, spec, rng)
                degenerate = fiber_is_degenerate(dataset.kind, phi, spec)
            else:
                members = np.flatnonzero(combined_idx == i)
                if members.size == 0:
                    notes.append(f"chart {i} has no data points; fiber skipped")
                    continue
                pool = dataset.x[members]
                reference = pool[rng.integers(0, pool.shape[0], size=n_pts)]
                degenerate = False
            generated = sample_fiber(model, atlas, prior, y, n_pts, rng,
                                     chart_index=i)
            suite = metric_suite(generated, reference, metric_config)
            saw_degenerate = saw_degenerate or degenerate
            for name, val in suite.items():
                per_fiber_all.setdefault(name, []).append(val)
                if not degenerate:
                    per_fiber.setdefault(name, []).append(val)
        for name, vals in per_fiber.items():
            values.setdefault(name, []).append(float(np.mean(vals)))
        for name, vals in per_fiber_all.items():
            values_all.setdefault(name, []).append(float(np.mean(vals)))
    metrics = {k: bootstrap_summary(v, eval_config.bootstrap_resamples, seed)
               for k, v in values.items()}
    if saw_degenerate:
        notes.append("degenerate oracle fibers excluded from headline averages")
        for k, v in values_all.items():
            metrics[f"{k}_all"] = bootstrap_summary(
                v, eval_config.bootstrap_resamples, seed)
    return MetricReport(dataset=dataset.meta.get("name", dataset.kind),
                        regime="fiberwise", seed=seed, metrics=metrics, notes=notes)


# ----------------------------------------------------------------------
# neighborhood-count ablation
# ----------------------------------------------------------------------
def _ablate_worker(args):
    dataset, q, model_config, train_config, eval_config, metric_config, seed = args
    result = train(dataset, model_config, replace(train_config, q=q))
    rep_g = eval_global(result.model, result.atlas, result.prior, dataset,
                        eval_config, metric_config, seed)
    rep_f = eval_fiberwise(result.model, result.atlas, result.prior, dataset,
                           eval_config, metric_config, seed)
    return {"q": q, "global": rep_g.to_dict(), "fiberwise": rep_f.to_dict()}


def ablate_neighborhoods(dataset: LabeledDataset, q_list,
                         model_config: ModelConfig, train_config: TrainConfig,
                         eval_config: EvalConfig,
                         metric_config: MetricConfig = DEFAULT_METRIC_CONFIG,
                         seed: int = 0, workers: int | None = None) -> list[dict]:
    """One training run per neighborhood count; rows of (q, reports)."""
    tasks = [(dataset, q, model_config, train_config, eval_config,
              metric_config, seed) for q in q_list]
    if workers is None:
        workers = min(len(tasks), mp.cpu_count())
    if workers > 1 and len(tasks) > 1:
        with mp.get_context("fork").Pool(workers) as pool:
            rows = pool.map(_ablate_worker, tasks)
    else:
        rows = [_ablate_worker(t) for t in tasks]
    return rows


# ----------------------------------------------------------------------
# prior-topology experiment
# ----------------------------------------------------------------------
PRIOR_KINDS = ("gauss1d", "gauss2d", "circle")


@dataclass
class PriorExperimentResult:
    prior_kind: str
    trace: list                 # (step, w1) pairs
    final_w1: float
    noise_floor: float
    final_cloud: np.ndarray
    target_cloud: np.ndarray


def _draw_prior(kind: str, n: int, rng) -> np.ndarray:
    if kind == "gauss1d":
        return np.stack([rng.normal(size=n), np.zeros(n)], axis=1)
    if kind == "gauss2d":
        return rng.normal(size=(n, 2))
    if kind == "circle":
        t = rng.uniform(0, 2 * np.pi, n)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    raise ValueError(f"unknown prior kind {kind!r}; choose from {PRIOR_KINDS}")


def _draw_oval(n: int, a: float, b: float, rng) -> np.ndarray:
    t = rng.uniform(0, 2 * np.pi, n)
    return np.stack([a * np.cos(t), b * np.sin(t)], axis=1)


def prior_experiment(prior_kind: str, a: float = 2.0, b: float = 1.0,
                     steps: int = 2000, batch: int = 256, eval_every: int = 100,
                     n_eval: int = 400, lr: float = 1e-3, n_blocks: int = 5,
                     subnet_width: int = 64, knn_k: int = 5,
                     seed: int = 0) -> PriorExperimentResult:
    """Train an unconditioned invertible stack to push a prior onto an oval.

    The loss is the two-way k-NN KL divergence between mapped prior batches
    and fresh oval samples; the conditioning input is frozen at a constant,
    so the affine layer acts as a global (chart-free) transformation.
    """
    if prior_kind not in PRIOR_KINDS:
        raise ValueError(f"unknown prior kind {prior_kind!r}; choose from {PRIOR_KINDS}")
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(dim_x=2, dim_y=1, n_circles=0, n_gaussians=1,
                      n_blocks=n_blocks, subnet_width=subnet_width,
                      pad_noise_std=0.0, seed=seed)
    model = build_model(cfg)
    opt = T.Adam(model.parameters(), lr=lr)
    r0 = np.zeros(1)

    def mapped(prior_pts):
        y_hat, z = model.forward(prior_pts, r0)
        return T.concat([y_hat, z], axis=1)

    def w1_to_target(step_rng) -> float:
        with T.no_grad():
            gen = mapped(_draw_prior(prior_kind, n_eval, step_rng)).data
        tgt = _draw_oval(n_eval, a, b, step_rng)
        return wasserstein(gen, tgt, p=1)

    eval_rng = np.random.default_rng(seed + 1)
    trace = [(0, w1_to_target(eval_rng))]
    for step in range(1, steps + 1):
        prior_pts = _draw_prior(prior_kind, batch, rng)
        target = _draw_oval(batch, a, b, rng)
        gen = mapped(prior_pts)
        l_kf = knn_kl(T.Tensor(target), gen, knn_k)
        l_kb = knn_kl(gen, T.Tensor(target), knn_k)
        total = T.add(l_kf, l_kb)
        if not math.isfinite(total.item()):
            raise RuntimeError(f"non-finite loss at step {step}")
        opt.zero_grad()
        total.backward()
        opt.step()
        if step % eval_every == 0 or step == steps:
            trace.append((step, w1_to_target(eval_rng)))

    floor_rng = np.random.default_rng(seed + 2)
    noise_floor = wasserstein(_draw_oval(n_eval, a, b, floor_rng),
                              _draw_oval(n_eval, a, b, floor_rng), p=1)
    with T.no_grad():
        final_cloud = mapped(_draw_prior(prior_kind, n_eval, eval_rng)).data
    return PriorExperimentResult(
        prior_kind=prior_kind, trace=trace, final_w1=trace[-1][1],
        noise_floor=noise_floor, final_cloud=final_cloud,
        target_cloud=_draw_oval(n_eval, a, b, eval_rng))
