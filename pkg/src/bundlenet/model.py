"""The neighborhood-conditioned invertible map and its latent priors.

The map runs between a padded input space and label x latent space, both of
working dimension D. Forward order: an elementwise affine layer whose scale
and shift are predicted from the neighborhood representative r by a small
conditioning MLP, then ``n_blocks`` repetitions of (two-sided affine
coupling block, fixed coordinate permutation). Output layout: the first
``dim_y`` coordinates are the label, then ``n_circles`` coordinate pairs
with uniform-on-a-circle priors, then ``n_gaussians`` Gaussian coordinates.

Latent prior statistics (circle radii, Gaussian means/stds) are fitted per
neighborhood by pushing its training points through the forward map.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .charts import ChartAtlas, assign
from .tensor import Tensor

CHECKPOINT_FORMAT = "bundlenet-checkpoint-v1"
GAUSSIAN_STD_FLOOR = 1e-3


class NonFiniteActivation(RuntimeError):
    """A block produced NaN/Inf during forward or inverse evaluation."""


@dataclass(frozen=True)
class ModelConfig:
    dim_x: int
    dim_y: int
    n_circles: int = 3
    n_gaussians: int = 0
    n_blocks: int = 5
    subnet_depth: int = 2
    subnet_width: int = 64
    cond_depth: int = 2
    cond_width: int = 64
    soft_clamp_alpha: float = 2.0
    pad_noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_y < 1:
            raise ValueError("dim_x and dim_y must be positive")
        if self.n_circles < 0 or self.n_gaussians < 0:
            raise ValueError("prior counts must be non-negative")
        if self.n_blocks < 1:
            raise ValueError("need at least one coupling block")
        if self.soft_clamp_alpha <= 0:
            raise ValueError("soft_clamp_alpha must be positive")
        d = max(self.dim_x, self.dim_y + 2 * self.n_circles + self.n_gaussians)
        if d < 2:
            raise ValueError("working dimension must be at least 2 for coupling")
        extra = d - self.dim_y - 2 * self.n_circles - self.n_gaussians
        if extra < 0:
            raise ValueError(
                f"label and circle coordinates ({self.dim_y + 2 * self.n_circles}) "
                f"exceed the working dimension {d}")
        # widen the input side with extra Gaussian priors so the map is square
        object.__setattr__(self, "n_gaussians", self.n_gaussians + extra)

    @property
    def working_dim(self) -> int:
        return self.dim_y + 2 * self.n_circles + self.n_gaussians

    @property
    def latent_dim(self) -> int:
        return 2 * self.n_circles + self.n_gaussians

    @property
    def split_at(self) -> int:
        return (self.working_dim + 1) // 2


# ----------------------------------------------------------------------
# parameter initialization
# ----------------------------------------------------------------------
def _init_mlp(rng: np.random.Generator, dims: list[int]) -> list:
    """He-uniform hidden layers; the final layer starts at zero so the
    whole stack begins as the identity map."""
    layers = []
    n_layers = len(dims) - 1
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == n_layers - 1:
            w = np.zeros((fan_in, fan_out))
        else:
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append((T.parameter(w), T.parameter(np.zeros((1, fan_out)))))
    return layers


def _apply_mlp(layers, h: Tensor) -> Tensor:
    for i, (w, b) in enumerate(layers):
        h = T.add(T.matmul(h, w), b)
        if i < len(layers) - 1:
            h = T.leaky_relu(h)
    return h


class BundleNet:
    """Invertible map between padded inputs and (label, latent) pairs."""

    def __init__(self, config: ModelConfig, cond_net, blocks, perms):
        self.config = config
        self.cond_net = cond_net
        self.blocks = blocks                      # [(net1, net2), ...]
        self.perms = [np.asarray(p, dtype=np.intp) for p in perms]
        self.inv_perms = [np.argsort(p) for p in self.perms]
        self.counters = {"inverse_calls": 0, "inverse_points": 0}

    # ------------------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in self.cond_net:
            out.extend((w, b))
        for net1, net2 in self.blocks:
            for w, b in net1:
                out.extend((w, b))
            for w, b in net2:
                out.extend((w, b))
        return out

    def _clamp(self, s: Tensor) -> Tensor:
        a = self.config.soft_clamp_alpha
        return T.mul(T.tanh(T.mul(s, 1.0 / a)), a)

    def _cond_affine(self, r) -> tuple[Tensor, Tensor]:
        d = self.config.working_dim
        r_row = T.Tensor(np.asarray(r, dtype=np.float64).reshape(1, -1))
        out = _apply_mlp(self.cond_net, r_row)
        return T.slice_cols(out, 0, d), T.slice_cols(out, d, 2 * d)

    def _check_finite(self, v: Tensor, where: str):
        if not np.isfinite(v.data).all():
            raise NonFiniteActivation(f"non-finite activation at {where}")

    # ------------------------------------------------------------------
    def forward(self, x, r) -> tuple[Tensor, Tensor]:
        """Padded inputs (n x D) with representative r -> (labels, latents)."""
        cfg = self.config
        d, a = cfg.working_dim, cfg.split_at
        v = T.as_tensor(x)
        if v.data.ndim != 2 or v.data.shape[1] != d:
            raise T.ShapeError(f"forward: expected (n, {d}) input, got {v.data.shape}")
        s, t = self._cond_affine(r)
        v = T.add(T.mul(v, T.exp(s)), t)
        self._check_finite(v, "conditioned affine layer")
        for bi, (net1, net2) in enumerate(self.blocks):
            v1 = T.slice_cols(v, 0, a)
            v2 = T.slice_cols(v, a, d)
            out1 = _apply_mlp(net1, v2)
            s1 = self._clamp(T.slice_cols(out1, 0, a))
            t1 = T.slice_cols(out1, a, 2 * a)
            v1 = T.add(T.mul(v1, T.exp(s1)), t1)
            out2 = _apply_mlp(net2, v1)
            s2 = self._clamp(T.slice_cols(out2, 0, d - a))
            t2 = T.slice_cols(out2, d - a, 2 * (d - a))
            v2 = T.add(T.mul(v2, T.exp(s2)), t2)
            v = T.permute_columns(T.concat([v1, v2], axis=1), self.perms[bi])
            self._check_finite(v, f"coupling block {bi}")
        return T.slice_cols(v, 0, cfg.dim_y), T.slice_cols(v, cfg.dim_y, d)

    def inverse(self, y, z, r) -> Tensor:
        """(labels, latents) with representative r -> padded inputs (n x D)."""
        cfg = self.config
        d, a = cfg.working_dim, cfg.split_at
        y_t, z_t = T.as_tensor(y), T.as_tensor(z)
        if y_t.data.shape[1] != cfg.dim_y or z_t.data.shape[1] != cfg.latent_dim:
            raise T.ShapeError(
                f"inverse: expected ({cfg.dim_y} + {cfg.latent_dim}) columns, "
                f"got {y_t.data.shape[1]} + {z_t.data.shape[1]}")
        v = T.concat([y_t, z_t], axis=1)
        for bi in reversed(range(len(self.blocks))):
            net1, net2 = self.blocks[bi]
            v = T.permute_columns(v, self.inv_perms[bi])
            v1 = T.slice_cols(v, 0, a)
            v2 = T.slice_cols(v, a, d)
            out2 = _apply_mlp(net2, v1)
            s2 = self._clamp(T.slice_cols(out2, 0, d - a))
            t2 = T.slice_cols(out2, d - a, 2 * (d - a))
            v2 = T.mul(T.sub(v2, t2), T.exp(T.mul(s2, -1.0)))
            out1 = _apply_mlp(net1, v2)
            s1 = self._clamp(T.slice_cols(out1, 0, a))
            t1 = T.slice_cols(out1, a, 2 * a)
            v1 = T.mul(T.sub(v1, t1), T.exp(T.mul(s1, -1.0)))
            v = T.concat([v1, v2], axis=1)
            self._check_finite(v, f"coupling block {bi} (inverse)")
        s, t = self._cond_affine(r)
        v = T.mul(T.sub(v, t), T.exp(T.mul(s, -1.0)))
        self._check_finite(v, "conditioned affine layer (inverse)")
        self.counters["inverse_calls"] += 1
        self.counters["inverse_points"] += v.data.shape[0]
        return v


def build_model(config: ModelConfig) -> BundleNet:
    """Initialize parameters and freeze the block permutations."""
    rng = np.random.default_rng(config.seed)
    d, a = config.working_dim, config.split_at
    cond_dims = [config.dim_y] + [config.cond_width] * config.cond_depth + [2 * d]
    cond_net = _init_mlp(rng, cond_dims)
    blocks = []
    for _ in range(config.n_blocks):
        net1 = _init_mlp(rng, [d - a] + [config.subnet_width] * config.subnet_depth
                         + [2 * a])
        net2 = _init_mlp(rng, [a] + [config.subnet_width] * config.subnet_depth
                         + [2 * (d - a)])
        blocks.append((net1, net2))
    perms = [rng.permutation(d) for _ in range(config.n_blocks)]
    return BundleNet(config, cond_net, blocks, perms)


def pad_input(x, config: ModelConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Widen inputs to the working dimension with N(0, pad_noise_std^2) draws."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    extra = config.working_dim - x.shape[1]
    if extra < 0:
        raise T.ShapeError(
            f"pad_input: input dim {x.shape[1]} exceeds working dim {config.working_dim}")
    if extra == 0:
        return x.copy()
    if config.pad_noise_std == 0:
        pad = np.zeros((x.shape[0], extra))
    else:
        if rng is None:
            rng = np.random.default_rng(config.seed)
        pad = rng.normal(0.0, config.pad_noise_std, size=(x.shape[0], extra))
    return np.concatenate([x, pad], axis=1)


# ----------------------------------------------------------------------
# latent priors
# ----------------------------------------------------------------------
@dataclass
class PriorSpec:
    """Per-neighborhood latent sample statistics defining the fiber prior."""

    n_circles: int
    n_gaussians: int
    circle_radius: np.ndarray     # q x n_circles
    gaussian_mean: np.ndarray     # q x n_gaussians
    gaussian_std: np.ndarray      # q x n_gaussians
    fitted: np.ndarray            # q bools

    @classmethod
    def empty(cls, q: int, n_circles: int, n_gaussians: int) -> "PriorSpec":
        return cls(n_circles=n_circles, n_gaussians=n_gaussians,
                   circle_radius=np.zeros((q, n_circles)),
                   gaussian_mean=np.zeros((q, n_gaussians)),
                   gaussian_std=np.full((q, n_gaussians), 1.0),
                   fitted=np.zeros(q, dtype=bool))

    @property
    def q(self) -> int:
        return self.fitted.shape[0]

    def update(self, i: int, z_cloud: np.ndarray):
        """Refit neighborhood i's statistics from its latent image."""
        z = np.atleast_2d(np.asarray(z_cloud, dtype=np.float64))
        if z.shape[0] == 0:
            raise ValueError("cannot fit prior statistics on an empty neighborhood")
        if z.shape[1] != 2 * self.n_circles + self.n_gaussians:
            raise T.ShapeError(f"latent cloud has {z.shape[1]} columns, "
                               f"expected {2 * self.n_circles + self.n_gaussians}")
        for c in range(self.n_circles):
            pair = z[:, 2 * c:2 * c + 2]
            self.circle_radius[i, c] = max(float(np.hypot(pair[:, 0], pair[:, 1]).mean()), 0.0)
        off = 2 * self.n_circles
        for g in range(self.n_gaussians):
            col = z[:, off + g]
            self.gaussian_mean[i, g] = float(col.mean())
            self.gaussian_std[i, g] = max(float(col.std()), GAUSSIAN_STD_FLOOR)
        self.fitted[i] = True

    def sample(self, i: int, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n latent vectors for neighborhood i: circles then Gaussians."""
        if not self.fitted[i]:
            raise ValueError(f"prior statistics not fitted for neighborhood {i}")
        cols = []
        for c in range(self.n_circles):
            theta = rng.uniform(0, 2 * np.pi, n)
            rad = self.circle_radius[i, c]
            cols.append(rad * np.cos(theta))
            cols.append(rad * np.sin(theta))
        for g in range(self.n_gaussians):
            cols.append(rng.normal(self.gaussian_mean[i, g],
                                   self.gaussian_std[i, g], size=n))
        if not cols:
            return np.zeros((n, 0))
        return np.stack(cols, axis=1)

    def to_dict(self) -> dict:
        return {"n_circles": self.n_circles, "n_gaussians": self.n_gaussians,
                "circle_radius": self.circle_radius.tolist(),
                "gaussian_mean": self.gaussian_mean.tolist(),
                "gaussian_std": self.gaussian_std.tolist(),
                "fitted": self.fitted.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls(n_circles=d["n_circles"], n_gaussians=d["n_gaussians"],
                   circle_radius=np.asarray(d["circle_radius"], dtype=np.float64),
                   gaussian_mean=np.asarray(d["gaussian_mean"], dtype=np.float64),
                   gaussian_std=np.asarray(d["gaussian_std"], dtype=np.float64),
                   fitted=np.asarray(d["fitted"], dtype=bool))


def fit_prior_stats(model: BundleNet, neighborhoods: list, reps) -> PriorSpec:
    """Fit all neighborhoods' statistics from their padded point clouds."""
    cfg = model.config
    reps = np.atleast_2d(np.asarray(reps, dtype=np.float64))
    prior = PriorSpec.empty(len(neighborhoods), cfg.n_circles, cfg.n_gaussians)
    with T.no_grad():
        for i, cloud in enumerate(neighborhoods):
            cloud = np.atleast_2d(np.asarray(cloud, dtype=np.float64))
            if cloud.shape[0] == 0:
                raise ValueError(f"neighborhood {i} is empty")
            _, z = model.forward(cloud, reps[i])
            prior.update(i, z.data)
    return prior


def sample_fiber(model: BundleNet, atlas: ChartAtlas, prior: PriorSpec, y,
                 n: int, rng: np.random.Generator,
                 chart_index: int | None = None) -> np.ndarray:
    """Generate n inputs lying over label y through the inverse map."""
    cfg = model.config
    if n == 0:
        return np.zeros((0, cfg.dim_x))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    i = assign(y, atlas) if chart_index is None else chart_index
    z = prior.sample(i, n, rng)
    with T.no_grad():
        x_pad = model.inverse(np.tile(y, (n, 1)), z, atlas.reps[i])
    return x_pad.data[:, :cfg.dim_x]


# ----------------------------------------------------------------------
# checkpointing
# ----------------------------------------------------------------------
def _mlp_to_lists(layers):
    return [[w.data.tolist(), b.data.tolist()] for w, b in layers]


def _mlp_from_lists(data):
    return [(T.parameter(np.asarray(w, dtype=np.float64)),
             T.parameter(np.asarray(b, dtype=np.float64))) for w, b in data]


def checkpoint_dict(model: BundleNet, atlas: ChartAtlas | None = None,
                    prior: PriorSpec | None = None, extra: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "cond_net": _mlp_to_lists(model.cond_net),
        "blocks": [{"net1": _mlp_to_lists(n1), "net2": _mlp_to_lists(n2)}
                   for n1, n2 in model.blocks],
        "perms": [p.tolist() for p in model.perms],
        "atlas": atlas.to_dict() if atlas is not None else None,
        "prior": prior.to_dict() if prior is not None else None,
        "extra": extra or {},
    }


def save_checkpoint(path, model: BundleNet, atlas: ChartAtlas | None = None,
                    prior: PriorSpec | None = None, extra: dict | None = None):
    doc = checkpoint_dict(model, atlas, prior, extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path):
    """Returns (model, atlas, prior, extra); atlas/prior may be None."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    raw = dict(doc["config"])
    # n_gaussians in the file is already the widened count; rebuild exactly
    config = ModelConfig(**raw)
    if asdict(config) != raw:
        raise ValueError("checkpoint config does not round-trip")
    cond_net = _mlp_from_lists(doc["cond_net"])
    blocks = [(_mlp_from_lists(b["net1"]), _mlp_from_lists(b["net2"]))
              for b in doc["blocks"]]
    model = BundleNet(config, cond_net, blocks,
                      [np.asarray(p, dtype=np.intp) for p in doc["perms"]])
    atlas = ChartAtlas.from_dict(doc["atlas"]) if doc["atlas"] else None
    prior = PriorSpec.from_dict(doc["prior"]) if doc["prior"] else None
    return model, atlas, prior, doc.get("extra", {})
