"""Dataset generation and ingestion.

Synthetic surfaces (torus, Möbius band, sliced torus) are embedded in R^3
with labels on a circle of radius ``base_radius`` in R^2; training draws are
parameter-uniform, and evaluation references can be drawn surface-uniform by
rejection on the area density. Real tabular data is normalized column-wise
to span [0, 10] and split 80/20.

Datasets persist as a CSV (x0..,y0.. columns) plus a JSON sidecar carrying
normalization parameters, split indices, and generator settings.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SYNTHETIC_KINDS = ("torus", "moebius", "sliced_torus")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str
    n: int
    r: float = 2.0
    R: float = 8.0
    base_radius: float = 4.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if not (0 < self.r < self.R):
            raise ValueError("need 0 < r < R")
        if self.n < 1:
            raise ValueError("need n >= 1")


@dataclass
class LabeledDataset:
    x: np.ndarray               # n x dim_x
    y: np.ndarray               # n x dim_y
    train_idx: np.ndarray
    test_idx: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y row counts differ")
        self.train_idx = np.asarray(self.train_idx, dtype=np.intp)
        self.test_idx = np.asarray(self.test_idx, dtype=np.intp)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim_x(self) -> int:
        return self.x.shape[1]

    @property
    def dim_y(self) -> int:
        return self.y.shape[1]

    @property
    def x_train(self) -> np.ndarray:
        return self.x[self.train_idx]

    @property
    def y_train(self) -> np.ndarray:
        return self.y[self.train_idx]

    @property
    def x_test(self) -> np.ndarray:
        return self.x[self.test_idx]

    @property
    def y_test(self) -> np.ndarray:
        return self.y[self.test_idx]

    @property
    def kind(self) -> str:
        return self.meta.get("kind", "csv")

    @property
    def label_kind(self) -> str:
        return self.meta.get("label_kind", "continuous")

    def synthetic_spec(self) -> SyntheticSpec:
        p = self.meta["params"]
        return SyntheticSpec(kind=self.meta["kind"], n=int(p["n"]), r=p["r"],
                             R=p["R"], base_radius=p["base_radius"],
                             seed=int(p["seed"]))


# ----------------------------------------------------------------------
# synthetic surfaces
# ----------------------------------------------------------------------
def _torus_points(phi, theta, R, r):
    a = R + r * np.cos(theta)
    return np.stack([a * np.cos(phi), a * np.sin(phi), r * np.sin(theta)], axis=1)


def _moebius_direction(theta):
    # unit vector at twist angle theta/2 in the radial-z plane
    half = theta / 2.0
    return np.stack([-np.cos(half) * np.cos(theta),
                     -np.cos(half) * np.sin(theta),
                     np.sin(half)], axis=1)


def _sliced_radius(phi, r):
    return r * np.sin(phi / 2.0)


def _labels(angle, base_radius):
    return base_radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)


def _dataset(x, y, spec: SyntheticSpec, extra=None) -> LabeledDataset:
    meta = {
        "name": spec.kind,
        "kind": spec.kind,
        "label_kind": "continuous",
        "params": {"n": spec.n, "r": spec.r, "R": spec.R,
                   "base_radius": spec.base_radius, "seed": spec.seed},
    }
    if extra:
        meta["params"].update(extra)
    n = x.shape[0]
    return LabeledDataset(x=x, y=y, train_idx=np.arange(n),
                          test_idx=np.empty(0, dtype=np.intp), meta=meta)


def gen_torus(spec: SyntheticSpec, uniform_surface: bool = False) -> LabeledDataset:
    """Torus samples; rejection on the area density when surface-uniform."""
    rng = np.random.default_rng(spec.seed)
    phi, theta = _draw_torus_params(spec.n, spec.r, spec.R, rng,
                                    uniform_surface, sliced=False)
    x = _torus_points(phi, theta, spec.R, spec.r)
    return _dataset(x, _labels(phi, spec.base_radius), spec,
                    {"uniform_surface": uniform_surface})


def gen_sliced_torus(spec: SyntheticSpec, uniform_surface: bool = False) -> LabeledDataset:
    """Torus with fiber radius r*sin(phi/2): a point at phi=0, full circle at pi."""
    rng = np.random.default_rng(spec.seed)
    phi, theta = _draw_torus_params(spec.n, spec.r, spec.R, rng,
                                    uniform_surface, sliced=True)
    x = _torus_points(phi, theta, spec.R, _sliced_radius(phi, spec.r))
    return _dataset(x, _labels(phi, spec.base_radius), spec,
                    {"uniform_surface": uniform_surface})


def _draw_torus_params(n, r, R, rng, uniform_surface, sliced):
    if not uniform_surface:
        return rng.uniform(0, 2 * np.pi, n), rng.uniform(0, 2 * np.pi, n)
    # area element: rho(phi) * sqrt((R + rho cos(theta))^2 + rho'(phi)^2)
    bound = r * math.sqrt((R + r) ** 2 + (0.5 * r) ** 2) if sliced else (R + r)
    phis, thetas = [], []
    need = n
    while need > 0:
        batch = max(2 * need, 256)
        phi = rng.uniform(0, 2 * np.pi, batch)
        theta = rng.uniform(0, 2 * np.pi, batch)
        if sliced:
            rho = _sliced_radius(phi, r)
            drho = 0.5 * r * np.cos(phi / 2.0)
            dens = rho * np.sqrt((R + rho * np.cos(theta)) ** 2 + drho ** 2)
        else:
            dens = R + r * np.cos(theta)
        keep = rng.uniform(0, bound, batch) < dens
        phis.append(phi[keep])
        thetas.append(theta[keep])
        need = n - sum(len(p) for p in phis)
    phi = np.concatenate(phis)[:n]
    theta = np.concatenate(thetas)[:n]
    return phi, theta


def gen_moebius(spec: SyntheticSpec) -> LabeledDataset:
    """Möbius band of width 2r around the radius-R circle, half twist per loop."""
    rng = np.random.default_rng(spec.seed)
    theta = rng.uniform(0, 2 * np.pi, spec.n)
    s = rng.uniform(-spec.r, spec.r, spec.n)
    center = np.stack([spec.R * np.cos(theta), spec.R * np.sin(theta),
                       np.zeros(spec.n)], axis=1)
    x = center + s[:, None] * _moebius_direction(theta)
    return _dataset(x, _labels(theta, spec.base_radius), spec)


def generate(spec: SyntheticSpec, uniform_surface: bool = False) -> LabeledDataset:
    if spec.kind == "torus":
        return gen_torus(spec, uniform_surface)
    if spec.kind == "sliced_torus":
        return gen_sliced_torus(spec, uniform_surface)
    if spec.kind == "moebius":
        return gen_moebius(spec)
    raise ValueError(f"unknown synthetic kind {spec.kind!r}")


def gen_oval(n: int, a: float, b: float, seed: int = 0) -> np.ndarray:
    """Uniform-angle samples of the oval (a cos t, b sin t)."""
    if a <= 0 or b <= 0:
        raise ValueError("oval semi-axes must be positive")
    t = np.random.default_rng(seed).uniform(0, 2 * np.pi, n)
    return np.stack([a * np.cos(t), b * np.sin(t)], axis=1)


# ----------------------------------------------------------------------
# ground-truth fibers
# ----------------------------------------------------------------------
def label_angle(y) -> float:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    return float(np.arctan2(y[1], y[0]))


def fiber_oracle(kind: str, phi: float, n: int, spec: SyntheticSpec,
                 rng: np.random.Generator) -> np.ndarray:
    """Exact sample of the true fiber over base angle ``phi``."""
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"fiber oracle only exists for synthetic kinds, not {kind!r}")
    if kind == "torus":
        theta = rng.uniform(0, 2 * np.pi, n)
        return _torus_points(np.full(n, phi), theta, spec.R, spec.r)
    if kind == "sliced_torus":
        theta = rng.uniform(0, 2 * np.pi, n)
        return _torus_points(np.full(n, phi), theta, spec.R,
                             _sliced_radius(np.full(n, phi), spec.r))
    s = rng.uniform(-spec.r, spec.r, n)
    center = np.array([spec.R * math.cos(phi), spec.R * math.sin(phi), 0.0])
    return center[None, :] + s[:, None] * _moebius_direction(np.full(n, phi))


def fiber_is_degenerate(kind: str, phi: float, spec: SyntheticSpec,
                        tol: float = 1e-9) -> bool:
    """True when the oracle fiber collapses to a single point."""
    if kind == "sliced_torus":
        return abs(_sliced_radius(np.array([phi]), spec.r)[0]) < tol
    return False


def surface_residual(kind: str, x: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    """Deviation of each point from its surface's implicit equation."""
    x = np.atleast_2d(x)
    rad = np.hypot(x[:, 0], x[:, 1])
    if kind == "torus":
        return np.abs((rad - spec.R) ** 2 + x[:, 2] ** 2 - spec.r ** 2)
    if kind == "sliced_torus":
        phi = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * np.pi)
        rho = _sliced_radius(phi, spec.r)
        return np.abs((rad - spec.R) ** 2 + x[:, 2] ** 2 - rho ** 2)
    if kind == "moebius":
        theta = np.arctan2(x[:, 1], x[:, 0])
        half = theta / 2.0
        # in-plane residual: the (radial, z) offset must align with the twist
        return np.abs((rad - spec.R) * np.sin(half) + x[:, 2] * np.cos(half))
    raise ValueError(f"no implicit equation for {kind!r}")


# ----------------------------------------------------------------------
# normalization / splits
# ----------------------------------------------------------------------
def normalize(column):
    """Scale a column to span [0, 10]; constant columns map to zeros."""
    col = np.asarray(column, dtype=np.float64)
    if col.size == 0:
        raise ValueError("normalize: empty column")
    m, M = float(col.min()), float(col.max())
    span = M - m
    if span < 1e-12:
        span = 1.0
    return 10.0 * (col - m) / span, (m, M)


def normalize_columns(arr: np.ndarray):
    out = np.empty_like(arr)
    params = []
    for j in range(arr.shape[1]):
        out[:, j], mm = normalize(arr[:, j])
        params.append(mm)
    return out, params


def split(dataset: LabeledDataset, test_frac: float = 0.2,
          seed: int = 0) -> LabeledDataset:
    """Seeded shuffle; the first (1 - test_frac) of the order becomes train."""
    n = dataset.n
    if n < 5:
        raise ValueError(f"split needs at least 5 rows, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(n * test_frac)
    n_train = n - n_test
    meta = dict(dataset.meta)
    meta["split_seed"] = seed
    meta["test_frac"] = test_frac
    return LabeledDataset(x=dataset.x, y=dataset.y,
                          train_idx=np.sort(order[:n_train]),
                          test_idx=np.sort(order[n_train:]), meta=meta)


# ----------------------------------------------------------------------
# CSV ingestion
# ----------------------------------------------------------------------
class CsvFormatError(ValueError):
    pass


def _sniff_delimiter(line: str) -> str:
    for cand in (";", ",", "\t"):
        if cand in line:
            return cand
    return " "


def _read_table(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.strip():
            raise CsvFormatError(f"{path}: empty file")
        delim = _sniff_delimiter(first)
        fh.seek(0)
        if delim == " ":
            rows = [ln.split() for ln in fh if ln.strip()]
        else:
            rows = [r for r in csv.reader(fh, delimiter=delim) if any(c.strip() for c in r)]
    try:
        [float(c) for c in rows[0]]
        header = [f"c{j}" for j in range(len(rows[0]))]
        body = rows
    except ValueError:
        header = [c.strip().strip('"') for c in rows[0]]
        body = rows[1:]
    if not body:
        raise CsvFormatError(f"{path}: header only, no data rows")
    data = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise CsvFormatError(
                f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise CsvFormatError(
                    f"{path}: row {i + 2}, column {header[j]!r}: "
                    f"non-numeric cell {cell!r}") from None
    return header, data


def _resolve_cols(header, cols):
    out = []
    for c in cols:
        if isinstance(c, int):
            out.append(c)
        elif c in header:
            out.append(header.index(c))
        else:
            raise CsvFormatError(f"unknown column {c!r}; file has {header}")
    return out


def load_csv(path, input_cols, label_cols, name: str = "csv",
             label_kind: str = "continuous") -> LabeledDataset:
    """Load a delimited table and normalize every used column to [0, 10]."""
    header, data = _read_table(path)
    xi = _resolve_cols(header, input_cols)
    yi = _resolve_cols(header, label_cols)
    x, x_norm = normalize_columns(data[:, xi])
    y, y_norm = normalize_columns(data[:, yi])
    meta = {"name": name, "kind": "csv", "label_kind": label_kind,
            "source": str(path), "x_norm": x_norm, "y_norm": y_norm,
            "x_cols": [header[j] for j in xi], "y_cols": [header[j] for j in yi]}
    n = x.shape[0]
    return LabeledDataset(x=x, y=y, train_idx=np.arange(n),
                          test_idx=np.empty(0, dtype=np.intp), meta=meta)


def load_wine(red_path, white_path) -> LabeledDataset:
    """Merge the red/white wine tables; labels are (quality, color)."""
    h_red, red = _read_table(red_path)
    h_white, white = _read_table(white_path)
    if h_red != h_white:
        raise CsvFormatError("red and white wine files have different columns")
    if len(h_red) != 12:
        raise CsvFormatError(
            f"expected 11 features + quality, got {len(h_red)} columns")
    color = np.concatenate([np.zeros(len(red)), np.ones(len(white))])
    data = np.vstack([red, white])
    x, x_norm = normalize_columns(data[:, :11])
    y_raw = np.stack([data[:, 11], color], axis=1)
    y, y_norm = normalize_columns(y_raw)
    meta = {"name": "wine", "kind": "csv", "label_kind": "finite",
            "source": f"{red_path}+{white_path}", "x_norm": x_norm,
            "y_norm": y_norm, "x_cols": h_red[:11], "y_cols": ["quality", "color"]}
    n = x.shape[0]
    return LabeledDataset(x=x, y=y, train_idx=np.arange(n),
                          test_idx=np.empty(0, dtype=np.intp), meta=meta)


def load_airfoil(path) -> LabeledDataset:
    """Airfoil noise table: 5 inputs, scaled sound pressure as the label."""
    header, data = _read_table(path)
    if data.shape[1] != 6:
        raise CsvFormatError(f"expected 6 columns, got {data.shape[1]}")
    ds = load_csv(path, input_cols=list(range(5)), label_cols=[5],
                  name="airfoil", label_kind="continuous")
    return ds


# ----------------------------------------------------------------------
# persistence: CSV + JSON sidecar
# ----------------------------------------------------------------------
def sidecar_path(csv_path) -> Path:
    return Path(str(csv_path) + ".meta.json")


def save_dataset(ds: LabeledDataset, csv_path):
    csv_path = Path(csv_path)
    cols = [f"x{j}" for j in range(ds.dim_x)] + [f"y{j}" for j in range(ds.dim_y)]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for xi, yi in zip(ds.x, ds.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in yi])
    side = dict(ds.meta)
    side["dim_x"] = ds.dim_x
    side["dim_y"] = ds.dim_y
    side["split"] = {"train": ds.train_idx.tolist(), "test": ds.test_idx.tolist()}
    with open(sidecar_path(csv_path), "w") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)


def load_dataset(csv_path) -> LabeledDataset:
    csv_path = Path(csv_path)
    header, data = _read_table(csv_path)
    side_file = sidecar_path(csv_path)
    if not side_file.exists():
        raise FileNotFoundError(f"missing dataset sidecar {side_file}")
    with open(side_file) as fh:
        side = json.load(fh)
    dim_x, dim_y = side["dim_x"], side["dim_y"]
    split_info = side.pop("split")
    return LabeledDataset(x=data[:, :dim_x], y=data[:, dim_x:dim_x + dim_y],
                          train_idx=np.asarray(split_info["train"], dtype=np.intp),
                          test_idx=np.asarray(split_info["test"], dtype=np.intp),
                          meta=side)
