"""Command-line entry point.

Commands: make-data, train, eval, ablate, prior-experiment, generate.
Every run writes its artifacts into a timestamped directory under the output
root (--out, else $BUNDLENET_OUT, else ./runs), together with the resolved
configuration (``config.resolved``) and SHA-256 hashes of its file inputs.

Values resolve with increasing precedence: built-in defaults, then the
--config file (flat ``section.key = value`` lines), then --set overrides,
then dedicated flags. Exit codes: 0 success, 1 runtime failure, 2 bad
usage/config.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import datasets as D
from . import plots
from .losses import MetricConfig
from .model import (ModelConfig, load_checkpoint, sample_fiber, save_checkpoint)
from .report import render_table, save_reports_json
from .training import (EvalConfig, TrainConfig, ablate_neighborhoods,
                       eval_fiberwise, eval_global, prior_experiment, train,
                       PRIOR_KINDS)


class ConfigError(ValueError):
    pass


def _parse_bool(s):
    if isinstance(s, bool):
        return s
    low = str(s).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_opt_int(s):
    if s is None or str(s).strip().lower() in ("none", ""):
        return None
    return int(s)


def _parse_str_or_float(s):
    try:
        return float(s)
    except (TypeError, ValueError):
        return str(s)


class Opt:
    def __init__(self, key, typ, default, help="", flag=None, choices=None):
        self.key = key
        self.typ = typ
        self.default = default
        self.help = help
        self.flag = flag or "--" + key.split(".", 1)[1].replace("_", "-")
        self.choices = choices


COMMON_OPTS = [
    Opt("run.seed", int, 0, "seed for all randomness in the run", flag="--seed"),
    Opt("run.figures", _parse_bool, True, "render figures alongside outputs"),
]

_MODEL_OPTS = [
    Opt("model.n_blocks", int, 5, "coupling blocks"),
    Opt("model.n_circles", int, 3, "circular priors"),
    Opt("model.n_gaussians", int, 0, "requested Gaussian priors"),
    Opt("model.subnet_depth", int, 2, "hidden layers per coupling subnet"),
    Opt("model.subnet_width", int, 64, "hidden width per coupling subnet"),
    Opt("model.cond_depth", int, 2, "hidden layers in the conditioning net"),
    Opt("model.cond_width", int, 64, "hidden width of the conditioning net"),
    Opt("model.soft_clamp_alpha", float, 2.0, "coupling log-scale clamp"),
    Opt("model.pad_noise_std", float, 0.01, "padding noise scale"),
]

_TRAIN_OPTS = [
    Opt("train.epochs", int, 2000, "training epochs"),
    Opt("train.lr0", float, 1e-4, "initial learning rate"),
    Opt("train.lr_halve_every", int, 70, "epochs between LR halvings"),
    Opt("train.q", int, 25, "neighborhood count (continuous labels)"),
    Opt("train.max_batch", _parse_opt_int, None, "cap points per visit"),
]

_METRIC_OPTS = [
    Opt("metric.knn_k", int, 5, "k for the k-NN KL estimator"),
    Opt("metric.entropic_blur", float, 0.05, "Sinkhorn blur", flag="--blur"),
    Opt("metric.wasserstein_method", str, "auto", choices=("auto", "exact", "entropic")),
    Opt("metric.exact_threshold", int, 512, "max cloud size for exact OT"),
    Opt("metric.mmd_bandwidth", _parse_str_or_float, "median", "sigma or 'median'"),
]

_EVAL_OPTS = [
    Opt("eval.n_global", int, 4000, "points per global comparison"),
    Opt("eval.n_fiber_points", int, 200, "points per fiber"),
    Opt("eval.n_base_points", int, 15, "fibers per repeat"),
    Opt("eval.n_repeats", int, 10, "evaluation repeats", flag="--repeats"),
    Opt("eval.bootstrap_resamples", int, 1000, "bootstrap resamples"),
]

COMMAND_OPTS = {
    "make-data": COMMON_OPTS + [
        Opt("data.kind", str, None, "dataset kind", choices=(
            "torus", "moebius", "sliced-torus", "oval", "wine", "airfoil", "csv")),
        Opt("data.n", int, 1000, "sample count (synthetic)"),
        Opt("data.r", float, 2.0, "minor radius", flag="--r"),
        Opt("data.R", float, 8.0, "major radius", flag="--R"),
        Opt("data.base_radius", float, 4.5, "label circle radius"),
        Opt("data.uniform_surface", _parse_bool, False, "surface-uniform sampling"),
        Opt("data.test_frac", float, 0.0, "test fraction (0 = no split)"),
        Opt("data.a", float, 2.0, "oval semi-axis a", flag="--a"),
        Opt("data.b", float, 1.0, "oval semi-axis b", flag="--b"),
        Opt("data.source", str, None, "input table path (airfoil/csv)"),
        Opt("data.red", str, None, "red wine CSV path"),
        Opt("data.white", str, None, "white wine CSV path"),
        Opt("data.input_cols", str, None, "comma-separated input columns (csv)"),
        Opt("data.label_cols", str, None, "comma-separated label columns (csv)"),
        Opt("data.label_kind", str, "continuous", choices=("continuous", "finite")),
    ],
    "train": COMMON_OPTS + [Opt("data.path", str, None, "dataset CSV", flag="--data")]
    + _TRAIN_OPTS + _MODEL_OPTS + _METRIC_OPTS,
    "eval": COMMON_OPTS + [
        Opt("eval.checkpoint", str, None, "checkpoint path", flag="--checkpoint"),
        Opt("data.path", str, None, "dataset CSV", flag="--data"),
        Opt("eval.regime", str, "both", choices=("global", "fiberwise", "both")),
    ] + _EVAL_OPTS + _METRIC_OPTS,
    "ablate": COMMON_OPTS + [
        Opt("data.path", str, None, "dataset CSV", flag="--data"),
        Opt("ablate.q_list", str, "1,2,5,25", "neighborhood counts"),
        Opt("ablate.workers", _parse_opt_int, None, "parallel workers"),
    ] + [Opt("train.epochs", int, 800, "training epochs per run")]
    + _TRAIN_OPTS[1:] + _MODEL_OPTS + _METRIC_OPTS + _EVAL_OPTS,
    "prior-experiment": COMMON_OPTS + [
        Opt("prior.kind", str, "all", "prior to train", flag="--prior",
            choices=("all",) + PRIOR_KINDS),
        Opt("prior.a", float, 2.0, "oval semi-axis a", flag="--a"),
        Opt("prior.b", float, 1.0, "oval semi-axis b", flag="--b"),
        Opt("prior.steps", int, 2000, "gradient steps"),
        Opt("prior.batch", int, 256, "points per step"),
        Opt("prior.eval_every", int, 100, "steps between trace entries"),
        Opt("prior.n_eval", int, 400, "points per trace evaluation"),
        Opt("prior.lr", float, 1e-3, "learning rate", flag="--lr"),
        Opt("prior.n_blocks", int, 5, "coupling blocks"),
    ],
    "generate": COMMON_OPTS + [
        Opt("eval.checkpoint", str, None, "checkpoint path", flag="--checkpoint"),
        Opt("gen.y", str, None, "label to condition on, e.g. 4.5,0", flag="--y"),
        Opt("gen.n", int, 200, "points to generate", flag="--n"),
        Opt("gen.chart", _parse_opt_int, None, "chart index override"),
    ],
}


# ----------------------------------------------------------------------
# config resolution
# ----------------------------------------------------------------------
def parse_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = val
    return out


def resolve_options(command: str, ns: argparse.Namespace) -> dict:
    opts = {o.key: o for o in COMMAND_OPTS[command]}
    resolved = {o.key: o.default for o in opts.values()}

    def apply(key, raw, origin):
        opt = opts.get(key)
        if opt is None:
            print(f"warning: ignoring unknown config key {key!r} ({origin})",
                  file=sys.stderr)
            return
        try:
            resolved[key] = opt.typ(raw) if raw is not None else None
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{origin}: bad value for {key}: {e}") from None
        if opt.choices and resolved[key] not in opt.choices:
            raise ConfigError(f"{origin}: {key} must be one of {opt.choices}")

    if ns.config:
        for key, raw in parse_config_file(ns.config).items():
            apply(key, raw, f"config file {ns.config}")
    for pair in ns.set or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        apply(key.strip(), raw.strip(), "--set")
    for opt in opts.values():
        flag_val = getattr(ns, opt.key, None)
        if flag_val is not None:
            apply(opt.key, flag_val, opt.flag)
    return resolved


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def make_run_dir(command: str, cfg: dict, out_flag) -> Path:
    root = Path(out_flag or os.environ.get("BUNDLENET_OUT", "runs"))
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = root / f"{stamp}-{command}"
    run_dir = base
    suffix = 1
    while run_dir.exists():
        suffix += 1
        run_dir = Path(f"{base}-{suffix}")
    run_dir.mkdir(parents=True)
    lines = [f"command = {command}"]
    lines += [f"{k} = {_format_value(v)}" for k, v in sorted(cfg.items())]
    (run_dir / "config.resolved").write_text("\n".join(lines) + "\n")
    return run_dir


def record_input_hashes(run_dir: Path, paths):
    lines = []
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        if p.exists():
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            lines.append(f"{digest}  {p}")
    if lines:
        (run_dir / "inputs.sha256").write_text("\n".join(lines) + "\n")


def write_cloud_csv(path, cloud: np.ndarray, prefix: str = "x"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{prefix}{j}" for j in range(cloud.shape[1])])
        for row in cloud:
            w.writerow([repr(float(v)) for v in row])


# ----------------------------------------------------------------------
# command handlers
# ----------------------------------------------------------------------
def _require(cfg, key, flag):
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"missing required option {flag} ({key})")
    return cfg[key]


def cmd_make_data(cfg, run_dir: Path) -> int:
    kind = _require(cfg, "data.kind", "--kind")
    seed = cfg["run.seed"]
    if kind == "oval":
        cloud = D.gen_oval(cfg["data.n"], cfg["data.a"], cfg["data.b"], seed)
        out = run_dir / "oval.csv"
        write_cloud_csv(out, cloud)
        if cfg["run.figures"]:
            plots.save_cloud_figure(run_dir / "oval.png", {"oval": cloud})
        print(out)
        return 0
    if kind in ("torus", "moebius", "sliced-torus"):
        spec = D.SyntheticSpec(kind=kind.replace("-", "_"), n=cfg["data.n"],
                               r=cfg["data.r"], R=cfg["data.R"],
                               base_radius=cfg["data.base_radius"], seed=seed)
        ds = D.generate(spec, uniform_surface=cfg["data.uniform_surface"])
    elif kind == "wine":
        ds = D.load_wine(_require(cfg, "data.red", "--red"),
                         _require(cfg, "data.white", "--white"))
    elif kind == "airfoil":
        ds = D.load_airfoil(_require(cfg, "data.source", "--source"))
    else:
        cols = _require(cfg, "data.input_cols", "--input-cols")
        labels = _require(cfg, "data.label_cols", "--label-cols")

        def parse_cols(s):
            return [int(c) if c.strip().lstrip("-").isdigit() else c.strip()
                    for c in s.split(",")]

        ds = D.load_csv(_require(cfg, "data.source", "--source"),
                        parse_cols(cols), parse_cols(labels),
                        label_kind=cfg["data.label_kind"])
    if cfg["data.test_frac"] > 0:
        ds = D.split(ds, test_frac=cfg["data.test_frac"], seed=seed)
    out = run_dir / "dataset.csv"
    D.save_dataset(ds, out)
    if cfg["run.figures"]:
        plots.save_cloud_figure(run_dir / "dataset.png",
                                {"inputs": ds.x}, title=ds.meta.get("name", kind))
    print(out)
    return 0


def _model_config_from(cfg, dim_x, dim_y) -> ModelConfig:
    return ModelConfig(
        dim_x=dim_x, dim_y=dim_y,
        n_circles=cfg["model.n_circles"], n_gaussians=cfg["model.n_gaussians"],
        n_blocks=cfg["model.n_blocks"], subnet_depth=cfg["model.subnet_depth"],
        subnet_width=cfg["model.subnet_width"], cond_depth=cfg["model.cond_depth"],
        cond_width=cfg["model.cond_width"],
        soft_clamp_alpha=cfg["model.soft_clamp_alpha"],
        pad_noise_std=cfg["model.pad_noise_std"], seed=cfg["run.seed"])


def _metric_config_from(cfg) -> MetricConfig:
    return MetricConfig(
        knn_k=cfg["metric.knn_k"], mmd_bandwidth=cfg["metric.mmd_bandwidth"],
        wasserstein_method=cfg["metric.wasserstein_method"],
        entropic_blur=cfg["metric.entropic_blur"],
        exact_threshold=cfg["metric.exact_threshold"])


def _train_config_from(cfg) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["train.epochs"], lr0=cfg["train.lr0"],
        lr_halve_every=cfg["train.lr_halve_every"], q=cfg["train.q"],
        seed=cfg["run.seed"], max_batch=cfg["train.max_batch"],
        metric=_metric_config_from(cfg))


def _eval_config_from(cfg) -> EvalConfig:
    return EvalConfig(
        n_global=cfg["eval.n_global"], n_fiber_points=cfg["eval.n_fiber_points"],
        n_base_points=cfg["eval.n_base_points"], n_repeats=cfg["eval.n_repeats"],
        bootstrap_resamples=cfg["eval.bootstrap_resamples"])


def write_loss_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "l_fwd", "l_kl_fwd", "l_kl_bwd", "l_msmd", "total"])
        for e, lb in enumerate(history):
            w.writerow([e, lb.l_fwd, lb.l_kl_fwd, lb.l_kl_bwd, lb.l_msmd, lb.total])


def cmd_train(cfg, run_dir: Path) -> int:
    data_path = _require(cfg, "data.path", "--data")
    record_input_hashes(run_dir, [data_path, D.sidecar_path(data_path)])
    ds = D.load_dataset(data_path)
    mc = _model_config_from(cfg, ds.dim_x, ds.dim_y)
    tc = _train_config_from(cfg)
    result = train(ds, mc, tc)
    ckpt = run_dir / "checkpoint.json"
    save_checkpoint(ckpt, result.model, result.atlas, result.prior,
                    extra={"dataset": ds.meta.get("name", ds.kind),
                           "data_path": str(data_path),
                           "epochs": tc.epochs, "q": result.atlas.q,
                           "seed": tc.seed})
    write_loss_history_csv(run_dir / "loss_history.csv", result.loss_history)
    if cfg["run.figures"]:
        plots.save_loss_figure(run_dir / "loss.png", result.loss_history)
    print(ckpt)
    return 0


def cmd_eval(cfg, run_dir: Path) -> int:
    ckpt_path = _require(cfg, "eval.checkpoint", "--checkpoint")
    data_path = _require(cfg, "data.path", "--data")
    record_input_hashes(run_dir, [ckpt_path, data_path, D.sidecar_path(data_path)])
    model, atlas, prior, _ = load_checkpoint(ckpt_path)
    if atlas is None or prior is None:
        raise ConfigError("checkpoint lacks chart atlas or prior statistics")
    ds = D.load_dataset(data_path)
    ec = _eval_config_from(cfg)
    metc = _metric_config_from(cfg)
    seed = cfg["run.seed"]
    regimes = ("global", "fiberwise") if cfg["eval.regime"] == "both" \
        else (cfg["eval.regime"],)
    reports = []
    for regime in regimes:
        fn = eval_global if regime == "global" else eval_fiberwise
        reports.append(fn(model, atlas, prior, ds, ec, metc, seed))
    save_reports_json(reports, run_dir / "report.json")
    table = render_table(reports)
    (run_dir / "report.txt").write_text(table)
    print(table, end="")

    # example clouds alongside the report
    from .training import _generate_over_labels, _global_reference, _sample_eval_labels
    rng = np.random.default_rng(seed)
    if "global" in regimes:
        labels = _sample_eval_labels(ds, min(ec.n_global, 2000), rng, "train")
        gen = _generate_over_labels(model, atlas, prior, labels, rng)
        write_cloud_csv(run_dir / "generated_global.csv", gen)
        if cfg["run.figures"]:
            ref = _global_reference(ds, gen.shape[0], rng)
            plots.save_cloud_figure(run_dir / "global.png",
                                    {"generated": gen, "reference": ref},
                                    title=f"{ds.meta.get('name')} global")
    if "fiberwise" in regimes:
        labels = _sample_eval_labels(ds, 1, rng, "all")
        gen = sample_fiber(model, atlas, prior, labels[0], ec.n_fiber_points, rng)
        write_cloud_csv(run_dir / "generated_fiber.csv", gen)
        if cfg["run.figures"]:
            clouds = {"generated": gen}
            if ds.kind in D.SYNTHETIC_KINDS:
                clouds["oracle"] = D.fiber_oracle(
                    ds.kind, D.label_angle(labels[0]), ec.n_fiber_points,
                    ds.synthetic_spec(), rng)
            plots.save_cloud_figure(run_dir / "fiber.png", clouds,
                                    title=f"{ds.meta.get('name')} fiber")
    return 0


def cmd_generate(cfg, run_dir: Path) -> int:
    ckpt_path = _require(cfg, "eval.checkpoint", "--checkpoint")
    record_input_hashes(run_dir, [ckpt_path])
    model, atlas, prior, _ = load_checkpoint(ckpt_path)
    if atlas is None or prior is None:
        raise ConfigError("checkpoint lacks chart atlas or prior statistics")
    y_raw = _require(cfg, "gen.y", "--y")
    try:
        y = np.array([float(v) for v in str(y_raw).split(",")])
    except ValueError:
        raise ConfigError(f"--y expects comma-separated reals, got {y_raw!r}")
    if y.size != model.config.dim_y:
        raise ConfigError(f"--y has {y.size} coordinates, model expects "
                          f"{model.config.dim_y}")
    rng = np.random.default_rng(cfg["run.seed"])
    cloud = sample_fiber(model, atlas, prior, y, cfg["gen.n"], rng,
                         chart_index=cfg["gen.chart"])
    out = run_dir / "fiber.csv"
    write_cloud_csv(out, cloud)
    if cfg["run.figures"]:
        plots.save_cloud_figure(run_dir / "fiber.png", {"generated": cloud},
                                title=f"fiber over {y_raw}")
    print(out)
    return 0


def cmd_ablate(cfg, run_dir: Path) -> int:
    data_path = _require(cfg, "data.path", "--data")
    record_input_hashes(run_dir, [data_path, D.sidecar_path(data_path)])
    ds = D.load_dataset(data_path)
    try:
        q_list = [int(v) for v in str(cfg["ablate.q_list"]).split(",")]
    except ValueError:
        raise ConfigError(f"--q-list expects comma-separated ints, "
                          f"got {cfg['ablate.q_list']!r}")
    mc = _model_config_from(cfg, ds.dim_x, ds.dim_y)
    rows = ablate_neighborhoods(ds, q_list, mc, _train_config_from(cfg),
                                _eval_config_from(cfg), _metric_config_from(cfg),
                                seed=cfg["run.seed"], workers=cfg["ablate.workers"])
    with open(run_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "global_w1", "global_w1_lo", "global_w1_hi",
                    "fiberwise_w1", "fiberwise_w1_lo", "fiberwise_w1_hi"])
        for row in rows:
            g = row["global"]["metrics"]["w1"]
            f = row["fiberwise"]["metrics"]["w1"]
            w.writerow([row["q"], g["mean"], g["ci_low"], g["ci_high"],
                        f["mean"], f["ci_low"], f["ci_high"]])
        print((run_dir / "ablation.csv").read_text(), end="")
    (run_dir / "ablation_reports.json").write_text(
        json.dumps(rows, indent=1, sort_keys=True))
    if cfg["run.figures"]:
        plots.save_ablation_figure(run_dir / "ablation.png", rows)
    return 0


def cmd_prior_experiment(cfg, run_dir: Path) -> int:
    kinds = PRIOR_KINDS if cfg["prior.kind"] == "all" else (cfg["prior.kind"],)
    traces = {}
    summary = {}
    for kind in kinds:
        res = prior_experiment(
            kind, a=cfg["prior.a"], b=cfg["prior.b"], steps=cfg["prior.steps"],
            batch=cfg["prior.batch"], eval_every=cfg["prior.eval_every"],
            n_eval=cfg["prior.n_eval"], lr=cfg["prior.lr"],
            n_blocks=cfg["prior.n_blocks"], seed=cfg["run.seed"])
        traces[kind] = res.trace
        summary[kind] = {"final_w1": res.final_w1, "noise_floor": res.noise_floor}
        with open(run_dir / f"trace_{kind}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "w1"])
            w.writerows(res.trace)
        if cfg["run.figures"]:
            plots.save_cloud_figure(run_dir / f"clouds_{kind}.png",
                                    {"generated": res.final_cloud,
                                     "target": res.target_cloud},
                                    title=f"{kind} prior after {cfg['prior.steps']} steps")
    (run_dir / "priors_summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True))
    if cfg["run.figures"]:
        noise = next(iter(summary.values()))["noise_floor"]
        plots.save_trace_figure(run_dir / "traces.png", traces, noise_floor=noise)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


HANDLERS = {
    "make-data": cmd_make_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "prior-experiment": cmd_prior_experiment,
    "generate": cmd_generate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bundlenet",
        description="Train and probe neighborhood-conditioned invertible "
                    "generative models of many-to-one tasks.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for command, opts in COMMAND_OPTS.items():
        p = sub.add_parser(command, help=f"{command} run")
        p.add_argument("--config", default=None, metavar="FILE",
                       help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a single config key")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output root (default $BUNDLENET_OUT or ./runs)")
        for opt in opts:
            kwargs = {"dest": opt.key, "default": None, "help": opt.help,
                      "metavar": "V"}
            if opt.typ is _parse_bool:
                kwargs["nargs"] = "?"
                kwargs["const"] = "true"
            p.add_argument(opt.flag, **kwargs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = resolve_options(args.command, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        run_dir = make_run_dir(args.command, cfg, args.out)
        if args.config:
            record_input_hashes(run_dir, [args.config])
        print(f"run directory: {run_dir}", file=sys.stderr)
        return HANDLERS[args.command](cfg, run_dir)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure -> exit 1 with context
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
