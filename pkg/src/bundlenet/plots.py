"""Figure rendering for run artifacts (point clouds, traces, ablations).

Figures are written next to the delimited outputs of each CLI command; they
are a convenience view, not part of the evaluation pipeline.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")


def save_cloud_figure(path, clouds: dict, title: str = ""):
    """Scatter one or more point clouds; 3-d clouds get two projections."""
    dims = {arr.shape[1] for arr in clouds.values() if arr.size}
    three_d = 3 in dims
    n_panels = 2 if three_d else 1
    fig, axes = plt.subplots(1, n_panels, figsize=(5 * n_panels, 4.2))
    axes = np.atleast_1d(axes)
    panels = [(0, 1, "x-y"), (0, 2, "x-z")] if three_d else [(0, 1, "x-y")]
    for ax, (i, j, label) in zip(axes, panels):
        for color, (name, arr) in zip(_COLORS, clouds.items()):
            if arr.size == 0:
                continue
            jj = min(j, arr.shape[1] - 1)
            ax.scatter(arr[:, i], arr[:, jj], s=4, alpha=0.5, label=name,
                       color=color)
        ax.set_xlabel(label.split("-")[0])
        ax.set_ylabel(label.split("-")[1])
        ax.set_aspect("equal", adjustable="datalim")
    axes[0].legend(loc="best", fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_loss_figure(path, loss_history, title: str = "training loss"):
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(len(loss_history))
    for name in ("l_fwd", "l_kl_fwd", "l_kl_bwd", "l_msmd"):
        ax.plot(epochs, [getattr(lb, name) for lb in loss_history],
                label=name, linewidth=1)
    ax.plot(epochs, [lb.total for lb in loss_history], label="total",
            color="black", linewidth=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_trace_figure(path, traces: dict, noise_floor: float | None = None,
                      title: str = "distance to target"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for color, (name, trace) in zip(_COLORS, traces.items()):
        steps, vals = zip(*trace)
        ax.plot(steps, vals, label=name, color=color)
    if noise_floor is not None:
        ax.axhline(noise_floor, linestyle="--", color="gray",
                   label="sampling noise floor")
    ax.set_xlabel("step")
    ax.set_ylabel("W1 to target")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_ablation_figure(path, rows, metric: str = "w1"):
    """W1 by neighborhood count, both regimes, log-scaled axes."""
    qs = [row["q"] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for regime, marker in (("global", "o"), ("fiberwise", "s")):
        means = [row[regime]["metrics"][metric]["mean"] for row in rows]
        los = [row[regime]["metrics"][metric]["ci_low"] for row in rows]
        his = [row[regime]["metrics"][metric]["ci_high"] for row in rows]
        err = [np.subtract(means, los), np.subtract(his, means)]
        ax.errorbar(qs, means, yerr=err, marker=marker, label=regime, capsize=3)
    ax.set_xlabel("number of neighborhoods")
    ax.set_ylabel(metric)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
