"""Neighborhood-conditioned invertible generative models for exploring the
fibers of many-to-one tasks, with the full training and two-sample
evaluation pipeline."""

from .charts import ChartAtlas, assign, assign_many, finite_charts, kmeans
from .datasets import (LabeledDataset, SyntheticSpec, fiber_oracle, gen_moebius,
                       gen_oval, gen_sliced_torus, gen_torus, load_airfoil,
                       load_csv, load_dataset, load_wine, normalize,
                       save_dataset, split)
from .losses import (LossBreakdown, MetricConfig, backward_loss, forward_loss,
                     knn_kl, metric_suite, mmd, msmd, wasserstein)
from .model import (BundleNet, ModelConfig, PriorSpec, build_model,
                    fit_prior_stats, load_checkpoint, pad_input, sample_fiber,
                    save_checkpoint)
from .report import format_cell, render_table, save_reports_json
from .tensor import Adam, Tensor
from .training import (EvalConfig, MetricReport, MetricSummary, TrainConfig,
                       ablate_neighborhoods, bootstrap_summary, eval_fiberwise,
                       eval_global, prior_experiment, train)

__version__ = "0.1.0"
