"""Rendering metric reports as aligned text tables and JSON documents."""

from __future__ import annotations

import json
from pathlib import Path

from .losses import METRIC_NAMES
from .training import MetricReport

MISSING = "—"  # em dash for absent cells


def format_cell(mean: float, halfwidth: float) -> str:
    return f"{mean:.3f}±{halfwidth:.3f}"


def render_table(reports: list[MetricReport], metric_names=None) -> str:
    """Rows are dataset/regime pairs, columns metrics, cells mean±halfwidth."""
    if not reports:
        raise ValueError("no reports to render")
    if metric_names is None:
        seen = []
        for rep in reports:
            for name in METRIC_NAMES:
                if name in rep.metrics and name not in seen:
                    seen.append(name)
            for name in rep.metrics:
                if name not in seen:
                    seen.append(name)
        metric_names = seen
    rows = []
    for rep in reports:
        label = f"{rep.dataset} ({rep.regime})"
        cells = []
        for name in metric_names:
            summ = rep.metrics.get(name)
            cells.append(format_cell(summ.mean, summ.halfwidth) if summ else MISSING)
        rows.append([label] + cells)
    header = [""] + list(metric_names)
    widths = [max(len(r[j]) for r in [header] + rows) for j in range(len(header))]
    lines = []
    for r in [header] + rows:
        lines.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def save_reports_json(reports: list[MetricReport], path):
    Path(path).write_text(json.dumps([r.to_dict() for r in reports],
                                     indent=1, sort_keys=True))


def load_reports_json(path) -> list[MetricReport]:
    docs = json.loads(Path(path).read_text())
    return [MetricReport.from_dict(d) for d in docs]
