"""Offline figure rendering for training metrics CSVs."""

from .render import (
    CurveSpec,
    HeaderMismatch,
    Series,
    load_curve_spec,
    read_metrics,
    render_ablation,
    render_curves,
    render_run_dir,
    smooth,
)

__version__ = "0.1.0"

__all__ = [
    "CurveSpec",
    "HeaderMismatch",
    "Series",
    "load_curve_spec",
    "read_metrics",
    "render_ablation",
    "render_curves",
    "render_run_dir",
    "smooth",
]
