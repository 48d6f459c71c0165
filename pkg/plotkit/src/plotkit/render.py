"""Reward-curve and ablation-panel rendering from metrics CSVs.

Input files are the training runtime's fixed-header metrics CSVs; run
directories are located through the ``manifest.json`` the experiment CLI
writes. Rendering is read-only and deterministic: a fixed style, no
timestamps, and the Agg backend, so identical inputs produce identical
image bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EXPECTED_HEADER = (
    "wall_clock_s,env_steps,learner_steps,mean_return,mean_kl,mean_ratio,"
    "clip_fraction,buffer_occupancy,version_lag"
)

X_AXES = ("wall_clock_s", "env_steps")

FIG_DPI = 110


class HeaderMismatch(ValueError):
    """A CSV does not carry the fixed metrics header."""


@dataclass(frozen=True)
class Series:
    label: str
    csv_paths: tuple[Path, ...]


@dataclass(frozen=True)
class CurveSpec:
    series: tuple[Series, ...]
    x_axis: str = "env_steps"
    smoothing_window: int = 1
    output: Path | None = None

    def __post_init__(self):
        if not self.series:
            raise ValueError("curve spec needs at least one series")
        if self.x_axis not in X_AXES:
            raise ValueError(f"x_axis must be one of {X_AXES}")
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")


def load_curve_spec(path) -> CurveSpec:
    doc = json.loads(Path(path).read_text())
    base = Path(path).parent
    series = tuple(
        Series(label=s["label"], csv_paths=tuple(base / p for p in s["csvs"]))
        for s in doc["series"]
    )
    output = doc.get("output")
    return CurveSpec(
        series=series,
        x_axis=doc.get("x_axis", "env_steps"),
        smoothing_window=int(doc.get("smoothing_window", 1)),
        output=None if output is None else base / output,
    )


def read_metrics(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"metrics file missing: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or ",".join(header) != EXPECTED_HEADER:
            raise HeaderMismatch(f"unexpected header in {path}")
        rows = [[float(x) for x in row] for row in reader]
    cols = EXPECTED_HEADER.split(",")
    if not rows:
        return {c: np.array([]) for c in cols}
    arr = np.asarray(rows)
    return {c: arr[:, i] for i, c in enumerate(cols)}


def smooth(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; window 1 returns the input unchanged."""
    if window <= 1 or len(values) == 0:
        return values
    out = np.empty_like(values)
    csum = np.cumsum(values)
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out[i] = (csum[i] - (csum[lo - 1] if lo > 0 else 0.0)) / (i - lo + 1)
    return out


def _seed_curves(series: Series, x_axis: str, window: int):
    """Per-seed (x, smoothed return) arrays with NaN returns dropped."""
    curves = []
    for path in series.csv_paths:
        cols = read_metrics(path)
        x = cols[x_axis]
        y = cols["mean_return"]
        keep = ~np.isnan(y)
        x, y = x[keep], y[keep]
        if len(x) == 0:
            continue
        curves.append((x, smooth(y, window)))
    if not curves:
        raise ValueError(f"series {series.label!r} has no plottable rows")
    return curves


def _mean_band(curves):
    """Resample seeds onto a shared x grid: mean line, min-max band."""
    lo = max(c[0][0] for c in curves)
    hi = min(c[0][-1] for c in curves)
    if hi <= lo:  # disjoint ranges: fall back to the union span
        lo = min(c[0][0] for c in curves)
        hi = max(c[0][-1] for c in curves)
    grid = np.linspace(lo, hi, 200)
    stacked = np.stack([np.interp(grid, x, y) for x, y in curves])
    return grid, stacked.mean(axis=0), stacked.min(axis=0), stacked.max(axis=0)


_X_LABELS = {"wall_clock_s": "wall clock (s)", "env_steps": "environment steps"}


def _draw_series(ax, spec_series, x_axis, window):
    for series in spec_series:
        curves = _seed_curves(series, x_axis, window)
        grid, mean, low, high = _mean_band(curves)
        (line,) = ax.plot(grid, mean, label=series.label, linewidth=1.6)
        if len(curves) > 1:
            ax.fill_between(grid, low, high, color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_xlabel(_X_LABELS[x_axis])
    ax.set_ylabel("mean episode return")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)


def render_curves(spec: CurveSpec, out_path=None) -> Path:
    """One figure: mean line per series with a min-max band across seeds."""
    out = Path(out_path) if out_path is not None else spec.output
    if out is None:
        raise ValueError("no output path given")
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=FIG_DPI)
    try:
        _draw_series(ax, spec.series, spec.x_axis, spec.smoothing_window)
        fig.tight_layout()
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out)
    finally:
        plt.close(fig)
    return out


def _series_from_manifest(run_dir: Path, manifest: dict, label: str | None = None):
    ok, missing = [], []
    for run in manifest["runs"]:
        p = run_dir / run["metrics"]
        (ok if p.exists() else missing).append(p)
    series = Series(
        label=label or manifest.get("label", run_dir.name), csv_paths=tuple(ok)
    )
    return series, missing


def _find_ablation_manifests(root: Path) -> list[Path]:
    own = root / "manifest.json"
    if own.exists() and json.loads(own.read_text()).get("kind") == "ablation":
        return [own]
    found = sorted(
        p
        for p in root.glob("*/manifest.json")
        if json.loads(p.read_text()).get("kind") == "ablation"
    )
    return found


def render_ablation(study_dir, out_path, x_axis: str = "env_steps", smoothing_window: int = 1) -> Path:
    """One panel per ablation study found under ``study_dir``, each with all
    variants overlaid. Variants whose runs are missing are annotated rather
    than failing the whole figure."""
    root = Path(study_dir)
    manifests = _find_ablation_manifests(root)
    if not manifests:
        raise FileNotFoundError(f"no ablation manifest under {root}")
    fig, axes = plt.subplots(
        1, len(manifests), figsize=(6.0 * len(manifests), 4.0), dpi=FIG_DPI, squeeze=False
    )
    try:
        for ax, manifest_path in zip(axes[0], manifests):
            doc = json.loads(manifest_path.read_text())
            base = manifest_path.parent
            warnings = []
            series_list = []
            for variant in doc["variants"]:
                vdir = base / variant["dir"]
                vmanifest = json.loads((vdir / "manifest.json").read_text())
                series, missing = _series_from_manifest(vdir, vmanifest, label=variant["name"])
                if missing:
                    warnings.append(f"{variant['name']}: {len(missing)} run(s) missing")
                if series.csv_paths:
                    series_list.append(series)
                else:
                    warnings.append(f"{variant['name']}: no data")
            if series_list:
                _draw_series(ax, series_list, x_axis, smoothing_window)
            ax.set_title(f"study: {doc.get('study', base.name)}", fontsize=10)
            for i, w in enumerate(warnings):
                ax.annotate(
                    f"missing: {w}",
                    xy=(0.02, 0.95 - 0.07 * i),
                    xycoords="axes fraction",
                    fontsize=7,
                    color="crimson",
                )
        fig.tight_layout()
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out)
    finally:
        plt.close(fig)
    return out


def render_run_dir(run_dir, out_path, x_axis: str = "env_steps", smoothing_window: int = 1) -> Path:
    """Render whatever kind of run directory this is (train or ablation)."""
    root = Path(run_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    doc = json.loads(manifest_path.read_text())
    if doc.get("kind") == "ablation":
        return render_ablation(root, out_path, x_axis, smoothing_window)
    series, missing = _series_from_manifest(root, doc)
    if missing:
        raise FileNotFoundError(f"metrics missing for {len(missing)} run(s) in {root}")
    spec = CurveSpec(series=(series,), x_axis=x_axis, smoothing_window=smoothing_window)
    return render_curves(spec, out_path)
