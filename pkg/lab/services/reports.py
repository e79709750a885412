# lab/services/reports.py
"""Run artifacts: report.csv, curves.csv, manifest.json and optional SVG plots."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
import plotly.graph_objects as go
from django.conf import settings
from django.utils import timezone

from lab import __version__
from lab.services.registry import ExperimentConfig, RunResult

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.12g"

REPORT_COLUMNS = [
    "experiment", "row", "kind", "estimate", "ci_low", "ci_high", "threshold", "passed", "n", "seed",
]
CURVE_COLUMNS = ["experiment", "curve", "alpha", "horizon", "level", "hit_fraction", "median_hit_time"]


# ---------- Tables ----------

def report_frame(results: Sequence[RunResult]) -> pd.DataFrame:
    """One `verdict` row per verdict, followed by its estimate rows."""
    rows: List[dict] = []
    for result in results:
        for verdict in result.verdicts:
            seed = str(verdict.seed)
            rows.append({
                "experiment": result.label,
                "row": verdict.name,
                "kind": "verdict",
                "estimate": verdict.statistic,
                "ci_low": verdict.ci_low,
                "ci_high": verdict.ci_high,
                "threshold": verdict.threshold,
                "passed": bool(verdict.passed),
                "n": verdict.n_paths,
                "seed": seed,
            })
            for est in verdict.estimates:
                rows.append({
                    "experiment": result.label,
                    "row": f"{verdict.name}/{est.row}",
                    "kind": est.kind,
                    "estimate": est.estimate,
                    "ci_low": est.ci_low,
                    "ci_high": est.ci_high,
                    "threshold": est.threshold,
                    "passed": est.passed,
                    "n": est.n,
                    "seed": seed,
                })
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def curves_frame(results: Sequence[RunResult]) -> pd.DataFrame:
    rows = []
    for result in results:
        for name, curve in result.curves.items():
            for level, frac, med in zip(curve.levels, curve.hit_fractions, curve.median_hit_times):
                rows.append({
                    "experiment": result.label,
                    "curve": name,
                    "alpha": curve.alpha,
                    "horizon": curve.horizon,
                    "level": float(level),
                    "hit_fraction": float(frac),
                    "median_hit_time": float(med),
                })
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def _write_frame(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


# ---------- Plots ----------

def _save(fig: go.Figure, path: Path) -> Optional[Path]:
    try:
        fig.write_image(str(path), format="svg")
    except Exception as exc:  # kaleido missing or no browser available
        logger.warning("plot export skipped for %s: %s", path.name, exc)
        return None
    return path


def _hit_curve_figure(result: RunResult) -> go.Figure:
    fig = go.Figure()
    for name, curve in result.curves.items():
        fig.add_trace(go.Scatter(
            x=list(curve.levels), y=list(curve.hit_fractions), mode="lines+markers",
            name=f"{name} (alpha={curve.alpha:g}, T={curve.horizon:g})",
        ))
    fig.update_layout(
        title=f"{result.label}: fraction of paths reaching |X| = L",
        xaxis={"title": "L", "type": "log"}, yaxis={"title": "hit fraction", "range": [0, 1.05]},
    )
    return fig


def _minima_figure(result: RunResult) -> go.Figure:
    minima, dts = result.series["minima"]
    fig = go.Figure()
    for column, dt in enumerate(dts):
        values = minima[:, column]
        positive = values[values > 0]
        fig.add_trace(go.Histogram(x=[math.log10(v) for v in positive], name=f"dt={dt:g}", opacity=0.6))
    fig.update_layout(
        title=f"{result.label}: path minima of |(X, Y)|", barmode="overlay",
        xaxis={"title": "log10 min |Z|"}, yaxis={"title": "paths"},
    )
    return fig


def _moments_figure(result: RunResult) -> go.Figure:
    grid, curves = result.series["moments"]
    fig = go.Figure()
    for name, values in curves.items():
        fig.add_trace(go.Scatter(x=list(grid), y=list(values), mode="lines", name=name))
    fig.update_layout(
        title=f"{result.label}: E|m + sigma Z|^(-beta)",
        xaxis={"title": "beta"}, yaxis={"title": "moment", "type": "log"},
    )
    return fig


def write_plots(results: Sequence[RunResult], out_dir: Path) -> List[Path]:
    written = []
    for result in results:
        figures = {}
        if result.curves:
            figures["hits"] = _hit_curve_figure(result)
        if "minima" in result.series:
            figures["minima"] = _minima_figure(result)
        if "moments" in result.series:
            figures["moments"] = _moments_figure(result)
        for suffix, fig in figures.items():
            path = _save(fig, out_dir / f"{result.label}_{suffix}.svg")
            if path is not None:
                written.append(path)
    return written


# ---------- Manifest ----------

def sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(configs: Sequence[ExperimentConfig], outputs: Sequence[Path], out_dir: Path) -> Path:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": settings.LAB_ARTIFACT_VERSION,
        "lab_version": __version__,
        "created": timezone.now().isoformat(),
        "config": [cfg.echo() for cfg in configs],
        "checksums": {p.name: sha256(p) for p in outputs},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_all(
    configs: Sequence[ExperimentConfig],
    results: Sequence[RunResult],
    out_dir: Path,
    plots: bool = False,
) -> Dict[str, Path]:
    """Every artifact of one run; the manifest is written last and checksums the rest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {"report": _write_frame(report_frame(results), out_dir / "report.csv")}
    curves = curves_frame(results)
    if not curves.empty:
        written["curves"] = _write_frame(curves, out_dir / "curves.csv")
    if plots:
        for path in write_plots(results, out_dir):
            written[path.stem] = path
    written["manifest"] = write_manifest(configs, list(written.values()), out_dir)
    logger.info("wrote %d artifact(s) to %s", len(written), out_dir)
    return written
