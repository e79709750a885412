# lab/services/registry.py
"""
Named experiments: the keys each one accepts, how they convert, and the
verify/moments calls they run. Experiment files are INI (one section per run)
or a previously written manifest.json, whose echoed configuration re-runs.
"""
from __future__ import annotations

import configparser
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from lab.conf import Thresholds
from lab.exceptions import ConfigError, InvalidParameter
from lab.services import moments, verify
from lab.services.rng_paths import UINT64_MAX, SeedSpec

logger = logging.getLogger(__name__)

REQUIRED = object()


# ---------- Converters ----------

def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _count(text: str) -> int:
    value = _int(text)
    if value < 1:
        raise ValueError(f"{text!r} must be >= 1")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value <= UINT64_MAX:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return value


def _float_list(text: str) -> Tuple[float, ...]:
    items = tuple(float(part) for part in text.split(",") if part.strip())
    if not items:
        raise ValueError("empty list")
    return items


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _format(value: Any) -> str:
    """Inverse of the converters; floats use repr so they round-trip exactly."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class Key:
    name: str
    convert: Callable[[str], Any]
    default: Any = REQUIRED

    @property
    def required(self) -> bool:
        return self.default is REQUIRED


@dataclass
class RunResult:
    label: str
    experiment: str
    seed: SeedSpec
    verdicts: List[verify.Verdict] = field(default_factory=list)
    curves: Dict[str, verify.BlowupCurve] = field(default_factory=dict)
    # Extra series for plots, keyed by plot name.
    series: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)


@dataclass(frozen=True)
class Experiment:
    name: str
    certifies: str
    keys: Tuple[Key, ...]
    runner: Callable[..., RunResult]
    # Cross-key validation run at load time; raises ValueError.
    check: Optional[Callable[[Dict[str, Any]], None]] = None

    @property
    def required(self) -> List[str]:
        return [k.name for k in self.keys if k.required]

    @property
    def optional(self) -> List[str]:
        return [k.name for k in self.keys if not k.required]


@dataclass(frozen=True)
class ExperimentConfig:
    label: str
    experiment: str
    params: Dict[str, Any]

    @property
    def seed(self) -> SeedSpec:
        return SeedSpec(self.params["seed"])

    def echo(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "experiment": self.experiment,
            "params": {k: _format(v) for k, v in sorted(self.params.items())},
        }


# ---------- Runners ----------

def _run_var_j(cfg: ExperimentConfig, thr: Thresholds, workers: int) -> RunResult:
    p = cfg.params
    v = verify.check_var_j(p["t"], p["n_paths"], p["steps"], cfg.seed, thr, workers)
    return RunResult(cfg.label, cfg.experiment, cfg.seed, [v])


def _run_covariance(cfg, thr, workers):
    p = cfg.params
    v = verify.check_covariance(p["t"], p["n_paths"], p["steps"], p["density_points"], cfg.seed, thr, workers)
    return RunResult(cfg.label, cfg.experiment, cfg.seed, [v])


def _run_isometry(cfg, thr, workers):
    p = cfg.params
    verdicts = [verify.check_isometry(p["alpha"], p["x0"], p["y0"], p["horizon"], p["steps"], p["n_paths"], cfg.seed, thr, workers)]
    if p["weak"]:
        verdicts.append(verify.check_weak_isometry(
            p["alpha"], p["x0"], p["y0"], p["horizon"], p["steps"], p["n_paths"], cfg.seed, thr, workers
        ))
    return RunResult(cfg.label, cfg.experiment, cfg.seed, verdicts)


def _run_uniqueness(cfg, thr, workers):
    p = cfg.params
    v = verify.check_uniqueness(
        p["alpha"], p["x0"], p["y0"], p["eps"], p["n_paths"], p["horizon"], p["dt"], cfg.seed, thr, workers
    )
    return RunResult(cfg.label, cfg.experiment, cfg.seed, [v])


def _run_origin(cfg, thr, workers):
    p = cfg.params
    v = verify.check_origin_avoidance(
        p["alpha"], p["x0"], p["y0"], p["n_paths"], p["horizon"], p["dt"], cfg.seed, thr, workers
    )
    series = {"minima": (v.samples["minima"], v.samples["dt"])}
    return RunResult(cfg.label, cfg.experiment, cfg.seed, [v], series=series)


def _run_nonuniqueness(cfg, thr, workers):
    p = cfg.params
    v = verify.check_nonuniqueness(p["alpha"], p["n_paths"], p["horizon"], p["steps"], p["grading"], cfg.seed, thr, workers)
    return RunResult(cfg.label, cfg.experiment, cfg.seed, [v])


def _run_blowup(cfg, thr, workers):
    p = cfg.params
    main, curve = verify.check_blowup(
        p["alpha"], p["x0"], p["y0"], p["levels"], p["horizon"], p["n_paths"], p["steps"], p["max_growth"],
        cfg.seed, thr, workers,
    )
    result = RunResult(cfg.label, cfg.experiment, cfg.seed, [main], {"main": curve})
    if p["control"]:
        control, control_curve = verify.check_blowup_control(
            p["control_alpha"], p["x0"], p["y0"], p["levels"], p["control_horizon"], p["n_paths"], p["control_steps"],
            p["max_growth"], cfg.seed, thr, workers,
        )
        result.verdicts += [control, verify.blowup_separation(main, control, level=thr.ci_level)]
        result.curves["control"] = control_curve
    return result


def _run_transience(cfg, thr, workers):
    p = cfg.params
    v = verify.check_transience(p["n_paths"], p["checkpoints"], p["steps"], cfg.seed, thr, workers)
    return RunResult(cfg.label, cfg.experiment, cfg.seed, [v])


def _run_lemma2(cfg, thr, workers):
    p = cfg.params
    verdicts = [
        verify.check_lemma2(beta, p["delta"], p["n_paths"], p["steps"], p["grading"], p["refinements"], cfg.seed, thr, workers)
        for beta in p["beta"]
    ]
    return RunResult(cfg.label, cfg.experiment, cfg.seed, verdicts)


def _run_lemma4(cfg, thr, workers):
    p = cfg.params
    v = verify.check_lemma4(p["beta"], p["x0"], p["y0"], p["t_max"], p["dt"], p["n_paths"], cfg.seed, thr, workers)
    return RunResult(cfg.label, cfg.experiment, cfg.seed, [v])


def _moment_specs(p: Dict[str, Any]) -> List[moments.MomentSpec]:
    if not len(p["m"]) == len(p["sigma"]) == len(p["beta"]):
        raise ValueError("m, sigma and beta must have equal lengths")
    return [moments.MomentSpec(m, s, b) for m, s, b in zip(p["m"], p["sigma"], p["beta"])]


def _run_lemma5(cfg, thr, workers):
    p = cfg.params
    specs = _moment_specs(p)
    verdicts = [verify.check_lemma5(spec, p["mc_samples"], cfg.seed, thr) for spec in specs]
    grid = np.linspace(0.05, 0.95, 19)
    curves = {}
    for m, s in dict.fromkeys((spec.m, spec.sigma) for spec in specs):
        curves[f"m={m:g},sigma={s:g}"] = [moments.frac_inv_moment_quad(moments.MomentSpec(m, s, b)) for b in grid]
    return RunResult(cfg.label, cfg.experiment, cfg.seed, verdicts, series={"moments": (grid, curves)})


_SEED = Key("seed", _seed, 0)
_START = (Key("x0", _float, 1.0), Key("y0", _float, 0.0))

EXPERIMENTS: Dict[str, Experiment] = {
    e.name: e
    for e in (
        Experiment("var_j", "Var(J_t) = t^3/3", (
            Key("t", _float_list, (0.5, 1.0, 2.0)), Key("n_paths", _count, 100_000), Key("steps", _count, 200), _SEED,
        ), _run_var_j),
        Experiment("covariance", "Cov(B_t, J_t) and the t^-2 density bound", (
            Key("t", _float, 1.0), Key("n_paths", _count, 100_000), Key("steps", _count, 200),
            Key("density_points", _count, 10_000), _SEED,
        ), _run_covariance),
        Experiment("isometry", "martingale and Ito isometry of the scheme", (
            Key("alpha", _float), *_START, Key("horizon", _float, 1.0), Key("steps", _count, 1000),
            Key("n_paths", _count, 10_000), Key("weak", _bool, True), _SEED,
        ), _run_isometry),
        Experiment("uniqueness", "T1", (
            Key("alpha", _float), *_START, Key("eps", _float_list, (1e-2, 1e-3, 1e-4)), Key("n_paths", _count, 1000),
            Key("horizon", _float, 1.0), Key("dt", _float, 1e-3), _SEED,
        ), _run_uniqueness),
        Experiment("origin", "T2", (
            Key("alpha", _float), *_START, Key("n_paths", _count, 1000), Key("horizon", _float, 5.0),
            Key("dt", _float_list, (1e-2, 5e-3, 2.5e-3)), _SEED,
        ), _run_origin),
        Experiment("nonuniqueness", "T3", (
            Key("alpha", _float), Key("n_paths", _count, 1000), Key("horizon", _float, 1.0), Key("steps", _count, 1000),
            Key("grading", _float, 3.0), _SEED,
        ), _run_nonuniqueness),
        Experiment("blowup", "T4", (
            Key("alpha", _float), *_START, Key("levels", _float_list, (1e2, 1e3, 1e4)), Key("horizon", _float, 50.0),
            Key("n_paths", _count, 1000), Key("steps", _count, 5000), Key("max_growth", _float, 0.1),
            Key("control", _bool, True), Key("control_alpha", _float, 0.9), Key("control_horizon", _float, 10.0),
            Key("control_steps", _count, 1000), _SEED,
        ), _run_blowup),
        Experiment("transience", "P1", (
            Key("checkpoints", _float_list, (1e2, 1e3, 1e4)), Key("n_paths", _count, 1000), Key("steps", _count, 50_000),
            _SEED,
        ), _run_transience),
        Experiment("lemma2", "L2", (
            Key("beta", _float_list, (0.5, 0.9)), Key("delta", _float, 1.0), Key("n_paths", _count, 10_000),
            Key("steps", _count, 1000), Key("grading", _float, 8.0), Key("refinements", _int, 2), _SEED,
        ), _run_lemma2),
        Experiment("lemma4", "L4", (
            Key("beta", _float, 0.8), *_START, Key("t_max", _float_list, (100.0, 200.0)), Key("dt", _float, 0.02),
            Key("n_paths", _count, 1000), _SEED,
        ), _run_lemma4),
        Experiment("lemma5", "L5", (
            Key("m", _float_list, (0.0, 0.0, 0.0, 1.0)), Key("sigma", _float_list, (1.0, 1.0, 1.0, 1.0)),
            Key("beta", _float_list, (0.3, 0.5, 0.9, 0.8)), Key("mc_samples", _count, 1_000_000), _SEED,
        ), _run_lemma5, check=_moment_specs),
    )
}


def table() -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "experiment": e.name,
                "certifies": e.certifies,
                "required": " ".join(e.required),
                "optional": " ".join(e.optional),
            }
            for e in EXPERIMENTS.values()
        ]
    )


# ---------- Loading ----------

def validate(label: str, raw: Dict[str, str]) -> ExperimentConfig:
    raw = dict(raw)
    name = raw.pop("experiment", label).strip()
    experiment = EXPERIMENTS.get(name)
    if experiment is None:
        raise ConfigError(f"[{label}] unknown experiment {name!r}", key="experiment")
    declared = {k.name: k for k in experiment.keys}
    for key in raw:
        if key not in declared:
            raise ConfigError(f"[{label}] unknown key {key!r} for experiment {name!r}", key=key)
    params = {}
    for key in experiment.keys:
        if key.name not in raw:
            if key.required:
                raise ConfigError(f"[{label}] missing required key {key.name!r}", key=key.name)
            params[key.name] = key.default
            continue
        try:
            params[key.name] = key.convert(raw[key.name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{label}] bad value for {key.name!r}: {exc}", key=key.name) from exc
    if experiment.check is not None:
        try:
            experiment.check(params)
        except ValueError as exc:
            raise ConfigError(f"[{label}] {exc}") from exc
    return ExperimentConfig(label, name, params)


def _sections_from_ini(text: str, source: str) -> List[Tuple[str, Dict[str, str]]]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if parser.defaults():
        raise ConfigError(f"{source}: a DEFAULT section is not supported", key="DEFAULT")
    return [(name, dict(parser.items(name))) for name in parser.sections()]


def _sections_from_manifest(text: str, source: str) -> List[Tuple[str, Dict[str, str]]]:
    try:
        data = json.loads(text)
        entries = data["config"]
        return [(e["label"], {"experiment": e["experiment"], **e["params"]}) for e in entries]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{source}: not a run manifest ({exc})") from exc


def load_config(path: Path) -> List[ExperimentConfig]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if path.suffix.lower() == ".json":
        sections = _sections_from_manifest(text, str(path))
    else:
        sections = _sections_from_ini(text, str(path))
    if not sections:
        raise ConfigError(f"{path}: no experiments defined")
    configs = [validate(label, raw) for label, raw in sections]
    logger.info("loaded %d experiment(s) from %s", len(configs), path)
    return configs


def run(cfg: ExperimentConfig, thr: Thresholds, workers: int = 1) -> RunResult:
    logger.info("running [%s] (%s) seed=%s", cfg.label, cfg.experiment, cfg.seed)
    try:
        result = EXPERIMENTS[cfg.experiment].runner(cfg, thr, workers)
    except InvalidParameter as exc:
        raise ConfigError(f"[{cfg.label}] {exc}") from exc
    logger.info("[%s] %s", cfg.label, "passed" if result.passed else "FAILED")
    return result
