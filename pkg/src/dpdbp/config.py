"""Experiment configuration files.

Configs are YAML mappings; every error names the dotted key path of the
offending entry.  See README.md for the full key reference.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DpdError
from .estimation import OptimizerConfig
from .functional import ContaminationScheme, MonteCarloConfig
from .models import (
    MEAN_FUNCTIONS,
    DesignMatrix,
    ExponentialLogLink,
    NormalNLR,
    PoissonLogLink,
    generate_design,
)

COMMANDS = ("fit", "mdpdf-sweep", "abp-bound", "simulate", "check-assumptions")
FAMILIES = {"normal": NormalNLR, "poisson": PoissonLogLink, "exponential": ExponentialLogLink}


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be a mapping")
    cfg["_base_dir"] = str(path.parent.resolve())
    return cfg


def get(cfg, key, default=..., kind=None):
    """Look up a dotted key; ``default=...`` makes it required."""
    node = cfg
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is ...:
                raise ConfigError(key, "missing required key")
            return default
        node = node[part]
    if kind is not None and node is not None:
        try:
            if kind is list:
                if not isinstance(node, (list, tuple)):
                    raise TypeError
                return list(node)
            return kind(node)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected {kind.__name__}, got {node!r}") from None
    return node


def float_list(cfg, key, default=...):
    value = get(cfg, key, default)
    if value is None or value is default:
        return value
    if isinstance(value, dict):
        try:
            start, stop, step = float(value["start"]), float(value["stop"]), float(value["step"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(key, "range needs numeric start, stop and step") from None
        if step <= 0 or stop < start:
            raise ConfigError(key, "range needs step > 0 and stop >= start")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        # Rounding keeps grid values such as 0.3 exact in the CSV output.
        return [round(start + k * step, 12) for k in range(count)]
    if not isinstance(value, (list, tuple)):
        value = [value]
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a list of numbers, got {value!r}") from None


def build_design(cfg):
    """``(design, y or None)`` from ``model.design``."""
    design_cfg = get(cfg, "model.design")
    if not isinstance(design_cfg, dict):
        raise ConfigError("model.design", "must be a mapping with 'path' or 'generate'")
    if "path" in design_cfg:
        path = Path(str(design_cfg["path"]))
        if not path.is_absolute():
            path = Path(cfg.get("_base_dir", ".")) / path
        if not path.is_file():
            raise ConfigError("model.design.path", f"file not found: {path}")
        try:
            return DesignMatrix.from_csv(path)
        except (DpdError, ValueError) as exc:
            raise ConfigError("model.design.path", str(exc)) from None
    if "generate" in design_cfg:
        gen = design_cfg["generate"]
        n = get(cfg, "model.design.generate.n", kind=int)
        seed = get(cfg, "model.design.generate.seed", kind=int)
        columns = get(cfg, "model.design.generate.columns", kind=list)
        try:
            design = generate_design(columns, n, seed, bool(gen.get("intercept", False)))
        except (DpdError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError("model.design.generate.columns", str(exc)) from None
        return design, None
    raise ConfigError("model.design", "needs 'path' or 'generate'")


def build_model(cfg):
    family = get(cfg, "model.family", kind=str)
    if family not in FAMILIES:
        raise ConfigError("model.family", f"unknown family {family!r}; choose from {sorted(FAMILIES)}")
    design, y = build_design(cfg)
    try:
        if family == "normal":
            mean_name = get(cfg, "model.mean", "linear", kind=str)
            if mean_name not in MEAN_FUNCTIONS:
                raise ConfigError("model.mean", f"unknown mean function {mean_name!r}")
            model = NormalNLR(design, MEAN_FUNCTIONS[mean_name]())
        else:
            model = FAMILIES[family](design)
    except ConfigError:
        raise
    except DpdError as exc:
        raise ConfigError("model", str(exc)) from None
    return model, y


def build_theta(cfg, model, key="theta0"):
    theta = float_list(cfg, key)
    try:
        return model.check(theta)
    except DpdError as exc:
        raise ConfigError(key, str(exc)) from None


def build_contamination(cfg, model):
    rule = get(cfg, "contamination.rule", "model", kind=str)
    try:
        if rule == "model":
            # A member of the model family at the given parameter; for
            # log-link families this means mean exp(x' theta).
            return ContaminationScheme.from_model(model, build_theta(cfg, model, "contamination.theta"), 0.0)
        if rule == "linear-mean":
            coef = float_list(cfg, "contamination.coef")
            if len(coef) != model.design.p:
                raise ConfigError("contamination.coef", f"needs {model.design.p} entries")
            sd = get(cfg, "contamination.sd", None, kind=float)
            if model.family == "normal" and sd is None:
                raise ConfigError("contamination.sd", "normal linear-mean contaminants need sd")
            return ContaminationScheme.linear_mean(model, coef, 0.0, sd=sd)
    except DpdError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("contamination", str(exc)) from None
    raise ConfigError("contamination.rule", f"unknown rule {rule!r}; use 'model' or 'linear-mean'")


OPT_KEYS = {
    "n_starts": int,
    "max_iters": int,
    "x_tol": float,
    "f_tol": float,
    "stationarity_tol": float,
    "start_dispersion": float,
    "seed": int,
    "polish": bool,
    "method": str,
}


def build_optimizer(cfg, **defaults):
    section = get(cfg, "optimizer", {}) or {}
    if not isinstance(section, dict):
        raise ConfigError("optimizer", "must be a mapping")
    kwargs = dict(defaults)
    for k, v in section.items():
        if k not in OPT_KEYS:
            raise ConfigError(f"optimizer.{k}", "unknown key")
        kwargs[k] = get(cfg, f"optimizer.{k}", kind=OPT_KEYS[k])
    try:
        return OptimizerConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError("optimizer", str(exc)) from None


def build_monte_carlo(cfg):
    section = get(cfg, "monte_carlo", {}) or {}
    if not isinstance(section, dict):
        raise ConfigError("monte_carlo", "must be a mapping")
    unknown = set(section) - {"n_draws", "seed", "mode"}
    if unknown:
        raise ConfigError(f"monte_carlo.{sorted(unknown)[0]}", "unknown key")
    return MonteCarloConfig(
        get(cfg, "monte_carlo.n_draws", 20000, kind=int),
        get(cfg, "monte_carlo.seed", 0, kind=int),
        get(cfg, "monte_carlo.mode", "monte-carlo", kind=str),
    )


def check_grid(values, key, lo, hi, hi_open=False):
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ConfigError(key, "grid is empty")
    if np.any(np.diff(arr) <= 0):
        raise ConfigError(key, "grid must be strictly increasing")
    if np.any(arr < lo) or np.any(arr > hi) or (hi_open and np.any(arr >= hi)):
        raise ConfigError(key, f"grid values must lie in [{lo}, {hi}{')' if hi_open else ']'}")
    return arr
