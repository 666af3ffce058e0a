"""Run configuration: flat ``key = value`` files with typed parsing."""

from __future__ import annotations

import json
import os

from .errors import ConfigError

OUTPUT_ENV = "EVOMRC_OUTPUT_DIR"

# key -> (type, default)
DEFAULTS: dict[str, tuple[type, object]] = {
    "scenario": (str, "mtl"),
    "data": (str, "hyperplane"),
    # hyperplane streams
    "dim": (int, 2),
    "mode": (str, "rotate"),
    "angle": (float, 5.0),
    "initial_angle": (float, 0.0),
    "sigma_w": (float, 0.1),
    "multi": (bool, True),
    "k": (int, 100),
    "n": (int, 10),
    "n_test": (int, 100),
    "oracle_mc": (int, 0),
    # csv data
    "csv_path": (str, ""),
    "label_column": (str, "label"),
    "task_column": (str, ""),
    "segment_size": (int, 300),
    "feature_columns": (str, ""),
    "test_per_task": (int, 100),
    # features
    "embedding": (str, "identity"),
    "rff_features": (int, 200),
    "rff_sigma2": (float, 10.0),
    "rff_seed": (int, 0),
    # learning
    "lambda0": (float, 0.7),
    "W": (int, 2),
    "b": (int, 3),
    "order": (int, 0),
    "K": (int, 2000),
    "K_warm": (int, 300),
    "restarts": (int, 1),
    "warm_guard": (bool, True),
    "anchors": (str, "train_instances"),
    "d_mode": (str, "auto"),
    "d_init": (float, 1e-3),
    "beta": (float, 0.3),
    # execution
    "reps": (int, 1),
    "seed": (int, 0),
    "workers": (int, 1),
    "output": (str, "results"),
    "save_models": (bool, False),
    "plots": (bool, True),
}

CHOICES = {
    "scenario": ("mda", "mtl", "scd", "cl"),
    "data": ("hyperplane", "csv"),
    "mode": ("rotate", "random_walk"),
    "embedding": ("identity", "rff"),
    "anchors": ("train_instances", "train_plus_eval"),
    "d_mode": ("auto", "centered", "trailing"),
}


def _convert(key: str, raw):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown configuration key {key!r}")
    typ, _ = DEFAULTS[key]
    if isinstance(raw, typ) and not (typ is int and isinstance(raw, bool)):
        val = raw
    elif typ is bool:
        s = str(raw).strip().lower()
        if s in ("1", "true", "yes", "on"):
            val = True
        elif s in ("0", "false", "no", "off"):
            val = False
        else:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    else:
        try:
            val = typ(str(raw).strip()) if typ is not int else int(float(str(raw).strip()))
        except ValueError:
            raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None
    if key in CHOICES and val not in CHOICES[key]:
        raise ConfigError(f"{key}: invalid value {val!r}; valid values are {', '.join(CHOICES[key])}")
    return val


def parse_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (p.strip() for p in line.split("=", 1))
        out[key] = _convert(key, val)
    return out


def load_file(path: str) -> dict:
    """Read a key=value file, or the config echo of a run manifest (JSON)."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        cfg = doc.get("config", doc)
        return {k: _convert(k, v) for k, v in cfg.items()}
    return parse_text(text)


def resolve(file_values: dict | None = None, overrides: dict | None = None, env=None) -> dict:
    """Merge defaults < file < environment (output dir only) < flag overrides."""
    env = os.environ if env is None else env
    cfg = {k: d for k, (_, d) in DEFAULTS.items()}
    cfg.update(file_values or {})
    if env.get(OUTPUT_ENV):
        cfg["output"] = env[OUTPUT_ENV]
    for k, v in (overrides or {}).items():
        cfg[k] = _convert(k, v)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    for key, choices in CHOICES.items():
        if cfg[key] not in choices:
            raise ConfigError(f"{key}: invalid value {cfg[key]!r}; valid values are {', '.join(choices)}")
    for key in ("k", "reps", "workers", "K", "K_warm", "restarts", "W", "rff_features", "segment_size"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be at least 1")
    for key in ("n", "n_test", "b", "order", "oracle_mc", "test_per_task"):
        if cfg[key] < 0:
            raise ConfigError(f"{key} must be nonnegative")
    if cfg["lambda0"] <= 0:
        raise ConfigError("lambda0 must be positive")
    if cfg["data"] == "csv" and not cfg["csv_path"]:
        raise ConfigError("data = csv needs csv_path")
