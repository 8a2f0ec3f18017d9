"""YAML experiment configuration with full defaulting.

A config file may set any subset of the keys in ``DEFAULTS``; unknown keys are
rejected so typos fail loudly instead of silently using a default.
"""
from __future__ import annotations

import copy
from pathlib import Path

import yaml

DEFAULTS: dict = {
    "geometry": {
        "environments": ["outdoor", "indoor"],
        "wavelength": 0.125,
        "path_loss_exponent": 2.0,
        "outdoor": {"big_distance_D": 500.0, "ring_radius_R": 30.0, "thetas": [1.0]},
        "indoor": {"big_distance_D": 6.0, "ring_radius_R": 10.0, "thetas": [1.2]},
        "ratio_start": 0.0,
        "ratio_stop": 10.0,
        "ratio_step": 0.25,
        "tol": 1e-4,
    },
    "synthesis": {
        "environment": "indoor",
        "nodes": 44,
        "extent": [14.0, 13.0],
        "layout_seed": 2007,
        "scatterer_count": 200,
        "tap_count": 50,
        "sampling_interval": None,
        "meas_per_link": 5,
        "drift_rate": 0.0,
        "noise_fraction": 0.01,
        "traces": None,
    },
    "attack": {
        "targets": 26,
        "scenarios": ["case1", "case2", "case3"],
        "models": ["ridge", "knn", "mlp"],
        "k_nearest": {"case1": [20, 30, 44], "case2": [10, 20, 30, 44], "case3": [None]},
        "key_points": 15,
        "hyperparams": {"ridge": {}, "knn": {}, "mlp": {}},
    },
    "fbch": {
        "helpers": [0, 1, 2, 3],
        "sessions": 26,
        "scenario": "case1",
        "k_nearest": 20,
        "models": ["mlp"],
        "adversary_knows_selection": True,
        "noise_fraction": 0.01,
        "agreement_sessions": 20,
        "max_rounds": 20,
    },
    "poisson": {
        "densities": [0.01, 0.1, 1.0, 10.0],
        "radii": [0.0625, 0.125, 1.0],
        "node_counts": [1, 2, 5, 10, 100],
        "mc_trials": 0,
        "mc_region_area": 100.0,
    },
    "output": {
        "write_dataset": True,
    },
}

# Leaves whose value is a free-form mapping rather than a fixed schema.
_OPEN_MAPPINGS = {("attack", "hyperparams", "ridge"), ("attack", "hyperparams", "knn"), ("attack", "hyperparams", "mlp")}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key: {'.'.join(map(str, here))}")
        if isinstance(base[key], dict) and here not in _OPEN_MAPPINGS:
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(map(str, here))} must be a mapping")
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _validate(cfg: dict) -> None:
    a = cfg["attack"]
    if a["targets"] < 1:
        raise ConfigError("attack.targets must be >= 1")
    for s in a["scenarios"]:
        if s not in ("case1", "case2", "case3"):
            raise ConfigError(f"unknown scenario {s!r}")
        if s not in a["k_nearest"] or not a["k_nearest"][s]:
            raise ConfigError(f"attack.k_nearest has no entry for {s}")
    for m in a["models"] + cfg["fbch"]["models"]:
        if m not in ("ridge", "knn", "mlp"):
            raise ConfigError(f"unknown model {m!r}")
    f = cfg["fbch"]
    if any(n < 0 for n in f["helpers"]):
        raise ConfigError("fbch.helpers must be >= 0")
    if f["sessions"] < 1:
        raise ConfigError("fbch.sessions must be >= 1")
    s = cfg["synthesis"]
    if s["nodes"] < 2 or s["meas_per_link"] < 1:
        raise ConfigError("synthesis needs >= 2 nodes and >= 1 measurement per link")
    if cfg["geometry"]["ratio_step"] <= 0:
        raise ConfigError("geometry.ratio_step must be > 0")


def build_config(overrides: dict | None = None) -> dict:
    cfg = _merge(DEFAULTS, overrides or {})
    _validate(cfg)
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the YAML file (if any), then ``overrides``."""
    data = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    cfg = _merge(DEFAULTS, data)
    cfg = _merge(cfg, overrides or {})
    _validate(cfg)
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)
