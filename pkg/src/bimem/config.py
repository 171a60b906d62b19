"""Flat JSON run configuration with hard-failing unknown keys.

One file drives the whole pipeline; a single ``seed`` key is the only source
of randomness anywhere. ``target_shift`` defaults to magnitude 1.5 along the
first feature axis and ``top_n`` to the batch size; ``refresh_interval``
(baselines, one epoch) and ``warmup_iterations`` (twenty epochs) resolve at
run time because they depend on the dataset size.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .adapt import AdaptConfig, METHODS
from .errors import ConfigError
from .memory import FlowConfig

FLOW_KEYS = (
    "flow_sm_to_st",
    "flow_sm_to_lt",
    "flow_st_to_lt",
    "flow_sm_from_st",
    "flow_sm_from_lt",
    "flow_st_from_lt",
)

DEFAULTS: dict = {
    "seed": 0,
    # synthetic benchmark
    "n_categories": 5,
    "dim": 8,
    "n_per_class": 100,
    "class_separation": 4.0,
    "target_shift": None,  # null: [1.5, 0, ..., 0]
    "target_rotation_deg": 25.0,
    "noise_sigma": 1.0,
    # source model
    "hidden_dim": 32,
    "source_epochs": 50,
    "source_lr": 0.05,
    "source_batch_size": 32,
    # adaptation
    "method": "bimem",
    "iterations": 2000,
    "batch_size": 32,
    "lr": 0.05,
    "gamma": 0.9,
    "gamma_prime": 0.99,
    "top_n": None,  # null: batch_size
    "queue_capacity": 256,
    "flow_sm_to_st": True,
    "flow_sm_to_lt": True,
    "flow_st_to_lt": True,
    "flow_sm_from_st": True,
    "flow_sm_from_lt": True,
    "flow_st_from_lt": True,
    "refresh_interval": None,  # null: one epoch
    "warmup_iterations": None,  # null: twenty epochs
    "confidence_quantile": 0.5,
    "eval_interval": 50,
}


def _require_int(resolved: dict, key: str, allow_none: bool = False) -> None:
    v = resolved[key]
    if v is None and allow_none:
        return
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"config key {key!r} must be an integer, got {v!r}")


def _require_number(resolved: dict, key: str) -> None:
    v = resolved[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"config key {key!r} must be a finite number, got {v!r}")
    resolved[key] = float(v)


def _require_bool(resolved: dict, key: str) -> None:
    if not isinstance(resolved[key], bool):
        raise ConfigError(f"config key {key!r} must be a boolean, got {resolved[key]!r}")


def resolve(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then file values, then overrides; unknown keys are errors."""
    resolved = dict(DEFAULTS)
    provided: dict = {}
    if path is not None:
        try:
            provided = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(provided, dict):
            raise ConfigError("config file must contain a JSON object")
    for source in (provided, overrides or {}):
        for key, value in source.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            resolved[key] = value

    for key in ("seed", "n_categories", "dim", "n_per_class", "hidden_dim",
                "source_epochs", "source_batch_size", "iterations", "batch_size",
                "queue_capacity", "eval_interval"):
        _require_int(resolved, key)
    _require_int(resolved, "top_n", allow_none=True)
    _require_int(resolved, "refresh_interval", allow_none=True)
    _require_int(resolved, "warmup_iterations", allow_none=True)
    for key in ("class_separation", "target_rotation_deg", "noise_sigma",
                "source_lr", "lr", "gamma", "gamma_prime", "confidence_quantile"):
        _require_number(resolved, key)
    for key in FLOW_KEYS:
        _require_bool(resolved, key)
    if resolved["method"] not in METHODS:
        raise ConfigError(
            f"config key 'method' must be one of {METHODS}, got {resolved['method']!r}"
        )

    if resolved["target_shift"] is None:
        shift = [0.0] * resolved["dim"]
        if resolved["dim"] >= 1:
            shift[0] = 1.5
        resolved["target_shift"] = shift
    shift = resolved["target_shift"]
    if (
        not isinstance(shift, list)
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in shift)
    ):
        raise ConfigError("config key 'target_shift' must be a list of numbers")
    if len(shift) != resolved["dim"]:
        raise ConfigError(
            f"config key 'target_shift' must have length dim={resolved['dim']}, got {len(shift)}"
        )
    resolved["target_shift"] = [float(v) for v in shift]

    if resolved["top_n"] is None:
        resolved["top_n"] = resolved["batch_size"]
    return resolved


def flow_config(resolved: dict) -> FlowConfig:
    return FlowConfig(*(resolved[key] for key in FLOW_KEYS))


def adapt_config(resolved: dict) -> AdaptConfig:
    """Build and validate the adaptation config from a resolved dict."""
    cfg = AdaptConfig(
        method=resolved["method"],
        iterations=resolved["iterations"],
        batch_size=resolved["batch_size"],
        lr=resolved["lr"],
        gamma=resolved["gamma"],
        gamma_prime=resolved["gamma_prime"],
        top_n=resolved["top_n"],
        queue_capacity=resolved["queue_capacity"],
        flows=flow_config(resolved),
        refresh_interval=resolved["refresh_interval"],
        warmup_iterations=resolved["warmup_iterations"],
        confidence_quantile=resolved["confidence_quantile"],
        eval_interval=resolved["eval_interval"],
        seed=resolved["seed"],
        hidden_dim=resolved["hidden_dim"],
    )
    cfg.validate()
    return cfg
