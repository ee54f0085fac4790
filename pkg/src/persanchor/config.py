"""TOML run configuration.

Recognised tables and keys (all optional)::

    [ea]        gene_min, gene_max, gene_precision, crossover_prob,
                mutation_prob, mutation_mode, creep_sigma, reset_share,
                population, generations, tournament_size, elitism
    [cluster]   k_min, k_max, mass, standardize, min_silhouette, sample_size
    [fusion]    nms_iou_threshold, tta_scales, strategy
    [loss]      gamma, alpha, threshold_rpn, threshold_header, lambda,
                n_cls, n_reg, class_weights = {vehicle, pedestrian, cyclist}

Command-line flags take precedence over file values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .anchor_opt import EAParams
from .ensemble_eval import FusionConfig

DEFAULT_SEED = 2021

CLUSTER_DEFAULTS = {
    "k_min": 2,
    "k_max": 6,
    "mass": 0.99,
    "standardize": False,
    "min_silhouette": 0.5,
    "sample_size": 5000,
}

_TABLES = {"ea", "cluster", "fusion", "loss"}


class ConfigError(ValueError):
    pass


def load_config(path: str | Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(cfg) - _TABLES
    if unknown:
        raise ConfigError(f"{path}: unknown config tables {sorted(unknown)}")
    return cfg


def _known(table: Mapping, allowed, name: str) -> dict:
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    return dict(table)


def ea_params(cfg: Mapping, seed: int, **overrides) -> EAParams:
    fields = {f.name for f in dataclasses.fields(EAParams)} - {"seed"}
    values = _known(cfg.get("ea", {}), fields, "ea")
    values.update({k: v for k, v in overrides.items() if v is not None})
    params = EAParams(seed=seed, **values)
    try:
        params.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return params


def cluster_options(cfg: Mapping, **overrides) -> dict:
    values = dict(CLUSTER_DEFAULTS)
    values.update(_known(cfg.get("cluster", {}), CLUSTER_DEFAULTS, "cluster"))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return values


def fusion_config(cfg: Mapping, **overrides) -> FusionConfig:
    fields = {f.name for f in dataclasses.fields(FusionConfig)}
    values = _known(cfg.get("fusion", {}), fields, "fusion")
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "tta_scales" in values:
        values["tta_scales"] = tuple(float(s) for s in values["tta_scales"])
    try:
        return FusionConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def config_hash(effective: Mapping) -> str:
    """SHA-256 of the canonical JSON form of an effective configuration."""
    blob = json.dumps(effective, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()
