"""Run manifests: YAML config files merged with command-line overrides.

Config keys mirror ``ExperimentConfig`` field names.  Nested sections
``data`` and ``optimizer`` map onto ``SyntheticDatasetSpec`` and
``TrainConfig``.  Sweep-level keys (``strategies``, ``modes``, ``targets``,
``target_mode``, ``output_dir``, ``formats``) configure the manifest itself.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from . import aggregation
from .data import SyntheticDatasetSpec
from .errors import ConfigError
from .federation import ExperimentConfig
from .model import TrainConfig

DEFAULT_TARGETS = (0.75, 0.85, 0.95)
MODES = ("iid", "noniid")
FORMATS = ("csv", "json")

_EXPERIMENT_KEYS = {
    f.name for f in dataclasses.fields(ExperimentConfig)
} - {"data", "optimizer", "strategy", "mode", "targets"}
_DATA_KEYS = {f.name for f in dataclasses.fields(SyntheticDatasetSpec)} - {"seed"}
_OPTIMIZER_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_MANIFEST_KEYS = {"strategies", "modes", "targets", "target_mode", "output_dir", "formats"}


@dataclass(frozen=True)
class RunManifest:
    config: ExperimentConfig
    strategies: Tuple[str, ...] = aggregation.STRATEGIES
    modes: Tuple[str, ...] = MODES
    targets: Tuple[float, ...] = DEFAULT_TARGETS
    target_mode: str = "relative"
    output_dir: Path = Path("results")
    formats: Tuple[str, ...] = FORMATS

    def __post_init__(self):
        if not self.strategies:
            raise ConfigError("must not be empty", key="strategies")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("duplicate strategy", key="strategies")
        for s in self.strategies:
            if s not in aggregation.STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; expected one of {aggregation.STRATEGIES}", key="strategies")
        if not self.modes or len(set(self.modes)) != len(self.modes):
            raise ConfigError("must be non-empty and duplicate-free", key="modes")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}; expected one of {MODES}", key="modes")
        if self.target_mode not in ("relative", "absolute"):
            raise ConfigError("must be 'relative' or 'absolute'", key="target_mode")
        for t in self.targets:
            if not 0.0 <= t <= 1.0:
                raise ConfigError(f"target {t} outside [0, 1]", key="targets")
        for f in self.formats:
            if f not in FORMATS:
                raise ConfigError(f"unknown format {f!r}; expected subset of {FORMATS}", key="formats")
        if "csv" not in self.formats:
            raise ConfigError("csv output is required", key="formats")

    def to_dict(self) -> Dict[str, Any]:
        cfg = dataclasses.asdict(self.config)
        for k in ("strategy", "mode", "targets"):
            cfg.pop(k)
        cfg["hidden_dims"] = list(cfg["hidden_dims"])
        cfg["data"].pop("seed")
        return {
            **cfg,
            "strategies": list(self.strategies),
            "modes": list(self.modes),
            "targets": list(self.targets),
            "target_mode": self.target_mode,
            "output_dir": str(self.output_dir),
            "formats": list(self.formats),
        }


def _split_list(value, cast=str):
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    return tuple(cast(v) for v in value)


def _check_section(raw, allowed, section):
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigError("must be a mapping", key=section)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", key=f"{section}.{unknown[0]}" if section else unknown[0])
    return dict(raw)


def _build(cls, values, section):
    try:
        return cls(**values)
    except ConfigError as exc:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key=section) from exc


def manifest_from_dict(raw: Optional[Mapping[str, Any]]) -> RunManifest:
    raw = dict(raw or {})
    top = _check_section(raw, _EXPERIMENT_KEYS | _MANIFEST_KEYS | {"data", "optimizer"}, "")
    data_raw = _check_section(top.pop("data", None), _DATA_KEYS, "data")
    opt_raw = _check_section(top.pop("optimizer", None), _OPTIMIZER_KEYS, "optimizer")

    manifest_kw = {}
    if "strategies" in top:
        manifest_kw["strategies"] = _split_list(top.pop("strategies"))
    if "modes" in top:
        manifest_kw["modes"] = _split_list(top.pop("modes"))
    if "targets" in top:
        try:
            manifest_kw["targets"] = _split_list(top.pop("targets"), float)
        except ValueError as exc:
            raise ConfigError(str(exc), key="targets") from None
    if "target_mode" in top:
        manifest_kw["target_mode"] = top.pop("target_mode")
    if "output_dir" in top:
        manifest_kw["output_dir"] = Path(top.pop("output_dir"))
    if "formats" in top:
        manifest_kw["formats"] = _split_list(top.pop("formats"))

    if "hidden_dims" in top:
        top["hidden_dims"] = _split_list(top["hidden_dims"], int)
    for key, value in top.items():
        if isinstance(value, (Mapping, list)) and key != "hidden_dims":
            raise ConfigError("must be a scalar", key=key)

    data_spec = _build(SyntheticDatasetSpec, data_raw, "data")
    optimizer = _build(TrainConfig, opt_raw, "optimizer")
    config = _build(lambda **kw: ExperimentConfig(data=data_spec, optimizer=optimizer, **kw), top, "")
    return RunManifest(config=config, **manifest_kw)


def load_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with path.open() as fh:
        loaded = yaml.safe_load(fh)
    if loaded is None:
        return {}
    if not isinstance(loaded, Mapping):
        raise ConfigError("top level of config file must be a mapping")
    return dict(loaded)


def parse_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> RunManifest:
    """Load ``path`` (if given) and apply ``overrides`` on top; ``None`` values are ignored."""
    raw = load_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return manifest_from_dict(raw)
