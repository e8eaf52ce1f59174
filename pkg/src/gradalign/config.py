"""INI config files: one section per module, one key per dataclass field."""

from __future__ import annotations

import configparser
import dataclasses
import enum
import io
from pathlib import Path

from .baselines import SelectorKind
from .exceptions import ConfigError
from .grpo import BaselineMode, GRPOConfig, OptimizerKind
from .harness import ExperimentConfig
from .scenarios import ScenarioKind, ScenarioSpec
from .selector import Metric, SelectionConfig

__all__ = ["dump_config", "loads_config", "load_config", "apply_overrides", "SECTIONS"]

SECTIONS = {
    "scenario": ScenarioSpec,
    "selection": SelectionConfig,
    "grpo": GRPOConfig,
}
_ENUMS = {
    "kind": ScenarioKind,
    "metric": Metric,
    "optimizer": OptimizerKind,
    "baseline_mode": BaselineMode,
}
_OPTIONAL_INT = {"geometry_seed"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if name in _OPTIONAL_INT:
            return None if raw == "" else int(raw)
        if name == "selector":
            return SelectorKind.parse(raw)
        if name in _ENUMS:
            return _ENUMS[name](raw.upper())
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def _scalar_fields(obj):
    return [f for f in dataclasses.fields(obj) if f.name not in SECTIONS]


def dump_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["experiment"] = {f.name: _fmt(getattr(cfg, f.name)) for f in _scalar_fields(cfg)}
    for section in SECTIONS:
        obj = getattr(cfg, section)
        cp[section] = {f.name: _fmt(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _build(cls, values: dict, section: str):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        kwargs[key] = _parse(key, raw, getattr(defaults, key))
    try:
        return dataclasses.replace(defaults, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def _from_parser(cp: configparser.ConfigParser) -> ExperimentConfig:
    for name in cp.sections():
        if name != "experiment" and name not in SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
    parts = {s: _build(cls, dict(cp[s]) if cp.has_section(s) else {}, s) for s, cls in SECTIONS.items()}
    base = ExperimentConfig(**parts)
    known = {f.name for f in _scalar_fields(base)}
    kwargs = {}
    if cp.has_section("experiment"):
        for key, raw in cp["experiment"].items():
            if key not in known:
                raise ConfigError(f"unknown key [experiment] {key}")
            kwargs[key] = _parse(key, raw, getattr(base, key))
    return dataclasses.replace(base, **kwargs)


def loads_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return _from_parser(cp)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads_config(text)


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``section.key=value`` (or ``key=value`` for [experiment]) strings."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(dump_config(cfg))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        section, _, name = key.strip().rpartition(".")
        section = section or "experiment"
        if not cp.has_section(section):
            raise ConfigError(f"unknown config section [{section}]")
        if name not in cp[section]:
            raise ConfigError(f"unknown key [{section}] {name}")
        cp[section][name] = value.strip()
    return _from_parser(cp)
