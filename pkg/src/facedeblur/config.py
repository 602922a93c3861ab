"""Flat ``section.field = value`` config files.

Sections: ``train`` (TrainConfig), ``gp`` (GpConfig), ``loss`` (LossWeights)
and ``net`` (NetworkConfig). Lines starting with ``#`` are comments.
Sequences are comma separated (``train.image_size = 112,96``); ``none``
clears an optional field.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .kernels import GpConfig
from .losses import LossWeights
from .model import NetworkConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


_NESTED = {"loss_weights", "gp"}


def _fields(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)
            if f.init and not (cls is TrainConfig and f.name in _NESTED)}


SECTIONS = {"train": TrainConfig, "gp": GpConfig, "loss": LossWeights, "net": NetworkConfig}


def _coerce(text: str, hint):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or type(hint).__name__ == "UnionType":
        inner = [a for a in args if a is not type(None)]
        if text.lower() == "none":
            return None
        return _coerce(text, inner[0])
    if origin in (tuple, list):
        parts = [p for p in text.replace(" ", "").split(",") if p]
        return origin(_coerce(p, args[0]) for p in parts)
    if hint is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def config_keys() -> list[str]:
    return [f"{s}.{name}" for s, cls in SECTIONS.items() for name in _fields(cls)]


def apply_overrides(train: TrainConfig, net: NetworkConfig, assignments: dict[str, str]):
    """Return new (train, net) configs with ``section.field`` string values applied."""
    pending: dict[str, dict] = {s: {} for s in SECTIONS}
    for key, raw in assignments.items():
        section, _, name = key.partition(".")
        if section not in SECTIONS or name not in _fields(SECTIONS[section]):
            raise ConfigError(f"unknown config key {key!r}")
        try:
            pending[section][name] = _coerce(raw, _fields(SECTIONS[section])[name])
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    try:
        gp = dataclasses.replace(train.gp, **pending["gp"])
        weights = dataclasses.replace(train.loss_weights, **pending["loss"])
        train = dataclasses.replace(train, gp=gp, loss_weights=weights, **pending["train"])
        net = dataclasses.replace(net, **pending["net"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return train, net


def parse_lines(lines) -> dict[str, str]:
    out = {}
    for n, ln in enumerate(lines, 1):
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        key, sep, value = ln.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key = value, got {ln!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path, train: TrainConfig | None = None, net: NetworkConfig | None = None):
    return apply_overrides(train or TrainConfig(), net or NetworkConfig(),
                           parse_lines(Path(path).read_text().splitlines()))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)


def dump_config(train: TrainConfig, net: NetworkConfig) -> str:
    objs = {"train": train, "gp": train.gp, "loss": train.loss_weights, "net": net}
    lines = [f"{s}.{name} = {_fmt(getattr(objs[s], name))}"
             for s, cls in SECTIONS.items() for name in _fields(cls)]
    return "\n".join(lines) + "\n"
