"""Plain-text experiment configuration.

A config file is ``key = value`` lines ('#' starts a comment). Top-level keys
set TrainConfig fields; dotted keys reach into the nested dataclasses
(``arch.dropout = 0.0``, ``weights.asr = 5``). Values parse by the field's
declared type. Environment variables override file values: upper-cased key
with '.' spelled '__' under the ``ACCENTASR_`` prefix, e.g.
``ACCENTASR_ARCH__DROPOUT=0.0``.

Precedence, lowest to highest: dataclass defaults, config file, environment,
explicit CLI flags.
"""

from __future__ import annotations

import os
from dataclasses import fields, replace
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .model import Architecture
from .training import TrainConfig

ENV_PREFIX = "ACCENTASR_"

# keys that only make sense as CLI arguments, never in a file
_RESERVED = ("mode",)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw key -> value strings, order-preserving, later keys win."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{source} line {lineno}: empty key")
        out[key] = value
    return out


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def env_overrides(environ=None) -> dict[str, str]:
    """Config keys found in the environment under the package prefix."""
    if environ is None:
        environ = os.environ
    out: dict[str, str] = {}
    for name, value in sorted(environ.items()):
        if name.startswith(ENV_PREFIX) and name != ENV_PREFIX.rstrip("_"):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out[key] = value
    return out


def _coerce(value: str, typ: str, key: str):
    try:
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        if typ == "bool":
            lowered = value.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if typ == "str":
            return value
        if typ.startswith("tuple"):
            parts = [p for p in value.replace(",", " ").split() if p]
            return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"config key '{key}': cannot parse {value!r} as {typ}") from None
    raise ConfigError(f"config key '{key}' has unsupported type {typ}")


def _field_types(cls) -> dict[str, str]:
    return {f.name: f.type for f in fields(cls)}


def build_train_config(mode: str, overrides: dict[str, str],
                       seed: int | None = None) -> TrainConfig:
    """TrainConfig from layered raw-string overrides.

    ``overrides`` should already be merged in precedence order (file first,
    then environment). ``seed`` wins over any 'seed' key when given.
    """
    top = _field_types(TrainConfig)
    arch_kw: dict = {}
    weight_kw: dict = {}
    top_kw: dict = {}
    for key, value in overrides.items():
        if key in _RESERVED:
            raise ConfigError(f"config key '{key}' is set by the command line")
        if key.startswith("arch."):
            sub = key[len("arch."):]
            types = _field_types(Architecture)
            if sub not in types:
                raise ConfigError(f"unknown config key '{key}'")
            arch_kw[sub] = _coerce(value, types[sub], key)
        elif key.startswith("weights."):
            sub = key[len("weights."):]
            types = _field_types(LossWeights)
            if sub not in types:
                raise ConfigError(f"unknown config key '{key}'")
            weight_kw[sub] = _coerce(value, types[sub], key)
        elif key in ("arch", "weights"):
            raise ConfigError(f"config key '{key}' needs a subfield, e.g. '{key}.x'")
        elif key in top:
            top_kw[key] = _coerce(value, top[key], key)
        else:
            raise ConfigError(f"unknown config key '{key}'")
    if seed is not None:
        top_kw["seed"] = seed
    cfg = TrainConfig(mode=mode, **top_kw)
    if arch_kw:
        cfg = replace(cfg, arch=replace(cfg.arch, **arch_kw))
    if weight_kw:
        cfg = replace(cfg, weights=replace(cfg.weights, **weight_kw))
    return cfg


def load_train_config(mode: str, config_path: str | Path | None = None,
                      seed: int | None = None, environ=None) -> TrainConfig:
    """File -> environment -> explicit seed, in that precedence order."""
    merged: dict[str, str] = {}
    if config_path is not None:
        merged.update(parse_config_file(config_path))
    merged.update(env_overrides(environ))
    return build_train_config(mode, merged, seed=seed)
