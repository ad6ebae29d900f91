"""Shared plain-text configuration.

One flat ``key = value`` file carries camera intrinsics, loss weights,
optimizer settings, renderer parameters and paths; ``#`` starts a
comment.  Command-line flags override file values, file values override
defaults.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """A configuration file could not be parsed."""


def read_config(path) -> dict[str, str]:
    """Parse a key-value file into a flat string dict."""
    out: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def write_config(path, values: dict) -> None:
    lines = [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def get_float(cfg: dict, key: str, default: float | None = None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required config key {key!r}")
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"config key {key!r}: {cfg[key]!r} is not a number") from None


def get_int(cfg: dict, key: str, default: int | None = None) -> int:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required config key {key!r}")
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"config key {key!r}: {cfg[key]!r} is not an integer") from None
