"""Plain-text key-value config files (manifests, experiment configs).

Format: one `key = value` per line, `#` comments, blank lines ignored.
Values stay strings; helpers coerce on demand.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict:
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        if key in out:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_config(path) -> dict:
    return parse_kv(Path(path).read_text())


def write_config(path, values: dict):
    lines = [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def require(cfg: dict, key: str, cast=str):
    if key not in cfg:
        raise ConfigError(f"missing required config key {key!r}")
    try:
        return cast(cfg[key])
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: {e}") from None


def get(cfg: dict, key: str, default, cast=None):
    if key not in cfg:
        return default
    cast = cast or type(default)
    if cast is bool:
        return cfg[key].lower() in ("1", "true", "yes", "on")
    return cast(cfg[key])
