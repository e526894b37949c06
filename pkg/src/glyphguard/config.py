"""Flat ``key = value`` configuration files.

Keys are namespaced (``graph.``, ``embed.``, ``model.``, ``attack.``,
``augment.``, ``eval.``). Blank lines and ``#`` comments are ignored. Values
stay strings here; callers coerce them with the type of the flag they back.
"""
from __future__ import annotations

from pathlib import Path

NAMESPACES = ("graph", "embed", "model", "attack", "augment", "eval", "serve")


class ConfigError(ValueError):
    pass


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        ns, dot, name = key.partition(".")
        if not dot or not name or ns not in NAMESPACES:
            raise ConfigError(f"{source}:{lineno}: key {key!r} must be namespaced as one of {NAMESPACES}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def coerce(value: str, kind):
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read {value!r} as {kind.__name__}") from exc
