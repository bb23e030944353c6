"""Plain ``key = value`` config files mapped onto flat dataclasses.

Tuples are written comma-separated; booleans as ``true``/``false``.  Blank
lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import dataclasses
import typing


class ConfigError(ValueError):
    pass


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in ("", "none"):
            return None
        return _coerce(raw, args[0], key)
    if origin in (tuple, list):
        (elem, *_rest) = typing.get_args(tp) or (str,)
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(_coerce(p, elem, key) for p in parts)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {tp.__name__}") from None
    return raw


def to_text(cfg) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in dataclasses.fields(cfg))


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def from_text(cls, text: str, **overrides):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in parse_kv(text).items():
        if key not in names:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}")
        kwargs[key] = _coerce(raw, hints[key], key)
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {cls.__name__}: {e}") from None


def load(cls, path, **overrides):
    with open(path, encoding="utf-8") as f:
        return from_text(cls, f.read(), **overrides)


def save(cfg, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_text(cfg))
