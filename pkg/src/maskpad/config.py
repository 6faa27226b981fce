"""Flat key = value config files, overridable by command-line flags.

The file format is one ``key = value`` pair per line, ``#`` comments, blank
lines ignored.  Values are coerced to the dataclass field's annotated type;
tuples accept comma-separated entries.  Flags always win over file values.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import get_args, get_origin, get_type_hints


class ConfigError(ValueError):
    pass


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_kv_file(path: Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    return parse_kv_text(path.read_text())


def _coerce(raw: str, ftype) -> object:
    origin = get_origin(ftype)
    if origin in (tuple, list):
        parts = [p.strip() for p in raw.strip("()[]").split(",") if p.strip()]
        args = get_args(ftype)
        inner = args[0] if args else float
        vals = [_coerce(p, inner) for p in parts]
        return tuple(vals) if origin is tuple else vals
    if ftype is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if ftype is int:
        return int(raw)
    if ftype is float:
        return float(raw)
    if ftype is str:
        return raw
    # optional / unions: try int, then float, then leave as string
    for caster in (int, float):
        try:
            return caster(raw)
        except ValueError:
            continue
    return raw


def apply_overrides(instance, overrides: dict[str, str]):
    """Return a dataclass copy with string overrides coerced into place."""
    hints = get_type_hints(type(instance))
    names = {f.name for f in dataclasses.fields(instance)}
    updates = {}
    for key, raw in overrides.items():
        if key not in names:
            raise ConfigError(
                f"unknown config key {key!r} for {type(instance).__name__}"
            )
        updates[key] = _coerce(raw, hints[key])
    return dataclasses.replace(instance, **updates)


def snapshot(instance) -> str:
    lines = []
    for f in dataclasses.fields(instance):
        value = getattr(instance, f.name)
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
