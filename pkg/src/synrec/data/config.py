"""``key = value`` configuration files.

Keys are dotted, ``section.field``, where the section names a config dataclass
(``synth``, ``rq``, ``model``, ``train``). ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        out[key] = value
    return out


def format_kv(values: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items())


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not key=value")
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value.lower() in ("none", ""):
            return None
        return _coerce(value, args[0], key)
    try:
        if tp is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if tp is int:
            return int(value)
        if tp is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {getattr(tp, '__name__', tp)}") from None


def apply_section(instance, values: Mapping[str, str], section: str):
    """Copy of a dataclass ``instance`` with string ``values`` coerced onto its fields."""
    hints = typing.get_type_hints(type(instance))
    names = {f.name for f in dataclasses.fields(instance)}
    kw = {}
    for key, raw in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
        kw[key] = _coerce(raw, hints[key], f"{section}.{key}")
    try:
        return dataclasses.replace(instance, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] settings: {exc}") from None


def split_sections(flat: Mapping[str, str], sections: Iterable[str]) -> Dict[str, Dict[str, str]]:
    known = list(sections)
    out: Dict[str, Dict[str, str]] = {s: {} for s in known}
    for key, value in flat.items():
        section, sep, name = key.partition(".")
        if not sep or section not in out:
            raise ConfigError(f"unknown key {key!r}; keys look like <{'|'.join(known)}>.<field>")
        out[section][name] = value
    return out


def read_config(path: Optional[Union[str, Path]]) -> Dict[str, str]:
    if path is None:
        return {}
    p = Path(path)
    return parse_kv(p.read_text(encoding="utf-8"), str(p))
