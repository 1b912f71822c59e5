"""Flat key=value configuration files shared by the CLI, simulator, and trainer.

Format: one `key = value` per line, `#` starts a comment, blank lines ignored.
Scalars are parsed as bool (true/false), int, float, then string. Lists use
bracket syntax `key = [a, b, c]`; items are parsed as scalars, and items
containing ':' (e.g. occlusion events `start:duration:object`) stay strings
for the consuming module to interpret.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Malformed configuration text; message carries the line number."""


Scalar = bool | int | float | str
Value = Scalar | list[Scalar]


def _parse_scalar(text: str) -> Scalar:
    lowered = text.lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict[str, Value]:
    values: dict[str, Value] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if value.startswith("["):
            if not value.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated list")
            inner = value[1:-1].strip()
            items = [item.strip() for item in inner.split(",")] if inner else []
            values[key] = [_parse_scalar(item) for item in items if item]
        else:
            values[key] = _parse_scalar(value)
    return values


def load_config(path: str | Path) -> dict[str, Value]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config_text(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def format_value(value: Value) -> str:
    if isinstance(value, list):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def dump_config(values: dict[str, Value]) -> str:
    return "".join(f"{key} = {format_value(value)}\n" for key, value in values.items())


def save_config(values: dict[str, Value], path: str | Path) -> None:
    Path(path).write_text(dump_config(values))
