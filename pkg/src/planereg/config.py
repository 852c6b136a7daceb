"""Text key-value configuration shared by the harness and the CLI.

Config files hold one ``key = value`` per line with ``#`` comments.  Every
run resolves its configuration against a typed schema (file values first,
then ``--set key=value`` overrides); unknown keys are rejected, and the fully
resolved result is written next to the run artifacts as ``run.lock`` so any
run can be reproduced from that single file.
"""

from __future__ import annotations

from dataclasses import dataclass


class ConfigError(ValueError):
    """A configuration file or override is malformed."""


@dataclass(frozen=True)
class Field:
    """One schema entry: value type, default, and help text."""

    type: str  # int | float | bool | str | ints
    default: object
    help: str

    def parse(self, key: str, text: str):
        text = text.strip()
        try:
            if self.type == "int":
                return int(text)
            if self.type == "float":
                return float(text)
            if self.type == "bool":
                if text.lower() in ("true", "1", "yes"):
                    return True
                if text.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(text)
            if self.type == "ints":
                return tuple(int(v) for v in text.split(",") if v.strip())
            return text
        except ValueError as exc:
            raise ConfigError(f"key `{key}`: cannot parse {text!r} as {self.type}") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def read_config_file(path) -> dict[str, str]:
    """Raw ``key = value`` pairs of a config file, without schema typing."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


def resolve(schema: dict[str, Field], file_values: dict[str, str] | None = None, overrides: dict[str, str] | None = None) -> dict:
    """Typed configuration from defaults, file values, and overrides."""
    resolved = {key: f.default for key, f in schema.items()}
    for source_name, source in (("config file", file_values), ("override", overrides)):
        for key, text in (source or {}).items():
            if key not in schema:
                raise ConfigError(f"unknown {source_name} key `{key}`")
            resolved[key] = schema[key].parse(key, text)
    return resolved


def format_config(values: dict) -> str:
    return "".join(f"{key} = {_format_value(val)}\n" for key, val in sorted(values.items()))


def write_lock_file(path, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(values))
