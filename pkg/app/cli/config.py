import json
import math
import tomllib
from pathlib import Path
from typing import Any

import typer
from pydantic import ValidationError

from app.schemas import RunConfig

CONFIG_ECHO = "config.toml"


def load_run_config(path: Path) -> RunConfig:
    """Parse a flat dotted-key TOML run file; exit 2 on any problem."""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        typer.echo(f"Config file not found: {path}", err=True)
        raise typer.Exit(2)
    except tomllib.TOMLDecodeError as exc:
        typer.echo(f"Config file {path} is not valid TOML: {exc}", err=True)
        raise typer.Exit(2)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        typer.echo(f"Invalid config {path}:\n{exc}", err=True)
        raise typer.Exit(2)


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return json.dumps(str(value))


def _flatten(data: dict[str, Any], prefix: str = "") -> list[tuple[str, Any]]:
    items: list[tuple[str, Any]] = []
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            items.extend(_flatten(value, f"{name}."))
        elif value is not None:
            items.append((name, value))
    return items


def dump_config(config: RunConfig) -> str:
    """The config as flat ``section.key = value`` lines; loading them gives it back."""
    data = config.model_dump(mode="json")
    return "".join(f"{key} = {_toml_value(value)}\n" for key, value in _flatten(data))


def save_config_echo(config: RunConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / CONFIG_ECHO
    with open(path, "w") as f:
        f.write(dump_config(config))
    return path
