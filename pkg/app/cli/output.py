import csv
import logging
import math
import subprocess
from collections.abc import Sequence
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import typer
from pydantic import BaseModel

from app.schemas import ErrorReport

logger = logging.getLogger(__name__)

PACKAGE = "stolz-jacobi"


def package_version() -> str:
    """Installed version, with ``git describe`` appended inside a checkout."""
    try:
        base = version(PACKAGE)
    except PackageNotFoundError:
        base = "0+unknown"
    root = Path(__file__).resolve().parents[2]
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=root,
            capture_output=True,
            text=True,
            check=False,
        )
    except OSError:
        return base
    if result.returncode != 0 or not result.stdout.strip():
        return base
    return f"{base}+g{result.stdout.strip()}"


def finite(value: float | None) -> float | None:
    """JSON has no NaN or infinity; those become null."""
    if value is None or not math.isfinite(value):
        return None
    return float(value)


def format_cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence[object]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    logger.info("wrote %s (%d rows)", path, len(rows))
    return path


def write_json(path: Path, report: BaseModel) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n")
    logger.info("wrote %s", path)
    return path


def report_error(out_dir: Path, report: ErrorReport) -> None:
    """Structured failure report on stderr and as error.json."""
    text = report.model_dump_json(indent=2)
    typer.echo(text, err=True)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "error.json").write_text(text + "\n")
