"""Grid dispatch, failure accounting and artifact assembly shared by the commands."""

import logging
import time
from collections import Counter
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Optional, TypeVar

import numpy as np
import typer
from rich.console import Console
from rich.table import Table

from app import config as env
from app.cli.config import dump_config, load_run_config, save_config_echo
from app.cli.output import package_version, report_error, write_csv, write_json
from app.errors import (
    DegenerateRefinement,
    FitDegenerate,
    InsufficientSamplesError,
    MajorityFailureError,
    NonEllipticError,
    ZeroEntryError,
)
from app.families import make_family
from app.jacobi_core import CoefficientModel
from app.schemas import ErrorReport, OutputFormat, RunConfig, RunReport

logger = logging.getLogger(__name__)

# Grid points per work item; fixed so results do not depend on the thread count.
CHUNK_POINTS = 64
OK_STATUSES = {"ok", "not_converged"}

T = TypeVar("T")

console = Console()

ConfigOption = Annotated[Path, typer.Option("--config", help="Run config (flat dotted-key TOML)")]
OutOption = Annotated[Optional[Path], typer.Option("--out", help="Output directory")]
ThreadsOption = Annotated[Optional[int], typer.Option("--threads", help="Worker threads")]
FormatOption = Annotated[
    Optional[str], typer.Option("--format", help="Comma-separated output formats: csv,json")
]


@dataclass
class RunContext:
    command: str
    config: RunConfig
    model: CoefficientModel
    out_dir: Path
    formats: list[OutputFormat]
    threads: int
    started: float = field(default_factory=time.perf_counter)

    @property
    def grid(self) -> np.ndarray:
        return np.array(self.config.grid.points())

    @property
    def period(self) -> int:
        return self.config.family.period


def parse_formats(text: str | None, default: list[OutputFormat]) -> list[OutputFormat]:
    if text is None:
        return default
    try:
        return [OutputFormat(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError:
        typer.echo(f"Unknown output format in {text!r}; use csv and/or json.", err=True)
        raise typer.Exit(2)


def prepare(
    command: str,
    config_path: Path,
    out: Path | None,
    threads: int | None,
    formats: str | None,
) -> RunContext:
    config = load_run_config(config_path)
    out_dir = out or config.output.directory or env.default_output_dir()
    return RunContext(
        command=command,
        config=config,
        model=make_family(config.family),
        out_dir=out_dir,
        formats=parse_formats(formats, config.output.formats),
        threads=threads or env.default_threads(),
    )


def status_of(exc: Exception) -> str:
    """Per-point status string for a numerical failure."""
    if isinstance(exc, NonEllipticError):
        return "non_elliptic"
    if isinstance(exc, DegenerateRefinement):
        return "degenerate_refinement"
    if isinstance(exc, FitDegenerate):
        return "fit_degenerate"
    if isinstance(exc, ZeroEntryError):
        return "zero_entry"
    if isinstance(exc, InsufficientSamplesError):
        return "insufficient_samples"
    return "error"


def map_chunks(
    fn: Callable[[np.ndarray], list[T]], points: np.ndarray, threads: int
) -> list[T]:
    """Apply ``fn`` to fixed-size chunks of the grid; results keep grid order."""
    chunks = [points[j : j + CHUNK_POINTS] for j in range(0, points.size, CHUNK_POINTS)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(fn, chunks))
    return [item for chunk in results for item in chunk]


def check_majority(command: str, statuses: Sequence[str]) -> None:
    failed = [s for s in statuses if s not in OK_STATUSES]
    if 2 * len(failed) > len(statuses):
        raise MajorityFailureError(command, len(failed), len(statuses), dict(Counter(failed)))


@contextmanager
def guarded(ctx_out: Path, command: str) -> Iterator[None]:
    """Map failures to exit codes: 3 for a majority failure, 4 for anything unexpected."""
    try:
        yield
    except typer.Exit:
        raise
    except MajorityFailureError as exc:
        report_error(
            ctx_out,
            ErrorReport(
                command=command,
                error=str(exc),
                failed=exc.failed,
                total=exc.total,
                reasons=exc.reasons,
            ),
        )
        raise typer.Exit(3)
    except Exception:
        logger.exception("%s failed", command)
        raise typer.Exit(4)


def finish(
    ctx: RunContext,
    stem: str,
    columns: Sequence[str],
    rows: Sequence[Sequence[object]],
    records: list[dict],
    summary: dict,
) -> list[Path]:
    """Write config.toml and the requested CSV/JSON artifacts."""
    written = [save_config_echo(ctx.config, ctx.out_dir)]
    if OutputFormat.csv in ctx.formats:
        written.append(write_csv(ctx.out_dir / f"{stem}.csv", columns, rows))
    if OutputFormat.json in ctx.formats:
        written.append(write_json(ctx.out_dir / f"{stem}.json", build_report(ctx, summary, records)))
    return written


def build_report(ctx: RunContext, summary: dict, records: list[dict]) -> RunReport:
    return RunReport(
        command=ctx.command,
        version=package_version(),
        wall_time_s=time.perf_counter() - ctx.started,
        config=dump_config(ctx.config),
        summary=summary,
        records=records,
    )


def print_summary(title: str, headers: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    table = Table(*headers, title=title)
    for row in rows:
        table.add_row(*row)
    console.print(table)


def status_rows(statuses: Sequence[str]) -> list[list[str]]:
    counts = Counter(statuses)
    return [[status, str(count)] for status, count in sorted(counts.items())]
