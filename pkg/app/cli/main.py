import logging
from typing import Annotated, Optional

import typer
from rich.logging import RichHandler

from app import config as env
from app.cli.commands.asymptotics import asymptotics
from app.cli.commands.bounds import bounds
from app.cli.commands.density import density
from app.cli.commands.diagnose import diagnose
from app.cli.commands.turan import turan
from app.cli.output import package_version

app = typer.Typer(
    name="stolz",
    help="Jacobi matrices with slowly oscillating coefficients: density, asymptotics, diagnostics.",
    no_args_is_help=True,
)

app.command("density")(density)
app.command("asymptotics")(asymptotics)
app.command("diagnose")(diagnose)
app.command("turan")(turan)
app.command("bounds")(bounds)


def _version_callback(value: bool) -> None:
    if value:
        typer.echo(f"stolz-jacobi {package_version()}")
        raise typer.Exit()


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else env.default_log_level()
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=verbose)],
        force=True,
    )


@app.callback()
def main(
    version: Annotated[
        Optional[bool],
        typer.Option(
            "--version",
            "-v",
            callback=_version_callback,
            is_eager=True,
            help="Show version and exit.",
        ),
    ] = None,
    verbose: Annotated[
        bool, typer.Option("--verbose", help="Log numerical details at DEBUG level.")
    ] = False,
) -> None:
    configure_logging(verbose)
