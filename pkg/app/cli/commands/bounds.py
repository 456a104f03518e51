import logging

import numpy as np

from app.cli.output import finite
from app.cli.runner import (
    ConfigOption,
    FormatOption,
    OutOption,
    RunContext,
    ThreadsOption,
    check_majority,
    finish,
    guarded,
    map_chunks,
    prepare,
    print_summary,
    status_of,
    status_rows,
)
from app.errors import JacobiError
from app.schemas import BoundsPoint
from app.turan import eigenvector_bounds, unit_circle

logger = logging.getLogger(__name__)

COLUMNS = ["x", "status", "c_low", "c_high", "c"]
ANGLES = 8


def _bounds_chunk(ctx: RunContext, points: np.ndarray) -> list[BoundsPoint]:
    num = ctx.config.numerics
    pairs = unit_circle(ANGLES)
    out = []
    for x in points:
        try:
            bounds = eigenvector_bounds(
                ctx.model,
                ctx.period,
                num.i,
                float(x),
                pairs,
                n_max=num.n_max,
                delta_min=num.delta_min,
            )
        except JacobiError as exc:
            logger.debug("bounds failed at x=%.6g: %s", x, exc)
            out.append(BoundsPoint(x=float(x), status=status_of(exc)))
            continue
        out.append(
            BoundsPoint(
                x=float(x),
                status="ok",
                c_low=finite(bounds.c_low),
                c_high=finite(bounds.c_high),
                c=finite(bounds.c),
            )
        )
    return out


def bounds(
    config: ConfigOption,
    out: OutOption = None,
    threads: ThreadsOption = None,
    formats: FormatOption = None,
) -> None:
    """Two-sided bounds of a_{n-1}(u_{n-1}^2 + u_n^2) over 8 initial angles."""
    ctx = prepare("bounds", config, out, threads, formats)
    with guarded(ctx.out_dir, ctx.command):
        points = map_chunks(lambda chunk: _bounds_chunk(ctx, chunk), ctx.grid, ctx.threads)
        statuses = [p.status for p in points]
        check_majority(ctx.command, statuses)
        rows = [[getattr(p, name) for name in COLUMNS] for p in points]
        constants = [p.c for p in points if p.c is not None]
        summary = {"points": len(points), "angles": ANGLES, "max_c": max(constants, default=None)}
        finish(ctx, "bounds", COLUMNS, rows, [p.model_dump() for p in points], summary)
        print_summary("bounds", ["status", "points"], status_rows(statuses))
