import logging

import numpy as np

from app.asymptotics import fit_sine_law, phase_limit_gap
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
from app.density import PointStatus, density_profile
from app.errors import JacobiError, UnsupportedFamilyError
from app.families import limit_matrix
from app.schemas import SineFitPoint
from app.uniform_diag import build_chain

logger = logging.getLogger(__name__)

COLUMNS = ["x", "status", "amplitude", "eta", "tail_rms", "phase_limit_gap", "proximity", "stale"]
CHAIN_RESTARTS = 3


def _limit(ctx: RunContext, x: float) -> np.ndarray | None:
    try:
        return limit_matrix(ctx.config.family, ctx.config.numerics.i, x)
    except (UnsupportedFamilyError, ValueError):
        return None


def _fit_chunk(ctx: RunContext, points: np.ndarray) -> list[SineFitPoint]:
    num = ctx.config.numerics
    profile = density_profile(
        ctx.model,
        ctx.period,
        num.i,
        points,
        r=num.r,
        tol=num.tol,
        n_max=num.n_max,
        window=num.window,
        ladder=(),
        delta_min=num.delta_min,
    )
    out: list[SineFitPoint] = []
    for j, x in enumerate(profile.grid):
        x = float(x)
        if profile.status[j] == PointStatus.non_elliptic.value:
            out.append(SineFitPoint(x=x, status=profile.status[j]))
            continue
        try:
            chain = build_chain(
                ctx.model,
                ctx.period,
                num.i,
                num.r,
                x,
                M_hint=int(profile.chain_start[j]) - num.r + 1,
                n_max=num.n_max,
                delta_min=num.delta_min,
                delta=num.delta_guard,
                restarts=CHAIN_RESTARTS,
            )
            limit = _limit(ctx, x)
            fit = fit_sine_law(
                ctx.model,
                ctx.period,
                num.i,
                x,
                chain,
                float(profile.nu_prime[j]),
                float(profile.h[j]),
                limit=limit,
            )
            gap = phase_limit_gap(chain, fit.limit)
        except (JacobiError, ValueError) as exc:
            logger.debug("sine-law fit failed at x=%.6g: %s", x, exc)
            out.append(SineFitPoint(x=x, status=status_of(exc)))
            continue
        out.append(
            SineFitPoint(
                x=x,
                status=profile.status[j],
                amplitude=fit.amplitude,
                eta=fit.eta,
                tail_rms=fit.tail_rms,
                phase_limit_gap=finite(gap),
                proximity=finite(fit.proximity),
                stale=fit.stale,
                ok=fit.tail_rms < num.fit_tol * fit.amplitude,
            )
        )
    return out


def asymptotics(
    config: ConfigOption,
    out: OutOption = None,
    threads: ThreadsOption = None,
    formats: FormatOption = None,
) -> None:
    """Sine-law fits of sqrt(a) p_n: amplitude, offset eta, tail residual, phase limit."""
    ctx = prepare("asymptotics", config, out, threads, formats)
    with guarded(ctx.out_dir, ctx.command):
        points = map_chunks(lambda chunk: _fit_chunk(ctx, chunk), ctx.grid, ctx.threads)
        statuses = [p.status for p in points]
        check_majority(ctx.command, statuses)
        fitted = [p for p in points if p.amplitude is not None]
        summary = {
            "points": len(points),
            "fitted": len(fitted),
            "within_tolerance": sum(p.ok for p in fitted),
            "max_tail_rms_ratio": max(
                (p.tail_rms / p.amplitude for p in fitted if p.tail_rms is not None and p.amplitude),
                default=None,
            ),
        }
        rows = [[getattr(p, name) for name in COLUMNS] for p in points]
        finish(ctx, "sinefit", COLUMNS, rows, [p.model_dump() for p in points], summary)
        print_summary("asymptotics", ["status", "points"], status_rows(statuses))
