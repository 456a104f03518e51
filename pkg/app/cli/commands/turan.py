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
    status_rows,
)
from app.schemas import FamilyKind, TuranPoint
from app.stolz import carleman_check
from app.turan import RESIDUE_TOLERANCE, elliptic_points, turan_profile

logger = logging.getLogger(__name__)


def residues(ctx: RunContext) -> list[int]:
    """Residues with an elliptic limit: all of them, or 1..N for a blend."""
    if ctx.config.family.kind == FamilyKind.blend:
        return list(range(1, ctx.config.family.N + 1))
    return list(range(ctx.period))


def _turan_chunk(
    ctx: RunContext, points: np.ndarray, carleman_divergent: bool | None
) -> list[TuranPoint]:
    num = ctx.config.numerics
    N = ctx.period
    g: dict[int, np.ndarray] = {}
    ok: dict[int, np.ndarray] = {}
    elliptic = np.ones(points.shape, dtype=bool)
    for i in residues(ctx):
        k_last = (num.n_max - N - i) // N
        elliptic &= elliptic_points(ctx.model, N, i, points, k_last, num.delta_min)
    for i in residues(ctx):
        g[i] = np.full(points.shape, np.nan)
        ok[i] = np.zeros(points.shape, dtype=bool)
        if elliptic.any():
            profile = turan_profile(
                ctx.model, N, i, points[elliptic], tol=num.tol, n_max=num.n_max, window=num.window
            )
            g[i][elliptic] = profile.g
            ok[i][elliptic] = profile.converged

    out = []
    for j, x in enumerate(points):
        if not elliptic[j]:
            out.append(TuranPoint(x=float(x), status="non_elliptic"))
            continue
        values = np.array([g[i][j] for i in g])
        spread = float((values.max() - values.min()) / values[0])
        converged = all(ok[i][j] for i in ok)
        out.append(
            TuranPoint(
                x=float(x),
                status="ok" if converged else "not_converged",
                g={str(i): finite(float(g[i][j])) for i in g},
                converged={str(i): bool(ok[i][j]) for i in ok},
                spread=finite(spread),
            )
        )
        if carleman_divergent and spread > RESIDUE_TOLERANCE:
            logger.warning("g differs across residues at x=%.6g: relative spread %.3g", x, spread)
    return out


def turan(
    config: ConfigOption,
    out: OutOption = None,
    threads: ThreadsOption = None,
    formats: FormatOption = None,
) -> None:
    """Limits g_i of the shifted Turan determinants for each residue."""
    ctx = prepare("turan", config, out, threads, formats)
    with guarded(ctx.out_dir, ctx.command):
        divergent = carleman_check(ctx.model, ctx.config.numerics.n_max).divergent
        points = map_chunks(
            lambda chunk: _turan_chunk(ctx, chunk, divergent), ctx.grid, ctx.threads
        )
        statuses = [p.status for p in points]
        check_majority(ctx.command, statuses)
        chosen = residues(ctx)
        columns = ["x", "status", *[f"g_{i}" for i in chosen], "spread"]
        rows = [
            [p.x, p.status, *[p.g.get(str(i)) for i in chosen], p.spread] for p in points
        ]
        spreads = [p.spread for p in points if p.spread is not None]
        summary = {
            "points": len(points),
            "residues": chosen,
            "carleman_divergent": divergent,
            "max_residue_spread": max(spreads, default=None),
        }
        finish(ctx, "turan", columns, rows, [p.model_dump() for p in points], summary)
        print_summary("turan", ["status", "points"], status_rows(statuses))
