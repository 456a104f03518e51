import numpy as np

from app.cli.output import finite
from app.cli.runner import (
    ConfigOption,
    FormatOption,
    OutOption,
    ThreadsOption,
    check_majority,
    finish,
    guarded,
    map_chunks,
    prepare,
    print_summary,
    status_rows,
)
from app.density import DensityProfile, density_profile, ladder_gaps
from app.schemas import DensityPoint


def _records(profile: DensityProfile) -> list[DensityPoint]:
    return [
        DensityPoint(
            x=float(x),
            status=profile.status[j],
            g=finite(float(profile.g[j])),
            h=finite(float(profile.h[j])),
            nu_prime=finite(float(profile.nu_prime[j])),
            converged=bool(profile.converged[j]),
            mu_L={str(L): finite(float(profile.mu_L[L][j])) for L in profile.ladder},
        )
        for j, x in enumerate(profile.grid)
    ]


def density(
    config: ConfigOption,
    out: OutOption = None,
    threads: ThreadsOption = None,
    formats: FormatOption = None,
) -> None:
    """Density nu' on the grid, with the periodized ladder mu'_L."""
    ctx = prepare("density", config, out, threads, formats)
    num = ctx.config.numerics
    with guarded(ctx.out_dir, ctx.command):

        def run(points: np.ndarray) -> list[DensityProfile]:
            return [
                density_profile(
                    ctx.model,
                    ctx.period,
                    num.i,
                    points,
                    r=num.r,
                    tol=num.tol,
                    n_max=num.n_max,
                    window=num.window,
                    ladder=num.ladder,
                    delta_min=num.delta_min,
                )
            ]

        profiles = map_chunks(run, ctx.grid, ctx.threads)
        points = [point for profile in profiles for point in _records(profile)]
        statuses = [p.status for p in points]

        gaps: dict[int, float] = {}
        for profile in profiles:
            for L, gap in ladder_gaps(profile).items():
                if np.isfinite(gap):
                    gaps[L] = max(gaps.get(L, 0.0), gap)
        summary = {
            "points": len(points),
            "converged": sum(p.converged for p in points),
            "sup_transfer_norm": max(p.sup_transfer_norm for p in profiles),
            "ladder_gaps": {str(L): gap for L, gap in sorted(gaps.items())},
        }
        check_majority(ctx.command, statuses)
        finish(
            ctx,
            "density",
            profiles[0].columns(),
            [row for profile in profiles for row in profile.rows()],
            [p.model_dump() for p in points],
            summary,
        )
        print_summary("density", ["status", "points"], status_rows(statuses))
