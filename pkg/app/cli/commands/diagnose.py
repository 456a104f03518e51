import logging

import numpy as np

from app.cli.config import save_config_echo
from app.cli.output import finite, write_csv, write_json
from app.cli.runner import (
    ConfigOption,
    FormatOption,
    OutOption,
    RunContext,
    ThreadsOption,
    build_report,
    check_majority,
    guarded,
    map_chunks,
    prepare,
    print_summary,
    status_of,
)
from app.errors import JacobiError
from app.jacobi_core import CoefficientModel
from app.schemas import CarlemanRecord, OutputFormat, ReconstructionRecord, StolzRecord
from app.stolz import StolzReport, carleman_check, stolz_diagnose, transfer_entry_grid
from app.uniform_diag import build_chain, reconstruct_check

logger = logging.getLogger(__name__)

CHAIN_RESTARTS = 3
SPAN_LENGTHS = (1, 10, 100)


def _entry_sequences(
    model: CoefficientModel, N: int, i: int, length: int
) -> dict[str, np.ndarray]:
    """a_{n-1}/a_n, b_n/a_n and 1/a_n along n = kN + i."""
    first = 1 if i == 0 else 0
    n = np.arange(first, first + length) * N + i
    a_prev, _ = model.coefficients(n - 1)
    a, b = model.coefficients(n)
    return {"a_ratio": a_prev / a, "b_over_a": b / a, "inv_a": 1.0 / a}


def _stolz_record(target: str, report: StolzReport) -> StolzRecord:
    return StolzRecord(
        target=target,
        r=report.r,
        s=report.s,
        membership=report.membership.value,
        tail_slopes={str(j): finite(v) for j, v in report.tail_slopes.items()},
        totals={str(j): finite(v) for j, v in report.totals().items()},
    )


def _stolz_records(ctx: RunContext) -> list[StolzRecord]:
    num, spec = ctx.config.numerics, ctx.config.stolz
    ns, B = transfer_entry_grid(ctx.model, ctx.period, num.i, ctx.grid, spec.length)
    first = max(int(ns[0]), 1)
    targets: dict[str, tuple[np.ndarray, bool]] = {"transfer": (B, True)}
    for name, seq in _entry_sequences(ctx.model, ctx.period, num.i, spec.length).items():
        targets[name] = (seq, False)
    records = []
    for r in range(1, spec.r_max + 1):
        for s in range(r):
            for name, (values, matrix_valued) in targets.items():
                try:
                    report = stolz_diagnose(
                        values, r, s, matrix_valued=matrix_valued, first_index=first
                    )
                except JacobiError as exc:
                    logger.warning(
                        "Stolz diagnosis of %s at (%d, %d) failed: %s", name, r, s, exc
                    )
                    continue
                records.append(_stolz_record(name, report))
    return records


def _reconstruction(ctx: RunContext, points: np.ndarray) -> list[ReconstructionRecord]:
    num, spec = ctx.config.numerics, ctx.config.stolz
    out = []
    for x in points:
        x = float(x)
        try:
            chain = build_chain(
                ctx.model,
                ctx.period,
                num.i,
                num.r,
                x,
                n_max=num.n_max,
                delta_min=num.delta_min,
                delta=num.delta_guard,
                restarts=CHAIN_RESTARTS,
            )
            worst, span = 0.0, (chain.M + 1, chain.M)
            for length in sorted({*SPAN_LENGTHS, spec.reconstruction_span}):
                m = chain.M + 1
                n = min(m + length - 1, chain.k_max)
                result = reconstruct_check(chain, ctx.model, m, n)
                if result.max_norm_deviation >= worst:
                    worst, span = result.max_norm_deviation, (m, n)
        except (JacobiError, ValueError) as exc:
            out.append(ReconstructionRecord(x=x, status=status_of(exc)))
            continue
        out.append(
            ReconstructionRecord(
                x=x, status="ok", M=chain.M, worst_deviation=worst, worst_span=span
            )
        )
    return out


def diagnose(
    config: ConfigOption,
    out: OutOption = None,
    threads: ThreadsOption = None,
    formats: FormatOption = None,
) -> None:
    """Stolz-class diagnostics, the Carleman flag and the reconstruction check."""
    ctx = prepare("diagnose", config, out, threads, formats)
    with guarded(ctx.out_dir, ctx.command):
        stolz = _stolz_records(ctx)
        carleman = carleman_check(ctx.model, ctx.config.numerics.n_max)
        carleman_record = CarlemanRecord(
            n_max=carleman.n_max,
            partial_sum=carleman.partial_sum,
            tail_slope=finite(carleman.tail_slope),
            divergent=carleman.divergent,
        )
        recon = map_chunks(lambda chunk: _reconstruction(ctx, chunk), ctx.grid, ctx.threads)
        check_majority(ctx.command, [p.status for p in recon])

        verdicts = {f"{rec.target}:{rec.r},{rec.s}": rec.membership for rec in stolz}
        deviations = [p.worst_deviation for p in recon if p.worst_deviation is not None]
        save_config_echo(ctx.config, ctx.out_dir)
        if OutputFormat.json in ctx.formats:
            write_json(
                ctx.out_dir / "stolz.json",
                build_report(ctx, {"membership": verdicts}, [r.model_dump() for r in stolz]),
            )
            write_json(
                ctx.out_dir / "carleman.json",
                build_report(ctx, carleman_record.model_dump(), []),
            )
            write_json(
                ctx.out_dir / "reconstruction.json",
                build_report(
                    ctx,
                    {"worst_deviation": max(deviations, default=None)},
                    [p.model_dump() for p in recon],
                ),
            )
        if OutputFormat.csv in ctx.formats:
            write_csv(
                ctx.out_dir / "stolz.csv",
                ["target", "r", "s", "membership"],
                [[rec.target, rec.r, rec.s, rec.membership] for rec in stolz],
            )
            write_csv(
                ctx.out_dir / "reconstruction.csv",
                ["x", "status", "M", "worst_deviation"],
                [[p.x, p.status, p.M, p.worst_deviation] for p in recon],
            )
        print_summary(
            "diagnose",
            ["target", "r", "s", "membership"],
            [[rec.target, str(rec.r), str(rec.s), rec.membership] for rec in stolz],
        )
        if carleman.divergent is None:
            verdict = "inconclusive"
        else:
            verdict = "divergent" if carleman.divergent else "convergent"
        slope = "n/a" if carleman.tail_slope is None else f"{carleman.tail_slope:.3f}"
        print_summary(
            "carleman",
            ["sum 1/a_n", "tail slope", "verdict"],
            [[f"{carleman.partial_sum:.6g}", slope, verdict]],
        )
