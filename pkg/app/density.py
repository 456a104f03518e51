"""Limit discriminant h, the density nu' = sqrt(-h) / (2 pi g), and its oracles.

The truncated model repeats a_L..a_{L+N-1} and b_L..b_{L+N-1} past index
L + N. It is N-periodic from L on, so its density mu'_L has the closed form
sqrt(-discr X^L_{L+N}) / (2 pi |S^L_{L+N}|) and serves as a cross-check of
nu' along a ladder of truncation points.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import numpy.typing as npt
from scipy.integrate import simpson

from app.errors import InsufficientSamplesError, NonEllipticError, QuadratureError
from app.jacobi_core import (
    CoefficientModel,
    FloatArray,
    IndexArray,
    det2,
    discriminant,
    eval_polynomials,
    n_step,
    op_norm,
    polynomial_alpha,
    solution_tail,
    transfer_stack,
)
from app.turan import DEFAULT_TOL, DEFAULT_WINDOW, ConvergenceMonitor, turan_profile
from app.uniform_diag import DELTA_MIN

logger = logging.getLogger(__name__)

DEFAULT_LADDER = tuple(2**e for e in range(4, 15))
QUADRATURE_TOL = 1e-2
# Rows of transfer matrices evaluated per block while monitoring h.
_BLOCK_CELLS = 2**18


class PointStatus(str, Enum):
    ok = "ok"
    not_converged = "not_converged"
    non_elliptic = "non_elliptic"


# ---------------------------------------------------------------------------
# Limit discriminant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HEstimate:
    """Trailing-window limits of discr X_{kN+i} over a grid."""

    x: FloatArray
    h: FloatArray
    converged: npt.NDArray[np.bool_]
    k_converged: IndexArray
    elliptic: npt.NDArray[np.bool_]
    elliptic_start: IndexArray
    sup_transfer_norm: float


def estimate_h_grid(
    model: CoefficientModel,
    N: int,
    i: int,
    xs: npt.ArrayLike,
    tol: float = DEFAULT_TOL,
    n_max: int = 100_000,
    window: int = DEFAULT_WINDOW,
    delta_min: float = DELTA_MIN,
) -> HEstimate:
    """Monitor discr X_{kN+i}(x) until a window of ``window`` values is calm.

    The spread is taken relative to max(1, |mean|), so h near zero is judged
    on an absolute scale. Points whose final value is >= -delta_min are not
    in the elliptic region; they still get an h.
    """
    if not 0 <= i < N:
        raise ValueError(f"residue {i} outside [0, {N})")
    grid = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    k0 = 1 if i == 0 else 0
    k_last = (n_max - N - i) // N
    if k_last - k0 + 1 < window:
        raise InsufficientSamplesError(max(k_last - k0 + 1, 0), window, "discriminant values")

    monitor = ConvergenceMonitor(grid.shape, window, tol, relative=False)
    last_bad = np.full(grid.shape, k0 - 1, dtype=np.int64)
    sup_norm = 0.0
    block = max(window, _BLOCK_CELLS // max(grid.size, 1))
    for lo in range(k0, k_last + 1, block):
        ks = np.arange(lo, min(lo + block, k_last + 1))
        X = transfer_stack(model, ks, N, i, grid)
        discr = discriminant(X)
        sup_norm = max(sup_norm, float(op_norm(X).max()))
        bad = discr >= -delta_min
        last_bad = np.where(bad.any(axis=0), ks[::-1][np.argmax(bad[::-1], axis=0)], last_bad)
        monitor.feed(ks, discr)
        if monitor.done:
            break

    h = monitor.value
    elliptic = h < -delta_min
    return HEstimate(
        x=grid,
        h=h,
        converged=monitor.converged,
        k_converged=monitor.k_converged,
        elliptic=elliptic,
        elliptic_start=last_bad + 1,
        sup_transfer_norm=sup_norm,
    )


def estimate_h(
    model: CoefficientModel,
    N: int,
    i: int,
    x: float,
    tol: float = DEFAULT_TOL,
    n_max: int = 100_000,
    window: int = DEFAULT_WINDOW,
) -> tuple[float, bool]:
    """(h, converged) at one point; h >= 0 marks a point outside the bands."""
    estimate = estimate_h_grid(model, N, i, [x], tol, n_max, window)
    return float(estimate.h[0]), bool(estimate.converged[0])


# ---------------------------------------------------------------------------
# Density profile
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityProfile:
    grid: FloatArray
    N: int
    i: int
    r: int
    g: FloatArray
    h: FloatArray
    nu_prime: FloatArray
    converged: npt.NDArray[np.bool_]
    status: list[str]
    chain_start: IndexArray
    sup_transfer_norm: float
    mu_L: dict[int, FloatArray] = field(default_factory=dict)

    @property
    def ladder(self) -> list[int]:
        return sorted(self.mu_L)

    def columns(self) -> list[str]:
        return ["x", "g", "h", "nu_prime", "converged", "status"] + [
            f"mu_L_{L}" for L in self.ladder
        ]

    def rows(self) -> list[list[object]]:
        out: list[list[object]] = []
        for j, x in enumerate(self.grid):
            row: list[object] = [
                float(x),
                float(self.g[j]),
                float(self.h[j]),
                float(self.nu_prime[j]),
                bool(self.converged[j]),
                self.status[j],
            ]
            row.extend(float(self.mu_L[L][j]) for L in self.ladder)
            out.append(row)
        return out


def density_profile(
    model: CoefficientModel,
    N: int,
    i: int,
    grid: npt.ArrayLike,
    r: int = 1,
    tol: float = DEFAULT_TOL,
    n_max: int = 100_000,
    window: int = DEFAULT_WINDOW,
    ladder: Sequence[int] = DEFAULT_LADDER,
    delta_min: float = DELTA_MIN,
) -> DensityProfile:
    """nu' on a grid, with the periodized values mu'_L for L = kN + i, k in ``ladder``.

    Points outside the elliptic region get status ``non_elliptic`` and NaN
    values; they never abort the profile. ``chain_start`` is the first index
    at which an r-level diagonalization chain exists at each point.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    xs = np.atleast_1d(np.asarray(grid, dtype=np.float64))
    h_est = estimate_h_grid(model, N, i, xs, tol, n_max, window, delta_min)
    elliptic = h_est.elliptic

    g = np.full(xs.shape, np.nan)
    g_ok = np.zeros(xs.shape, dtype=bool)
    if elliptic.any():
        turan = turan_profile(model, N, i, xs[elliptic], tol=tol, n_max=n_max, window=window)
        g[elliptic] = turan.g
        g_ok[elliptic] = turan.converged

    nu_prime = np.full(xs.shape, np.nan)
    nu_prime[elliptic] = np.sqrt(-h_est.h[elliptic]) / (2 * np.pi * g[elliptic])
    converged = elliptic & g_ok & h_est.converged
    status = [
        PointStatus.non_elliptic.value
        if not elliptic[j]
        else PointStatus.ok.value
        if converged[j]
        else PointStatus.not_converged.value
        for j in range(xs.size)
    ]
    outside = int((~elliptic).sum())
    if outside:
        logger.warning("%d of %d grid points are outside the elliptic region", outside, xs.size)

    mu_L: dict[int, FloatArray] = {}
    for k in ladder:
        L = k * N + i
        if L < 1 or L + 2 * N > n_max:
            continue
        values = np.full(xs.shape, np.nan)
        if elliptic.any():
            values[elliptic] = _periodized(model, N, L, xs[elliptic])
        mu_L[L] = values
    logger.info(
        "density profile: %d points, %d converged, %d ladder rungs",
        xs.size,
        int(converged.sum()),
        len(mu_L),
    )
    return DensityProfile(
        grid=xs,
        N=N,
        i=i,
        r=r,
        g=g,
        h=h_est.h,
        nu_prime=nu_prime,
        converged=converged,
        status=status,
        chain_start=h_est.elliptic_start + r - 1,
        sup_transfer_norm=h_est.sup_transfer_norm,
        mu_L=mu_L,
    )


# ---------------------------------------------------------------------------
# Truncation and periodization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncatedModel:
    """Coefficients of ``base`` below L + N, repeated N-periodically from L after that."""

    base: CoefficientModel
    L: int
    N: int

    def __post_init__(self) -> None:
        if self.L < 1 or self.N < 1:
            raise ValueError(f"need L >= 1 and N >= 1, got L={self.L}, N={self.N}")

    def fold(self, n: npt.ArrayLike) -> IndexArray:
        idx = np.asarray(n, dtype=np.int64)
        return np.where(idx >= self.L + self.N, self.L + (idx - self.L) % self.N, idx)

    def as_model(self) -> CoefficientModel:
        base = self.base
        return CoefficientModel(
            a=lambda n: base.coefficients(self.fold(n))[0],
            b=lambda n: base.coefficients(self.fold(n))[1],
            period_N=self.N,
            label=f"{base.label}|L={self.L}",
        )


def truncate(model: CoefficientModel, L: int, N: int) -> TruncatedModel:
    return TruncatedModel(base=model, L=L, N=N)


def _periodized(model: CoefficientModel, N: int, L: int, xs: FloatArray) -> FloatArray:
    """mu'_L on ``xs``; NaN where X^L_{L+N} is not elliptic."""
    truncated = truncate(model, L, N).as_model()
    discr = discriminant(n_step(truncated, L + N, N, xs))
    tail = solution_tail(truncated, xs, polynomial_alpha(truncated, xs), L + 2 * N, N + 2)
    # rows: p_{L+N-1}, p_{L+N}, ..., p_{L+2N}
    p = tail.mantissa
    logs = tail.log_scale
    ref = np.max(logs, axis=0)
    scaled = p * np.exp(logs - ref)
    turan = scaled[1] * scaled[N] - scaled[0] * scaled[N + 1]
    a_last, _ = truncated.coefficients(L + 2 * N - 1)
    with np.errstate(over="ignore"):
        S = a_last * turan * np.exp(2 * ref)
    out = np.full(xs.shape, np.nan)
    ok = discr < 0
    out[ok] = np.sqrt(-discr[ok]) / (2 * np.pi * np.abs(S[ok]))
    return out


def periodized_density(model: CoefficientModel, N: int, L: int, x: float) -> float:
    """mu'_L(x) = sqrt(-discr X^L_{L+N}) / (2 pi |a^L_{L+2N-1} D^L_{L+N}|)."""
    truncated = truncate(model, L, N).as_model()
    discr = float(discriminant(n_step(truncated, L + N, N, x)))
    if discr >= 0:
        raise NonEllipticError(x, index=L + N, discr=discr)
    return float(_periodized(model, N, L, np.array([x], dtype=np.float64))[0])


def ladder_gaps(profile: DensityProfile) -> dict[int, float]:
    """sup over converged points of |nu' - mu'_L|, per ladder rung."""
    gaps: dict[int, float] = {}
    for L in profile.ladder:
        diff = np.abs(profile.nu_prime - profile.mu_L[L])[profile.converged]
        diff = diff[np.isfinite(diff)]
        gaps[L] = float(diff.max()) if diff.size else math.nan
    return gaps


@dataclass(frozen=True)
class TruncationStability:
    """Measured gaps between X_L and X^L_{L+N}, their reference bounds and ratios."""

    L: int
    x: float
    ratio_defect: float
    discr_gap: float
    discr_reference: float
    matrix_gap: float
    matrix_reference: float
    turan_gap: float
    turan_reference: float

    @staticmethod
    def _constant(gap: float, reference: float) -> float:
        if reference == 0.0:
            return 0.0 if gap == 0.0 else math.inf
        return gap / reference

    @property
    def discr_constant(self) -> float:
        return self._constant(self.discr_gap, self.discr_reference)

    @property
    def matrix_constant(self) -> float:
        return self._constant(self.matrix_gap, self.matrix_reference)

    @property
    def turan_constant(self) -> float:
        return self._constant(self.turan_gap, self.turan_reference)


def truncation_stability(model: CoefficientModel, N: int, L: int, x: float) -> TruncationStability:
    """Compare X_L, discr X_L and D_L with their truncated counterparts at L + N.

    With c = a_{L+N-1}/a_{L-1} - 1, X^L_{L+N} = X_L diag(1 + c, 1), so the
    matrix gap is at most ||X_L|| |c| and the discriminant gap is of order
    ||X_L||^2 |c|. For D the reference adds |det X_L - 1| |D_L|.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    truncated = truncate(model, L, N).as_model()
    X = n_step(model, L, N, x)
    X_trunc = n_step(truncated, L + N, N, x)
    a, _ = model.coefficients(np.array([L - 1, L + N - 1]))
    c = float(a[1] / a[0] - 1.0)
    norm = float(op_norm(X))

    p = eval_polynomials(model, x, L + N).values()
    p_trunc = eval_polynomials(truncated, x, L + 2 * N).values()
    turan = float(p[L] * p[L + N - 1] - p[L - 1] * p[L + N])
    turan_trunc = float(
        p_trunc[L + N] * p_trunc[L + 2 * N - 1] - p_trunc[L + N - 1] * p_trunc[L + 2 * N]
    )
    v = np.array([p[L + N - 1], p[L + N]])

    return TruncationStability(
        L=L,
        x=float(x),
        ratio_defect=c,
        discr_gap=float(abs(discriminant(X_trunc) - discriminant(X))),
        discr_reference=norm**2 * abs(c),
        matrix_gap=float(op_norm(X - X_trunc)),
        matrix_reference=norm * abs(c),
        turan_gap=abs(turan_trunc - turan),
        turan_reference=norm * abs(c) * float(v @ v) + abs(float(det2(X)) - 1.0) * abs(turan),
    )


# ---------------------------------------------------------------------------
# Orthonormality check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GramReport:
    gram: FloatArray
    max_deviation: float
    total_mass: float
    error_estimate: float
    observed_order: float


def orthonormality_quadrature(
    profile: DensityProfile,
    model: CoefficientModel,
    j_max: int,
    tol: float = QUADRATURE_TOL,
) -> GramReport:
    """Gram matrix of p_0..p_{j_max} against nu' by composite Simpson on the grid.

    The grid must be uniform with (points - 1) divisible by 4, so the rule can
    be repeated on every second and every fourth point for a Richardson
    estimate; the observed order needs (points - 1) divisible by 8.
    """
    xs = profile.grid
    if not np.all(np.isfinite(profile.nu_prime)):
        raise ValueError("profile has points without a density value")
    intervals = xs.size - 1
    if intervals < 4 or intervals % 4:
        raise ValueError(f"need a grid with 4m + 1 points, got {xs.size}")
    if not np.allclose(np.diff(xs), xs[1] - xs[0]):
        raise ValueError("quadrature needs a uniform grid")

    p = eval_polynomials(model, xs, j_max).values()
    integrand = p[:, None, :] * p[None, :, :] * profile.nu_prime

    def rule(step: int) -> FloatArray:
        return simpson(integrand[..., ::step], x=xs[::step], axis=-1)

    gram = rule(1)
    coarse = rule(2)
    error = float(np.max(np.abs(gram - coarse)))
    order = math.nan
    if intervals % 8 == 0:
        coarser = rule(4)
        near = np.linalg.norm(gram - coarse)
        far = np.linalg.norm(coarse - coarser)
        if near > 0 and far > 0:
            order = float(np.log2(far / near))
    if error > tol:
        raise QuadratureError(f"Simpson error estimate {error:.3e} exceeds {tol:.3e}")
    deviation = float(np.max(np.abs(gram - np.eye(j_max + 1))))
    logger.info("Gram deviation %.3e, Simpson estimate %.3e, order %.2f", deviation, error, order)
    return GramReport(
        gram=gram,
        max_deviation=deviation,
        total_mass=float(gram[0, 0]),
        error_estimate=error,
        observed_order=order,
    )
