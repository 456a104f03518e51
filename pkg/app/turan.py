"""N-shifted Turan determinants and their limit g.

For a generalized eigenvector u,

    S_n = a_{n+N-1} (u_n u_{n+N-1} - u_{n-1} u_{n+N}),

and along a residue class n = kN + i the values S_{kN+i} converge on the
elliptic region to a limit whose absolute value g determines the density.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from app.errors import (
    InsufficientSamplesError,
    NonEllipticError,
    ScalingMismatchError,
    ZeroEigenvectorError,
)
from app.jacobi_core import (
    E,
    CoefficientModel,
    FloatArray,
    IndexArray,
    SolutionTable,
    discriminant,
    eval_polynomials,
    iter_solution,
    n_step,
    polynomial_alpha,
    transfer_stack,
)
from app.uniform_diag import DELTA_MIN

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 32
DEFAULT_TOL = 1e-6
RESIDUE_TOLERANCE = 1e-2
# Upper bound on mantissa entries held per streamed chunk.
_CHUNK_CELLS = 2**21


def unit_circle(count: int = 8) -> FloatArray:
    """``count`` equally spaced initial pairs (cos t, sin t)."""
    angles = 2 * np.pi * np.arange(count) / count
    return np.stack([np.cos(angles), np.sin(angles)], axis=-1)


def turan_window(
    table: SolutionTable, m: IndexArray, N: int
) -> tuple[FloatArray, FloatArray]:
    """(u_m u_{m+N-1} - u_{m-1} u_{m+N}) as a mantissa and a log scale per row."""
    rows = m - table.start
    if rows.size and (rows.min() < 1 or rows.max() + N > table.mantissa.shape[0] - 1):
        raise IndexError("window falls outside the solution table")
    mant, logs = table.mantissa, table.log_scale
    t1 = mant[rows] * mant[rows + N - 1]
    e1 = logs[rows] + logs[rows + N - 1]
    t2 = mant[rows - 1] * mant[rows + N]
    e2 = logs[rows - 1] + logs[rows + N]
    if not (np.all(np.isfinite(t1)) and np.all(np.isfinite(t2))):
        raise ScalingMismatchError("non-finite mantissa in Turan window")
    ref = np.maximum(e1, e2)
    return t1 * np.exp(e1 - ref) - t2 * np.exp(e2 - ref), ref


def shifted_turan(model: CoefficientModel, N: int, n: int, u: SolutionTable) -> FloatArray:
    """S_n for every column of ``u``; the table must cover u_{n-1}..u_{n+N}."""
    prev, _ = u.entry(n - 1)
    cur, _ = u.entry(n)
    if np.any((prev == 0.0) & (cur == 0.0)):
        raise ZeroEigenvectorError(f"(u_{n - 1}, u_{n}) = (0, 0)")
    a, _ = model.coefficients(n + N - 1)
    value, ref = turan_window(u, np.array([n]), N)
    with np.errstate(over="ignore"):
        out = a * value[0] * np.exp(ref[0])
    if not np.all(np.isfinite(out)):
        raise ScalingMismatchError(f"S_{n} does not fit in a float")
    return out


def turan_quadratic(
    model: CoefficientModel, N: int, n: int, x: float, u_prev: float, u_cur: float
) -> float:
    """S_n = a_{n+N-1} <E X_n v, v> with v = (u_{n-1}, u_n)."""
    if u_prev == 0.0 and u_cur == 0.0:
        raise ZeroEigenvectorError(f"(u_{n - 1}, u_{n}) = (0, 0)")
    v = np.array([u_prev, u_cur])
    a, _ = model.coefficients(n + N - 1)
    return float(a * (v @ (E @ n_step(model, n, N, x) @ v)))


def polynomial_turan(model: CoefficientModel, N: int, n: int, x: npt.ArrayLike) -> FloatArray:
    """p_n p_{n+N-1} - p_{n-1} p_{n+N} at x."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = eval_polynomials(model, x, n + N).values()
    return p[n] * p[n + N - 1] - p[n - 1] * p[n + N]


@dataclass(frozen=True)
class TuranTrace:
    i: int
    x: float
    alpha: tuple[float, float]
    ks: IndexArray
    values: FloatArray
    cauchy_profile: FloatArray


@dataclass(frozen=True)
class TuranProfile:
    """Per-column outcome of the convergence monitor."""

    x: FloatArray
    g: FloatArray
    converged: npt.NDArray[np.bool_]
    k_converged: IndexArray
    spread: FloatArray
    traces: list[TuranTrace] = field(default_factory=list)


@dataclass(frozen=True)
class TuranEstimate:
    g: float
    converged: bool
    trace: TuranTrace


def elliptic_points(
    model: CoefficientModel,
    N: int,
    i: int,
    xs: npt.ArrayLike,
    k: int,
    delta_min: float = DELTA_MIN,
) -> npt.NDArray[np.bool_]:
    """Whether discr X_{kN+i}(x) < -delta_min at each point."""
    grid = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    return discriminant(transfer_stack(model, [k], N, i, grid))[0] < -delta_min


def _check_elliptic(
    model: CoefficientModel, N: int, i: int, x: npt.ArrayLike, k: int, delta_min: float
) -> None:
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    bad = np.flatnonzero(~elliptic_points(model, N, i, xs, k, delta_min))
    if bad.size:
        discr = discriminant(transfer_stack(model, [k], N, i, xs[bad[0]]))[0]
        raise NonEllipticError(float(xs[bad[0]]), index=k, discr=float(discr))


class ConvergenceMonitor:
    """First calm trailing window per column, fed in consecutive blocks.

    A window is calm when (max - min) / scale < tol, where scale is |mean|
    (``relative``) or max(1, |mean|).
    """

    def __init__(
        self, cols: tuple[int, ...], window: int, tol: float, relative: bool = True
    ) -> None:
        if window < 1:
            raise ValueError("window must be positive")
        self.window = window
        self.tol = tol
        self.relative = relative
        self.converged = np.zeros(cols, dtype=bool)
        self.k_converged = np.full(cols, -1, dtype=np.int64)
        self.value = np.full(cols, np.nan)
        self.spread = np.full(cols, np.inf)
        self._recent = np.empty((0,) + cols)

    @property
    def done(self) -> bool:
        return bool(self.converged.all())

    def feed(self, ks: IndexArray, block: FloatArray) -> None:
        """Consume values for consecutive indices ``ks`` (axis 0 of ``block``)."""
        w = self.window
        values = np.concatenate([self._recent, block])
        if values.shape[0] >= w:
            wins = sliding_window_view(values, w, axis=0)
            scale = np.abs(wins.mean(axis=-1))
            if not self.relative:
                scale = np.maximum(scale, 1.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                spreads = (wins.max(axis=-1) - wins.min(axis=-1)) / scale
            spreads = np.where(np.isfinite(spreads), spreads, np.inf)
            ends = values[w - 1 :]
            end_k = ks[-1] - (spreads.shape[0] - 1) + np.arange(spreads.shape[0])
            calm = spreads < self.tol
            hit = calm.any(axis=0) & ~self.converged
            if hit.any():
                first = np.argmax(calm, axis=0)[None, ...]
                self.k_converged = np.where(hit, end_k[first[0]], self.k_converged)
                self.value = np.where(hit, np.take_along_axis(ends, first, axis=0)[0], self.value)
                self.spread = np.where(
                    hit, np.take_along_axis(spreads, first, axis=0)[0], self.spread
                )
                self.converged = self.converged | hit
            still = ~self.converged
            self.value = np.where(still, values[-1], self.value)
            self.spread = np.where(still, spreads[-1], self.spread)
        self._recent = values[max(0, values.shape[0] - (w - 1)) :]


def turan_profile(
    model: CoefficientModel,
    N: int,
    i: int,
    xs: npt.ArrayLike,
    alpha: npt.ArrayLike | None = None,
    tol: float = DEFAULT_TOL,
    n_max: int = 100_000,
    window: int = DEFAULT_WINDOW,
    keep_trace: bool = False,
) -> TuranProfile:
    """Monitor S_{kN+i} at many columns until each has a calm trailing window.

    A column converges at the first k whose trailing ``window`` values have
    relative spread (max - min)/|mean| below ``tol``; g is |S_{kN+i}| there.
    Columns that never converge report |S| at the last computed k.
    """
    if not 0 <= i < N:
        raise ValueError(f"residue {i} outside [0, {N})")
    grid = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    pairs = polynomial_alpha(model, grid) if alpha is None else np.asarray(alpha, dtype=np.float64)
    cols = np.broadcast_shapes(grid.shape, pairs.shape[:-1])
    grid = np.broadcast_to(grid, cols)
    pairs = np.broadcast_to(pairs, cols + (2,))

    k0 = 1 if i == 0 else 0
    k_last = (n_max - N - i) // N
    if k_last - k0 + 1 < window:
        raise InsufficientSamplesError(max(k_last - k0 + 1, 0), window, "Turan values")
    a_all, _ = model.sample(n_max)

    monitor = ConvergenceMonitor(cols, window, tol)
    history: list[FloatArray] = []
    next_k = k0
    chunk = int(max(4 * (N + 2), min(4096, _CHUNK_CELLS // max(1, math.prod(cols)))))
    for table in iter_solution(model, grid, pairs, n_max, chunk=chunk, overlap=N + 1):
        k_hi = min(k_last, (table.stop - N - i) // N)
        if k_hi < next_k:
            continue
        ks = np.arange(next_k, k_hi + 1)
        m = ks * N + i
        value, ref = turan_window(table, m, N)
        with np.errstate(over="ignore", invalid="ignore"):
            S = a_all[m + N - 1].reshape((-1,) + (1,) * len(cols)) * value * np.exp(ref)
        if keep_trace:
            history.append(S)
        monitor.feed(ks, S)
        next_k = k_hi + 1
        if monitor.done:
            break

    traces: list[TuranTrace] = []
    if keep_trace:
        all_s = np.concatenate(history)
        ks_all = np.arange(k0, k0 + all_s.shape[0])
        for idx in np.ndindex(*cols):
            series = all_s[(slice(None),) + idx]
            blocks = series[: series.size // window * window].reshape(-1, window)
            traces.append(
                TuranTrace(
                    i=i,
                    x=float(grid[idx]),
                    alpha=(float(pairs[idx][0]), float(pairs[idx][1])),
                    ks=ks_all,
                    values=series,
                    cauchy_profile=blocks.max(axis=1) - blocks.min(axis=1),
                )
            )
    if not monitor.done:
        logger.warning(
            "Turan determinant did not settle at %d of %d points (tol=%g, n_max=%d)",
            int((~monitor.converged).sum()),
            monitor.converged.size,
            tol,
            n_max,
        )
    return TuranProfile(
        x=np.array(grid),
        g=np.abs(monitor.value),
        converged=monitor.converged,
        k_converged=monitor.k_converged,
        spread=monitor.spread,
        traces=traces,
    )


def estimate_g(
    model: CoefficientModel,
    N: int,
    i: int,
    x: float,
    alpha: tuple[float, float] | None = None,
    tol: float = DEFAULT_TOL,
    n_max: int = 100_000,
    window: int = DEFAULT_WINDOW,
    delta_min: float = DELTA_MIN,
) -> TuranEstimate:
    """Limit g = lim |S_{kN+i}| at one elliptic point, with its trace."""
    _check_elliptic(model, N, i, x, (n_max - N - i) // N, delta_min)
    pair = None if alpha is None else np.asarray(alpha, dtype=np.float64)
    profile = turan_profile(model, N, i, [x], pair, tol, n_max, window, keep_trace=True)
    return TuranEstimate(
        g=float(profile.g[0]), converged=bool(profile.converged[0]), trace=profile.traces[0]
    )


@dataclass(frozen=True)
class ResidueConsistency:
    x: float
    g: dict[int, float]
    converged: dict[int, bool]
    spread: float


def residue_consistency(
    model: CoefficientModel,
    N: int,
    x: float,
    tol: float = DEFAULT_TOL,
    n_max: int = 100_000,
    residues: list[int] | None = None,
    carleman_divergent: bool = False,
    window: int = DEFAULT_WINDOW,
) -> ResidueConsistency:
    """g_i for several residues and their relative spread.

    When sum 1/a_n diverges the limits should agree; disagreement is logged
    as a warning, never raised.
    """
    chosen = list(range(N)) if residues is None else residues
    g: dict[int, float] = {}
    ok: dict[int, bool] = {}
    for i in chosen:
        estimate = estimate_g(model, N, i, x, tol=tol, n_max=n_max, window=window)
        g[i] = estimate.g
        ok[i] = estimate.converged
    values = np.array(list(g.values()))
    spread = float((values.max() - values.min()) / values[0])
    if carleman_divergent and spread > RESIDUE_TOLERANCE:
        logger.warning(
            "g differs across residues at x=%.6g: relative spread %.3g", x, spread
        )
    return ResidueConsistency(x=float(x), g=g, converged=ok, spread=spread)


@dataclass(frozen=True)
class EigenvectorBounds:
    x: float
    c_low: float
    c_high: float
    per_alpha_low: FloatArray
    per_alpha_high: FloatArray

    @property
    def c(self) -> float:
        return max(1.0 / self.c_low, self.c_high)


def eigenvector_bounds(
    model: CoefficientModel,
    N: int,
    i: int,
    x: float,
    alphas: npt.ArrayLike | None = None,
    n_max: int = 100_000,
    delta_min: float = DELTA_MIN,
) -> EigenvectorBounds:
    """Extremes of a_{n-1}(u_{n-1}^2 + u_n^2)/(u_0^2 + u_1^2) over n = kN+i <= n_max."""
    _check_elliptic(model, N, i, x, (n_max - i) // N, delta_min)
    pairs = unit_circle() if alphas is None else np.atleast_2d(np.asarray(alphas, dtype=np.float64))
    norm0 = np.sum(pairs**2, axis=-1)
    a_all, _ = model.sample(n_max)
    low = np.full(pairs.shape[0], np.inf)
    high = np.zeros(pairs.shape[0])
    next_k = 1 if i == 0 else 0
    chunk = max(8, min(4096, _CHUNK_CELLS // pairs.shape[0]))
    for table in iter_solution(model, x, pairs, n_max, chunk=chunk, overlap=1):
        k_hi = (table.stop - i) // N
        if k_hi < next_k:
            continue
        m = np.arange(next_k, k_hi + 1) * N + i
        rows = m - table.start
        mant, logs = table.mantissa, table.log_scale
        ref = np.maximum(logs[rows - 1], logs[rows])
        energy = (
            mant[rows - 1] ** 2 * np.exp(2 * (logs[rows - 1] - ref))
            + mant[rows] ** 2 * np.exp(2 * (logs[rows] - ref))
        )
        with np.errstate(over="ignore"):
            ratio = a_all[m - 1][:, None] * energy * np.exp(2 * ref) / norm0
        low = np.minimum(low, ratio.min(axis=0))
        high = np.maximum(high, ratio.max(axis=0))
        next_k = k_hi + 1
    return EigenvectorBounds(
        x=float(x),
        c_low=float(low.min()),
        c_high=float(high.max()),
        per_alpha_low=low,
        per_alpha_high=high,
    )
