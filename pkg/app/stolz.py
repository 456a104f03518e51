"""Finite differences of grid-function sequences and slow-oscillation diagnostics.

A sequence x_n of functions on a compact set K is slowly oscillating of order
(r, s) when, for every j in 1..r-s, the sums over n of

    sup_K |Delta^j x_n| ** (r / (j + s))

are finite. Finite data cannot prove this, so ``stolz_diagnose`` fits the
decay rate of each summand and reports a three-valued verdict.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt
from scipy.special import comb

from app.errors import InsufficientSamplesError
from app.jacobi_core import CoefficientModel, FloatArray, IndexArray, op_norm, transfer

logger = logging.getLogger(__name__)

MIN_TAIL_POINTS = 16
MIN_BLOCKS = 3
# Residual RMS (natural log units) below which a slope fit counts as good.
GOOD_FIT_RESIDUAL = 0.5
# Carleman tail slopes above -1 - margin are read as divergent.
CARLEMAN_MARGIN = 0.05


class Membership(str, Enum):
    consistent = "consistent"
    inconsistent = "inconsistent"
    inconclusive = "inconclusive"


@dataclass(frozen=True)
class DiffTable:
    base: FloatArray
    max_order: int
    diffs: list[FloatArray]

    def __getitem__(self, j: int) -> FloatArray:
        return self.diffs[j]


@dataclass(frozen=True)
class TailFit:
    slope: float
    residual: float
    blocks: int


@dataclass(frozen=True)
class StolzReport:
    r: int
    s: int
    partial_sums: dict[int, FloatArray]
    tail_slopes: dict[int, float]
    fit_residuals: dict[int, float]
    membership: Membership

    def totals(self) -> dict[int, float]:
        return {j: float(sums[-1]) for j, sums in self.partial_sums.items()}


@dataclass(frozen=True)
class CarlemanReport:
    n_max: int
    partial_sum: float
    tail_slope: float | None
    divergent: bool | None


def build_diff_table(xs: npt.ArrayLike, j_max: int) -> DiffTable:
    """Forward differences Delta^0..Delta^{j_max} along the first axis."""
    if j_max < 0:
        raise ValueError("j_max must be non-negative")
    base = np.asarray(xs)
    if not np.issubdtype(base.dtype, np.inexact):
        base = base.astype(np.float64)
    if base.shape[0] <= j_max:
        raise InsufficientSamplesError(base.shape[0], j_max + 1, "sequence terms")
    diffs = [base]
    for _ in range(j_max):
        diffs.append(np.diff(diffs[-1], axis=0))
    return DiffTable(base=base, max_order=j_max, diffs=diffs)


def leibniz_check(xs: npt.ArrayLike, ys: npt.ArrayLike, j: int) -> float:
    """Largest deviation between both sides of the discrete Leibniz rule

        Delta^j(x y)_n = sum_k C(j, k) Delta^{j-k} x_n Delta^k y_{n+j-k}.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    length = min(x.shape[0], y.shape[0])
    if length <= j:
        raise InsufficientSamplesError(length, j + 1, "sequence terms")
    x, y = x[:length], y[:length]
    lhs = np.diff(x * y, n=j, axis=0)
    rhs = np.zeros_like(lhs)
    for k in range(j + 1):
        dx = np.diff(x, n=j - k, axis=0)[: length - j]
        dy = np.diff(y, n=k, axis=0)[j - k : length - k]
        rhs += comb(j, k, exact=True) * dx * dy
    return float(np.max(np.abs(lhs - rhs)))


def sup_norm(values: npt.ArrayLike, matrix_valued: bool = False) -> FloatArray:
    """sup over the grid of |value|, one entry per sequence position."""
    arr = np.asarray(values)
    mags = op_norm(arr) if matrix_valued else np.abs(arr)
    if mags.ndim == 1:
        return mags.astype(np.float64)
    return mags.reshape(mags.shape[0], -1).max(axis=1)


def fit_tail_slope(summand: npt.ArrayLike, first_index: int = 1) -> TailFit:
    """Log-log decay rate of a non-negative sequence.

    The tail is the upper half of the logarithmic index range, n >= sqrt(n_last),
    cut into dyadic blocks [2^k, 2^{k+1}). Slopes come from a least-squares
    line through the logs of the block means, which averages out oscillating
    factors. A plain fit over the last half of the indices would follow those
    oscillations instead.

    Needs at least ``MIN_TAIL_POINTS`` indices with n >= sqrt(n_last) and
    ``MIN_BLOCKS`` complete dyadic blocks, otherwise raises
    ``InsufficientSamplesError``. A zero mean in the last block gives a slope
    of -inf.
    """
    if first_index < 1:
        raise ValueError("first_index must be >= 1 for a log-log fit")
    values = np.asarray(summand, dtype=np.float64)
    n = first_index + np.arange(values.size)
    n_last = int(n[-1]) if values.size else 0
    lo = max(math.isqrt(n_last), first_index, 1)
    tail_points = int(np.count_nonzero(n >= lo))
    if tail_points < MIN_TAIL_POINTS:
        raise InsufficientSamplesError(tail_points, MIN_TAIL_POINTS, "tail points")

    centres, means = [], []
    k = max(0, (lo - 1).bit_length())
    while 2 ** (k + 1) - 1 <= n_last:
        block = (n >= 2**k) & (n < 2 ** (k + 1))
        centres.append(math.sqrt(2**k * (2 ** (k + 1) - 1)))
        means.append(float(values[block].mean()))
        k += 1
    if len(means) < MIN_BLOCKS:
        raise InsufficientSamplesError(len(means), MIN_BLOCKS, "dyadic tail blocks")

    mean_arr = np.array(means)
    positive = mean_arr > 0
    if not positive[-1]:
        return TailFit(slope=-math.inf, residual=0.0, blocks=len(means))
    if positive.sum() < 2:
        return TailFit(slope=math.nan, residual=math.inf, blocks=len(means))
    log_n = np.log(np.array(centres)[positive])
    log_m = np.log(mean_arr[positive])
    slope, intercept = np.polyfit(log_n, log_m, 1)
    residual = float(np.sqrt(np.mean((slope * log_n + intercept - log_m) ** 2)))
    return TailFit(slope=float(slope), residual=residual, blocks=len(means))


def stolz_diagnose(
    xs: npt.ArrayLike,
    r: int,
    s: int = 0,
    *,
    matrix_valued: bool = False,
    first_index: int = 1,
) -> StolzReport:
    """Partial sums and tail slopes of the order-(r, s) defining series.

    ``xs`` has the sequence position on axis 0 and grid (and, for
    ``matrix_valued``, trailing 2x2) axes after it.
    """
    if r < 1 or not 0 <= s <= r - 1:
        raise ValueError(f"need r >= 1 and 0 <= s <= r-1, got r={r}, s={s}")
    table = build_diff_table(xs, r - s)
    partial_sums: dict[int, FloatArray] = {}
    slopes: dict[int, float] = {}
    residuals: dict[int, float] = {}
    for j in range(1, r - s + 1):
        summand = sup_norm(table[j], matrix_valued) ** (r / (j + s))
        partial_sums[j] = np.cumsum(summand)
        fit = fit_tail_slope(summand, first_index)
        slopes[j] = fit.slope
        residuals[j] = fit.residual

    if all(slope < -1.0 for slope in slopes.values()):
        membership = Membership.consistent
    elif any(
        slopes[j] >= -1.0 and residuals[j] < GOOD_FIT_RESIDUAL for j in slopes
    ):
        membership = Membership.inconsistent
    else:
        membership = Membership.inconclusive
    logger.debug("order (%d, %d): slopes %s -> %s", r, s, slopes, membership.value)
    return StolzReport(
        r=r,
        s=s,
        partial_sums=partial_sums,
        tail_slopes=slopes,
        fit_residuals=residuals,
        membership=membership,
    )


def transfer_entry_grid(
    model: CoefficientModel, N: int, i: int, grid: npt.ArrayLike, length: int
) -> tuple[IndexArray, FloatArray]:
    """B_{nN+i}(x) for ``length`` consecutive n and every grid point.

    Membership of a_{n-1}/a_n, b_n/a_n and 1/a_n carries over to the entries
    of B_n on any compact set, so the matrices are diagnosed directly.
    """
    first = 1 if i == 0 else 0
    ns = np.arange(first, first + length)
    xs = np.asarray(grid, dtype=np.float64)
    return ns, transfer(model, (ns * N + i)[:, None], xs[None, :])


def carleman_check(model: CoefficientModel, n_max: int) -> CarlemanReport:
    """Partial sum of 1/a_n and a tail-slope reading of its divergence.

    The sum is always reported. When the sample is too short for a tail fit,
    ``tail_slope`` and ``divergent`` are both None.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    a, _ = model.sample(n_max)
    reciprocal = 1.0 / a
    partial_sum = float(reciprocal.sum())
    try:
        fit = fit_tail_slope(reciprocal, first_index=1)
    except InsufficientSamplesError as exc:
        logger.info("carleman check up to n=%d has no tail verdict: %s", n_max, exc)
        return CarlemanReport(
            n_max=n_max, partial_sum=partial_sum, tail_slope=None, divergent=None
        )
    return CarlemanReport(
        n_max=n_max,
        partial_sum=partial_sum,
        tail_slope=fit.slope,
        divergent=bool(fit.slope >= -1.0 - CARLEMAN_MARGIN),
    )
