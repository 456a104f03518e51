"""Coefficient models, transfer matrices and the three-term recurrence.

Matrices are numpy arrays whose last two axes are 2x2. Leading axes index
sequence positions and/or grid points, so stacks of transfer matrices are
built and multiplied in single calls.

Generalized eigenvectors solve

    a_{n-1} u_{n-1} + b_n u_n + a_n u_{n+1} = x u_n,

and are stored as (mantissa, log_scale) pairs so that unbounded families and
points off the spectrum cannot overflow.
"""

import logging
import math
from collections.abc import Callable, Iterator
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from app.errors import NonPositiveCoefficientError, ZeroEigenvectorError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
ComplexArray = npt.NDArray[np.complex128]
IndexArray = npt.NDArray[np.int64]

# Stacks of real / complex 2x2 matrices, shape (..., 2, 2).
Mat2 = FloatArray
CMat2 = ComplexArray

CoefficientFn = Callable[[IndexArray], npt.ArrayLike]

E = np.array([[0.0, -1.0], [1.0, 0.0]])

RESCALE_HIGH = 2.0**512
RESCALE_LOW = 2.0**-512


# ---------------------------------------------------------------------------
# 2x2 helpers
# ---------------------------------------------------------------------------


def det2(m: npt.NDArray) -> npt.NDArray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def trace2(m: npt.NDArray) -> npt.NDArray:
    return m[..., 0, 0] + m[..., 1, 1]


def discriminant(m: npt.NDArray) -> npt.NDArray:
    """(tr M)^2 - 4 det M, computed from the entries."""
    return trace2(m) ** 2 - 4.0 * det2(m)


def inv2(m: npt.NDArray) -> npt.NDArray:
    """Inverse through X^{-1} = -(1/det X) E X^t E."""
    d = det2(m)
    return -(E @ np.swapaxes(m, -1, -2) @ E) / d[..., None, None]


def op_norm(m: npt.NDArray) -> FloatArray:
    """Spectral norm of each matrix in a stack."""
    return np.linalg.norm(m, ord=2, axis=(-2, -1))


# ---------------------------------------------------------------------------
# Coefficient models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientModel:
    """Sequences a_n > 0 and b_n given as vectorised pure functions of n."""

    a: CoefficientFn
    b: CoefficientFn
    period_N: int = 1
    label: str = "custom"

    def __post_init__(self) -> None:
        if self.period_N < 1:
            raise ValueError(f"period_N must be positive, got {self.period_N}")

    def coefficients(self, n: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
        """Return (a_n, b_n) with the shape of ``n``."""
        idx = np.asarray(n, dtype=np.int64)
        if np.any(idx < 0):
            raise ValueError("coefficient indices must be non-negative")
        a = np.array(np.broadcast_to(np.asarray(self.a(idx), dtype=np.float64), idx.shape))
        b = np.array(np.broadcast_to(np.asarray(self.b(idx), dtype=np.float64), idx.shape))
        bad = ~(a > 0)
        if bad.any():
            k = int(np.flatnonzero(bad.ravel())[0])
            raise NonPositiveCoefficientError(int(idx.ravel()[k]), float(a.ravel()[k]))
        return a, b

    def sample(self, n_max: int) -> tuple[FloatArray, FloatArray]:
        """Return a_0..a_{n_max} and b_0..b_{n_max}."""
        if n_max < 0:
            raise ValueError("n_max must be non-negative")
        return self.coefficients(np.arange(n_max + 1))

    @classmethod
    def from_arrays(
        cls,
        a_values: npt.ArrayLike,
        b_values: npt.ArrayLike,
        period_N: int = 1,
        label: str = "arrays",
    ) -> "CoefficientModel":
        """Adapter for finite coefficient lists, repeated cyclically past their end."""
        a_arr = np.array(a_values, dtype=np.float64).ravel()
        b_arr = np.array(b_values, dtype=np.float64).ravel()
        if a_arr.size == 0 or b_arr.size == 0:
            raise ValueError("coefficient arrays must be non-empty")
        return cls(
            a=lambda n: a_arr[n % a_arr.size],
            b=lambda n: b_arr[n % b_arr.size],
            period_N=period_N,
            label=label,
        )


# ---------------------------------------------------------------------------
# Transfer matrices
# ---------------------------------------------------------------------------


def transfer(model: CoefficientModel, n: npt.ArrayLike, x: npt.ArrayLike) -> Mat2:
    """B_n(x) = [[0, 1], [-a_{n-1}/a_n, (x - b_n)/a_n]], broadcasting n against x."""
    idx = np.asarray(n, dtype=np.int64)
    if np.any(idx < 1):
        raise ValueError("B_n is defined for n >= 1")
    xs = np.asarray(x, dtype=np.float64)
    a_prev, _ = model.coefficients(idx - 1)
    a_cur, b_cur = model.coefficients(idx)
    shape = np.broadcast_shapes(idx.shape, xs.shape)
    out = np.zeros(shape + (2, 2))
    out[..., 0, 1] = 1.0
    out[..., 1, 0] = -a_prev / a_cur
    out[..., 1, 1] = (xs - b_cur) / a_cur
    return out


def n_step(model: CoefficientModel, n: npt.ArrayLike, N: int, x: npt.ArrayLike) -> Mat2:
    """X_n = B_{n+N-1} ... B_n (largest index on the left)."""
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    idx = np.asarray(n, dtype=np.int64)
    product = transfer(model, idx, x)
    for j in range(1, N):
        product = transfer(model, idx + j, x) @ product
    return product


def transfer_stack(
    model: CoefficientModel, ks: npt.ArrayLike, N: int, i: int, x: npt.ArrayLike
) -> Mat2:
    """X_{kN+i}(x) for every k in ``ks`` and every x, shape ks.shape + x.shape + (2, 2)."""
    k_arr = np.asarray(ks, dtype=np.int64)
    xs = np.asarray(x, dtype=np.float64)
    n = (k_arr * N + i).reshape(k_arr.shape + (1,) * xs.ndim)
    return n_step(model, n, N, xs)


# ---------------------------------------------------------------------------
# Generalized eigenvectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenvectorState:
    """The pair (u_{n-1}, u_n), unscaled value exp(log_scale) * pair."""

    n: int
    u_prev: float
    u_cur: float
    log_scale: float = 0.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("state index must be >= 1")
        if self.u_prev == 0.0 and self.u_cur == 0.0:
            raise ZeroEigenvectorError("(u_{n-1}, u_n) = (0, 0)")

    @classmethod
    def initial(cls, alpha: tuple[float, float]) -> "EigenvectorState":
        return cls(n=1, u_prev=float(alpha[0]), u_cur=float(alpha[1]))

    def unscaled(self) -> tuple[float, float]:
        factor = math.exp(self.log_scale)
        return self.u_prev * factor, self.u_cur * factor


def propagate(
    model: CoefficientModel, state: EigenvectorState, x: float, steps: int
) -> EigenvectorState:
    """Apply ``steps`` transfer matrices B_n, B_{n+1}, ... to the state."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if steps == 0:
        return state
    a, b = model.coefficients(np.arange(state.n - 1, state.n + steps))
    prev, cur, log_scale = state.u_prev, state.u_cur, state.log_scale
    for k in range(steps):
        nxt = ((x - b[k + 1]) * cur - a[k] * prev) / a[k + 1]
        prev, cur = cur, float(nxt)
        norm = math.hypot(prev, cur)
        if norm > RESCALE_HIGH or norm < RESCALE_LOW:
            prev, cur = prev / norm, cur / norm
            log_scale += math.log(norm)
    return EigenvectorState(n=state.n + steps, u_prev=prev, u_cur=cur, log_scale=log_scale)


@dataclass(frozen=True)
class SolutionTable:
    """Values u_start..u_stop of one or more solutions.

    ``mantissa`` and ``log_scale`` have shape (length, *columns); entry n of a
    column equals mantissa * exp(log_scale). Columns are grid points and/or
    initial pairs.
    """

    start: int
    mantissa: FloatArray
    log_scale: FloatArray

    @property
    def stop(self) -> int:
        return self.start + self.mantissa.shape[0] - 1

    def _row(self, n: int) -> int:
        if not self.start <= n <= self.stop:
            raise IndexError(f"index {n} outside [{self.start}, {self.stop}]")
        return n - self.start

    def entry(self, n: int) -> tuple[FloatArray, FloatArray]:
        row = self._row(n)
        return self.mantissa[row], self.log_scale[row]

    def value(self, n: int) -> FloatArray:
        m, log = self.entry(n)
        return m * np.exp(log)

    def values(self) -> FloatArray:
        """Unscaled values; entries beyond the float range become inf."""
        with np.errstate(over="ignore"):
            return self.mantissa * np.exp(self.log_scale)


class _Recurrence:
    """Column-wise three-term recurrence with the scaling ledger."""

    def __init__(
        self, a: FloatArray, b: FloatArray, xs: FloatArray, u0: FloatArray, u1: FloatArray
    ) -> None:
        self.a = a
        self.b = b
        self.xs = xs
        self.n = 1
        self.prev = u0.astype(np.float64)
        self.cur = u1.astype(np.float64)
        self.log = np.zeros_like(self.cur)
        self.rescales = 0

    def advance(self, count: int) -> tuple[FloatArray, FloatArray]:
        """Return mantissas and log scales of u_{n+1} .. u_{n+count}."""
        mant = np.empty((count,) + self.cur.shape)
        logs = np.empty_like(mant)
        a, b, xs = self.a, self.b, self.xs
        prev, cur, log = self.prev, self.cur, self.log
        n = self.n
        for k in range(count):
            nxt = ((xs - b[n]) * cur - a[n - 1] * prev) / a[n]
            prev, cur = cur, nxt
            norm = np.hypot(prev, cur)
            if norm.max() > RESCALE_HIGH or norm.min() < RESCALE_LOW:
                outside = (norm > RESCALE_HIGH) | (norm < RESCALE_LOW)
                factor = np.where(outside, norm, 1.0)
                prev = prev / factor
                cur = cur / factor
                log = log + np.log(factor)
                self.rescales += 1
            mant[k] = cur
            logs[k] = log
            n += 1
        self.prev, self.cur, self.log, self.n = prev, cur, log, n
        return mant, logs


def _initial_columns(
    model: CoefficientModel, x: npt.ArrayLike, alpha: npt.ArrayLike
) -> tuple[FloatArray, FloatArray, FloatArray]:
    xs = np.asarray(x, dtype=np.float64)
    pair = np.asarray(alpha, dtype=np.float64)
    if pair.shape[-1] != 2:
        raise ValueError("alpha must have a trailing axis of length 2")
    cols = np.broadcast_shapes(xs.shape, pair.shape[:-1])
    u0 = np.array(np.broadcast_to(pair[..., 0], cols))
    u1 = np.array(np.broadcast_to(pair[..., 1], cols))
    if np.any((u0 == 0.0) & (u1 == 0.0)):
        raise ZeroEigenvectorError("initial pair (u_0, u_1) = (0, 0)")
    return np.array(np.broadcast_to(xs, cols)), u0, u1


def iter_solution(
    model: CoefficientModel,
    x: npt.ArrayLike,
    alpha: npt.ArrayLike,
    n_max: int,
    chunk: int = 4096,
    overlap: int = 0,
) -> Iterator[SolutionTable]:
    """Yield consecutive tables covering u_0..u_{n_max}.

    Each table after the first repeats the last ``overlap`` entries of its
    predecessor, so windows up to ``overlap + 1`` wide never fall between
    chunks.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if chunk <= overlap:
        raise ValueError("chunk must exceed overlap")
    xs, u0, u1 = _initial_columns(model, x, alpha)
    a, b = model.sample(n_max)
    rec = _Recurrence(a, b, xs, u0, u1)

    head_count = min(chunk, n_max) - 1
    tail_m, tail_l = rec.advance(head_count)
    mant = np.concatenate([u0[None], u1[None], tail_m])
    logs = np.concatenate([np.zeros((2,) + u0.shape), tail_l])
    start = 0
    while True:
        table = SolutionTable(start=start, mantissa=mant, log_scale=logs)
        yield table
        if table.stop >= n_max:
            break
        count = min(chunk - overlap, n_max - table.stop)
        new_m, new_l = rec.advance(count)
        keep = slice(mant.shape[0] - overlap, None)
        start = table.stop - overlap + 1
        mant = np.concatenate([mant[keep], new_m])
        logs = np.concatenate([logs[keep], new_l])
    if rec.rescales:
        logger.debug("recurrence to n=%d rescaled %d times", n_max, rec.rescales)


def eval_eigenvector(
    model: CoefficientModel, x: npt.ArrayLike, alpha: npt.ArrayLike, n_max: int
) -> SolutionTable:
    """u_0..u_{n_max} for initial pairs alpha = (u_0, u_1), one column per (x, alpha)."""
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    xs, u0, u1 = _initial_columns(model, x, alpha)
    if n_max == 0:
        return SolutionTable(start=0, mantissa=u0[None].copy(), log_scale=np.zeros((1,) + u0.shape))
    return next(iter_solution(model, xs, np.stack([u0, u1], axis=-1), n_max, chunk=n_max + 1))


def polynomial_alpha(model: CoefficientModel, x: npt.ArrayLike) -> FloatArray:
    """The initial pair (p_0, p_1) = (1, (x - b_0)/a_0)."""
    xs = np.asarray(x, dtype=np.float64)
    a, b = model.sample(0)
    return np.stack([np.ones_like(xs), (xs - b[0]) / a[0]], axis=-1)


def eval_polynomials(model: CoefficientModel, x: npt.ArrayLike, n_max: int) -> SolutionTable:
    """Orthonormal polynomials p_0(x)..p_{n_max}(x) with the scaling ledger."""
    return eval_eigenvector(model, x, polynomial_alpha(model, x), n_max)


def wronskian(
    model: CoefficientModel, n: npt.ArrayLike, u: SolutionTable, v: SolutionTable
) -> FloatArray:
    """a_n (u_n v_{n+1} - u_{n+1} v_n), combined on a common scale."""
    idx = np.atleast_1d(np.asarray(n, dtype=np.int64))
    a, _ = model.coefficients(idx)
    out = []
    for k, m in enumerate(idx):
        um, ul = u.entry(int(m))
        un, unl = u.entry(int(m) + 1)
        vm, vl = v.entry(int(m))
        vn, vnl = v.entry(int(m) + 1)
        e1, e2 = ul + vnl, unl + vl
        ref = np.maximum(e1, e2)
        value = um * vn * np.exp(e1 - ref) - un * vm * np.exp(e2 - ref)
        out.append(a[k] * value * np.exp(ref))
    return np.stack(out)


def solution_tail(
    model: CoefficientModel, x: npt.ArrayLike, alpha: npt.ArrayLike, n_max: int, width: int
) -> SolutionTable:
    """The last ``width`` entries u_{n_max-width+1}..u_{n_max}, streamed."""
    if not 1 <= width <= n_max + 1:
        raise ValueError(f"width must lie in [1, {n_max + 1}]")
    cols = max(1, int(np.prod(np.broadcast_shapes(np.shape(x), np.shape(alpha)[:-1]))))
    chunk = max(width + 1, min(4096, 2**21 // cols))
    table = None
    for table in iter_solution(model, x, alpha, n_max, chunk=chunk, overlap=width - 1):
        pass
    assert table is not None
    rows = slice(table.mantissa.shape[0] - width, None)
    return SolutionTable(
        start=n_max - width + 1, mantissa=table.mantissa[rows], log_scale=table.log_scale[rows]
    )
