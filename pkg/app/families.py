"""Bundled coefficient families and their closed-form limit objects.

Every family is described by a ``FamilySpec`` and turned into a
``CoefficientModel``. Where the limit of X_{kN'+i}(x) has a closed form
(N' being ``FamilySpec.period``) ``limit_matrix`` returns it, and
``elliptic_mask`` marks the bands |tr X_i| < 2 sqrt(det X_i).
"""

import logging

import numpy as np
import numpy.typing as npt

from app.errors import UnsupportedFamilyError
from app.jacobi_core import CoefficientModel, FloatArray, IndexArray, Mat2, det2, trace2
from app.schemas import FamilyKind, FamilySpec

logger = logging.getLogger(__name__)


def _oscillation(n: IndexArray, gamma: float, kappa: float) -> FloatArray:
    m = n + 1.0
    return np.cos(m**gamma) / m**kappa


def _blend(spec: FamilySpec) -> CoefficientModel:
    N = spec.N
    alpha = np.array(spec.alpha)
    beta = np.array(spec.beta)
    block = N + 2

    def a(n: IndexArray) -> FloatArray:
        k, slot = np.divmod(n, block)
        growing = np.maximum(2 * k + slot - N + 1.0, 1.0) ** spec.tau
        return np.where(slot < N, alpha[np.minimum(slot, N - 1)], growing)

    def b(n: IndexArray) -> FloatArray:
        slot = n % block
        return np.where(slot < N, beta[np.minimum(slot, N - 1)], 0.0)

    return CoefficientModel(a=a, b=b, period_N=block, label="blend")


def make_family(spec: FamilySpec) -> CoefficientModel:
    kind = spec.kind
    N = spec.N
    alpha = np.array(spec.alpha)
    beta = np.array(spec.beta)

    if kind == FamilyKind.constant:
        return CoefficientModel.from_arrays(alpha, beta, period_N=N, label=kind.value)
    if kind == FamilyKind.asymptotically_periodic:
        return CoefficientModel(
            a=lambda n: alpha[n % N] + spec.eps_a * _oscillation(n, spec.gamma, spec.kappa),
            b=lambda n: beta[n % N] + spec.eps_b * _oscillation(n, spec.gamma, spec.kappa),
            period_N=N,
            label=kind.value,
        )
    if kind == FamilyKind.periodic_modulation:
        return CoefficientModel(
            a=lambda n: alpha[n % N] * (n + 1.0) ** spec.tau,
            b=lambda n: beta[n % N] * (n + 1.0) ** spec.tau,
            period_N=N,
            label=kind.value,
        )
    if kind == FamilyKind.blend:
        return _blend(spec)
    if kind == FamilyKind.intro_oscillation:
        return CoefficientModel(
            a=lambda n: np.ones(np.shape(n)),
            b=lambda n: np.cos(np.asarray(n, dtype=np.float64) ** spec.gamma) / np.log(n + 2.0),
            period_N=1,
            label=kind.value,
        )
    if kind == FamilyKind.custom:
        return CoefficientModel.from_arrays(
            spec.a_values or [], spec.b_values or [], period_N=N, label=kind.value
        )
    raise UnsupportedFamilyError(f"unknown family kind {kind!r}")


def _periodic_transfer(alpha: FloatArray, beta: FloatArray, j: int, x: FloatArray) -> Mat2:
    """[[0, 1], [-alpha_{j-1}/alpha_j, (x - beta_j)/alpha_j]] with indices mod N."""
    N = alpha.size
    out = np.zeros(x.shape + (2, 2))
    out[..., 0, 1] = 1.0
    out[..., 1, 0] = -alpha[(j - 1) % N] / alpha[j % N]
    out[..., 1, 1] = (x - beta[j % N]) / alpha[j % N]
    return out


def _ordered_product(
    alpha: FloatArray, beta: FloatArray, first: int, last: int, x: FloatArray
) -> Mat2:
    """B_last ... B_first of the periodic transfer matrices; identity when last < first."""
    product = np.broadcast_to(np.eye(2), x.shape + (2, 2)).copy()
    for j in range(first, last + 1):
        product = _periodic_transfer(alpha, beta, j, x) @ product
    return product


def limit_matrix(spec: FamilySpec, i: int, x: npt.ArrayLike) -> Mat2:
    """Closed-form limit of X_{kN'+i}(x) as k grows."""
    xs = np.asarray(x, dtype=np.float64)
    alpha = np.array(spec.alpha)
    beta = np.array(spec.beta)
    N = spec.N
    kind = spec.kind

    if kind in (FamilyKind.constant, FamilyKind.asymptotically_periodic):
        return _ordered_product(alpha, beta, i, i + N - 1, xs)
    if kind == FamilyKind.periodic_modulation:
        return _ordered_product(alpha, beta, i, i + N - 1, np.zeros_like(xs))
    if kind == FamilyKind.intro_oscillation:
        out = np.zeros(xs.shape + (2, 2))
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -1.0
        out[..., 1, 1] = xs
        return out
    if kind == FamilyKind.blend:
        if not 1 <= i <= N:
            raise ValueError(f"blend limits exist for residues 1..{N}, got {i}")
        centre = np.zeros(xs.shape + (2, 2))
        centre[..., 0, 1] = -1.0
        centre[..., 1, 0] = alpha[N - 1] / alpha[0]
        centre[..., 1, 1] = -(2 * xs - beta[0]) / alpha[0]
        right = _ordered_product(alpha, beta, i, N - 1, xs)
        left = _ordered_product(alpha, beta, 1, i - 1, xs)
        return left @ centre @ right
    raise UnsupportedFamilyError(f"family {kind.value!r} has no closed-form limit matrix")


def elliptic_mask(spec: FamilySpec, i: int, grid: npt.ArrayLike) -> npt.NDArray[np.bool_]:
    """Grid points inside the bands |tr X_i(x)| < 2 sqrt(det X_i(x))."""
    limit = limit_matrix(spec, i, grid)
    det = det2(limit)
    return (det > 0) & (np.abs(trace2(limit)) < 2 * np.sqrt(np.abs(det)))
