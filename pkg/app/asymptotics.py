"""Phases of the diagonalization chain and the sine law of orthonormal polynomials.

On the elliptic region

    sqrt(a_{kN+i-1}) p_{kN+i}(x) ~ A(x) sin(sum_{j=M+1}^{k} theta_j(x) + eta(x)),

where theta_j = arg t_j comes from the chain and
A = sqrt(2 |X_21| / (pi nu' sqrt(-h))) for the limit matrix X. The offset
eta is fitted on the first quarter of the index range and the law is
validated on the rest.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from app.errors import FitDegenerate, ZeroEntryError
from app.jacobi_core import (
    CoefficientModel,
    FloatArray,
    IndexArray,
    Mat2,
    det2,
    eval_polynomials,
    op_norm,
    trace2,
)
from app.uniform_diag import DiagChain, eigenvalue_gap

logger = logging.getLogger(__name__)

ENTRY_FLOOR = 1e-12
FIT_TOLERANCE = 0.05
CONDITION_FLOOR = 1e-8
STALENESS_WINDOW = 32
STALENESS_TOL = 1e-3
# Share of the chain treated as its tail by the limit checks.
TAIL_FRACTION = 0.1


@dataclass(frozen=True)
class PhaseSequence:
    """theta_k = arg t_k per chain row and Phi_k = sum_{j=M+1}^k theta_j (Phi_M = 0)."""

    ks: IndexArray
    theta: FloatArray
    cumulative: FloatArray


def phase_sequence(chain: DiagChain) -> PhaseSequence:
    theta = np.angle(chain.gamma)
    if np.any(theta <= 0) or np.any(theta >= np.pi):
        raise ValueError("chain eigenvalues must lie in the open upper half-plane")
    cumulative = np.concatenate([[0.0], np.cumsum(theta[1:])])
    return PhaseSequence(ks=chain.indices, theta=theta, cumulative=cumulative)


def amplitude(nu_prime: float, h: float, limit: npt.ArrayLike, x: float = math.nan) -> float:
    """A = sqrt(2 |X_21| / (pi nu' sqrt(-h)))."""
    if not nu_prime > 0:
        raise ValueError(f"nu' must be positive, got {nu_prime!r}")
    if not h < 0:
        raise ValueError(f"h must be negative, got {h!r}")
    entry = float(np.asarray(limit)[1, 0])
    if abs(entry) < ENTRY_FLOOR:
        raise ZeroEntryError(x, entry)
    return math.sqrt(2 * abs(entry) / (math.pi * nu_prime * math.sqrt(-h)))


def _tail(values: npt.NDArray) -> npt.NDArray:
    size = max(1, int(math.ceil(values.shape[0] * TAIL_FRACTION)))
    return values[-size:]


def phase_limit_gap(chain: DiagChain, limit: npt.ArrayLike) -> float:
    """Tail max of |theta_j - arccos(tr X / (2 sqrt(det X)))|."""
    mat = np.asarray(limit, dtype=np.float64)
    cosine = float(trace2(mat)) / (2 * math.sqrt(float(det2(mat))))
    if not -1 < cosine < 1:
        raise ValueError(f"limit matrix is not elliptic: tr/(2 sqrt det) = {cosine:.6g}")
    target = math.acos(cosine)
    theta = phase_sequence(chain).theta
    return float(np.max(np.abs(_tail(theta) - target)))


def staleness(chain: DiagChain, window: int = STALENESS_WINDOW) -> float:
    """max ||X_k - X_last|| over the trailing window of the chain."""
    recent = chain.X[-window:]
    return float(np.max(op_norm(recent - chain.X[-1])))


@dataclass(frozen=True)
class SineLawFit:
    x: float
    amplitude: float
    eta: float
    ks: IndexArray
    phases: FloatArray
    samples: FloatArray
    residuals: FloatArray
    fit_rows: int
    tail_rms: float
    proximity: float
    stale: bool
    limit: Mat2

    @property
    def ok(self) -> bool:
        return self.tail_rms < FIT_TOLERANCE * self.amplitude


def fit_sine_law(
    model: CoefficientModel,
    N: int,
    i: int,
    x: float,
    chain: DiagChain,
    nu_prime: float,
    h: float,
    n_range: tuple[int, int] | None = None,
    limit: npt.ArrayLike | None = None,
) -> SineLawFit:
    """Fit eta on the first quarter of ``n_range`` (chain indices) and report residuals.

    Without ``limit`` the last chain matrix stands in for the limit; it is
    flagged stale when the trailing window still moves by more than
    STALENESS_TOL.
    """
    if chain.N != N or chain.i != i:
        raise ValueError("chain was built for another period or residue")
    lo, hi = (chain.M + 1, chain.k_max) if n_range is None else n_range
    if not chain.M + 1 <= lo < hi <= chain.k_max:
        raise ValueError(f"n_range ({lo}, {hi}) outside [{chain.M + 1}, {chain.k_max}]")
    if hi - lo + 1 < 8:
        raise ValueError("n_range must cover at least 8 indices")

    stale = False
    if limit is None:
        mat = np.array(chain.X[-1])
        drift = staleness(chain)
        stale = drift >= STALENESS_TOL
        if stale:
            logger.warning("limit matrix at x=%.6g still drifts by %.3g", x, drift)
    else:
        mat = np.asarray(limit, dtype=np.float64)
    A = amplitude(nu_prime, h, mat, x)

    phases = phase_sequence(chain)
    ks = np.arange(lo, hi + 1)
    rows = ks - chain.M
    Phi = phases.cumulative[rows]
    n = ks * N + i
    p = eval_polynomials(model, x, int(n[-1])).values()
    a, _ = model.coefficients(n - 1)
    samples = np.sqrt(a) * p[n]

    fit_rows = max(2, ks.size // 4)
    design = np.stack([np.sin(Phi[:fit_rows]), np.cos(Phi[:fit_rows])], axis=1)
    if 1.0 / np.linalg.cond(design) < CONDITION_FLOOR:
        raise FitDegenerate(f"phases at x={x:.6g} are nearly constant multiples of pi")
    (c1, c2), *_ = np.linalg.lstsq(design, samples[:fit_rows], rcond=None)
    eta = float(np.mod(math.atan2(c2, c1), 2 * np.pi))

    residuals = np.abs(samples - A * np.sin(Phi + eta))
    tail_rms = float(np.sqrt(np.mean(residuals[fit_rows:] ** 2)))
    proximity = float(np.max(_tail(eigenvalue_gap(chain))))
    logger.debug("sine law at x=%.6g: A=%.6g eta=%.6g rms=%.3g", x, A, eta, tail_rms)
    return SineLawFit(
        x=float(x),
        amplitude=A,
        eta=eta,
        ks=ks,
        phases=Phi,
        samples=samples,
        residuals=residuals,
        fit_rows=fit_rows,
        tail_rms=tail_rms,
        proximity=proximity,
        stale=stale,
        limit=mat,
    )


@dataclass(frozen=True)
class EnvelopeCheck:
    observed_max: float
    upper: bool
    lower: bool

    @property
    def ok(self) -> bool:
        return self.upper and self.lower


def envelope_check(fit: SineLawFit, eps: float = FIT_TOLERANCE) -> EnvelopeCheck:
    """Whether max |sqrt(a) p| over the late half of the fit lies in A (1 +- eps)."""
    late = fit.samples[fit.samples.size // 2 :]
    observed = float(np.max(np.abs(late)))
    return EnvelopeCheck(
        observed_max=observed,
        upper=observed <= fit.amplitude * (1 + eps),
        lower=observed >= fit.amplitude * (1 - eps),
    )
