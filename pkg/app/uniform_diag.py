"""Iterated uniform diagonalization of transfer-matrix products.

Level 0 writes each elliptic X_k = X_{kN+i}(x) as C_k diag(lambda_k, conj
lambda_k) C_k^{-1} with C_k = [[1, 1], [lambda_k, conj lambda_k]]. Level l
diagonalizes W_k = D_k C_k^{-1} C_{k-1} of level l-1 with a conjugator
[[1, conj v], [v, 1]], which tends to the identity along a slowly oscillating
sequence. After r-1 levels,

    X_n ... X_m = Q_n (prod_{j=m}^{n} D_j C_j^{-1} C_{j-1}) Q_{m-1}^{-1},

with Q_n the product of the conjugators of all levels.
"""

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from app.errors import DegenerateRefinement, NonEllipticError
from app.jacobi_core import (
    CMat2,
    CoefficientModel,
    ComplexArray,
    FloatArray,
    IndexArray,
    Mat2,
    det2,
    discriminant,
    inv2,
    op_norm,
    trace2,
    transfer_stack,
)

logger = logging.getLogger(__name__)

DELTA_MIN = 1e-9
DELTA_GUARD = 1e-6

# Partial products are renormalised when their norm leaves [2^-64, 2^64].
_PRODUCT_RESCALE = 2.0**64


def _diag(values: ComplexArray) -> CMat2:
    out = np.zeros(values.shape + (2, 2), dtype=np.complex128)
    out[..., 0, 0] = values
    out[..., 1, 1] = np.conj(values)
    return out


def principal_eigen(X: npt.ArrayLike, delta_min: float = DELTA_MIN) -> tuple[ComplexArray, CMat2]:
    """Upper eigenvalue lambda and conjugator [[1, 1], [lambda, conj lambda]]."""
    mats = np.asarray(X)
    discr = np.real(discriminant(mats))
    bad = discr >= -delta_min
    if np.any(bad):
        k = int(np.flatnonzero(np.ravel(bad))[0])
        raise NonEllipticError(index=k if mats.ndim > 2 else None, discr=float(np.ravel(discr)[k]))
    lam = np.real(trace2(mats)) / 2 + 0.5j * np.sqrt(np.abs(discr))
    conj = np.ones(lam.shape + (2, 2), dtype=np.complex128)
    conj[..., 1, 0] = lam
    conj[..., 1, 1] = np.conj(lam)
    return lam, conj


def refine_step(
    D: CMat2, X: CMat2, X_prev: CMat2, delta: float = DELTA_GUARD
) -> tuple[ComplexArray, CMat2]:
    """Diagonalize W = D X^{-1} X_prev as Y diag(gamma, conj gamma) Y^{-1}.

    W commutes with complex conjugation through [[0, 1], [1, 0]], so its trace
    and determinant are real and w22 = conj(w11). Then
    v = -i w21 / Im(w11 + gamma) and Y = [[1, conj v], [v, 1]].
    """
    W = D @ inv2(X) @ X_prev
    tr = np.real(trace2(W))
    discr = tr**2 - 4.0 * np.real(det2(W))
    gamma = tr / 2 + 0.5j * np.sqrt(np.abs(discr))
    denom = np.imag(W[..., 0, 0] + gamma)
    bad = (np.abs(denom) < delta) | (discr >= 0)
    if np.any(bad):
        k = int(np.flatnonzero(np.ravel(bad))[0])
        raise DegenerateRefinement(index=k, denominator=float(np.ravel(denom)[k]))
    v = -1j * W[..., 1, 0] / denom
    Y = np.ones(v.shape + (2, 2), dtype=np.complex128)
    Y[..., 0, 1] = np.conj(v)
    Y[..., 1, 0] = v
    return gamma, Y


@dataclass(frozen=True)
class DiagChain:
    """Diagonalization data at one grid point for chain indices M..k_max.

    Row ``k - M`` of every array belongs to X_{kN+i}. ``Y[l-1]`` holds the
    level-l conjugators.
    """

    x: float
    N: int
    i: int
    r: int
    M: int
    elliptic_start: int
    indices: IndexArray
    X: Mat2
    lam: ComplexArray
    gamma: ComplexArray
    D: CMat2
    C: CMat2
    Q: CMat2
    Y: list[CMat2]

    @property
    def k_max(self) -> int:
        return int(self.indices[-1])

    def row(self, k: int) -> int:
        if not self.M <= k <= self.k_max:
            raise IndexError(f"chain index {k} outside [{self.M}, {self.k_max}]")
        return k - self.M


def select_start(
    model: CoefficientModel,
    N: int,
    i: int,
    grid: npt.ArrayLike,
    k_max: int,
    delta_min: float = DELTA_MIN,
    k_min: int = 0,
) -> int:
    """First chain index after which every X_{kN+i}(x), x in grid, stays elliptic.

    The whole range up to ``k_max`` is scanned rather than a bounded lookahead.
    ``build_chain`` diagonalizes every X_k from the start onwards, so a single
    non-elliptic index anywhere before ``k_max`` moves the start past it. Raises
    ``NonEllipticError`` when X_{k_max} itself is not elliptic.
    """
    k0 = max(k_min, 1 if i == 0 else 0)
    if k_max <= k0:
        raise ValueError(f"empty index range [{k0}, {k_max}]")
    xs = np.atleast_1d(np.asarray(grid, dtype=np.float64))
    ks = np.arange(k0, k_max + 1)
    discr = discriminant(transfer_stack(model, ks, N, i, xs))
    bad_rows = np.flatnonzero(np.any(discr >= -delta_min, axis=1))
    if bad_rows.size == 0:
        return k0
    last = int(bad_rows[-1])
    if last == ks.size - 1:
        col = int(np.argmax(discr[last]))
        raise NonEllipticError(float(xs[col]), index=k_max, discr=float(discr[last, col]))
    return int(ks[last]) + 1


def build_chain(
    model: CoefficientModel,
    N: int,
    i: int,
    r: int,
    x: float,
    M_hint: int = 0,
    n_max: int = 10_000,
    delta_min: float = DELTA_MIN,
    delta: float = DELTA_GUARD,
    restarts: int = 0,
) -> DiagChain:
    """Run r-1 refinement levels on X_{kN+i}(x) for k up to n_max // N.

    With ``restarts`` > 0 a degenerate refinement step restarts the chain just
    past the offending index, at most that many times.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    for _ in range(restarts):
        try:
            return build_chain(model, N, i, r, x, M_hint, n_max, delta_min, delta)
        except DegenerateRefinement as exc:
            logger.info("restarting chain at x=%.6g past index %d", x, exc.index)
            M_hint = exc.index + 1
    k_max = n_max // N
    start = select_start(model, N, i, [x], k_max, delta_min, k_min=M_hint)
    first = start + r - 1
    if first + 1 > k_max:
        raise NonEllipticError(x, index=start)
    ks = np.arange(start, k_max + 1)
    X = transfer_stack(model, ks, N, i, x)

    lam, C = principal_eigen(X, delta_min)
    conjugators = [C]
    D = _diag(lam)
    gamma = lam
    for level in range(1, r):
        try:
            gamma, C = refine_step(D[1:], C[1:], C[:-1], delta)
        except DegenerateRefinement as exc:
            raise DegenerateRefinement(int(ks[level + exc.index]), level, exc.denominator) from exc
        D = _diag(gamma)
        conjugators.append(C)

    # Align every level with the outermost one, which starts at `first`.
    aligned = [c[r - 1 - level :] for level, c in enumerate(conjugators)]
    Q = aligned[0]
    for c in aligned[1:]:
        Q = Q @ c
    logger.debug("chain at x=%.6g: elliptic from %d, M=%d, k_max=%d", x, start, first, k_max)
    return DiagChain(
        x=float(x),
        N=N,
        i=i,
        r=r,
        M=first,
        elliptic_start=start,
        indices=ks[r - 1 :],
        X=X[r - 1 :],
        lam=lam[r - 1 :],
        gamma=gamma,
        D=D,
        C=aligned[-1],
        Q=Q,
        Y=aligned[1:],
    )


@dataclass(frozen=True)
class ReconstructionError:
    m: int
    n: int
    max_norm_deviation: float
    log_norm: float


def _scaled_product(factors: npt.NDArray) -> tuple[npt.NDArray, float]:
    """factors[-1] ... factors[0] as (mantissa, natural log scale)."""
    product = np.eye(2, dtype=factors.dtype)
    log_scale = 0.0
    for factor in factors:
        product = factor @ product
        norm = float(op_norm(product))
        if norm > _PRODUCT_RESCALE or norm < 1.0 / _PRODUCT_RESCALE:
            product = product / norm
            log_scale += float(np.log(norm))
    return product, log_scale


def reconstruct_check(
    chain: DiagChain, model: CoefficientModel, m: int, n: int
) -> ReconstructionError:
    """Relative gap between X_n ... X_m and its diagonalized factorization.

    The factorization ends in Q_{m-1}^{-1} and uses C_{m-1}, and the chain's
    first row is M, so the span needs M + 1 <= m <= n <= k_max. An empty span
    (m = n + 1) returns a zero gap. Anything else raises ``ValueError``.
    """
    if m == n + 1:
        return ReconstructionError(m=m, n=n, max_norm_deviation=0.0, log_norm=0.0)
    if not chain.M + 1 <= m <= n <= chain.k_max:
        raise ValueError(f"span ({m}, {n}) outside [{chain.M + 1}, {chain.k_max}]")
    direct, log_direct = _scaled_product(
        transfer_stack(model, np.arange(m, n + 1), chain.N, chain.i, chain.x)
    )

    rows = np.arange(chain.row(m), chain.row(n) + 1)
    middle = chain.D[rows] @ inv2(chain.C[rows]) @ chain.C[rows - 1]
    inner, log_inner = _scaled_product(middle)
    factored = chain.Q[chain.row(n)] @ inner @ inv2(chain.Q[chain.row(m - 1)])

    gap = op_norm(factored * np.exp(log_inner - log_direct) - direct)
    deviation = float(gap / op_norm(direct))
    return ReconstructionError(
        m=m,
        n=n,
        max_norm_deviation=deviation,
        log_norm=log_direct + float(np.log(op_norm(direct))),
    )


def determinant_ratio(chain: DiagChain, m: int, n: int) -> float:
    """prod det D_j / prod det X_j over j in [m, n]; tends to 1 along the chain."""
    rows = slice(chain.row(m), chain.row(n) + 1)
    log_d = np.sum(np.log(np.abs(chain.gamma[rows]) ** 2))
    log_x = np.sum(np.log(det2(chain.X[rows])))
    return float(np.exp(log_d - log_x))


def eigenvalue_gap(chain: DiagChain) -> FloatArray:
    """|gamma_k - lambda_k| along the chain."""
    return np.abs(chain.gamma - chain.lam)
