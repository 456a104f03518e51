import math

import numpy as np
import pytest

from app.errors import DegenerateRefinement, NonEllipticError
from app.jacobi_core import CoefficientModel, op_norm, transfer
from app.uniform_diag import (
    build_chain,
    determinant_ratio,
    eigenvalue_gap,
    principal_eigen,
    reconstruct_check,
    refine_step,
    select_start,
)

# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------


class TestPrincipalEigen:
    def test_free_rotation(self, free_model):
        lam, C = principal_eigen(transfer(free_model, 1, 1.0))
        assert lam == pytest.approx(0.5 + 0.5j * math.sqrt(3.0))
        assert np.allclose(C, [[1, 1], [lam, np.conj(lam)]])

    def test_eigenvalue_in_upper_half_plane(self, intro_model):
        lam, _ = principal_eigen(transfer(intro_model, np.arange(1, 50)[:, None], [-1.0, 0.5]))
        assert np.all(lam.imag > 0)

    def test_non_elliptic(self, free_model):
        with pytest.raises(NonEllipticError):
            principal_eigen(transfer(free_model, 1, 3.0))

    def test_constant_chain_needs_no_refinement(self, free_model):
        X = transfer(free_model, np.arange(1, 5), 0.4)
        lam, C = principal_eigen(X)
        D = np.zeros((4, 2, 2), dtype=np.complex128)
        D[:, 0, 0] = lam
        D[:, 1, 1] = np.conj(lam)
        gamma, Y = refine_step(D[1:], C[1:], C[:-1])
        assert np.allclose(gamma, lam[1:])
        assert np.allclose(Y, np.eye(2))

    def test_slowly_decaying_potential(self):
        model = CoefficientModel(a=lambda n: 1.0 + 0.0 * n, b=lambda n: 1.0 / (n + 1.0))
        lam, C = principal_eigen(transfer(model, np.arange(1, 1001), 0.0))
        D = np.zeros((1000, 2, 2), dtype=np.complex128)
        D[:, 0, 0] = lam
        D[:, 1, 1] = np.conj(lam)
        gamma, Y = refine_step(D[1:], C[1:], C[:-1])
        assert np.all(np.isfinite(gamma))
        assert np.all(gamma.imag > 0)
        gap = np.abs(gamma - lam[1:])
        assert gap[-1] < 1e-4
        assert gap[-1] < gap[10]
        distance = op_norm(Y - np.eye(2))
        assert distance[-1] < 1e-4
        assert distance[-1] < distance[10]

    def test_conjugators_commute_with_the_swap(self, intro_model):
        chain = build_chain(intro_model, 1, 0, 3, 0.3, M_hint=16, n_max=2000, restarts=3)
        swap = np.array([[0.0, 1.0], [1.0, 0.0]])
        for Y in chain.Y:
            assert np.allclose(swap @ Y @ swap, np.conj(Y), atol=1e-12)

    def test_degenerate_refinement(self):
        identity = np.eye(2, dtype=np.complex128)[None]
        with pytest.raises(DegenerateRefinement) as exc_info:
            refine_step(identity, identity, identity)
        assert exc_info.value.index == 0


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------


class TestBuildChain:
    def test_start_on_free_family(self, free_model):
        assert select_start(free_model, 1, 0, [-1.0, 0.0, 1.0], 100) == 1

    def test_start_rejects_points_outside_bands(self, free_model):
        with pytest.raises(NonEllipticError):
            select_start(free_model, 1, 0, [0.0, 3.0], 100)

    def test_start_moves_past_late_non_elliptic_index(self):
        b = np.zeros(200)
        b[150] = 3.0
        model = CoefficientModel.from_arrays([1.0], b)
        assert select_start(model, 1, 0, [0.0], 190) == 151

    def test_free_chain(self, free_model):
        chain = build_chain(free_model, 1, 0, 1, 1.0, n_max=200)
        assert chain.M == 1
        assert chain.k_max == 200
        assert np.allclose(chain.gamma, 0.5 + 0.5j * math.sqrt(3.0))
        assert np.allclose(eigenvalue_gap(chain), 0.0)

    def test_levels_shift_the_start(self, intro_model):
        chain = build_chain(intro_model, 1, 0, 3, 0.2, M_hint=16, n_max=500)
        assert chain.M == chain.elliptic_start + 2
        assert len(chain.Y) == 2
        assert chain.gamma.shape == chain.indices.shape

    def test_invalid_level(self, free_model):
        with pytest.raises(ValueError):
            build_chain(free_model, 1, 0, 0, 0.0, n_max=100)

    def test_no_elliptic_tail(self, free_model):
        with pytest.raises(NonEllipticError):
            build_chain(free_model, 1, 0, 2, 2.5, n_max=100)


class TestReconstruction:
    @pytest.mark.parametrize("x", np.linspace(-1.5, 1.5, 11))
    def test_intro_product_is_reproduced(self, intro_model, x):
        chain = build_chain(intro_model, 1, 0, 3, x, M_hint=16, n_max=1500, restarts=3)
        for m in (chain.M + 1, chain.M + 20):
            for length in (1, 10, 100, 1000):
                result = reconstruct_check(chain, intro_model, m, m + length - 1)
                assert result.max_norm_deviation < 1e-8

    def test_empty_product(self, free_model):
        chain = build_chain(free_model, 1, 0, 1, 0.0, n_max=100)
        assert reconstruct_check(chain, free_model, 10, 9).max_norm_deviation == 0.0

    def test_span_outside_chain(self, free_model):
        chain = build_chain(free_model, 1, 0, 1, 0.0, n_max=100)
        with pytest.raises(ValueError):
            reconstruct_check(chain, free_model, chain.M, 50)

    def test_span_may_start_one_past_the_chain_start(self, free_model):
        chain = build_chain(free_model, 1, 0, 1, 0.0, n_max=100)
        result = reconstruct_check(chain, free_model, chain.M + 1, 50)
        assert result.max_norm_deviation < 1e-10

    def test_span_past_the_chain_end(self, free_model):
        chain = build_chain(free_model, 1, 0, 1, 0.0, n_max=100)
        with pytest.raises(ValueError):
            reconstruct_check(chain, free_model, chain.M + 1, chain.k_max + 1)

    def test_determinant_ratio_free(self, free_model):
        chain = build_chain(free_model, 1, 0, 1, 0.3, n_max=200)
        assert determinant_ratio(chain, 2, 200) == pytest.approx(1.0, rel=1e-12)

    def test_determinant_ratio_tends_to_one(self, decaying_model):
        chain = build_chain(decaying_model, 1, 0, 2, 0.0, M_hint=16, n_max=5000)
        ratio = determinant_ratio(chain, chain.k_max - 200, chain.k_max)
        assert ratio == pytest.approx(1.0, abs=1e-3)


# ---------------------------------------------------------------------------
# Eigenvalue gaps
# ---------------------------------------------------------------------------


class TestEigenvalueGap:
    def test_intro_gap_decays(self, intro_model):
        chain = build_chain(intro_model, 1, 0, 3, 0.0, M_hint=16, n_max=10_000, restarts=3)
        gap = eigenvalue_gap(chain)
        assert gap[-1000:].max() < gap[:200].max() / 5

    def test_intro_eigenvalues_approach_i(self, intro_model):
        chain = build_chain(intro_model, 1, 0, 3, 0.0, M_hint=16, n_max=10_000, restarts=3)
        distance = np.abs(chain.gamma - 1j)
        assert distance[-1000:].max() < 0.08
        assert distance[-1000:].max() < distance[:200].max()

    def test_decaying_gap(self, decaying_model):
        chain = build_chain(decaying_model, 1, 0, 2, 0.0, M_hint=16, n_max=5000)
        gap = eigenvalue_gap(chain)
        assert gap[-500:].max() < 1e-5
        assert gap[-500:].max() < gap[:100].max()
