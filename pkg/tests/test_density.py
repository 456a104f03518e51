import numpy as np
import pytest

from app.density import (
    PointStatus,
    density_profile,
    estimate_h,
    estimate_h_grid,
    ladder_gaps,
    orthonormality_quadrature,
    periodized_density,
    truncate,
    truncation_stability,
)
from app.errors import InsufficientSamplesError, NonEllipticError, QuadratureError
from app.families import make_family
from app.schemas import FamilyKind, FamilySpec

# ---------------------------------------------------------------------------
# Limit discriminant
# ---------------------------------------------------------------------------


class TestEstimateH:
    def test_free_family(self, free_model):
        h, converged = estimate_h(free_model, 1, 0, 0.5, n_max=500)
        assert converged
        assert h == pytest.approx(0.25 - 4.0, abs=1e-12)

    def test_outside_bands_still_gets_a_value(self, free_model):
        h, converged = estimate_h(free_model, 1, 0, 3.0, n_max=500)
        assert converged
        assert h == pytest.approx(5.0)

    def test_elliptic_start(self, intro_model):
        est = estimate_h_grid(intro_model, 1, 0, [-1.0, 0.0], n_max=500)
        assert est.elliptic.all()
        assert est.elliptic_start.tolist() == [1, 1]
        assert est.sup_transfer_norm > 1.0

    def test_too_few_samples(self, free_model):
        with pytest.raises(InsufficientSamplesError):
            estimate_h_grid(free_model, 1, 0, [0.0], n_max=20)


# ---------------------------------------------------------------------------
# Density profiles
# ---------------------------------------------------------------------------


class TestDensityProfile:
    def test_free_closed_form(self, free_model):
        xs = np.linspace(-1.9, 1.9, 101)
        profile = density_profile(free_model, 1, 0, xs, n_max=2000, ladder=())
        assert profile.converged.all()
        assert set(profile.status) == {PointStatus.ok.value}
        assert np.allclose(profile.g, 1.0, atol=1e-10)
        assert np.allclose(profile.h, xs**2 - 4.0, atol=1e-12)
        assert np.allclose(profile.nu_prime, np.sqrt(4.0 - xs**2) / (2 * np.pi), atol=1e-9)

    def test_points_outside_the_bands(self, free_model):
        profile = density_profile(free_model, 1, 0, [0.0, 3.0], n_max=500, ladder=(8,))
        assert profile.status == [PointStatus.ok.value, PointStatus.non_elliptic.value]
        assert np.isnan(profile.nu_prime[1])
        assert np.isnan(profile.mu_L[8][1])

    def test_symmetric_periodic_density(self, two_periodic_model):
        xs = np.linspace(1.2, 2.8, 9)
        right = density_profile(two_periodic_model, 2, 0, xs, n_max=2000, ladder=())
        left = density_profile(two_periodic_model, 2, 0, -xs, n_max=2000, ladder=())
        assert np.allclose(right.nu_prime, left.nu_prime, atol=1e-10)

    def test_periodic_ladder_matches(self, two_periodic_model):
        xs = np.linspace(1.2, 2.8, 21)
        profile = density_profile(two_periodic_model, 2, 0, xs, n_max=70_000)
        gaps = ladder_gaps(profile)
        assert sorted(gaps) == [2 * 2**e for e in range(4, 15)]
        assert max(gaps.values()) < 1e-9
        values = [gaps[L] for L in sorted(gaps)]
        for before, after in zip(values, values[1:]):
            assert after <= before + 1e-10

    @pytest.mark.slow
    def test_blend_density_is_positive_across_the_band(self):
        spec = FamilySpec(kind=FamilyKind.blend, N=1, alpha=[1.0], beta=[0.0], tau=0.5)
        xs = np.linspace(-0.8, 0.8, 9)
        profile = density_profile(make_family(spec), spec.period, 1, xs, n_max=30_000, ladder=())
        assert PointStatus.non_elliptic.value not in profile.status
        assert np.all(np.isfinite(profile.nu_prime))
        assert np.all(profile.nu_prime > 0)

    def test_rows_follow_columns(self, free_model):
        profile = density_profile(free_model, 1, 0, [0.0, 1.0], n_max=500, ladder=(16, 32))
        assert profile.columns() == [
            "x",
            "g",
            "h",
            "nu_prime",
            "converged",
            "status",
            "mu_L_16",
            "mu_L_32",
        ]
        assert all(len(row) == 8 for row in profile.rows())

    def test_chain_start_accounts_for_levels(self, free_model):
        profile = density_profile(free_model, 1, 0, [0.0], r=3, n_max=500, ladder=())
        assert profile.chain_start.tolist() == [3]

    def test_intro_ladder_matches_profile(self, intro_model):
        profile = density_profile(intro_model, 1, 0, [0.0], n_max=20_000, ladder=())
        mu = periodized_density(intro_model, 1, 10_000, 0.0)
        assert mu == pytest.approx(float(profile.nu_prime[0]), abs=1e-2)


# ---------------------------------------------------------------------------
# Truncation
# ---------------------------------------------------------------------------


class TestTruncation:
    def test_fold(self, free_model):
        truncated = truncate(free_model, 5, 2)
        assert truncated.fold(np.arange(4, 12)).tolist() == [4, 5, 6, 5, 6, 5, 6, 5]

    def test_truncated_model_repeats_the_window(self, intro_model):
        model = truncate(intro_model, 10, 3).as_model()
        a, b = model.coefficients(np.arange(10, 22))
        _, base_b = intro_model.coefficients(np.arange(10, 13))
        assert np.allclose(b[:3], base_b)
        assert np.allclose(b[3:6], base_b)
        assert np.allclose(b[9:12], base_b)
        assert np.allclose(a, 1.0)

    def test_free_periodized_density(self, free_model):
        mu = periodized_density(free_model, 1, 37, 0.5)
        assert mu == pytest.approx(np.sqrt(3.75) / (2 * np.pi), rel=1e-12)

    @pytest.mark.parametrize("x", [-2.0, 2.0])
    def test_band_edges_are_not_elliptic(self, free_model, x):
        with pytest.raises(NonEllipticError):
            periodized_density(free_model, 1, 37, x)

    @pytest.mark.parametrize("L", [50, 500])
    def test_stability_constants(self, decaying_model, L):
        report = truncation_stability(decaying_model, 1, L, 0.5)
        assert report.ratio_defect != 0.0
        assert report.matrix_constant <= 1.0 + 1e-9
        assert report.turan_constant <= 1.0 + 1e-9
        assert report.discr_constant <= 9.0

    def test_stability_constants_period_two(self):
        spec = FamilySpec(
            kind=FamilyKind.asymptotically_periodic,
            N=2,
            alpha=[2.0, 1.0],
            beta=[0.0, 0.0],
            eps_a=0.3,
            eps_b=0.3,
        )
        report = truncation_stability(make_family(spec), 2, 101, 1.5)
        assert report.matrix_constant <= 1.0 + 1e-9
        assert report.turan_constant <= 1.0 + 1e-9


# ---------------------------------------------------------------------------
# Orthonormality
# ---------------------------------------------------------------------------


class TestOrthonormality:
    def test_free_family_gram(self, free_model):
        xs = np.linspace(-2 + 1e-6, 2 - 1e-6, 4001)
        profile = density_profile(free_model, 1, 0, xs, n_max=4096, ladder=())
        report = orthonormality_quadrature(profile, free_model, 5)
        assert report.max_deviation < 1e-3
        assert np.allclose(report.gram, report.gram.T)
        assert report.total_mass <= 1.0 + 1e-3
        assert report.observed_order > 1

    def test_grid_size_must_suit_the_rule(self, free_model):
        profile = density_profile(free_model, 1, 0, np.linspace(-1, 1, 7), n_max=500, ladder=())
        with pytest.raises(ValueError):
            orthonormality_quadrature(profile, free_model, 2)

    def test_points_without_density(self, free_model):
        profile = density_profile(free_model, 1, 0, np.linspace(-3, 3, 9), n_max=500, ladder=())
        with pytest.raises(ValueError):
            orthonormality_quadrature(profile, free_model, 2)

    def test_coarse_grid_fails_the_error_estimate(self, free_model):
        xs = np.linspace(-1.99, 1.99, 9)
        profile = density_profile(free_model, 1, 0, xs, n_max=500, ladder=())
        with pytest.raises(QuadratureError):
            orthonormality_quadrature(profile, free_model, 8, tol=1e-6)
