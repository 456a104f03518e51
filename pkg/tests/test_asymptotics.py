import dataclasses
import math

import numpy as np
import pytest

from app.asymptotics import (
    amplitude,
    envelope_check,
    fit_sine_law,
    phase_limit_gap,
    phase_sequence,
    staleness,
)
from app.density import density_profile, estimate_h
from app.errors import FitDegenerate, ZeroEntryError
from app.families import limit_matrix
from app.uniform_diag import build_chain

FREE_LIMIT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def free_density(x: float) -> tuple[float, float]:
    """(nu', h) of the free family."""
    h = x * x - 4.0
    return math.sqrt(-h) / (2 * math.pi), h


# ---------------------------------------------------------------------------
# Phases and amplitude
# ---------------------------------------------------------------------------


class TestPhases:
    @pytest.mark.parametrize("x,theta", [(0.0, math.pi / 2), (1.0, math.pi / 3)])
    def test_free_phases(self, free_model, x, theta):
        chain = build_chain(free_model, 1, 0, 1, x, n_max=100)
        phases = phase_sequence(chain)
        assert np.allclose(phases.theta, theta)
        assert phases.cumulative[0] == 0.0
        assert phases.cumulative[10] == pytest.approx(10 * theta)

    def test_phase_limit(self, decaying_spec, decaying_model):
        chain = build_chain(decaying_model, 1, 0, 2, 0.5, M_hint=16, n_max=5000)
        gap = phase_limit_gap(chain, limit_matrix(decaying_spec, 0, 0.5))
        assert gap < 1e-2

    def test_phase_limit_rejects_hyperbolic_limit(self, free_model):
        chain = build_chain(free_model, 1, 0, 1, 0.0, n_max=100)
        with pytest.raises(ValueError):
            phase_limit_gap(chain, [[0.0, 1.0], [-1.0, 3.0]])

    def test_constant_chain_is_not_stale(self, free_model):
        chain = build_chain(free_model, 1, 0, 1, 0.2, n_max=100)
        assert staleness(chain) == 0.0


class TestAmplitude:
    def test_free_family_at_zero(self):
        nu, h = free_density(0.0)
        assert amplitude(nu, h, FREE_LIMIT) == pytest.approx(1.0)

    def test_free_family_off_centre(self):
        nu, h = free_density(1.0)
        limit = np.array([[0.0, 1.0], [-1.0, 1.0]])
        assert amplitude(nu, h, limit) == pytest.approx(2 / math.sqrt(3.0))

    def test_halving_density_doubles_square(self):
        nu, h = free_density(0.3)
        ratio = amplitude(nu / 2, h, FREE_LIMIT) ** 2 / amplitude(nu, h, FREE_LIMIT) ** 2
        assert ratio == pytest.approx(2.0)

    def test_zero_entry(self):
        with pytest.raises(ZeroEntryError):
            amplitude(0.3, -1.0, [[1.0, 1.0], [0.0, 1.0]], x=0.5)

    @pytest.mark.parametrize("nu,h", [(0.0, -1.0), (0.3, 0.0), (math.nan, -1.0)])
    def test_invalid_inputs(self, nu, h):
        with pytest.raises(ValueError):
            amplitude(nu, h, FREE_LIMIT)


# ---------------------------------------------------------------------------
# Sine law
# ---------------------------------------------------------------------------


class TestFitSineLaw:
    @pytest.mark.parametrize("x", [0.0, 0.5, 1.0, -1.3])
    def test_free_family_is_exact(self, free_model, x):
        nu, h = free_density(x)
        chain = build_chain(free_model, 1, 0, 1, x, n_max=2000)
        limit = np.array([[0.0, 1.0], [-1.0, x]])
        fit = fit_sine_law(free_model, 1, 0, x, chain, nu, h, limit=limit)
        assert fit.amplitude == pytest.approx(1 / math.sqrt(1 - x * x / 4))
        assert np.max(fit.residuals) < 1e-9
        assert fit.ok
        assert 0.0 <= fit.eta < 2 * math.pi

    def test_free_offset_at_zero(self, free_model):
        # Phases are summed from M + 1 = 2, so p_n(0) = sin((n - 1) pi/2 + pi)
        nu, h = free_density(0.0)
        chain = build_chain(free_model, 1, 0, 1, 0.0, n_max=500)
        fit = fit_sine_law(free_model, 1, 0, 0.0, chain, nu, h, limit=FREE_LIMIT)
        assert fit.eta == pytest.approx(math.pi)

    def test_last_matrix_stands_in_for_the_limit(self, free_model):
        nu, h = free_density(0.5)
        chain = build_chain(free_model, 1, 0, 1, 0.5, n_max=500)
        fit = fit_sine_law(free_model, 1, 0, 0.5, chain, nu, h)
        assert not fit.stale
        assert fit.ok

    def test_n_range_is_checked(self, free_model):
        nu, h = free_density(0.5)
        chain = build_chain(free_model, 1, 0, 1, 0.5, n_max=500)
        with pytest.raises(ValueError):
            fit_sine_law(free_model, 1, 0, 0.5, chain, nu, h, n_range=(chain.M, 100))
        with pytest.raises(ValueError):
            fit_sine_law(free_model, 1, 0, 0.5, chain, nu, h, n_range=(10, 12))

    def test_chain_must_match(self, free_model):
        nu, h = free_density(0.5)
        chain = build_chain(free_model, 1, 0, 1, 0.5, n_max=500)
        with pytest.raises(ValueError):
            fit_sine_law(free_model, 2, 0, 0.5, chain, nu, h)

    def test_phases_stuck_near_pi(self, free_model):
        nu, h = free_density(0.5)
        chain = build_chain(free_model, 1, 0, 1, 0.5, n_max=500)
        stuck = dataclasses.replace(
            chain, gamma=np.full(chain.gamma.shape, -1.0 + 1e-13j, dtype=np.complex128)
        )
        with pytest.raises(FitDegenerate):
            fit_sine_law(free_model, 1, 0, 0.5, stuck, nu, h, limit=FREE_LIMIT)

    def test_envelope(self, free_model):
        nu, h = free_density(0.5)
        chain = build_chain(free_model, 1, 0, 1, 0.5, n_max=2000)
        fit = fit_sine_law(free_model, 1, 0, 0.5, chain, nu, h)
        check = envelope_check(fit)
        assert check.ok
        assert check.observed_max <= fit.amplitude * (1 + 1e-9)


class TestIntroFamily:
    def test_limit_discriminant(self, intro_model):
        h, _ = estimate_h(intro_model, 1, 0, 0.0, n_max=10_000)
        assert abs(h + 4.0) < 2e-2

    def test_chain_tracks_instantaneous_eigenvalues(self, intro_model):
        chain = build_chain(intro_model, 1, 0, 3, 0.0, M_hint=16, n_max=10_000, restarts=3)
        theta = phase_sequence(chain).theta[-1000:]
        assert np.max(np.abs(theta - np.angle(chain.lam[-1000:]))) < 1e-2

    @pytest.mark.slow
    def test_sine_law_holds_on_most_points(self, intro_spec, intro_model):
        xs = np.linspace(-1.0, 1.0, 11)
        profile = density_profile(intro_model, 1, 0, xs, r=3, n_max=10_000, ladder=())
        ok = 0
        for j, x in enumerate(xs):
            chain = build_chain(intro_model, 1, 0, 3, x, M_hint=16, n_max=10_000, restarts=3)
            fit = fit_sine_law(
                intro_model,
                1,
                0,
                x,
                chain,
                float(profile.nu_prime[j]),
                float(profile.h[j]),
                limit=limit_matrix(intro_spec, 0, x),
            )
            ok += fit.ok
        assert ok >= 10
