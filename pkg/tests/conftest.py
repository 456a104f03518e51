import os
from pathlib import Path

import pytest

# Keep the environment deterministic before any app imports.
os.environ["STOLZ_THREADS"] = "2"
os.environ["STOLZ_LOG_LEVEL"] = "WARNING"

from app.families import make_family  # noqa: E402
from app.jacobi_core import CoefficientModel  # noqa: E402
from app.schemas import FamilyKind, FamilySpec  # noqa: E402


# ---------------------------------------------------------------------------
# Coefficient models
# ---------------------------------------------------------------------------


@pytest.fixture
def free_model() -> CoefficientModel:
    """a_n = 1, b_n = 0: orthonormal polynomials are U_n(x/2)."""
    return CoefficientModel.from_arrays([1.0], [0.0], label="free")


@pytest.fixture
def two_periodic_model() -> CoefficientModel:
    """a = (2, 1, 2, 1, ...), b = 0; bands 1 < |x| < 3."""
    return CoefficientModel.from_arrays([2.0, 1.0], [0.0], period_N=2, label="two-periodic")


@pytest.fixture
def intro_spec() -> FamilySpec:
    return FamilySpec(kind=FamilyKind.intro_oscillation, gamma=0.5)


@pytest.fixture
def intro_model(intro_spec) -> CoefficientModel:
    return make_family(intro_spec)


@pytest.fixture
def decaying_spec() -> FamilySpec:
    """Free coefficients plus cos((n+1)^(1/2)) / (n+1) perturbations."""
    return FamilySpec(
        kind=FamilyKind.asymptotically_periodic,
        alpha=[1.0],
        beta=[0.0],
        eps_a=0.2,
        eps_b=0.2,
        gamma=0.5,
        kappa=1.0,
    )


@pytest.fixture
def decaying_model(decaying_spec) -> CoefficientModel:
    return make_family(decaying_spec)


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


FREE_CONFIG = """\
family.kind = "constant"
family.N = 1
family.alpha = [1.0]
family.beta = [0.0]
grid.lo = -1.5
grid.hi = 1.5
grid.count = 31
numerics.n_max = 512
numerics.ladder = [16, 32]
stolz.length = 1024
stolz.reconstruction_span = 100
"""


@pytest.fixture
def write_config(tmp_path):
    """Write run-config text to tmp_path and return its path."""

    def _write(text: str, name: str = "run.toml") -> Path:
        path = tmp_path / name
        path.write_text(text)
        return path

    return _write


@pytest.fixture
def free_config(write_config) -> Path:
    return write_config(FREE_CONFIG)



@pytest.fixture
def free_config_text() -> str:
    return FREE_CONFIG
