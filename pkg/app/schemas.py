from enum import Enum
from pathlib import Path
from typing import Any, Self

from pydantic import BaseModel, ConfigDict, Field, model_validator


# --- Enums ---


class FamilyKind(str, Enum):
    constant = "constant"
    asymptotically_periodic = "asymptotically_periodic"
    periodic_modulation = "periodic_modulation"
    blend = "blend"
    intro_oscillation = "intro_oscillation"
    custom = "custom"


class OutputFormat(str, Enum):
    csv = "csv"
    json = "json"


# Kinds whose coefficients are built from N-periodic alpha, beta.
PERIODIC_KINDS = {
    FamilyKind.constant,
    FamilyKind.asymptotically_periodic,
    FamilyKind.periodic_modulation,
    FamilyKind.blend,
}


# --- Configuration Schemas ---


class FamilySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: FamilyKind
    N: int = Field(1, ge=1)
    alpha: list[float] = Field(default_factory=lambda: [1.0])
    beta: list[float] = Field(default_factory=lambda: [0.0])
    eps_a: float = 0.0
    eps_b: float = 0.0
    gamma: float = 0.5
    kappa: float = 1.0
    tau: float = 0.5
    a_values: list[float] | None = None
    b_values: list[float] | None = None

    @model_validator(mode="after")
    def check_parameters(self) -> Self:
        if self.kind in PERIODIC_KINDS:
            if len(self.alpha) != self.N or len(self.beta) != self.N:
                raise ValueError(f"alpha and beta need exactly N={self.N} entries")
            if min(self.alpha) <= 0:
                raise ValueError("alpha entries must be positive")
        if self.kind in (FamilyKind.asymptotically_periodic, FamilyKind.intro_oscillation):
            if not 0 < self.gamma < 1:
                raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.kind == FamilyKind.asymptotically_periodic:
            if self.kappa <= 0:
                raise ValueError("kappa must be positive")
            if abs(self.eps_a) >= min(self.alpha):
                raise ValueError("|eps_a| must be below min(alpha) to keep a_n positive")
        if self.kind in (FamilyKind.periodic_modulation, FamilyKind.blend):
            if not 0 < self.tau <= 1:
                raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.kind == FamilyKind.intro_oscillation and self.N != 1:
            raise ValueError("intro_oscillation has period N = 1")
        if self.kind == FamilyKind.custom:
            if not self.a_values or not self.b_values:
                raise ValueError("custom family needs a_values and b_values")
            if min(self.a_values) <= 0:
                raise ValueError("a_values must be positive")
        return self

    @property
    def period(self) -> int:
        return self.N + 2 if self.kind == FamilyKind.blend else self.N


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lo: float
    hi: float
    count: int = Field(101, ge=3)

    @model_validator(mode="after")
    def check_interval(self) -> Self:
        if not self.lo < self.hi:
            raise ValueError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        return self

    def points(self) -> list[float]:
        step = (self.hi - self.lo) / (self.count - 1)
        return [self.lo + j * step for j in range(self.count - 1)] + [self.hi]


class NumericsSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    i: int = Field(0, ge=0)
    r: int = Field(1, ge=1)
    n_max: int = Field(100_000, ge=64)
    tol: float = Field(1e-6, gt=0)
    window: int = Field(32, ge=2)
    delta_min: float = Field(1e-9, gt=0)
    delta_guard: float = Field(1e-6, gt=0)
    ladder: list[int] = Field(default_factory=lambda: [2**e for e in range(4, 15)])
    fit_tol: float = Field(0.05, gt=0)


class StolzSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    r_max: int = Field(3, ge=1)
    length: int = Field(4096, ge=64)
    reconstruction_span: int = Field(1000, ge=1)


class OutputSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: Path | None = None
    formats: list[OutputFormat] = Field(
        default_factory=lambda: [OutputFormat.csv, OutputFormat.json]
    )


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: FamilySpec
    grid: GridSpec
    numerics: NumericsSpec = Field(default_factory=NumericsSpec)
    stolz: StolzSpec = Field(default_factory=StolzSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)
    seed: int = 0

    @model_validator(mode="after")
    def check_residue(self) -> Self:
        period = self.family.period
        if not self.numerics.i < period:
            raise ValueError(f"residue i={self.numerics.i} must be below the period {period}")
        if self.numerics.n_max < 4 * period * self.numerics.window:
            raise ValueError("n_max is too small for the period and convergence window")
        return self


# --- Report Schemas ---


class DensityPoint(BaseModel):
    x: float
    status: str
    g: float | None = None
    h: float | None = None
    nu_prime: float | None = None
    converged: bool = False
    mu_L: dict[str, float | None] = Field(default_factory=dict)


class SineFitPoint(BaseModel):
    x: float
    status: str
    amplitude: float | None = None
    eta: float | None = None
    tail_rms: float | None = None
    phase_limit_gap: float | None = None
    proximity: float | None = None
    stale: bool | None = None
    ok: bool = False


class TuranPoint(BaseModel):
    x: float
    status: str
    g: dict[str, float | None] = Field(default_factory=dict)
    converged: dict[str, bool] = Field(default_factory=dict)
    spread: float | None = None


class BoundsPoint(BaseModel):
    x: float
    status: str
    c_low: float | None = None
    c_high: float | None = None
    c: float | None = None


class StolzRecord(BaseModel):
    target: str
    r: int
    s: int
    membership: str
    tail_slopes: dict[str, float | None]
    totals: dict[str, float | None]


class CarlemanRecord(BaseModel):
    n_max: int
    partial_sum: float
    tail_slope: float | None
    divergent: bool | None


class ReconstructionRecord(BaseModel):
    x: float
    status: str
    M: int | None = None
    worst_deviation: float | None = None
    worst_span: tuple[int, int] | None = None


class RunReport(BaseModel):
    command: str
    version: str
    wall_time_s: float
    config: str
    summary: dict[str, Any] = Field(default_factory=dict)
    records: list[dict[str, Any]] = Field(default_factory=list)


class ErrorReport(BaseModel):
    command: str
    error: str
    failed: int
    total: int
    reasons: dict[str, int]
