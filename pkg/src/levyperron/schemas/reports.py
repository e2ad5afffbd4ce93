"""Pydantic v2 schemas for certification, solver and regularity reports.

Every report serializes to JSON through ``model_dump(by_alias=True)``; aliases
keep the mathematical flag names (``pass_H1``) in the artifacts while the
Python attributes stay snake_case.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class _Report(BaseModel):
    model_config = ConfigDict(populate_by_name=True)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


class AnnulusReport(_Report):
    """Mass, first moment and symmetric lower set of K over B_{2delta} minus B_delta."""

    delta: float
    mass: float
    mass_bound: float
    first_moment: float
    moment_bound: float
    lower_set_fraction: float
    fraction_stderr: float = 0.0
    quadrature_error: float = 0.0
    integrable: bool = True
    pass_h1: bool = Field(alias="pass_H1")
    pass_h2: bool = Field(alias="pass_H2")
    pass_h3: bool = Field(alias="pass_H3")


class ConeReport(_Report):
    """Inward cone mass at a probe near the boundary versus the degenerate-class threshold."""

    x: list[float]
    r: float
    y: list[float]
    s: float
    cone_mass: float
    required_mass: float
    below_s_min: bool = False
    passed: bool = Field(alias="pass")


class ConeConstants(_Report):
    """Constants produced by the (H3) to degenerate-class sufficiency construction."""

    C4: float
    mu_C4: float
    lambda_bar: float
    mu_bar: float


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


class EllipticityReport(_Report):
    """Worst slacks of the uniform-ellipticity sandwich over a sample set."""

    samples: int
    modulus: str
    worst_lower_slack: float
    worst_upper_slack: float
    failures: list[int] = Field(default_factory=list)
    passed: bool


class AxiomReport(_Report):
    """Per-axiom pass flags and worst observed values over a sample set."""

    samples: int
    a0_pass: bool = Field(alias="A0")
    a2_pass: bool = Field(alias="A2")
    a3_pass: bool = Field(alias="A3")
    a4_pass: bool = Field(alias="A4")
    a0_worst_ratio: float = 0.0
    a2_worst: float = 0.0
    a3_worst: float = 0.0
    a4_worst: float = 0.0

    @property
    def passed(self) -> bool:
        return self.a0_pass and self.a2_pass and self.a3_pass and self.a4_pass


# ---------------------------------------------------------------------------
# Barriers
# ---------------------------------------------------------------------------


class BarrierReport(_Report):
    """Certified constants of one barrier inequality.

    ``epsilon`` is half the worst normalized margin over the probes and
    ``worst_slack`` the margin left after subtracting it. ``epsilon_theory``
    holds the lower bound read off the kernel masses when one is available.
    """

    kind: str
    alpha: float | None = None
    r0: float | None = None
    s0: float | None = None
    epsilon: float = 0.0
    epsilon_theory: float | None = None
    constant: float | None = None
    worst_slack: float = 0.0
    probes: int = 0
    passed: bool = False
    failures: list[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


class SolveReport(_Report):
    """Outcome of the monotone Perron iteration."""

    mode: str
    iterations: int
    converged: bool
    residual_history: list[float]
    max_delta_history: list[float]
    monotone: bool
    sandwich_ok: bool
    clamp_count: int = 0
    max_residual: float = 0.0
    active_indices: list[tuple[str, str]] = Field(default_factory=list)
    runtime_seconds: float = Field(default=0.0, exclude=True)


class DiscreteCheckReport(_Report):
    """Residual sign check of a grid function at every interior node."""

    kind: str
    tolerance: float
    worst_violation: float
    worst_node: list[float] | None = None
    violations: int
    passed: bool


# ---------------------------------------------------------------------------
# Regularity
# ---------------------------------------------------------------------------


class HolderReport(_Report):
    """Dyadic oscillation profile and the fitted Hoelder exponent."""

    center: list[float]
    base: float
    levels: int
    radii: list[float]
    minima: list[float]
    maxima: list[float]
    oscillations: list[float]
    alpha_hat: float | None = None
    intercept: float | None = None
    r_value: float | None = None
    slope_stderr: float | None = None
    epsilon4_implied: float | None = None
    perfect_regularity: bool = False


class HarnackReport(_Report):
    """Superlevel-set measures of a nonnegative supersolution and the fitted tail bound.

    C and epsilon3 come from the log-log regression; ``slack`` is the factor by
    which the worst measurement exceeds that bound and ``C_envelope`` = slack * C.
    """

    center: list[float]
    radius: float
    thresholds: list[float]
    measures: list[float]
    u_center: float
    C1: float
    epsilon3: float
    C: float
    C_envelope: float
    slack: float
    max_slack: float
    fallback: bool = False
    majorizes: bool
    passed: bool
