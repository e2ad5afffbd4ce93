"""Pydantic v2 schema for one batch run.

A run is described by a single TOML file: the Bellman problem (domain,
kernels, index pairs, exterior datum, class constants), the lattice and
quadrature, the Perron solver, certification and diagnostics controls, and
the output directory. Field names mirror the mathematical symbols.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from levyperron.schemas.params import EllipticityParams, QuadratureParams


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# ---------------------------------------------------------------------------
# Problem
# ---------------------------------------------------------------------------


class DomainSpec(_Section):
    """Ball (center, radius) or box (lower, upper) with exterior-ball radius r_omega."""

    shape: Literal["ball", "box"] = "ball"
    center: list[float] | None = None
    radius: float | None = Field(default=None, gt=0.0)
    lower: list[float] | None = None
    upper: list[float] | None = None
    r_omega: float = Field(default=0.5, gt=0.0, lt=1.0)
    samples: int = Field(default=16, ge=1)
    boundary_csv: str | None = None

    @model_validator(mode="after")
    def _check_shape(self) -> DomainSpec:
        if self.shape == "ball" and (self.center is None or self.radius is None):
            msg = "ball domains need center and radius"
            raise ValueError(msg)
        if self.shape == "box":
            if self.lower is None or self.upper is None or len(self.lower) != len(self.upper):
                msg = "box domains need lower and upper corners of equal length"
                raise ValueError(msg)
        return self

    @property
    def dim(self) -> int:
        corner = self.center if self.shape == "ball" else self.lower
        return len(corner or [])


class KernelSpec(_Section):
    """Declared kernel: fractional A(2-sigma)|z|^{-n-sigma}, half-space weighted, or tabulated."""

    name: str = Field(..., min_length=1)
    type: Literal["fractional", "anisotropic", "table"] = "fractional"
    amplitude: float = Field(default=1.0, gt=0.0)
    axis: int = Field(default=0, ge=0)
    weight_positive: float = Field(default=1.0, ge=0.0)
    weight_negative: float = Field(default=1.0, ge=0.0)
    path: str | None = None

    @model_validator(mode="after")
    def _check_table(self) -> KernelSpec:
        if self.type == "table" and not self.path:
            msg = f"table kernel {self.name!r} needs a CSV path"
            raise ValueError(msg)
        return self


class PairSpec(_Section):
    """One index pair (a, b) with constant coefficients."""

    a: str
    b: str
    kernel: str
    c: float = 0.0
    f: float = 0.0
    drift: list[float] | None = None


class DatumSpec(_Section):
    """Exterior datum g by kind."""

    kind: Literal["constant", "cosine", "clipped_affine"] = "constant"
    value: float = 0.0
    amplitude: float = 1.0
    frequency: float = 1.0
    axis: int = 0
    slope: list[float] | None = None
    offset: float = 0.0
    clip: float = 1.0


class ProblemSpec(_Section):
    """Bellman-Isaacs problem: class constants, domain, datum, kernels and the index table."""

    sigma: float = Field(..., gt=0.0, lt=2.0)
    lambda_: float = Field(default=1.0, gt=0.0, alias="lambda")
    Lambda: float = Field(default=2.0, gt=0.0)
    mu: float = Field(default=1.0, gt=0.0, le=1.0)
    C0: float = Field(default=0.0, ge=0.0)
    gamma: float = Field(default=0.0, ge=0.0)
    barrier_kind: Literal["uniform", "degenerate"] = "uniform"
    domain: DomainSpec
    datum: DatumSpec = Field(default_factory=DatumSpec)
    kernels: list[KernelSpec] = Field(..., min_length=1)
    pairs: list[PairSpec] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _check_consistency(self) -> ProblemSpec:
        dim = self.domain.dim
        if self.sigma < 1.0 and self.C0 != 0.0:
            msg = f"C0 must be 0 when sigma < 1 (sigma={self.sigma}, C0={self.C0})"
            raise ValueError(msg)
        if self.barrier_kind == "degenerate" and self.gamma <= 0.0:
            msg = "barrier_kind 'degenerate' needs gamma > 0"
            raise ValueError(msg)
        names = [k.name for k in self.kernels]
        if len(set(names)) != len(names):
            msg = f"duplicate kernel names in {names}"
            raise ValueError(msg)
        for k in self.kernels:
            if k.axis >= dim:
                msg = f"kernel {k.name!r} axis {k.axis} out of range for dimension {dim}"
                raise ValueError(msg)
        for p in self.pairs:
            if p.kernel not in names:
                msg = f"pair ({p.a}, {p.b}) references undeclared kernel {p.kernel!r}"
                raise ValueError(msg)
            if p.drift is not None:
                if len(p.drift) != dim:
                    msg = f"pair ({p.a}, {p.b}) drift has length {len(p.drift)}, problem dimension is {dim}"
                    raise ValueError(msg)
                if self.sigma < 1.0 and any(v != 0.0 for v in p.drift):
                    msg = f"pair ({p.a}, {p.b}) has a drift but sigma={self.sigma} < 1"
                    raise ValueError(msg)
            if p.c < max(0.0, self.gamma):
                msg = f"pair ({p.a}, {p.b}) has c={p.c} below max(0, gamma={self.gamma})"
                raise ValueError(msg)
        if self.datum.kind == "clipped_affine" and (self.datum.slope is None or len(self.datum.slope) != dim):
            msg = f"clipped_affine datum needs a slope of length {dim}"
            raise ValueError(msg)
        return self

    @property
    def params(self) -> EllipticityParams:
        return EllipticityParams(sigma=self.sigma, lambda_=self.lambda_, Lambda=self.Lambda, mu=self.mu, C0=self.C0)


# ---------------------------------------------------------------------------
# Numerics
# ---------------------------------------------------------------------------


class GridSpec(_Section):
    """Lattice step, padding and the quadrature controls (R, rho and resolution)."""

    h: float = Field(..., gt=0.0)
    margin_nodes: int = Field(default=2, ge=1)
    truncation: float = Field(default=8.0, gt=0.0)
    inner_radius: float | None = Field(default=None, gt=0.0)
    annuli_per_decade: int = Field(default=24, ge=1)
    radial_nodes: int = Field(default=6, ge=1, le=32)
    angular_nodes: int = Field(default=32, ge=2)
    near_levels: int = Field(default=24, ge=1)
    tail_mode: Literal["interval", "ignore"] = "interval"

    @property
    def quadrature(self) -> QuadratureParams:
        return QuadratureParams(
            inner_radius=self.inner_radius,
            truncation=self.truncation,
            annuli_per_decade=self.annuli_per_decade,
            radial_nodes=self.radial_nodes,
            angular_nodes=self.angular_nodes,
            near_levels=self.near_levels,
            tail_mode=self.tail_mode,
        )


class SolverSpec(_Section):
    """Perron iteration controls.

    ``start`` selects the initial pair: the certified barrier envelopes, or the
    constants ``sub_value``/``super_value`` (also the fallback under --force).
    ``operator_field`` dumps I(x, w(x), w) of the solution at every interior node.
    """

    tol: float = Field(default=1e-9, gt=0.0)
    max_sweeps: int = Field(default=20_000, ge=1)
    mode: Literal["jacobi", "gauss-seidel"] = "gauss-seidel"
    start: Literal["barrier", "constant"] = "barrier"
    sub_value: float = 0.0
    super_value: float = 10.0
    check_tol: float = Field(default=1e-8, gt=0.0)
    operator_field: bool = True

    @model_validator(mode="after")
    def _check_order(self) -> SolverSpec:
        if self.sub_value > self.super_value:
            msg = f"sub_value {self.sub_value} exceeds super_value {self.super_value}"
            raise ValueError(msg)
        return self


class CertifySpec(_Section):
    """Certification controls for the kernel and barrier checks."""

    deltas: list[float] | None = None
    delta_count: int = Field(default=12, ge=1)
    lower_set_grid: int = Field(default=32, ge=2)
    base_point: list[float] | None = None
    cone_probes: int = Field(default=1, ge=0)
    radii: list[float] | None = None
    truncation: float = Field(default=1e5, gt=0.0)
    axiom_samples: int = Field(default=5, ge=0)


class DiagnosticsSpec(_Section):
    """Regularity diagnostics at interior centers."""

    centers: list[list[float]] = Field(default_factory=list)
    margin: float = Field(default=0.25, ge=0.0)
    base: float = Field(default=8.0, gt=1.0)
    levels: int = Field(default=3, ge=1)
    min_nodes: int = Field(default=8, ge=1)
    harnack_radius: float = Field(default=0.5, gt=0.0)
    thresholds: list[float] = Field(default_factory=lambda: [0.01, 0.02, 0.05, 0.1, 0.2])
    C1: float = Field(default=1.0, ge=0.0)
    harnack_slack: float = Field(default=2.0, ge=1.0)


class RunConfig(_Section):
    """Complete description of a batch run."""

    problem: ProblemSpec
    grid: GridSpec
    solver: SolverSpec = Field(default_factory=SolverSpec)
    certify: CertifySpec = Field(default_factory=CertifySpec)
    diagnostics: DiagnosticsSpec = Field(default_factory=DiagnosticsSpec)
    output_dir: str | None = None

    @model_validator(mode="after")
    def _check_dimensions(self) -> RunConfig:
        dim = self.problem.domain.dim
        for center in self.diagnostics.centers:
            if len(center) != dim:
                msg = f"diagnostic center {center} does not match dimension {dim}"
                raise ValueError(msg)
        base = self.certify.base_point
        if base is not None and len(base) != dim:
            msg = f"certify.base_point {base} does not match dimension {dim}"
            raise ValueError(msg)
        return self


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML run configuration.

    Relative CSV paths inside the file are resolved against its directory.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the TOML is malformed or fails validation.
    """
    path = Path(path)
    if not path.is_file():
        msg = f"config file not found: {path}"
        raise FileNotFoundError(msg)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        msg = f"config {path} is not valid TOML: {exc}"
        raise ValueError(msg) from exc
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as exc:
        msg = f"config {path} is invalid:\n{exc}"
        raise ValueError(msg) from exc
    return _resolve_paths(config, path.parent)


def _resolve_paths(config: RunConfig, root: Path) -> RunConfig:
    def resolve(value: str | None) -> str | None:
        if value is None or Path(value).is_absolute():
            return value
        return str(root / value)

    domain = config.problem.domain.model_copy(update={"boundary_csv": resolve(config.problem.domain.boundary_csv)})
    kernels = [k.model_copy(update={"path": resolve(k.path)}) for k in config.problem.kernels]
    problem = config.problem.model_copy(update={"domain": domain, "kernels": kernels})
    return config.model_copy(update={"problem": problem})
