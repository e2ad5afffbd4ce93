"""Pydantic v2 schemas for ellipticity and quadrature parameters.

EllipticityParams carries the constants of the kernel class (order, lower
and upper ellipticity, annular measure fraction, gradient constant).
QuadratureParams controls the dyadic annular rule used by every operator
evaluation.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator


class EllipticityParams(BaseModel):
    """Constants of the kernel class: sigma, lambda, Lambda, mu, C0."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    sigma: float = Field(..., gt=0.0, lt=2.0)
    lambda_: float = Field(..., gt=0.0, alias="lambda")
    Lambda: float = Field(..., gt=0.0)
    mu: float = Field(default=1.0, gt=0.0, le=1.0)
    C0: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_class(self) -> EllipticityParams:
        if self.lambda_ > self.Lambda:
            msg = f"lambda={self.lambda_} exceeds Lambda={self.Lambda}"
            raise ValueError(msg)
        if self.sigma < 1.0 and self.C0 != 0.0:
            msg = f"C0 must be 0 when sigma < 1 (sigma={self.sigma}, C0={self.C0})"
            raise ValueError(msg)
        return self

    @property
    def regime(self) -> Literal["subcritical", "critical", "supercritical"]:
        """Compensation regime of the jump difference."""
        if self.sigma < 1.0:
            return "subcritical"
        if self.sigma == 1.0:
            return "critical"
        return "supercritical"


class QuadratureParams(BaseModel):
    """Dyadic annular quadrature controls.

    ``inner_radius`` is the near-field cut rho (None means twice the field step),
    ``truncation`` the far-field cut R. Beyond R the contribution is not summed
    but bounded and returned as an interval half-width.
    """

    model_config = ConfigDict(frozen=True)

    inner_radius: float | None = Field(default=None, gt=0.0)
    truncation: float = Field(default=8.0, gt=0.0)
    annuli_per_decade: int = Field(default=24, ge=1)
    radial_nodes: int = Field(default=6, ge=1, le=32)
    angular_nodes: int = Field(default=32, ge=2)
    near_levels: int = Field(default=24, ge=1)
    tail_mode: Literal["interval", "ignore"] = "interval"

    @model_validator(mode="after")
    def _check_radii(self) -> QuadratureParams:
        if self.inner_radius is not None and self.inner_radius >= self.truncation:
            msg = f"inner_radius {self.inner_radius} must be below truncation {self.truncation}"
            raise ValueError(msg)
        if self.angular_nodes % 2:
            msg = f"angular_nodes must be even so every direction has its reflection, got {self.angular_nodes}"
            raise ValueError(msg)
        return self

    def resolved_inner_radius(self, step: float) -> float:
        """Near-field cut for a field with finite-difference step ``step``."""
        rho = self.inner_radius if self.inner_radius is not None else 2.0 * step
        if rho >= self.truncation:
            msg = f"near-field cut {rho} is not below truncation {self.truncation}"
            raise ValueError(msg)
        return rho

    def scaled(self, factor: float) -> QuadratureParams:
        """Same rule with both radii multiplied by ``factor``."""
        inner = None if self.inner_radius is None else self.inner_radius * factor
        return self.model_copy(update={"inner_radius": inner, "truncation": self.truncation * factor})
