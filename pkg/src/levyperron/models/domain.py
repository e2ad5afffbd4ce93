"""Bounded domains with the uniform exterior ball condition.

Balls and boxes are supported exactly: containment, signed boundary distance,
boundary samples with inward unit normals, and exterior centers y^r = x - r n.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np


@dataclass(frozen=True)
class BoundarySample:
    """A boundary point with its inward unit normal."""

    point: np.ndarray
    normal: np.ndarray

    def exterior_center(self, r: float) -> np.ndarray:
        """Center of the exterior ball of radius r touching the boundary at ``point``."""
        return self.point - r * self.normal


@dataclass(frozen=True)
class Domain:
    """Bounded open set (ball or box) with exterior-ball radius ``r_omega`` < 1.

    Args:
        shape: ``ball`` or ``box``.
        dim: Space dimension.
        center: Ball center (ball only).
        radius: Ball radius (ball only).
        lower: Lower box corner (box only).
        upper: Upper box corner (box only).
        r_omega: Uniform exterior-ball radius.
        samples: Boundary samples used by the barrier constructions.
    """

    shape: Literal["ball", "box"]
    dim: int
    center: np.ndarray | None = None
    radius: float | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    r_omega: float = 0.5
    samples: tuple[BoundarySample, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.r_omega < 1.0:
            msg = f"r_omega must lie in (0, 1), got {self.r_omega}"
            raise ValueError(msg)
        if self.shape == "ball" and (self.center is None or self.radius is None or self.radius <= 0.0):
            msg = "ball domains need a center and a positive radius"
            raise ValueError(msg)
        if self.shape == "box":
            if self.lower is None or self.upper is None or np.any(self.upper <= self.lower):
                msg = "box domains need lower < upper in every coordinate"
                raise ValueError(msg)

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def ball(cls, center: list[float] | np.ndarray, radius: float, r_omega: float = 0.5, n_samples: int = 16) -> Domain:
        c = np.asarray(center, dtype=float)
        domain = cls(shape="ball", dim=c.size, center=c, radius=float(radius), r_omega=r_omega)
        return domain.with_samples(domain.default_samples(n_samples))

    @classmethod
    def box(
        cls, lower: list[float] | np.ndarray, upper: list[float] | np.ndarray, r_omega: float = 0.5, n_per_face: int = 3
    ) -> Domain:
        lo = np.asarray(lower, dtype=float)
        up = np.asarray(upper, dtype=float)
        domain = cls(shape="box", dim=lo.size, lower=lo, upper=up, r_omega=r_omega)
        return domain.with_samples(domain.default_samples(n_per_face))

    def with_samples(self, samples: list[BoundarySample] | tuple[BoundarySample, ...]) -> Domain:
        return Domain(
            shape=self.shape,
            dim=self.dim,
            center=self.center,
            radius=self.radius,
            lower=self.lower,
            upper=self.upper,
            r_omega=self.r_omega,
            samples=tuple(samples),
        )

    # ------------------------------------------------------------------
    # Geometry
    # ------------------------------------------------------------------

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if self.shape == "ball":
            assert self.center is not None and self.radius is not None
            return self.center - self.radius, self.center + self.radius
        assert self.lower is not None and self.upper is not None
        return self.lower.copy(), self.upper.copy()

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the boundary, positive inside and negative outside."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.shape == "ball":
            return self.radius - np.linalg.norm(p - self.center, axis=1)
        inside = np.minimum(p - self.lower, self.upper - p).min(axis=1)
        excess = np.maximum(np.maximum(self.lower - p, p - self.upper), 0.0)
        outside = np.linalg.norm(excess, axis=1)
        return np.where(inside > 0.0, inside, -outside)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Membership in the open set, points within ``tol`` of the boundary excluded."""
        return self.signed_distance(points) > tol

    def distance_to_boundary(self, points: np.ndarray) -> np.ndarray:
        return np.abs(self.signed_distance(points))

    @property
    def R0(self) -> float:
        """Half-width with the domain inside the slab |y_1| < R0."""
        lo, up = self.bbox
        return float(max(abs(lo[0]), abs(up[0])))

    @property
    def R1(self) -> float:
        """Radius with the domain inside B_{R1 - 1}."""
        if self.shape == "ball":
            return float(np.linalg.norm(self.center) + self.radius + 1.0)
        corners = np.array(list(itertools.product(*zip(self.lower, self.upper, strict=True))))
        return float(np.linalg.norm(corners, axis=1).max() + 1.0)

    # ------------------------------------------------------------------
    # Boundary samples
    # ------------------------------------------------------------------

    def default_samples(self, count: int) -> list[BoundarySample]:
        if self.shape == "ball":
            return self._ball_samples(count)
        return self._box_samples(count)

    def _ball_samples(self, count: int) -> list[BoundarySample]:
        assert self.center is not None and self.radius is not None
        if self.dim == 1:
            outward = np.array([[1.0], [-1.0]])
        elif self.dim == 2:
            theta = 2.0 * math.pi * np.arange(count) / count
            outward = np.column_stack([np.cos(theta), np.sin(theta)])
        else:
            k = np.arange(count) + 0.5
            polar = np.arccos(1.0 - 2.0 * k / count)
            azimuth = math.pi * (1.0 + math.sqrt(5.0)) * k
            outward = np.column_stack(
                [np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)]
            )
        return [BoundarySample(point=self.center + self.radius * e, normal=-e) for e in outward]

    def _box_samples(self, per_face: int) -> list[BoundarySample]:
        assert self.lower is not None and self.upper is not None
        samples: list[BoundarySample] = []
        mid = 0.5 * (self.lower + self.upper)
        for axis in range(self.dim):
            for side, bound in ((-1.0, self.lower[axis]), (1.0, self.upper[axis])):
                outward = np.zeros(self.dim)
                outward[axis] = side
                others = [i for i in range(self.dim) if i != axis]
                if not others:
                    point = mid.copy()
                    point[axis] = bound
                    samples.append(BoundarySample(point=point, normal=-outward))
                    continue
                fractions = (np.arange(per_face) + 0.5) / per_face
                for offsets in itertools.product(fractions, repeat=len(others)):
                    point = mid.copy()
                    point[axis] = bound
                    for i, t in zip(others, offsets, strict=True):
                        point[i] = self.lower[i] + t * (self.upper[i] - self.lower[i])
                    samples.append(BoundarySample(point=point, normal=-outward))
        if self.dim > 1:
            for signs in itertools.product((-1.0, 1.0), repeat=self.dim):
                s = np.asarray(signs)
                point = np.where(s > 0, self.upper, self.lower)
                samples.append(BoundarySample(point=point, normal=-s / math.sqrt(self.dim)))
        return samples

    def verify_exterior_balls(self, cloud: np.ndarray, radii: list[float] | np.ndarray) -> tuple[bool, float]:
        """Check that each closed exterior ball meets the closure only at its touching point.

        Args:
            cloud: Points of the closed domain used as witnesses.
            radii: Radii up to ``r_omega`` to test.

        Returns:
            Pass flag and the worst margin min(|p - y^r| - r) over witnesses away from the touching point.
        """
        pts = np.atleast_2d(np.asarray(cloud, dtype=float))
        worst = math.inf
        for sample in self.samples:
            away = np.linalg.norm(pts - sample.point, axis=1) > 1e-9
            for r in radii:
                if r > self.r_omega + 1e-12:
                    msg = f"exterior-ball radius {r} exceeds r_omega={self.r_omega}"
                    raise ValueError(msg)
                center = sample.exterior_center(float(r))
                if np.any(away):
                    margin = float((np.linalg.norm(pts[away] - center, axis=1) - r).min())
                    worst = min(worst, margin)
        return worst > -1e-12, worst
