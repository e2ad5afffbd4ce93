"""Levy kernel domain object.

A Kernel is a nonnegative density K(x, z) over offsets z != 0 together with
the ellipticity constants it is declared against. Evaluation is vectorized
over offsets and pure, so a kernel can be shared across worker threads.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from levyperron.schemas.params import EllipticityParams

DensityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
ShellBoundFn = Callable[[float], float]

_TAIL_SHELLS = 200


def unit_sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere S^{dim-1} (2 for dim 1)."""
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


@dataclass(frozen=True)
class Kernel:
    """Levy density with ellipticity metadata.

    Args:
        density: Vectorized map (x of shape (n,), z of shape (m, n)) -> (m,) values.
        params: Class constants the kernel is declared against.
        dim: Space dimension n.
        label: Identifier used in reports.
        x_dependent: Whether the density varies with x.
        shell_mass: Upper bound of the mass over B_{2a} minus B_a as a function of a.
            Defaults to the (H1) bound (2 - sigma) Lambda a^{-sigma}.
        shell_moment: Upper bound of the integral of |z| K over the same annulus.
    """

    density: DensityFn
    params: EllipticityParams
    dim: int
    label: str = "K"
    x_dependent: bool = False
    shell_mass: ShellBoundFn | None = field(default=None, repr=False)
    shell_moment: ShellBoundFn | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.dim < 1 or self.dim > 3:
            msg = f"kernels are supported in dimensions 1 to 3, got {self.dim}"
            raise ValueError(msg)

    def __call__(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        values = np.asarray(self.density(np.asarray(x, dtype=float), z), dtype=float)
        if np.any(values < 0.0):
            msg = f"kernel {self.label} has negative density values"
            raise ValueError(msg)
        return values

    @property
    def sigma(self) -> float:
        return self.params.sigma

    # ------------------------------------------------------------------
    # Tail bounds
    # ------------------------------------------------------------------

    def annulus_mass_bound(self, a: float) -> float:
        if self.shell_mass is not None:
            return self.shell_mass(a)
        return (2.0 - self.sigma) * self.params.Lambda * a ** (-self.sigma)

    def annulus_moment_bound(self, a: float) -> float:
        if self.shell_moment is not None:
            return self.shell_moment(a)
        return 2.0 * a * self.annulus_mass_bound(a)

    def tail_bounds(self, radius: float) -> tuple[float, float]:
        """Bounds of the mass and first absolute moment of K outside B_radius.

        Dyadic shells are summed from ``radius``; when they have not died out
        after the shell budget the series is closed with its geometric remainder,
        which is exact for shell bounds that are powers of a.

        Raises:
            ValueError: If the shell bounds do not decay geometrically.
        """
        with_moment = self.sigma > 1.0
        mass: list[float] = []
        moment: list[float] = []
        mass_total = moment_total = 0.0
        a = radius
        for _ in range(_TAIL_SHELLS):
            mass.append(self.annulus_mass_bound(a))
            moment.append(self.annulus_moment_bound(a) if with_moment else 0.0)
            mass_total += mass[-1]
            moment_total += moment[-1]
            if mass[-1] <= 1e-16 * mass_total and moment[-1] <= 1e-16 * max(moment_total, 1e-300):
                return mass_total, moment_total
            a *= 2.0
        return self._closed_sum(mass, "mass"), self._closed_sum(moment, "moment")

    def _closed_sum(self, terms: list[float], name: str) -> float:
        total = math.fsum(terms)
        last, previous, earlier = terms[-1], terms[-2], terms[-3]
        if last == 0.0:
            return total
        ratio = last / previous if previous > 0.0 else math.inf
        trend = previous / earlier if earlier > 0.0 else math.inf
        if ratio >= 1.0 or abs(ratio - trend) > 1e-6 * ratio:
            msg = f"{name} shell bounds of kernel {self.label} do not decay geometrically past {_TAIL_SHELLS} shells"
            raise ValueError(msg)
        return total + last * ratio / (1.0 - ratio)

    # ------------------------------------------------------------------
    # Arithmetic
    # ------------------------------------------------------------------

    def scaled(self, factor: float, label: str | None = None) -> Kernel:
        """The kernel factor * K with scaled tail bounds."""
        if factor <= 0.0:
            msg = f"kernel scale factor must be positive, got {factor}"
            raise ValueError(msg)
        base = self

        def density(x: np.ndarray, z: np.ndarray) -> np.ndarray:
            return factor * base.density(x, z)

        return Kernel(
            density=density,
            params=self.params,
            dim=self.dim,
            label=label or f"{factor:g}*{self.label}",
            x_dependent=self.x_dependent,
            shell_mass=lambda a: factor * base.annulus_mass_bound(a),
            shell_moment=lambda a: factor * base.annulus_moment_bound(a),
        )

    def rescaled(self, r: float) -> Kernel:
        """K_r(x, z) = r^{n+sigma} K(r x, r z), the kernel seen by u(r .)."""
        if r <= 0.0:
            msg = f"rescaling radius must be positive, got {r}"
            raise ValueError(msg)
        base = self
        power = self.dim + self.sigma

        def density(x: np.ndarray, z: np.ndarray) -> np.ndarray:
            return r**power * base.density(r * x, r * z)

        return Kernel(
            density=density,
            params=self.params,
            dim=self.dim,
            label=f"{self.label}@{r:g}",
            x_dependent=self.x_dependent,
            shell_mass=lambda a: r**self.sigma * base.annulus_mass_bound(r * a),
            shell_moment=lambda a: r ** (self.sigma - 1.0) * base.annulus_moment_bound(r * a),
        )
