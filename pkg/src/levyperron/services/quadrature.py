"""Dyadic annular quadrature for singular Levy kernels.

The integral of delta_z u(x) K(x, z) over R^n is split at the near-field cut
rho and the truncation R:

- far field rho <= |z| <= R: geometric radial shells with Gauss-Legendre nodes
  times a direction rule, kernel values folded into the weights;
- near field |z| < rho: per-direction radial moments of K (dyadic shells down
  to a power-law remainder) paired with the centered second-difference
  Hessian, plus the first moment when sigma < 1;
- tail |z| > R: not summed; bounded from the kernel's annular mass bounds and
  returned as an interval half-width.

The rule is then written as a linear functional sum_p c_p u(p) so that field
evaluation and lattice assembly share the same coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from levyperron.models.fields import Field, derivative_stencil
from levyperron.models.kernel import Kernel
from levyperron.schemas.params import QuadratureParams

_GROWTH_SHELLS = 400


def sphere_rule(dim: int, angular_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Directions on S^{dim-1} closed under reflection, with weights summing to the sphere area.

    Args:
        dim: Space dimension (1 to 3).
        angular_nodes: Resolution (circle points in 2D, azimuths in 3D).

    Returns:
        Unit directions (d, dim) and weights (d,).
    """
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if dim == 2:
        theta = 2.0 * math.pi * (np.arange(angular_nodes) + 0.5) / angular_nodes
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
        return dirs, np.full(angular_nodes, 2.0 * math.pi / angular_nodes)
    if dim == 3:
        cos_nodes, cos_weights = np.polynomial.legendre.leggauss(angular_nodes // 2)
        phi = 2.0 * math.pi * (np.arange(angular_nodes) + 0.5) / angular_nodes
        ct, ph = np.meshgrid(cos_nodes, phi, indexing="ij")
        st = np.sqrt(1.0 - ct**2)
        dirs = np.column_stack([(st * np.cos(ph)).ravel(), (st * np.sin(ph)).ravel(), ct.ravel()])
        weights = np.outer(cos_weights, np.full(angular_nodes, 2.0 * math.pi / angular_nodes)).ravel()
        return dirs, weights
    msg = f"direction rules exist for dimensions 1 to 3, got {dim}"
    raise ValueError(msg)


def radial_rule(inner: float, outer: float, per_decade: int, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on geometric shells covering [inner, outer]."""
    shells = max(1, math.ceil(per_decade * math.log10(outer / inner) - 1e-9))
    edges = np.geomspace(inner, outer, shells + 1)
    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    radii = (mid[:, None] + half[:, None] * gl_x[None, :]).ravel()
    weights = (half[:, None] * gl_w[None, :]).ravel()
    return radii, weights


def polar_rule(inner: float, outer: float, dim: int, q: QuadratureParams) -> tuple[np.ndarray, np.ndarray]:
    """Offsets z and volume weights for the annulus inner <= |z| <= outer."""
    radii, rw = radial_rule(inner, outer, q.annuli_per_decade, q.radial_nodes)
    dirs, dw = sphere_rule(dim, q.angular_nodes)
    z = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    w = (rw[:, None] * radii[:, None] ** (dim - 1) * dw[None, :]).ravel()
    return z, w


def compensation(sigma: float, z: np.ndarray) -> np.ndarray:
    """Indicator multiplying grad u(x) . z in delta_z u for the three regimes."""
    if sigma < 1.0:
        return np.zeros(len(z))
    if sigma > 1.0:
        return np.ones(len(z))
    return (np.linalg.norm(z, axis=1) < 1.0).astype(float)


@dataclass(frozen=True)
class AnnularRule:
    """Quadrature data of one kernel at one point.

    ``weights`` include kernel values; ``near_m1``/``near_m2`` are per-direction
    first and second radial moments of K inside B_rho.
    """

    x: np.ndarray
    sigma: float
    step: float
    rho: float
    truncation: float
    offsets: np.ndarray
    weights: np.ndarray
    chi: np.ndarray
    near_dirs: np.ndarray
    near_m1: np.ndarray
    near_m2: np.ndarray
    tail_mass: float
    tail_moment: float
    tail_mode: str

    @property
    def uses_first_moment(self) -> bool:
        return self.sigma < 1.0

    def first_moment(self) -> np.ndarray:
        return self.near_m1 @ self.near_dirs

    def second_moment(self) -> np.ndarray:
        return np.einsum("d,di,dj->ij", self.near_m2, self.near_dirs, self.near_dirs)


def _near_moments(kernel: Kernel, x: np.ndarray, rho: float, q: QuadratureParams) -> tuple[np.ndarray, ...]:
    dirs, dw = sphere_rule(kernel.dim, q.angular_nodes)
    gl_x, gl_w = np.polynomial.legendre.leggauss(q.radial_nodes)
    n = kernel.dim
    m1 = np.zeros(len(dirs))
    m2 = np.zeros(len(dirs))
    last1 = np.zeros(len(dirs))
    last2 = np.zeros(len(dirs))
    for level in range(q.near_levels):
        b = rho * 2.0**-level
        a = 0.5 * b
        r = 0.5 * (a + b) + 0.5 * (b - a) * gl_x
        rw = 0.5 * (b - a) * gl_w
        z = (r[None, :, None] * dirs[:, None, :]).reshape(-1, n)
        k = kernel(x, z).reshape(len(dirs), len(r))
        base = k * (rw * r ** (n - 1))[None, :] * dw[:, None]
        last1 = (base * r[None, :]).sum(axis=1)
        last2 = (base * r[None, :] ** 2).sum(axis=1)
        m1 += last1
        m2 += last2
    # power-law remainder below the deepest shell
    m2 += last2 / (2.0 ** (2.0 - kernel.sigma) - 1.0)
    if kernel.sigma < 1.0:
        m1 += last1 / (2.0 ** (1.0 - kernel.sigma) - 1.0)
    else:
        m1 = np.zeros_like(m1)
    return dirs, m1, m2


def build_rule(kernel: Kernel, x: np.ndarray, step: float, q: QuadratureParams) -> AnnularRule:
    """Annular rule of ``kernel`` at ``x`` for a field with difference step ``step``.

    Args:
        kernel: Levy kernel.
        x: Evaluation point.
        step: Finite-difference step of the field (sets the default near cut 2 step).
        q: Quadrature controls.

    Returns:
        AnnularRule with far nodes, near moments and tail bounds.

    Raises:
        ValueError: When sigma = 1 and the truncation does not reach the compensation ball,
            or when the near-field moments are not finite.
    """
    x = np.asarray(x, dtype=float)
    rho = q.resolved_inner_radius(step)
    if kernel.sigma == 1.0 and q.truncation < 1.0:
        msg = f"sigma = 1 needs truncation >= 1 to cover the compensation ball, got {q.truncation}"
        raise ValueError(msg)
    offsets, volume = polar_rule(rho, q.truncation, kernel.dim, q)
    weights = volume * kernel(x, offsets)
    dirs, m1, m2 = _near_moments(kernel, x, rho, q)
    if not (np.all(np.isfinite(m2)) and np.all(np.isfinite(m1))):
        msg = f"near-field moments of kernel {kernel.label} are not finite at x={x.tolist()}"
        raise ValueError(msg)
    tail_mass, tail_moment = kernel.tail_bounds(q.truncation)
    return AnnularRule(
        x=x,
        sigma=kernel.sigma,
        step=step,
        rho=rho,
        truncation=q.truncation,
        offsets=offsets,
        weights=weights,
        chi=compensation(kernel.sigma, offsets),
        near_dirs=dirs,
        near_m1=m1,
        near_m2=m2,
        tail_mass=tail_mass,
        tail_moment=tail_moment,
        tail_mode=q.tail_mode,
    )


@dataclass(frozen=True)
class LinearFunctional:
    """Truncated operator value at x as sum_p c_p u(p).

    Far points are x + z_j; local points are the derivative stencil with the
    center first. ``apply`` may read the local part from another field, which
    is how one-sided branches of a minimum are probed at kinks.
    """

    x: np.ndarray
    far_points: np.ndarray
    far_coefs: np.ndarray
    local_points: np.ndarray
    local_coefs: np.ndarray
    grad_coefs: np.ndarray
    sigma: float
    tail_mass: float
    tail_moment: float
    truncation: float
    tail_mode: str

    @property
    def points(self) -> np.ndarray:
        return np.vstack([self.far_points, self.local_points])

    @property
    def coefs(self) -> np.ndarray:
        return np.concatenate([self.far_coefs, self.local_coefs])

    def apply(self, u: Field, local: Field | None = None) -> float:
        far = float(self.far_coefs @ u(self.far_points)) if len(self.far_points) else 0.0
        near = float(self.local_coefs @ (local or u)(self.local_points))
        return far + near

    def combined(self, factor: float, drift: np.ndarray | None = None) -> LinearFunctional:
        """factor times this functional plus drift . grad on the same stencil."""
        local = factor * self.local_coefs
        if drift is not None:
            local = local + drift @ self.grad_coefs
        return LinearFunctional(
            x=self.x,
            far_points=self.far_points,
            far_coefs=factor * self.far_coefs,
            local_points=self.local_points,
            local_coefs=local,
            grad_coefs=self.grad_coefs,
            sigma=self.sigma,
            tail_mass=abs(factor) * self.tail_mass,
            tail_moment=abs(factor) * self.tail_moment,
            truncation=self.truncation,
            tail_mode=self.tail_mode,
        )

    def halfwidth(self, u: Field) -> float:
        """Bound of the excluded tail contribution for the field u."""
        if self.tail_mode == "ignore":
            return 0.0
        grad_part = 0.0
        if self.sigma > 1.0:
            grad_part = float(np.linalg.norm(self.grad_coefs @ u(self.local_points))) * self.tail_moment
        bound = u.sup_bound()
        if bound is not None:
            return 2.0 * bound * self.tail_mass + grad_part
        c, beta = u.growth()
        # shell-by-shell bound for fields with polynomial growth
        center = abs(u.value(self.x))
        radius = self.truncation
        xnorm = float(np.linalg.norm(self.x))
        mass_left = self.tail_mass
        total = 0.0
        decay = 2.0 ** (-self.sigma)
        shell = self.tail_mass * (1.0 - decay)
        for _ in range(_GROWTH_SHELLS):
            term = (c * (1.0 + xnorm + 2.0 * radius) ** beta + center) * shell
            total += term
            mass_left -= shell
            if term <= 1e-15 * total or mass_left <= 0.0:
                break
            radius *= 2.0
            shell *= decay
        return total + grad_part


def linear_functional(rule: AnnularRule) -> LinearFunctional:
    """Write the rule as coefficients on far points and on the derivative stencil."""
    points, grad, hess = derivative_stencil(rule.x, rule.step)
    gradient_vec = -(rule.weights * rule.chi) @ rule.offsets
    if rule.uses_first_moment:
        gradient_vec = gradient_vec + rule.first_moment()
    local = gradient_vec @ grad + 0.5 * np.einsum("ij,ijs->s", rule.second_moment(), hess)
    local[0] -= rule.weights.sum()
    return LinearFunctional(
        x=rule.x,
        far_points=rule.x + rule.offsets,
        far_coefs=rule.weights.copy(),
        local_points=points,
        local_coefs=local,
        grad_coefs=grad,
        sigma=rule.sigma,
        tail_mass=rule.tail_mass,
        tail_moment=rule.tail_moment,
        truncation=rule.truncation,
        tail_mode=rule.tail_mode,
    )
