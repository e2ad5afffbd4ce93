"""Kernel constructors and numerical certification of the kernel class.

Kernels are built from a declared type (fractional, anisotropic, table) and
checked annulus by annulus against the upper mass bound (H1), the first-moment
bound (H2) and the symmetric lower set (H3). Near the boundary the weaker
cone condition is checked probe by probe.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import structlog
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator

from levyperron.models.domain import BoundarySample, Domain
from levyperron.models.kernel import Kernel, unit_sphere_area
from levyperron.schemas.params import EllipticityParams, QuadratureParams
from levyperron.schemas.reports import AnnulusReport, ConeConstants, ConeReport
from levyperron.services.quadrature import radial_rule, sphere_rule

logger = structlog.get_logger(__name__)


def _power_integral(a: float, b: float, p: float) -> float:
    """Integral of r^p over [a, b]."""
    if p == -1.0:
        return math.log(b / a)
    return (b ** (p + 1.0) - a ** (p + 1.0)) / (p + 1.0)


def _radial_norm(z: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(z, axis=1)
    return np.where(r > 0.0, r, np.inf)


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def make_fractional_kernel(params: EllipticityParams, A: float, dim: int = 1, label: str | None = None) -> Kernel:
    """The x-independent kernel K(z) = A (2 - sigma) |z|^{-n-sigma}.

    Args:
        params: Class constants the kernel is declared against.
        A: Amplitude, positive.
        dim: Space dimension.
        label: Report label.

    Returns:
        Kernel with exact annular mass and moment bounds.

    Raises:
        ValueError: If A is not positive.
    """
    if A <= 0.0:
        msg = f"fractional kernel amplitude must be positive, got {A}"
        raise ValueError(msg)
    sigma = params.sigma
    scale = A * (2.0 - sigma)
    area = unit_sphere_area(dim)

    def density(x: np.ndarray, z: np.ndarray) -> np.ndarray:
        return scale * _radial_norm(z) ** (-dim - sigma)

    return Kernel(
        density=density,
        params=params,
        dim=dim,
        label=label or f"frac(A={A:g})",
        shell_mass=lambda a: scale * area * _power_integral(a, 2.0 * a, -1.0 - sigma),
        shell_moment=lambda a: scale * area * _power_integral(a, 2.0 * a, -sigma),
    )


def make_anisotropic_kernel(
    params: EllipticityParams,
    A: float,
    dim: int = 1,
    axis: Sequence[float] | None = None,
    weight_positive: float = 1.0,
    weight_negative: float = 1.0,
    label: str | None = None,
) -> Kernel:
    """Fractional profile with separate weights on the half-spaces {z.e > 0} and {z.e < 0}.

    A zero weight gives a one-sided kernel; unequal weights give a tilted,
    non-symmetric kernel with nonzero first moment.
    """
    if A <= 0.0 or weight_positive < 0.0 or weight_negative < 0.0:
        msg = (
            "anisotropic kernel needs A > 0 and nonnegative weights, "
            f"got A={A}, weights=({weight_positive}, {weight_negative})"
        )
        raise ValueError(msg)
    e = np.zeros(dim) if axis is None else np.asarray(axis, dtype=float)
    if axis is None:
        e[0] = 1.0
    norm = float(np.linalg.norm(e))
    if e.size != dim or norm == 0.0:
        msg = f"anisotropy axis must be a nonzero vector of dimension {dim}"
        raise ValueError(msg)
    e = e / norm
    sigma = params.sigma
    scale = A * (2.0 - sigma)
    half_area = 0.5 * unit_sphere_area(dim)
    weight_sum = weight_positive + weight_negative

    def density(x: np.ndarray, z: np.ndarray) -> np.ndarray:
        side = np.where(z @ e > 0.0, weight_positive, weight_negative)
        return scale * side * _radial_norm(z) ** (-dim - sigma)

    return Kernel(
        density=density,
        params=params,
        dim=dim,
        label=label or f"aniso(A={A:g},+{weight_positive:g},-{weight_negative:g})",
        shell_mass=lambda a: scale * half_area * weight_sum * _power_integral(a, 2.0 * a, -1.0 - sigma),
        shell_moment=lambda a: scale * half_area * weight_sum * _power_integral(a, 2.0 * a, -sigma),
    )


def make_table_kernel(
    params: EllipticityParams, points: np.ndarray, density: np.ndarray, label: str = "table"
) -> Kernel:
    """Kernel interpolated from tabulated values.

    The profile K(z)|z|^{n+sigma} is interpolated (piecewise linear; nearest
    value outside the convex hull) and multiplied back by |z|^{-n-sigma}.
    Tail bounds fall back to the (H1) bound of ``params``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 1 and pts.shape[1] > 1 and np.ndim(points) == 1:
        pts = pts.T
    values = np.asarray(density, dtype=float)
    if len(values) != len(pts) or np.any(values < 0.0):
        msg = "table kernel needs one nonnegative density per tabulated offset"
        raise ValueError(msg)
    dim = pts.shape[1]
    sigma = params.sigma
    radii = np.linalg.norm(pts, axis=1)
    if np.any(radii == 0.0):
        msg = "table kernel offsets must be nonzero"
        raise ValueError(msg)
    profile = values * radii ** (dim + sigma)

    if dim == 1:
        order = np.argsort(pts[:, 0])
        zs, ps = pts[order, 0], profile[order]

        def interpolate(z: np.ndarray) -> np.ndarray:
            return np.interp(z[:, 0], zs, ps)

    else:
        linear = LinearNDInterpolator(pts, profile)
        nearest = NearestNDInterpolator(pts, profile)

        def interpolate(z: np.ndarray) -> np.ndarray:
            out = linear(z)
            missing = np.isnan(out)
            if np.any(missing):
                out[missing] = nearest(z[missing])
            return out

    def table_density(x: np.ndarray, z: np.ndarray) -> np.ndarray:
        return np.maximum(interpolate(z), 0.0) * _radial_norm(z) ** (-dim - sigma)

    return Kernel(density=table_density, params=params, dim=dim, label=label)


def fractional_amplitude_window(params: EllipticityParams, dim: int) -> tuple[float, float]:
    """Amplitudes for which the fractional kernel passes (H3) with fraction 1 and (H1).

    (H3) with the whole annulus needs A >= lambda 2^{n+sigma}; (H1) needs
    A |S^{n-1}| (1 - 2^{-sigma}) / sigma <= Lambda. The window may be empty.
    """
    sigma = params.sigma
    low = params.lambda_ * 2.0 ** (dim + sigma)
    high = params.Lambda * sigma / (unit_sphere_area(dim) * (1.0 - 2.0**-sigma))
    return low, high


def fractional_class_params(sigma: float, dim: int, A: float, mu: float = 1.0, C0: float = 0.0) -> EllipticityParams:
    """Tightest (lambda, Lambda) certifying the fractional kernel of amplitude A."""
    lam = A * 2.0 ** (-dim - sigma)
    big = A * unit_sphere_area(dim) * (1.0 - 2.0**-sigma) / sigma
    return EllipticityParams(sigma=sigma, lambda_=lam, Lambda=big, mu=mu, C0=C0)


# ---------------------------------------------------------------------------
# Annulus certification
# ---------------------------------------------------------------------------


def _annulus_rule(delta: float, dim: int, subshells: int, radial_nodes: int, angular: int) -> tuple[np.ndarray, ...]:
    radii, rw = radial_rule(delta, 2.0 * delta, max(1, round(subshells / math.log10(2.0))), radial_nodes)
    dirs, dw = sphere_rule(dim, angular)
    z = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    w = (rw[:, None] * radii[:, None] ** (dim - 1) * dw[None, :]).ravel()
    return z, w


def _annulus_moments(
    kernel: Kernel, x: np.ndarray, delta: float, subshells: int, q: QuadratureParams, coarse: bool
) -> tuple[float, np.ndarray]:
    shells = max(1, subshells // 2) if coarse else subshells
    nodes = max(1, q.radial_nodes - 2) if coarse else q.radial_nodes
    angular = max(2, (q.angular_nodes // 4) * 2) if coarse else q.angular_nodes
    z, w = _annulus_rule(delta, kernel.dim, shells, nodes, angular)
    k = kernel(x, z)
    return float(w @ k), (w * k) @ z


def find_symmetric_lower_set(
    kernel: Kernel,
    x: np.ndarray,
    delta: float,
    grid: int = 32,
    lam: float | None = None,
    q: QuadratureParams | None = None,
) -> AnnulusReport:
    """AnnulusReport of B_{2delta} minus B_delta whose (H3) entry is the largest
    symmetric set where K >= (2-sigma) lambda delta^{-n-sigma}.

    The annulus is cut into polar cells; a cell belongs to the set when K at
    its midpoint and at the reflected midpoint both clear the threshold, so the
    set is symmetric by construction. ``fraction_stderr`` is the binomial
    standard error over the cells.

    Args:
        kernel: Kernel to test.
        x: Base point.
        delta: Inner radius.
        grid: Angular resolution (even).
        lam: Lower constant; the kernel's lambda when omitted.
        q: Quadrature controls for the mass and moment entries.
    """
    return annulus_report(kernel, x, delta, q=q, grid=grid, lam=lam)


def _lower_set_fraction(
    kernel: Kernel, x: np.ndarray, delta: float, grid: int, lam: float | None, radial_cells: int = 16
) -> tuple[float, float]:
    if delta <= 0.0:
        msg = f"annulus radius must be positive, got {delta}"
        raise ValueError(msg)
    dim = kernel.dim
    sigma = kernel.sigma
    lam = kernel.params.lambda_ if lam is None else lam
    threshold = (2.0 - sigma) * lam * delta ** (-dim - sigma)
    edges = np.linspace(delta, 2.0 * delta, radial_cells + 1)
    r_mid = 0.5 * (edges[1:] + edges[:-1])
    r_measure = (edges[1:] ** dim - edges[:-1] ** dim) / dim
    dirs, dw = _cell_directions(dim, grid)
    z = (r_mid[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    cell = (r_measure[:, None] * dw[None, :]).ravel()
    ok = (kernel(x, z) >= threshold) & (kernel(x, -z) >= threshold)
    fraction = float(cell[ok].sum() / cell.sum())
    stderr = math.sqrt(max(fraction * (1.0 - fraction), 0.0) / len(cell))
    return fraction, stderr


def _cell_directions(dim: int, grid: int) -> tuple[np.ndarray, np.ndarray]:
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if grid % 2:
        msg = f"angular grid must be even, got {grid}"
        raise ValueError(msg)
    if dim == 2:
        theta = 2.0 * math.pi * (np.arange(grid) + 0.5) / grid
        return np.column_stack([np.cos(theta), np.sin(theta)]), np.full(grid, 2.0 * math.pi / grid)
    bands = grid // 2
    cos_mid = -1.0 + (np.arange(bands) + 0.5) * 2.0 / bands
    phi = 2.0 * math.pi * (np.arange(grid) + 0.5) / grid
    ct, ph = np.meshgrid(cos_mid, phi, indexing="ij")
    st = np.sqrt(1.0 - ct**2)
    dirs = np.column_stack([(st * np.cos(ph)).ravel(), (st * np.sin(ph)).ravel(), ct.ravel()])
    return dirs, np.full(bands * grid, 4.0 * math.pi / (bands * grid))


def annulus_report(
    kernel: Kernel,
    x: np.ndarray,
    delta: float,
    q: QuadratureParams | None = None,
    subshells: int = 8,
    grid: int = 32,
    rtol: float = 1e-8,
    lam: float | None = None,
) -> AnnulusReport:
    """One AnnulusReport; non-integrable annuli are reported, not raised.

    ``lam`` overrides the lower constant of the (H3) threshold.
    """
    q = q or QuadratureParams()
    x = np.asarray(x, dtype=float)
    sigma = kernel.sigma
    params = kernel.params
    mass_bound = (2.0 - sigma) * params.Lambda * delta ** (-sigma)
    moment_bound = params.Lambda * abs(1.0 - sigma) * delta ** (1.0 - sigma)
    fraction, stderr = _lower_set_fraction(kernel, x, delta, grid, lam)
    with np.errstate(over="ignore", invalid="ignore"):
        mass, moment = _annulus_moments(kernel, x, delta, subshells, q, coarse=False)
        coarse_mass, coarse_moment = _annulus_moments(kernel, x, delta, subshells, q, coarse=True)
    if not (math.isfinite(mass) and np.all(np.isfinite(moment))):
        logger.warning("annulus_not_integrable", kernel=kernel.label, delta=delta)
        return AnnulusReport(
            delta=delta,
            mass=math.inf,
            mass_bound=mass_bound,
            first_moment=math.inf,
            moment_bound=moment_bound,
            lower_set_fraction=fraction,
            fraction_stderr=stderr,
            quadrature_error=math.inf,
            integrable=False,
            pass_H1=False,
            pass_H2=False,
            pass_H3=fraction >= params.mu - 1e-12,
        )
    moment_norm = float(np.linalg.norm(moment))
    mass_err = abs(mass - coarse_mass)
    moment_err = float(np.linalg.norm(moment - coarse_moment))
    moment_tol = max(moment_err, rtol * delta * mass)
    return AnnulusReport(
        delta=delta,
        mass=mass,
        mass_bound=mass_bound,
        first_moment=moment_norm,
        moment_bound=moment_bound,
        lower_set_fraction=fraction,
        fraction_stderr=stderr,
        quadrature_error=mass_err,
        pass_H1=mass <= mass_bound * (1.0 + rtol) + mass_err,
        pass_H2=moment_norm <= moment_bound * (1.0 + rtol) + moment_tol,
        pass_H3=fraction >= params.mu - 1e-12,
    )


def check_annulus_bounds(
    kernel: Kernel,
    x: np.ndarray,
    deltas: Sequence[float],
    q: QuadratureParams | None = None,
    grid: int = 32,
    threads: int = 1,
) -> list[AnnulusReport]:
    """AnnulusReport per radius, computed in parallel and returned in input order.

    Args:
        kernel: Kernel to certify.
        x: Base point.
        deltas: Positive annulus radii.
        q: Quadrature controls (radial and angular resolution).
        grid: Angular resolution of the lower-set search.
        threads: Worker count.

    Returns:
        One report per radius.
    """
    if any(d <= 0.0 for d in deltas):
        msg = f"annulus radii must be positive, got {list(deltas)}"
        raise ValueError(msg)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        reports = list(pool.map(lambda d: annulus_report(kernel, x, float(d), q, grid=grid), deltas))
    failed = [r.delta for r in reports if not (r.pass_h1 and r.pass_h2 and r.pass_h3)]
    logger.info("annulus_bounds_checked", kernel=kernel.label, annuli=len(reports), failing=len(failed))
    return reports


def default_deltas(h: float, truncation: float, count: int = 16) -> list[float]:
    """Dyadically spaced radii spanning [h, R]."""
    return [float(d) for d in np.geomspace(h, truncation, count)]


# ---------------------------------------------------------------------------
# Boundary cone condition
# ---------------------------------------------------------------------------


def ball_volume(radius: float, dim: int) -> float:
    return unit_sphere_area(dim) * radius**dim / dim


def check_boundary_cone(
    kernel: Kernel,
    domain: Domain,
    sample: BoundarySample,
    r: float,
    y: np.ndarray,
    C4: float,
    q: QuadratureParams | None = None,
    s_min: float = 1e-3,
    lambda_bar: float | None = None,
    mu_bar: float | None = None,
) -> ConeReport:
    """Kernel mass over the inward cone-annulus at y against the degenerate-class threshold.

    The cone-annulus is {z . n_y < -r s} inside B_{C4 r s} minus B_{r s} with
    s = |y - y^r|/r - 1 and n_y = (y - y^r)/|y - y^r|; the threshold is
    (2 - sigma) lambda mu (r s)^{-n-sigma} |B_{r s}|.

    Raises:
        ValueError: If r is outside (0, R1), or y is outside the domain or outside B_{2r}(y^r).
    """
    q = q or QuadratureParams()
    y = np.asarray(y, dtype=float)
    if not 0.0 < r < domain.R1:
        msg = f"cone radius must lie in (0, R1={domain.R1}), got {r}"
        raise ValueError(msg)
    center = sample.exterior_center(r)
    dist = float(np.linalg.norm(y - center))
    if not bool(domain.contains(np.atleast_2d(y))[0]) or dist >= 2.0 * r:
        msg = f"probe {y.tolist()} is not in the domain intersected with B_2r(y^r), |y - y^r| = {dist:.6g}, r = {r}"
        raise ValueError(msg)
    s = dist / r - 1.0
    lam = kernel.params.lambda_ if lambda_bar is None else lambda_bar
    mu = kernel.params.mu if mu_bar is None else mu_bar
    if s < s_min:
        logger.warning("cone_probe_below_s_min", s=s, s_min=s_min)
        return ConeReport(
            x=sample.point.tolist(), r=r, y=y.tolist(), s=s, cone_mass=0.0, required_mass=math.inf,
            below_s_min=True, passed=False,
        )
    rho = r * s
    normal = (y - center) / dist
    z, w = _cone_rule(rho, C4 * rho, kernel.dim, q)
    inside = (z @ normal) < -rho
    cone_mass = float((w * kernel(y, z))[inside].sum())
    sigma = kernel.sigma
    required = (2.0 - sigma) * lam * mu * rho ** (-kernel.dim - sigma) * ball_volume(rho, kernel.dim)
    return ConeReport(
        x=sample.point.tolist(), r=r, y=y.tolist(), s=s, cone_mass=cone_mass, required_mass=required,
        passed=cone_mass >= required,
    )


def _cone_rule(inner: float, outer: float, dim: int, q: QuadratureParams) -> tuple[np.ndarray, np.ndarray]:
    shells = max(4, math.ceil(q.annuli_per_decade * math.log10(outer / inner)))
    edges = np.geomspace(inner, outer, shells + 1)
    r_mid = 0.5 * (edges[1:] + edges[:-1])
    r_measure = (edges[1:] ** dim - edges[:-1] ** dim) / dim
    dirs, dw = _cell_directions(dim, max(q.angular_nodes, 64) if dim > 1 else 2)
    z = (r_mid[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    w = (r_measure[:, None] * dw[None, :]).ravel()
    return z, w


def slab_fraction(C4: float, dim: int, grid: int = 256, radial_cells: int = 64) -> float:
    """Fraction of B_{C4} minus B_{C4/2} inside the slab |z_1| <= 1."""
    edges = np.linspace(0.5 * C4, C4, radial_cells + 1)
    r_mid = 0.5 * (edges[1:] + edges[:-1])
    r_measure = (edges[1:] ** dim - edges[:-1] ** dim) / dim
    dirs, dw = _cell_directions(dim, grid if dim > 1 else 2)
    z = (r_mid[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    cell = (r_measure[:, None] * dw[None, :]).ravel()
    return float(cell[np.abs(z[:, 0]) <= 1.0].sum() / cell.sum())


def sufficient_cone_constants(
    params: EllipticityParams, dim: int, growth: float = 1.25, max_steps: int = 200
) -> ConeConstants:
    """Constants under which (H3) implies the cone condition near the boundary.

    Picks the smallest tested C4 >= 2 whose slab fraction is below mu/2 and
    returns lambda_bar = lambda (C4/2)^{-n-sigma}, mu_bar = mu/4.
    """
    C4 = 2.0
    for _ in range(max_steps):
        fraction = slab_fraction(C4, dim)
        if fraction < 0.5 * params.mu:
            return ConeConstants(
                C4=C4,
                mu_C4=fraction,
                lambda_bar=params.lambda_ * (0.5 * C4) ** (-dim - params.sigma),
                mu_bar=0.25 * params.mu,
            )
        C4 *= growth
    msg = f"no C4 up to {C4:g} brings the slab fraction below mu/2 = {0.5 * params.mu}"
    raise ValueError(msg)


# ---------------------------------------------------------------------------
# Half-space masses
# ---------------------------------------------------------------------------


def halfspace_mass(
    kernel: Kernel,
    x: np.ndarray,
    level: float,
    side: str = "below",
    outer: float = 1e4,
    q: QuadratureParams | None = None,
) -> float:
    """Truncated mass of K(x, .) over {z_1 <= -level} (side ``below``) or {z_1 > level} (side ``above``).

    Offsets beyond ``outer`` are dropped, so the value is a lower bound.
    """
    q = q or QuadratureParams()
    z, w = _cone_rule(level, outer, kernel.dim, q)
    mask = z[:, 0] <= -level if side == "below" else z[:, 0] > level
    return float((w * kernel(np.asarray(x, dtype=float), z))[mask].sum())
