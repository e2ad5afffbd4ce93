"""Barrier functions, their certification, and boundary sub/supersolutions.

The half-space barrier v_a and the radial barrier u_a (with their rescaled
versions around an exterior ball) are certified by evaluating the extremal
operator of the problem's kernel family at probe points. The certified
handles are then combined into the finite envelopes that serve as
boundary super- and subsolutions for the Perron iteration.

Every probe evaluation uses a near-field cut well inside the distance to the
nearest kink of the barrier, and the certified tail half-width is always
added to the operator value before a sign is read.
"""

from __future__ import annotations

import copy
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import structlog

from levyperron.models.domain import BoundarySample, Domain
from levyperron.models.fields import AnalyticField, Field, GridFunction, MinField
from levyperron.models.kernel import Kernel
from levyperron.models.lattice import Lattice
from levyperron.models.problem import BellmanProblem
from levyperron.schemas.params import QuadratureParams
from levyperron.schemas.reports import BarrierReport
from levyperron.services.kernels import halfspace_mass
from levyperron.services.nonlocal_op import evaluate_linear

logger = structlog.get_logger(__name__)

CERT_TRUNCATION = 1e5


class CertificationError(ValueError):
    """Raised when a barrier construction is requested without passed certificates."""


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        msg = f"barrier exponent must lie in (0, 1), got {alpha}"
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# Barrier fields
# ---------------------------------------------------------------------------


class HalfSpaceBarrier(Field):
    """v(y) = (((y - c) . n / r - 1)^+)^alpha.

    With c = 0, n = e_1, r = 1 this is ((y_1 - 1)^+)^alpha; with c = y^r and
    the normal of a boundary sample it is the rescaled v_alpha^r.
    """

    def __init__(
        self,
        alpha: float,
        dim: int,
        center: np.ndarray | None = None,
        normal: np.ndarray | None = None,
        r: float = 1.0,
        step: float = 1e-3,
    ) -> None:
        _check_alpha(alpha)
        if r <= 0.0:
            msg = f"barrier radius must be positive, got {r}"
            raise ValueError(msg)
        self.alpha = alpha
        self.dim = dim
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        if normal is None:
            normal = np.eye(dim)[0]
        self.normal = np.asarray(normal, dtype=float) / float(np.linalg.norm(normal))
        self.r = r
        self.step = step
        self.domain = None

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        t = (p - self.center) @ self.normal / self.r - 1.0
        return np.maximum(t, 0.0) ** self.alpha

    def growth(self) -> tuple[float, float]:
        return self.r**-self.alpha * (1.0 + float(np.linalg.norm(self.center))) ** self.alpha, self.alpha


class RadialBarrier(Field):
    """u(y) = ((|y - c| / r - 1)^+)^alpha, vanishing exactly on the closed ball B_r(c)."""

    def __init__(
        self, alpha: float, dim: int, center: np.ndarray | None = None, r: float = 1.0, step: float = 1e-3
    ) -> None:
        _check_alpha(alpha)
        if r <= 0.0:
            msg = f"barrier radius must be positive, got {r}"
            raise ValueError(msg)
        self.alpha = alpha
        self.dim = dim
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        self.r = r
        self.step = step
        self.domain = None

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        t = np.linalg.norm(p - self.center, axis=1) / self.r - 1.0
        return np.maximum(t, 0.0) ** self.alpha

    def growth(self) -> tuple[float, float]:
        return self.r**-self.alpha * (1.0 + float(np.linalg.norm(self.center))) ** self.alpha, self.alpha


class BoundaryBump(MinField):
    """phi_{x,r}(y) = min{ramp(y_1), C3 u_alpha((y - y^r)/r)} with the 2-to-1 ramp between R0 and R0 + 1."""

    def __init__(self, sample: BoundarySample, r: float, C3: float, alpha: float, R0: float, step: float = 1e-3):
        self.sample = sample
        self.r = r
        self.C3 = C3
        self.alpha = alpha
        self.R0 = R0
        self.center = sample.exterior_center(r)
        dim = sample.point.size
        ramp = AnalyticField(lambda p: np.clip(2.0 - (p[:, 0] - R0), 1.0, 2.0), dim, step=step, bound=2.0)
        radial = RadialBarrier(alpha, dim, center=self.center, r=r, step=step)
        super().__init__([ramp, C3 * radial])

    def sup_bound(self) -> float | None:
        return 2.0

    def kink_distance(self, y: np.ndarray) -> float:
        """Distance from y to the nearest kink of phi, except a branch crossing through y itself.

        The kinks are the sphere |y - y^r| = r, the ramp corner y_1 = R0 and the
        crossing of the ramp with C3 u, which on y_1 <= R0 is the sphere
        |y - y^r| = r (1 + (2 / C3)^{1/alpha}).
        """
        y = np.asarray(y, dtype=float)
        dist = float(np.linalg.norm(y - self.center))
        crossing = self.r * (1.0 + (2.0 / self.C3) ** (1.0 / self.alpha))
        kinks = [dist - self.r, self.R0 - float(y[0])]
        if abs(dist - crossing) > 1e-9 * self.r:
            kinks.append(abs(dist - crossing))
        return min(kinks)


class DegenerateBarrier(MinField):
    """psi_r(y) = min{plateau, C5 u_alpha^r(y)} with plateau (sup|f| + 1)/gamma."""

    def __init__(
        self, sample: BoundarySample, r: float, C5: float, alpha: float, s0: float, plateau: float, step: float = 1e-3
    ):
        self.sample = sample
        self.r = r
        self.C5 = C5
        self.alpha = alpha
        self.s0 = s0
        self.plateau = plateau
        self.center = sample.exterior_center(r)
        dim = sample.point.size
        flat = AnalyticField(lambda p: np.full(len(p), plateau), dim, step=step, bound=plateau)
        self.radial = RadialBarrier(alpha, dim, center=self.center, r=r, step=step)
        super().__init__([flat, C5 * self.radial])

    def sup_bound(self) -> float | None:
        return self.plateau

    def kink_distance(self, y: np.ndarray) -> float:
        """Distance from y to the sphere |y - y^r| = r or, unless y lies on it, to the plateau crossing."""
        y = np.asarray(y, dtype=float)
        dist = float(np.linalg.norm(y - self.center))
        crossing = self.r * (1.0 + (self.plateau / self.C5) ** (1.0 / self.alpha))
        kinks = [dist - self.r]
        if abs(dist - crossing) > 1e-9 * self.r:
            kinks.append(abs(dist - crossing))
        return min(kinks)


def half_space_barrier(alpha: float, dim: int = 1) -> HalfSpaceBarrier:
    """v_alpha(x) = ((x_1 - 1)^+)^alpha."""
    return HalfSpaceBarrier(alpha, dim)


def radial_barrier(alpha: float, dim: int = 1) -> RadialBarrier:
    """u_alpha(x) = ((|x| - 1)^+)^alpha."""
    return RadialBarrier(alpha, dim)


def scaled_radial_barrier(alpha: float, sample: BoundarySample, r: float) -> RadialBarrier:
    """u_alpha^r(y) = ((|y - y^r|/r - 1)^+)^alpha around the exterior ball of radius r at the sample."""
    return RadialBarrier(alpha, sample.point.size, center=sample.exterior_center(r), r=r)


def scaled_half_space_barrier(alpha: float, sample: BoundarySample, r: float) -> HalfSpaceBarrier:
    """v_alpha^r(y) = (((y - y^r) . n / r - 1)^+)^alpha with the sample's fixed inward normal n."""
    return HalfSpaceBarrier(alpha, sample.point.size, center=sample.exterior_center(r), normal=sample.normal, r=r)


def boundary_bump(domain: Domain, sample: BoundarySample, r: float, C3: float, alpha: float, r0: float) -> BoundaryBump:
    """phi_{x,r} for a boundary sample.

    Raises:
        ValueError: If C3 <= 2 / r0^alpha or r is outside (0, r_Omega).
    """
    _check_alpha(alpha)
    if not 0.0 < r < domain.r_omega:
        msg = f"bump radius must lie in (0, r_omega={domain.r_omega}), got {r}"
        raise ValueError(msg)
    r0 = min(r0, 1.0)
    if C3 <= 2.0 / r0**alpha:
        msg = f"C3={C3} must exceed 2 / r0^alpha = {2.0 / r0**alpha:.6g}"
        raise ValueError(msg)
    return BoundaryBump(sample, r, C3, alpha, domain.R0)


def forcing_sup(problem: BellmanProblem, points: np.ndarray | None = None) -> float:
    """sup over pairs of |f_ab| on the given points (boundary samples and the box midpoint by default)."""
    if points is None:
        lo, up = problem.domain.bbox
        points = np.vstack([[s.point for s in problem.domain.samples], [0.5 * (lo + up)]])
    return problem.f_sup(points)


def degenerate_barrier(
    problem: BellmanProblem,
    sample: BoundarySample,
    r: float,
    C5: float,
    alpha: float,
    s0: float,
    points: np.ndarray | None = None,
) -> DegenerateBarrier:
    """psi_r for the coercive problem.

    Raises:
        ValueError: If gamma is zero or C5 <= (sup|f| + 1)/(s0^alpha gamma).
    """
    _check_alpha(alpha)
    if problem.gamma <= 0.0:
        msg = "the degenerate barrier needs gamma > 0"
        raise ValueError(msg)
    if s0 <= 0.0:
        msg = f"s0 must be positive, got {s0}"
        raise ValueError(msg)
    f_sup = forcing_sup(problem, points)
    floor = (f_sup + 1.0) / (s0**alpha * problem.gamma)
    if C5 <= floor:
        msg = f"C5={C5} must exceed (sup|f| + 1)/(s0^alpha gamma) = {floor:.6g}"
        raise ValueError(msg)
    return DegenerateBarrier(sample, r, C5, alpha, s0, plateau=(f_sup + 1.0) / problem.gamma)


# ---------------------------------------------------------------------------
# Probe evaluation
# ---------------------------------------------------------------------------


def _refined(u: Field, step: float) -> Field:
    out = copy.copy(u)
    out.step = step
    return out


def _probe_params(q: QuadratureParams, rho: float, truncation: float) -> QuadratureParams:
    return q.model_copy(update={"inner_radius": rho, "truncation": max(q.truncation, truncation)})


def _locals(u: Field, x: np.ndarray) -> list[Field]:
    return u.active_branches(x) if isinstance(u, MinField) else [u]


def _extremal_upper(
    kernels: Sequence[Kernel],
    u: Field,
    x: np.ndarray,
    kink_distance: float,
    q: QuadratureParams,
    C0: float,
    truncation: float,
) -> float:
    """Upper bound of M+ u(x) + C0 |grad u(x)| over the family, worst active branch at kinks."""
    rho = kink_distance / 8.0
    probe_u = _refined(u, rho / 4.0)
    probe_q = _probe_params(q, rho, truncation)
    worst = -math.inf
    for local in _locals(probe_u, x):
        grad = float(np.linalg.norm(local.gradient(x, probe_u.step))) if C0 else 0.0
        for kernel in kernels:
            evaluation = evaluate_linear(kernel, probe_u, x, probe_q, local=local)
            worst = max(worst, evaluation.upper + C0 * grad)
    return worst


def default_alpha_grid(sigma: float, count: int = 12) -> list[float]:
    """Descending geometric grid from 0.9 min(sigma, 1) to 0.01."""
    return [float(a) for a in np.geomspace(0.9 * min(sigma, 1.0), 0.01, count)]


DEFAULT_R_GRID = (2.0**-6, 2.0**-4, 2.0**-2, 1.0)
RADIAL_R_GRID = (2.0**-12, 2.0**-10, 2.0**-8, 2.0**-6, 2.0**-4, 2.0**-2, 0.5, 1.0, 2.0, 4.0)


def _map(fn: Callable[[Any], float], items: Sequence[Any], threads: int) -> list[float]:
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Certifications
# ---------------------------------------------------------------------------


def certify_halfspace_decay(
    family: Sequence[Kernel],
    alpha_grid: Sequence[float] | None = None,
    r_grid: Sequence[float] = DEFAULT_R_GRID,
    q: QuadratureParams | None = None,
    truncation: float = CERT_TRUNCATION,
    threads: int = 1,
) -> BarrierReport:
    """Largest tested alpha with M+ v_alpha((1 + r) e_1) <= -eps r^{alpha - sigma} on the whole r-grid.

    The normalized margin at r is -upper / r^{alpha - sigma}; epsilon is half
    the worst margin. ``epsilon_theory`` is half the smallest half-space mass
    of {z_1 <= -1} over the family.

    Args:
        family: Kernel family spanning M+.
        alpha_grid: Exponents to try, largest first.
        r_grid: Probe distances.
        q: Quadrature controls.
        truncation: Far-field cut used for the probes.
        threads: Worker count over probes.

    Returns:
        BarrierReport of kind ``halfspace``; failing exponents are listed.
    """
    if not family:
        msg = "barrier certification needs a nonempty kernel family"
        raise ValueError(msg)
    q = q or QuadratureParams()
    sigma = family[0].sigma
    dim = family[0].dim
    grid = sorted(alpha_grid or default_alpha_grid(sigma), reverse=True)
    e1 = np.eye(dim)[0]
    mass = min(halfspace_mass(k, 2.0 * e1, 1.0, "below", outer=truncation, q=q) for k in family)
    failures: list[str] = []
    for alpha in grid:
        barrier = HalfSpaceBarrier(alpha, dim)

        def margin(r: float, barrier: HalfSpaceBarrier = barrier, alpha: float = alpha) -> float:
            upper = _extremal_upper(family, barrier, (1.0 + r) * e1, r, q, 0.0, truncation)
            return -upper / r ** (alpha - sigma)

        margins = _map(margin, list(r_grid), threads)
        worst = min(margins)
        if worst > 0.0:
            logger.info("halfspace_decay_certified", alpha=alpha, epsilon5=0.5 * worst)
            return BarrierReport(
                kind="halfspace",
                alpha=alpha,
                epsilon=0.5 * worst,
                epsilon_theory=0.5 * mass,
                worst_slack=worst - 0.5 * worst,
                probes=len(margins),
                passed=True,
                failures=failures,
            )
        failures.append(f"alpha={alpha:.6g}: worst margin {worst:.6g}")
    logger.warning("halfspace_decay_failed", tried=len(grid))
    return BarrierReport(
        kind="halfspace", epsilon_theory=0.5 * mass, probes=len(grid) * len(r_grid), passed=False, failures=failures
    )


def certify_radial_barrier(
    family: Sequence[Kernel],
    alpha: float,
    C0: float = 0.0,
    r_grid: Sequence[float] = RADIAL_R_GRID,
    q: QuadratureParams | None = None,
    truncation: float = CERT_TRUNCATION,
    threads: int = 1,
) -> BarrierReport:
    """Largest r0 on the grid with M+ u_alpha + C0 |grad u_alpha| < 0 at every probe (1 + r) e_1, r <= r0.

    ``constant`` is the multiplier turning the validated inequality into the
    normalized form with right-hand side -1; ``worst_slack`` is the smallest
    validated value of -(M+ u_alpha + C0 |grad u_alpha|).
    """
    _check_alpha(alpha)
    if not family:
        msg = "barrier certification needs a nonempty kernel family"
        raise ValueError(msg)
    q = q or QuadratureParams()
    sigma = family[0].sigma
    dim = family[0].dim
    e1 = np.eye(dim)[0]
    barrier = RadialBarrier(alpha, dim)
    radii = sorted(r_grid)

    def upper(r: float) -> float:
        return _extremal_upper(family, barrier, (1.0 + r) * e1, r, q, C0, truncation)

    values = _map(upper, radii, threads)
    r0 = None
    validated: list[tuple[float, float]] = []
    for r, value in zip(radii, values, strict=True):
        if value >= 0.0:
            break
        r0 = r
        validated.append((r, value))
    failures = [f"r={r:.6g}: value {v:.6g}" for r, v in zip(radii, values, strict=True) if r0 is None or r > r0]
    if r0 is None:
        logger.warning("radial_barrier_failed", alpha=alpha)
        return BarrierReport(kind="radial", alpha=alpha, probes=len(radii), passed=False, failures=failures)
    slack = min(-v for _, v in validated)
    epsilon = 0.5 * min(-v / r ** (alpha - sigma) for r, v in validated)
    logger.info("radial_barrier_certified", alpha=alpha, r0=r0, slack=slack)
    return BarrierReport(
        kind="radial",
        alpha=alpha,
        r0=r0,
        epsilon=epsilon,
        constant=1.0 / slack,
        worst_slack=slack,
        probes=len(radii),
        passed=True,
        failures=failures,
    )


def default_bump_probes(domain: Domain, sample: BoundarySample, r: float) -> np.ndarray:
    """Points on the inward normal ray at distances r/16 to 2r plus the box midpoint, kept inside the domain."""
    lo, up = domain.bbox
    ray = np.array([sample.point + t * r * sample.normal for t in (1.0 / 16.0, 0.25, 1.0, 2.0)])
    points = np.vstack([ray, 0.5 * (lo + up)])
    return points[domain.contains(points)]


def certify_boundary_bump(
    family: Sequence[Kernel],
    domain: Domain,
    bump: BoundaryBump,
    probes: np.ndarray | None = None,
    q: QuadratureParams | None = None,
    C0: float = 0.0,
    truncation: float = CERT_TRUNCATION,
    threads: int = 1,
) -> BarrierReport:
    """Check M+ phi_{x,r} + C0 |grad phi_{x,r}| <= -eps at every probe in the domain.

    Probes outside the domain are rejected. ``epsilon_theory`` is
    min(C3, eps6) with eps6 the smallest mass of {z_1 > 2 R0 + 1} over the family.

    Returns:
        BarrierReport of kind ``bump`` with failing probe locations.
    """
    q = q or QuadratureParams()
    points = default_bump_probes(domain, bump.sample, bump.r) if probes is None else np.atleast_2d(probes)
    if len(points) == 0:
        msg = "boundary bump certification needs at least one probe"
        raise ValueError(msg)
    outside = ~domain.contains(points)
    if np.any(outside):
        msg = f"probes {points[outside].tolist()} are not in the domain"
        raise ValueError(msg)
    R0 = domain.R0
    eps6 = min(halfspace_mass(k, bump.sample.point, 2.0 * R0 + 1.0, "above", outer=truncation, q=q) for k in family)

    def upper(y: np.ndarray) -> float:
        kink = bump.kink_distance(y)
        return _extremal_upper(family, bump, y, kink, q, C0, truncation)

    values = _map(upper, list(points), threads)
    failures = [f"y={p.tolist()}: value {v:.6g}" for p, v in zip(points, values, strict=True) if v >= 0.0]
    worst = min(-v for v in values)
    passed = not failures
    logger.info("boundary_bump_checked", x=bump.sample.point.tolist(), r=bump.r, worst=worst, passed=passed)
    return BarrierReport(
        kind="bump",
        alpha=bump.alpha,
        r0=bump.r,
        epsilon=0.5 * worst if passed else 0.0,
        epsilon_theory=min(bump.C3, eps6),
        constant=bump.C3,
        worst_slack=0.5 * worst if passed else worst,
        probes=len(points),
        passed=passed,
        failures=failures,
    )


def _ray_probe(sample: BoundarySample, r: float, s: float) -> np.ndarray:
    return sample.exterior_center(r) + (1.0 + s) * r * sample.normal


def _degenerate_ray_values(
    problem: BellmanProblem,
    sample: BoundarySample,
    r: float,
    alpha: float,
    s: float,
    q: QuadratureParams,
    truncation: float,
) -> list[tuple[tuple[str, str], float, float]]:
    """Per pair: lower bound of -I_ab[y, u_alpha^r] + b_ab . grad u_alpha^r at the ray probe y, normalized too."""
    y = _ray_probe(sample, r, s)
    rho = s * r / 8.0
    radial = _refined(scaled_radial_barrier(alpha, sample, r), rho / 4.0)
    probe_q = _probe_params(q, rho, truncation)
    grad = radial.gradient(y)
    sigma = problem.params.sigma
    out = []
    for pair in problem.pairs:
        evaluation = evaluate_linear(pair.kernel, radial, y, probe_q)
        value = -evaluation.upper + float(pair.drift_at(y) @ grad)
        out.append(((pair.a, pair.b), value, value * r**sigma * s ** (sigma - alpha)))
    return out


def find_degenerate_s0(
    problem: BellmanProblem,
    sample: BoundarySample,
    r: float,
    alpha: float,
    s_grid: Sequence[float] = (2.0**-6, 2.0**-5, 2.0**-4, 2.0**-3, 2.0**-2, 0.5),
    q: QuadratureParams | None = None,
    truncation: float = CERT_TRUNCATION,
) -> BarrierReport:
    """Largest s0 on the grid with -I_ab[y, u_alpha^r] + b_ab . grad u_alpha^r >= 1 for every pair on the ray s <= s0.

    ``epsilon`` is half the smallest normalized value r^sigma s^{sigma - alpha} (...) over validated probes.
    """
    q = q or QuadratureParams()
    s0 = None
    normalized: list[float] = []
    failures: list[str] = []
    for s in sorted(s_grid):
        y = _ray_probe(sample, r, s)
        if not bool(problem.domain.contains(np.atleast_2d(y))[0]):
            break
        rows = _degenerate_ray_values(problem, sample, r, alpha, s, q, truncation)
        bad = [(idx, v) for idx, v, _ in rows if v < 1.0]
        if bad:
            failures.extend(f"s={s:.6g} pair={idx}: value {v:.6g}" for idx, v in bad)
            break
        s0 = s
        normalized.extend(n for _, _, n in rows)
    if s0 is None:
        return BarrierReport(
            kind="degenerate_s0", alpha=alpha, r0=r, probes=len(s_grid), passed=False, failures=failures
        )
    return BarrierReport(
        kind="degenerate_s0",
        alpha=alpha,
        r0=r,
        s0=s0,
        epsilon=0.5 * min(normalized),
        worst_slack=0.5 * min(normalized),
        probes=len(normalized),
        passed=True,
        failures=failures,
    )


def certify_degenerate_barrier(
    problem: BellmanProblem,
    barrier: DegenerateBarrier,
    probes: np.ndarray | None = None,
    q: QuadratureParams | None = None,
    truncation: float = CERT_TRUNCATION,
) -> BarrierReport:
    """Check the supersolution inequality of psi_r for every pair.

    On the ray probes inside B_{(1+s0) r}(y^r) it checks
    -I_ab[y, u_alpha^r] + b_ab . grad u_alpha^r >= 1 and then
    -I_ab[y, psi_r] + b_ab . grad psi_r + c_ab psi_r + f_ab >= 0 (lower bounds,
    worst active branch at the kink). The plateau branch is certified by
    c_ab psi_r + f_ab >= gamma plateau - |f_ab| >= 1.

    Returns:
        BarrierReport of kind ``degenerate``; each failure names the violating pair.
    """
    q = q or QuadratureParams()
    sample, r, s0 = barrier.sample, barrier.r, barrier.s0
    if probes is None:
        probes = np.array([_ray_probe(sample, r, s) for s in (s0 / 16.0, s0 / 4.0, s0 / 2.0, s0)])
    points = np.atleast_2d(probes)
    points = points[problem.domain.contains(points)]
    failures: list[str] = []
    normalized: list[float] = []
    sigma = problem.params.sigma
    for y in points:
        dist = float(np.linalg.norm(y - barrier.center))
        s = dist / r - 1.0
        if s <= 0.0:
            continue
        rho = barrier.kink_distance(y) / 8.0
        probe_q = _probe_params(q, rho, truncation)
        psi = _refined(barrier, rho / 4.0)
        radial = _refined(barrier.radial, rho / 4.0)
        grad_radial = radial.gradient(y)
        value_psi = psi.value(y)
        for pair in problem.pairs:
            if s <= s0:
                drift = float(pair.drift_at(y) @ grad_radial)
                ray_value = -evaluate_linear(pair.kernel, radial, y, probe_q).upper + drift
                normalized.append(ray_value * r**sigma * s ** (sigma - barrier.alpha))
                if ray_value < 1.0:
                    failures.append(f"y={y.tolist()} pair=({pair.a}, {pair.b}): ray value {ray_value:.6g} < 1")
            worst = math.inf
            for local in _locals(psi, y):
                upper = evaluate_linear(pair.kernel, psi, y, probe_q, local=local).upper
                drift = float(pair.drift_at(y) @ local.gradient(y, psi.step))
                worst = min(worst, -upper + drift + pair.c_at(y) * value_psi + pair.f_at(y))
            if worst < 0.0:
                failures.append(f"y={y.tolist()} pair=({pair.a}, {pair.b}): supersolution value {worst:.6g}")
    plateau_floor = problem.gamma * barrier.plateau - forcing_sup(problem)
    if len(points):
        floors = [pair.c_at(p) * barrier.plateau - abs(pair.f_at(p)) for pair in problem.pairs for p in points]
        plateau_floor = min(plateau_floor, *floors)
    if plateau_floor < 1.0 - 1e-12:
        failures.append(f"plateau branch: c psi + f floor {plateau_floor:.6g} < 1")
    passed = not failures and bool(normalized)
    eps8 = 0.5 * min(normalized) if normalized else 0.0
    logger.info("degenerate_barrier_checked", x=sample.point.tolist(), r=r, s0=s0, passed=passed)
    return BarrierReport(
        kind="degenerate",
        alpha=barrier.alpha,
        r0=r,
        s0=s0,
        epsilon=eps8 if passed else 0.0,
        constant=barrier.C5,
        worst_slack=eps8,
        probes=len(points),
        passed=passed,
        failures=failures,
    )


# ---------------------------------------------------------------------------
# Boundary envelopes
# ---------------------------------------------------------------------------


@dataclass
class BarrierFamily:
    """Certified barrier handles per (boundary sample, radius) with their reports."""

    kind: str
    alpha: float
    barriers: list[tuple[BoundarySample, float, Field]] = field(default_factory=list)
    reports: list[BarrierReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.reports) and all(r.passed for r in self.reports)

    @property
    def epsilon(self) -> float:
        """Smallest certified bump constant over the family."""
        bumps = [r.epsilon for r in self.reports if r.kind in ("bump", "degenerate")]
        return min(bumps) if bumps else 0.0


def default_radii(domain: Domain, count: int = 3) -> list[float]:
    """Dyadic radii r_Omega/2, r_Omega/4, ... strictly below r_Omega."""
    return [domain.r_omega * 2.0**-k for k in range(1, count + 1)]


def certify_barrier_family(
    problem: BellmanProblem,
    kind: str = "uniform",
    radii: Sequence[float] | None = None,
    q: QuadratureParams | None = None,
    truncation: float = CERT_TRUNCATION,
    threads: int = 1,
) -> BarrierFamily:
    """Certify the barriers needed by the boundary envelopes.

    ``uniform``: half-space decay gives alpha, the radial barrier gives r0,
    C3 defaults to 4 / r0^alpha and every bump phi_{x,r} is certified.
    ``degenerate``: for each alpha of the grid an s0 is searched on every
    (sample, r); C5 = 2 (sup|f| + 1)/(s0^alpha gamma) and psi_r is certified.
    """
    q = q or QuadratureParams()
    domain = problem.domain
    radii = list(radii or default_radii(domain))
    kernels = problem.kernels
    if kind == "uniform":
        return _certify_uniform(problem, kernels, radii, q, truncation, threads)
    if kind == "degenerate":
        return _certify_degenerate(problem, radii, q, truncation)
    msg = f"unknown barrier kind {kind!r}, expected 'uniform' or 'degenerate'"
    raise ValueError(msg)


def _certify_uniform(
    problem: BellmanProblem,
    kernels: list[Kernel],
    radii: list[float],
    q: QuadratureParams,
    truncation: float,
    threads: int,
) -> BarrierFamily:
    domain = problem.domain
    lo, up = domain.bbox
    C0 = max(problem.params.C0, problem.drift_sup(np.vstack([[s.point for s in domain.samples], [0.5 * (lo + up)]])))
    half = certify_halfspace_decay(kernels, q=q, truncation=truncation, threads=threads)
    if not half.passed or half.alpha is None:
        return BarrierFamily(kind="uniform", alpha=0.0, reports=[half])
    radial = certify_radial_barrier(kernels, half.alpha, C0=C0, q=q, truncation=truncation, threads=threads)
    family = BarrierFamily(kind="uniform", alpha=half.alpha, reports=[half, radial])
    if not radial.passed or radial.r0 is None:
        return family
    r0 = min(radial.r0, 1.0)
    C3 = 4.0 / r0**half.alpha
    for sample in domain.samples:
        for r in radii:
            bump = boundary_bump(domain, sample, r, C3, half.alpha, r0)
            report = certify_boundary_bump(kernels, domain, bump, q=q, C0=C0, truncation=truncation, threads=threads)
            family.reports.append(report)
            family.barriers.append((sample, r, bump))
    return family


def _certify_degenerate(
    problem: BellmanProblem, radii: list[float], q: QuadratureParams, truncation: float
) -> BarrierFamily:
    if problem.gamma <= 0.0:
        msg = "the degenerate barrier kind needs gamma > 0"
        raise ValueError(msg)
    f_sup = forcing_sup(problem)
    failures: list[BarrierReport] = []
    for alpha in default_alpha_grid(problem.params.sigma, count=6):
        family = BarrierFamily(kind="degenerate", alpha=alpha)
        for sample in problem.domain.samples:
            for r in radii:
                search = find_degenerate_s0(problem, sample, r, alpha, q=q, truncation=truncation)
                family.reports.append(search)
                if not search.passed or search.s0 is None:
                    break
                C5 = 2.0 * (f_sup + 1.0) / (search.s0**alpha * problem.gamma)
                psi = degenerate_barrier(problem, sample, r, C5, alpha, search.s0)
                family.reports.append(certify_degenerate_barrier(problem, psi, q=q, truncation=truncation))
                family.barriers.append((sample, r, psi))
            if not family.passed:
                break
        if family.passed:
            return family
        failures = family.reports
    return BarrierFamily(kind="degenerate", alpha=0.0, reports=failures)


class BarrierEnvelope(Field):
    """Finite infimum (upper) or supremum (lower) of offset + multiplier * barrier terms."""

    def __init__(self, terms: list[tuple[float, float, Field]], upper: bool, dim: int, step: float = 1e-3) -> None:
        if not terms:
            msg = "a barrier envelope needs at least one term"
            raise ValueError(msg)
        self.terms = terms
        self.upper = upper
        self.dim = dim
        self.step = step
        self.domain = None

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.upper:
            return np.min(np.stack([c + m * b(p) for c, m, b in self.terms]), axis=0)
        return np.max(np.stack([c - m * b(p) for c, m, b in self.terms]), axis=0)

    def sup_bound(self) -> float | None:
        bounds = [abs(c) + m * (b.sup_bound() or 0.0) for c, m, b in self.terms]
        return max(bounds)


def operator_sup_norm(problem: BellmanProblem, points: np.ndarray, r: float) -> float:
    """max over points of |I(x, r, 0)|; the nonlocal and drift terms vanish on the zero function."""
    values = []
    for x in np.atleast_2d(points):
        values.append(max(min(p.c_at(x) * r + p.f_at(x) for p in row) for row in problem.table))
    return float(np.max(np.abs(values))) if values else 0.0


def _envelope_terms(
    problem: BellmanProblem, family: BarrierFamily, points: np.ndarray, upper: bool
) -> list[tuple[float, float, Field]]:
    if not family.passed:
        msg = f"{family.kind} barrier family has no passed certificates; refusing to build the boundary envelope"
        raise CertificationError(msg)
    datum = problem.datum
    g_sup = datum.sup_norm
    terms: list[tuple[float, float, Field]] = []
    if family.kind == "uniform":
        eps7 = family.epsilon
        if eps7 <= 0.0:
            msg = "certified bump constant is not positive"
            raise CertificationError(msg)
        slot = -g_sup if upper else g_sup
        multiplier = max(2.0 * g_sup, operator_sup_norm(problem, points, slot) / eps7)
    else:
        f_sup = forcing_sup(problem, points)
        multiplier = 2.0 * g_sup * problem.gamma / (f_sup + 1.0) + 1.0
    for sample, r, barrier in family.barriers:
        g_x = float(datum(np.atleast_2d(sample.point))[0])
        shift = datum.modulus(3.0 * r)
        terms.append((g_x + shift, multiplier, barrier) if upper else (g_x - shift, multiplier, barrier))
    return terms


def build_supersolution(problem: BellmanProblem, lattice: Lattice, family: BarrierFamily) -> GridFunction:
    """Finite infimum over certified (x, r) of rho(3r) + g(x) + M barrier_{x,r}, sampled on the lattice.

    Raises:
        CertificationError: If the barrier family has no passed certificates.
    """
    points = lattice.nodes[lattice.interior_mask]
    envelope = BarrierEnvelope(_envelope_terms(problem, family, points, upper=True), upper=True, dim=lattice.dim)
    logger.info("supersolution_built", kind=family.kind, terms=len(envelope.terms))
    return GridFunction.from_field(lattice, envelope, problem.datum)


def build_subsolution(problem: BellmanProblem, lattice: Lattice, family: BarrierFamily) -> GridFunction:
    """Reflected envelope: finite supremum of g(x) - rho(3r) - M' barrier_{x,r}.

    Raises:
        CertificationError: If the barrier family has no passed certificates.
    """
    points = lattice.nodes[lattice.interior_mask]
    envelope = BarrierEnvelope(_envelope_terms(problem, family, points, upper=False), upper=False, dim=lattice.dim)
    logger.info("subsolution_built", kind=family.kind, terms=len(envelope.terms))
    return GridFunction.from_field(lattice, envelope, problem.datum)
