"""Nonlocal operator evaluation and structural checks.

Provides the jump difference delta_z u, linear Levy operators, finite-family
extremal operators M+/M-, the pointwise-bounded Pucci extremal, the
Bellman-Isaacs operator, and numerical checks of uniform ellipticity and of
the structural axioms (A0), (A2)-(A4).

All evaluations return an Evaluation: truncated value, certified tail
half-width and the selected index.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np
import structlog

from levyperron.models.fields import Field
from levyperron.models.kernel import Kernel
from levyperron.models.problem import BellmanProblem
from levyperron.schemas.params import EllipticityParams, QuadratureParams
from levyperron.schemas.reports import AxiomReport, EllipticityReport
from levyperron.services.kernels import make_fractional_kernel
from levyperron.services.quadrature import AnnularRule, LinearFunctional, build_rule, linear_functional

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class Evaluation:
    """Operator value with the tail interval half-width and the selected index."""

    value: float
    halfwidth: float = 0.0
    index: int | tuple[str, str] | None = None

    @property
    def upper(self) -> float:
        return self.value + self.halfwidth

    @property
    def lower(self) -> float:
        return self.value - self.halfwidth


def _require_inside(u: Field, x: np.ndarray) -> None:
    if u.domain is not None and not bool(u.domain.contains(np.atleast_2d(x))[0]):
        msg = f"evaluation point {np.asarray(x).tolist()} is not in the domain"
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# Linear operators
# ---------------------------------------------------------------------------


def delta_u(u: Field, x: np.ndarray, z: np.ndarray, sigma: float) -> float:
    """Jump difference u(x+z) - u(x) - chi(z) grad u(x) . z in the regime of sigma.

    chi is 0 for sigma < 1, the indicator of B_1 for sigma = 1 and 1 for sigma > 1;
    the gradient is the centered difference with the field's step.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    _require_inside(u, x)
    jump = u.value(x + z) - u.value(x)
    if sigma < 1.0 or (sigma == 1.0 and np.linalg.norm(z) >= 1.0):
        return jump
    return jump - float(u.gradient(x) @ z)


def operator_functional(kernel: Kernel, x: np.ndarray, step: float, q: QuadratureParams) -> LinearFunctional:
    return linear_functional(build_rule(kernel, x, step, q))


def evaluate_linear(
    K: Kernel, u: Field, x: np.ndarray, q: QuadratureParams, local: Field | None = None
) -> Evaluation:
    """L_K u(x) by dyadic annular quadrature with the certified tail interval.

    Args:
        K: Levy kernel.
        u: Field to evaluate.
        x: Point of the domain.
        q: Quadrature controls.
        local: Field supplying the near-field derivatives (defaults to u).

    Returns:
        Evaluation with the truncated value and the tail half-width.
    """
    x = np.asarray(x, dtype=float)
    _require_inside(u, x)
    functional = operator_functional(K, x, u.step, q)
    return Evaluation(value=functional.apply(u, local), halfwidth=functional.halfwidth(u))


def _extremal(
    family: Sequence[Kernel], u: Field, x: np.ndarray, q: QuadratureParams, pick: Callable[[np.ndarray], int]
) -> Evaluation:
    if not family:
        msg = "extremal operators need a nonempty kernel family"
        raise ValueError(msg)
    evaluations = [evaluate_linear(k, u, x, q) for k in family]
    values = np.array([e.value for e in evaluations])
    best = pick(values)
    return Evaluation(
        value=float(values[best]), halfwidth=max(e.halfwidth for e in evaluations), index=best
    )


def extremal_plus(family: Sequence[Kernel], u: Field, x: np.ndarray, q: QuadratureParams) -> Evaluation:
    """Finite-family M+ u(x): the largest linear evaluation, first index on ties."""
    return _extremal(family, u, x, q, lambda v: int(np.argmax(v)))


def extremal_minus(family: Sequence[Kernel], u: Field, x: np.ndarray, q: QuadratureParams) -> Evaluation:
    """Finite-family M- u(x): the smallest linear evaluation, first index on ties."""
    return _extremal(family, u, x, q, lambda v: int(np.argmin(v)))


def strong_pucci_plus(params: EllipticityParams, u: Field, x: np.ndarray, q: QuadratureParams) -> Evaluation:
    """Extremal over kernels pinched between (2-sigma) lambda |z|^{-n-sigma} and (2-sigma) Lambda |z|^{-n-sigma}.

    Computes the integral of Lambda (delta_z u)^+ - lambda (delta_z u)^- against
    (2 - sigma)|z|^{-n-sigma} on the same nodes as the linear rule. In the near
    field the sign split is taken per direction on the Taylor data. For a
    finite family drawn from that sub-class it is an upper bound of M+.
    """
    x = np.asarray(x, dtype=float)
    _require_inside(u, x)
    unit = make_fractional_kernel(params, 1.0, dim=u.dim)
    rule = build_rule(unit, x, u.step, q)
    value = _pucci_sum(rule, u, params.Lambda, params.lambda_)
    functional = linear_functional(rule)
    return Evaluation(value=value, halfwidth=params.Lambda * functional.halfwidth(u))


def strong_pucci_minus(params: EllipticityParams, u: Field, x: np.ndarray, q: QuadratureParams) -> Evaluation:
    """Lower Pucci extremal through the duality M-(u) = -M+(-u)."""
    upper = strong_pucci_plus(params, -u, x, q)
    return Evaluation(value=-upper.value, halfwidth=upper.halfwidth)


def _pucci_sum(rule: AnnularRule, u: Field, big: float, small: float) -> float:
    center = u.value(rule.x)
    grad = u.gradient(rule.x, rule.step)
    hess = u.hessian(rule.x, rule.step)
    jumps = u(rule.x + rule.offsets) - center - rule.chi * (rule.offsets @ grad)
    far = rule.weights @ (big * np.maximum(jumps, 0.0) - small * np.maximum(-jumps, 0.0))
    curvature = np.einsum("di,ij,dj->d", rule.near_dirs, hess, rule.near_dirs)
    near_jump = 0.5 * curvature * rule.near_m2
    if rule.uses_first_moment:
        near_jump = near_jump + (rule.near_dirs @ grad) * rule.near_m1
    near = big * np.maximum(near_jump, 0.0).sum() - small * np.maximum(-near_jump, 0.0).sum()
    return float(far + near)


# ---------------------------------------------------------------------------
# Bellman-Isaacs
# ---------------------------------------------------------------------------


def bellman_isaacs(
    P: BellmanProblem, u: Field, x: np.ndarray, q: QuadratureParams, r_override: float | None = None
) -> Evaluation:
    """sup_a inf_b {-I_ab[x,u] + b_ab . grad u + c_ab r + f_ab} at x.

    Args:
        P: Bellman problem.
        u: Field in the function slot.
        x: Point of the domain.
        q: Quadrature controls.
        r_override: Value for the r slot; u(x) when omitted.

    Returns:
        Evaluation whose index is the selected (a, b), ties to the first declared.
    """
    x = np.asarray(x, dtype=float)
    _require_inside(u, x)
    r = u.value(x) if r_override is None else float(r_override)
    cache: dict[int, LinearFunctional] = {}
    best_value = -math.inf
    best_index: tuple[str, str] | None = None
    halfwidth = 0.0
    grad = u.gradient(x)
    for row in P.table:
        row_value = math.inf
        row_index: tuple[str, str] | None = None
        for pair in row:
            key = id(pair.kernel)
            if key not in cache:
                cache[key] = operator_functional(pair.kernel, x, u.step, q)
            functional = cache[key]
            value = -functional.apply(u) + float(pair.drift_at(x) @ grad) + pair.c_at(x) * r + pair.f_at(x)
            halfwidth = max(halfwidth, functional.halfwidth(u))
            if value < row_value:
                row_value, row_index = value, (pair.a, pair.b)
        if row_value > best_value:
            best_value, best_index = row_value, row_index
    return Evaluation(value=best_value, halfwidth=halfwidth, index=best_index)


class BellmanOperator:
    """Operator handle I(x, r, u) for a Bellman problem at fixed quadrature.

    Args:
        problem: Bellman problem.
        q: Quadrature controls.
    """

    def __init__(self, problem: BellmanProblem, q: QuadratureParams) -> None:
        self.problem = problem
        self.q = q

    def __call__(self, x: np.ndarray, r: float, u: Field) -> Evaluation:
        return bellman_isaacs(self.problem, u, x, self.q, r_override=r)

    @property
    def family(self) -> list[Kernel]:
        return self.problem.kernels


def operator_field(
    operator: BellmanOperator, u: Field, points: np.ndarray, threads: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Values I(x, u(x), u) and tail half-widths at each point, in point order."""
    points = np.atleast_2d(np.asarray(points, dtype=float))

    def evaluate(x: np.ndarray) -> Evaluation:
        return operator(x, u.value(x), u)

    if threads <= 1:
        evaluations = [evaluate(x) for x in points]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            evaluations = list(pool.map(evaluate, points))
    logger.debug("operator_field_evaluated", points=len(points))
    return np.array([e.value for e in evaluations]), np.array([e.halfwidth for e in evaluations])


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EllipticitySample:
    """Test data (x, r, s, u, v) for the uniform-ellipticity sandwich."""

    x: np.ndarray
    r: float
    s: float
    u: Field
    v: Field


def check_uniform_ellipticity(
    operator: BellmanOperator,
    family: Sequence[Kernel],
    samples: Sequence[EllipticitySample],
    q: QuadratureParams,
    C0: float | None = None,
    modulus: Callable[[float], float] | None = None,
    tol: float = 1e-8,
) -> EllipticityReport:
    """Check M-(v-u) - C0|grad(u-v)| - m(|r-s|) <= I(x,r,u) - I(x,s,v) <= M+(v-u) + C0|grad(u-v)| + m(|r-s|).

    Args:
        operator: Operator handle.
        family: Kernels spanning the extremal operators.
        samples: Sample tuples.
        q: Quadrature controls.
        C0: Gradient constant; the problem's C0 when omitted.
        modulus: Modulus m; the problem's declared modulus (default c_max t) when omitted.
        tol: Relative tolerance on the slacks.

    Returns:
        EllipticityReport with the worst slacks and the failing sample indices.
    """
    problem = operator.problem
    c0 = problem.params.C0 if C0 is None else C0
    probe_points = np.array([np.asarray(s.x, dtype=float) for s in samples]) if samples else np.zeros((0, 1))
    if modulus is None:
        modulus = partial(problem.modulus_at, points=probe_points)
        label = "declared" if problem.modulus else "c_max*t"
    else:
        label = "custom"
    worst_low = math.inf
    worst_high = math.inf
    failures: list[int] = []
    for i, sample in enumerate(samples):
        diff = sample.v - sample.u
        lhs = operator(sample.x, sample.r, sample.u).value - operator(sample.x, sample.s, sample.v).value
        grad_term = c0 * (sample.u - sample.v).gradient_norm(sample.x)
        m = modulus(abs(sample.r - sample.s))
        low = extremal_minus(family, diff, sample.x, q).value - grad_term - m
        high = extremal_plus(family, diff, sample.x, q).value + grad_term + m
        scale = tol * max(1.0, abs(lhs), abs(low), abs(high))
        slack_low = lhs - low
        slack_high = high - lhs
        worst_low = min(worst_low, slack_low)
        worst_high = min(worst_high, slack_high)
        if slack_low < -scale or slack_high < -scale:
            failures.append(i)
    logger.debug("uniform_ellipticity_checked", samples=len(samples), failures=len(failures))
    return EllipticityReport(
        samples=len(samples),
        modulus=label,
        worst_lower_slack=worst_low if samples else 0.0,
        worst_upper_slack=worst_high if samples else 0.0,
        failures=failures,
        passed=not failures,
    )


@dataclass(frozen=True)
class AxiomSample:
    """Test data for the structural axioms.

    ``upper`` must touch ``lower`` from above at x: upper >= lower everywhere with equality at x.
    """

    x: np.ndarray
    r: float
    s: float
    constant: float
    u: Field
    upper: Field | None = None
    lower: Field | None = None


def check_structural_axioms(
    operator: BellmanOperator,
    samples: Sequence[AxiomSample],
    tol: float = 1e-8,
    continuity_steps: tuple[float, float] = (1e-2, 5e-3),
) -> AxiomReport:
    """Numerically assert (A0), (A2), (A3) and (A4) on a sample set.

    (A0) compares |I(x + t e, r + t, u) - I(x, r, u)| at two values of t and
    requires the change to shrink; (A2) monotonicity in r; (A3) invariance
    under adding constants; (A4) ordering under touching from above.
    """
    a0_ok = a2_ok = a3_ok = a4_ok = True
    a0_ratio = a2_worst = a3_worst = a4_worst = 0.0
    for sample in samples:
        x = np.asarray(sample.x, dtype=float)
        base = operator(x, sample.r, sample.u).value
        scale = tol * max(1.0, abs(base))

        lo_r, hi_r = sorted((sample.r, sample.s))
        gap = operator(x, lo_r, sample.u).value - operator(x, hi_r, sample.u).value
        a2_worst = max(a2_worst, gap)
        a2_ok &= gap <= scale

        shifted = operator(x, sample.r, sample.u + sample.constant).value
        a3_worst = max(a3_worst, abs(shifted - base))
        a3_ok &= abs(shifted - base) <= scale * max(1.0, abs(sample.constant))

        if sample.upper is not None and sample.lower is not None:
            touch = operator(x, sample.r, sample.upper).value - operator(x, sample.r, sample.lower).value
            a4_worst = max(a4_worst, touch)
            a4_ok &= touch <= scale

        direction = np.ones(x.size) / math.sqrt(x.size)
        changes = []
        for t in continuity_steps:
            moved = x + t * direction
            if operator.problem.domain.contains(np.atleast_2d(moved))[0]:
                changes.append(abs(operator(moved, sample.r + t, sample.u).value - base))
        if len(changes) == 2 and changes[0] > scale:
            ratio = changes[1] / changes[0]
            a0_ratio = max(a0_ratio, ratio)
            a0_ok &= ratio < 1.0
    return AxiomReport(
        samples=len(samples),
        A0=a0_ok,
        A2=a2_ok,
        A3=a3_ok,
        A4=a4_ok,
        a0_worst_ratio=a0_ratio,
        a2_worst=a2_worst,
        a3_worst=a3_worst,
        a4_worst=a4_worst,
    )
