"""Regularity diagnostics on grid functions.

Oscillation decay over nested balls B_{base^-k}(center) gives a fitted
Hoelder exponent; superlevel-set measures of a nonnegative supersolution are
fitted against the weak Harnack tail C r^n (u(center) + C1 r^sigma)^eps t^-eps.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
import structlog
from scipy import stats

from levyperron.models.domain import Domain
from levyperron.models.fields import GridFunction
from levyperron.schemas.reports import HarnackReport, HolderReport

logger = structlog.get_logger(__name__)

MIN_BALL_NODES = 8


class GridResolutionError(ValueError):
    """The lattice is too coarse for the requested ball."""


def _ball_nodes(w: GridFunction, center: np.ndarray, radius: float) -> np.ndarray:
    dist = np.linalg.norm(w.lattice.nodes - center, axis=1)
    return np.flatnonzero(dist < radius)


def oscillation_profile(
    w: GridFunction, center: Sequence[float], base: float = 8.0, levels: int = 3, min_nodes: int = MIN_BALL_NODES
) -> HolderReport:
    """Extrema of w over lattice nodes strictly inside B_{base^-k}(center), k = 0..levels.

    Raises:
        GridResolutionError: If the deepest ball holds fewer than ``min_nodes`` nodes.
        ValueError: If base <= 1 or levels < 1.
    """
    if base <= 1.0 or levels < 1:
        msg = f"need base > 1 and levels >= 1, got base={base}, levels={levels}"
        raise ValueError(msg)
    c = np.asarray(center, dtype=float)
    radii = [base**-k for k in range(levels + 1)]
    deepest = _ball_nodes(w, c, radii[-1])
    if deepest.size < min_nodes:
        msg = (
            f"ball of radius {radii[-1]:.3g} around {c.tolist()} holds {deepest.size} nodes, "
            f"need {min_nodes}; refine h={w.lattice.h:.3g}"
        )
        raise GridResolutionError(msg)
    minima, maxima = [], []
    for radius in radii:
        values = w.values[_ball_nodes(w, c, radius)]
        minima.append(float(values.min()))
        maxima.append(float(values.max()))
    return HolderReport(
        center=c.tolist(),
        base=base,
        levels=levels,
        radii=radii,
        minima=minima,
        maxima=maxima,
        oscillations=[hi - lo for lo, hi in zip(minima, maxima, strict=True)],
    )


def fit_holder_exponent(report: HolderReport, atol: float = 1e-14) -> HolderReport:
    """Least-squares slope of log(M_k - m_k) against k log(base) over levels k >= 1.

    All-zero oscillations set ``perfect_regularity`` and leave the fit empty.

    Raises:
        ValueError: If fewer than three levels k >= 1 have positive oscillation.
    """
    osc = np.asarray(report.oscillations[1:], dtype=float)
    ks = np.arange(1, len(report.oscillations))
    if np.all(osc <= atol):
        logger.info("holder_fit_perfect_regularity", center=report.center)
        return report.model_copy(update={"perfect_regularity": True})
    usable = osc > atol
    if np.count_nonzero(usable) < 3:
        msg = f"need 3 levels with positive oscillation for a fit, got {int(np.count_nonzero(usable))}"
        raise ValueError(msg)
    fit = stats.linregress(ks[usable] * math.log(report.base), np.log(osc[usable]))
    alpha = -float(fit.slope)
    return report.model_copy(
        update={
            "alpha_hat": alpha,
            "intercept": float(fit.intercept),
            "r_value": float(fit.rvalue),
            "slope_stderr": float(fit.stderr),
            "epsilon4_implied": 2.0 * (1.0 - report.base**-alpha),
        }
    )


def weak_harnack_check(
    u: GridFunction,
    center: Sequence[float],
    r: float,
    C1: float,
    thresholds: Sequence[float],
    sigma: float = 1.0,
    max_slack: float = 2.0,
) -> HarnackReport:
    """Superlevel-set lattice measures in B_r(center) and the fitted tail bound.

    eps3 is minus the slope of log |{u > t}| against log t over thresholds with
    positive measure and C is read off the intercept. Without two such points
    or with a nonnegative slope the fit falls back to eps3 = 1 and the smallest
    majorizing C, and the check does not pass.

    Args:
        u: Nonnegative grid function.
        center: Ball center.
        r: Ball radius.
        C1: Forcing bound entering u(center) + C1 r^sigma.
        thresholds: Levels t > 0.
        sigma: Order of the operator.
        max_slack: Largest factor a measurement may exceed the fitted bound by.

    Raises:
        ValueError: If u is negative at some node, r is not positive or max_slack < 1.
    """
    if r <= 0.0:
        msg = f"ball radius must be positive, got {r}"
        raise ValueError(msg)
    if max_slack < 1.0:
        msg = f"max_slack must be at least 1, got {max_slack}"
        raise ValueError(msg)
    lowest = float(u.values.min(initial=0.0))
    if lowest < -1e-14:
        msg = f"weak Harnack check needs u >= 0, found {lowest:.3g}"
        raise ValueError(msg)
    c = np.asarray(center, dtype=float)
    ts = np.asarray(sorted(thresholds), dtype=float)
    if ts.size == 0 or np.any(ts <= 0.0):
        msg = "thresholds must be positive and nonempty"
        raise ValueError(msg)
    ball = u.values[_ball_nodes(u, c, r)]
    volume = u.lattice.cell_volume
    measures = np.array([np.count_nonzero(ball > t) * volume for t in ts])
    u_center = float(u(np.atleast_2d(c))[0])
    dim = u.dim
    base = u_center + C1 * r**sigma

    positive = measures > 0.0
    fallback = True
    eps = 1.0
    intercept = None
    if np.count_nonzero(positive) >= 2:
        fit = stats.linregress(np.log(ts[positive]), np.log(measures[positive]))
        if fit.slope < 0.0:
            eps = -float(fit.slope)
            intercept = float(fit.intercept)
            fallback = False

    def envelope(const: float) -> np.ndarray:
        return const * r**dim * base**eps * ts**-eps

    if not np.any(positive):
        C_envelope = 0.0
    elif base <= 0.0:
        C_envelope = math.inf
    else:
        C_envelope = float(np.max(measures / envelope(1.0)))
    C = C_envelope
    if intercept is not None and base > 0.0:
        C = math.exp(intercept - dim * math.log(r) - eps * math.log(base))
    slack = C_envelope / C if C > 0.0 and math.isfinite(C) else 1.0
    majorizes = math.isfinite(C) and bool(np.all(max_slack * envelope(C) >= measures * (1.0 - 1e-12)))
    passed = majorizes and not fallback
    logger.info(
        "weak_harnack_checked", center=c.tolist(), r=r, epsilon3=eps, C=C, slack=slack, fallback=fallback, passed=passed
    )
    return HarnackReport(
        center=c.tolist(),
        radius=r,
        thresholds=ts.tolist(),
        measures=measures.tolist(),
        u_center=u_center,
        C1=C1,
        epsilon3=eps,
        C=C,
        C_envelope=C_envelope,
        slack=slack,
        max_slack=max_slack,
        fallback=fallback,
        majorizes=majorizes,
        passed=passed,
    )


def interior_centers(domain: Domain, centers: Sequence[Sequence[float]], margin: float) -> list[list[float]]:
    """Centers at distance >= margin from the boundary; the others are skipped with a warning."""
    kept: list[list[float]] = []
    for center in centers:
        point = np.atleast_2d(np.asarray(center, dtype=float))
        inside = bool(domain.contains(point)[0])
        distance = float(domain.distance_to_boundary(point)[0])
        if inside and distance >= margin:
            kept.append([float(v) for v in center])
        else:
            logger.warning("diagnostic_center_skipped", center=list(center), distance=distance, margin=margin)
    return kept
