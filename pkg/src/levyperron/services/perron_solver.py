"""Monotone Perron iteration for the discrete Bellman-Isaacs Dirichlet problem.

Every (a, b) pair is discretized once: the quadrature functional of its
kernel at each interior node, combined with the drift on the same stencil,
is mapped onto lattice nodes by multilinear interpolation (points outside
the domain read the exterior datum). The residual at node i is then

    F_i(t) = sup_a inf_b {alpha_ab + beta_ab t},  beta_ab = A_ab[i, i] + c_ab(x_i),

with the center value and the r slot both set to t. Sweeps solve F_i = 0
node by node starting from a subsolution and clamp at the supersolution.
"""

from __future__ import annotations

import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Literal

import numpy as np
import structlog
from scipy import sparse
from scipy.sparse.linalg import spsolve

from levyperron.models.fields import GridFunction
from levyperron.models.lattice import Lattice
from levyperron.models.problem import BellmanProblem
from levyperron.schemas.params import QuadratureParams
from levyperron.schemas.reports import DiscreteCheckReport, SolveReport
from levyperron.services.nonlocal_op import operator_functional

logger = structlog.get_logger(__name__)

SweepMode = Literal["jacobi", "gauss-seidel"]

_MAX_EXPANSIONS = 60
_MAX_BISECTIONS = 200


class BracketError(ValueError):
    """The scalar residual does not change sign on the search interval."""


class DiscreteBellmanSystem:
    """Assembled rows of every pair on the interior nodes of a lattice.

    Args:
        problem: Bellman problem.
        lattice: Lattice of the domain.
        q: Quadrature controls; the field step is the lattice step.
        threads: Worker count for the per-node assembly.
    """

    def __init__(self, problem: BellmanProblem, lattice: Lattice, q: QuadratureParams, threads: int = 1) -> None:
        if lattice.dim != problem.dim:
            msg = "lattice and problem live in different dimensions"
            raise ValueError(msg)
        self.problem = problem
        self.lattice = lattice
        self.q = q
        self.interior = lattice.interior_index
        if self.interior.size == 0:
            msg = f"lattice with step {lattice.h} has no interior nodes"
            raise ValueError(msg)
        self.shape = (len(problem.a_labels), len(problem.b_labels))
        self.pairs = [p for row in problem.table for p in row]
        self.labels = [(p.a, p.b) for p in self.pairs]
        nodes = lattice.nodes[self.interior]
        problem.validate_coefficients(nodes)
        started = time.perf_counter()
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            rows = list(pool.map(self._assemble_node, range(len(self.interior))))
        m, size = len(self.interior), lattice.size
        self.matrices: list[sparse.csr_matrix] = []
        self.const = np.zeros((len(self.pairs), m))
        for k in range(len(self.pairs)):
            row_idx = np.concatenate([np.full(len(r[k][0]), i) for i, r in enumerate(rows)])
            col_idx = np.concatenate([r[k][0] for r in rows])
            data = np.concatenate([r[k][1] for r in rows])
            self.matrices.append(sparse.coo_matrix((data, (row_idx, col_idx)), shape=(m, size)).tocsr())
            self.const[k] = [r[k][2] for r in rows]
        self.diag = np.array([np.asarray(mat[np.arange(m), self.interior]).ravel() for mat in self.matrices])
        self.c = np.array([[p.c_at(x) for x in nodes] for p in self.pairs])
        self.f = np.array([[p.f_at(x) for x in nodes] for p in self.pairs])
        logger.info(
            "discrete_system_assembled",
            nodes=m,
            pairs=len(self.pairs),
            nnz=int(sum(mat.nnz for mat in self.matrices)),
            seconds=round(time.perf_counter() - started, 3),
        )

    def _assemble_node(self, i: int) -> list[tuple[np.ndarray, np.ndarray, float]]:
        lattice = self.lattice
        x = lattice.nodes[self.interior[i]]
        cache = {}
        out = []
        for pair in self.pairs:
            key = id(pair.kernel)
            if key not in cache:
                cache[key] = operator_functional(pair.kernel, x, lattice.h, self.q)
            drift = pair.drift_at(x) if pair.has_drift else None
            functional = cache[key].combined(-1.0, drift)
            points, coefs = functional.points, functional.coefs
            inside, idx, w = lattice.locate(points)
            const = float(coefs[~inside] @ self.problem.datum(points[~inside])) if np.any(~inside) else 0.0
            out.append((idx.ravel(), (coefs[inside][:, None] * w).ravel(), const))
        return out

    # ------------------------------------------------------------------
    # Residuals
    # ------------------------------------------------------------------

    def pair_values(self, values: np.ndarray) -> np.ndarray:
        """(K, m) pair residuals at the interior nodes for the full lattice vector ``values``."""
        u_int = values[self.interior]
        return np.array([mat @ values for mat in self.matrices]) + self.const + self.c * u_int + self.f

    def residual(self, values: np.ndarray) -> np.ndarray:
        """sup_a inf_b of the pair residuals at every interior node."""
        table = self.pair_values(values).reshape(*self.shape, -1)
        return table.min(axis=1).max(axis=0)

    def active_indices(self, values: np.ndarray) -> list[tuple[str, str]]:
        """(a, b) attaining the sup-inf per node, first declared on ties."""
        table = self.pair_values(values).reshape(*self.shape, -1)
        inner = table.argmin(axis=1)
        outer = table.min(axis=1).argmax(axis=0)
        picks = inner[outer, np.arange(table.shape[2])]
        return [self.labels[int(a) * self.shape[1] + int(b)] for a, b in zip(outer, picks, strict=True)]

    def affine(self, values: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """alpha (K, |rows|) and beta (K, |rows|) of the residual as a function of the center value."""
        u_int = values[self.interior[rows]]
        full = rows.size == self.interior.size
        products = np.array([(mat if full else mat[rows]) @ values for mat in self.matrices])
        alpha = products - self.diag[:, rows] * u_int + self.const[:, rows] + self.f[:, rows]
        beta = self.diag[:, rows] + self.c[:, rows]
        return alpha, beta

    def node_affine(self, values: np.ndarray, i: int) -> tuple[np.ndarray, np.ndarray]:
        u_i = values[self.interior[i]]
        alpha = np.empty(len(self.pairs))
        for k, mat in enumerate(self.matrices):
            start, end = mat.indptr[i], mat.indptr[i + 1]
            alpha[k] = mat.data[start:end] @ values[mat.indices[start:end]]
        alpha += -self.diag[:, i] * u_i + self.const[:, i] + self.f[:, i]
        return alpha, self.diag[:, i] + self.c[:, i]

    def node_location(self, i: int) -> list[float]:
        return self.lattice.nodes[self.interior[i]].tolist()


# ---------------------------------------------------------------------------
# Scalar solves
# ---------------------------------------------------------------------------


def _sup_inf(alpha: np.ndarray, beta: np.ndarray, t: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    values = (alpha + beta * t).reshape(*shape, -1)
    return values.min(axis=1).max(axis=0)


def solve_affine(
    alpha: np.ndarray,
    beta: np.ndarray,
    center: np.ndarray,
    bound: float,
    shape: tuple[int, int],
    tol: float,
    locations: Sequence[list[float]] | None = None,
) -> np.ndarray:
    """Roots of t -> sup_a inf_b (alpha_ab + beta_ab t), one per column.

    A single pair is solved in closed form. Otherwise the bracket
    [center - 2 bound, center + 2 bound] is widened by doubling until the
    residual changes sign, bisected to ``tol`` and polished with the active
    affine piece.

    Raises:
        BracketError: If a column never changes sign (a non-increasing residual).
    """
    if alpha.shape[0] == 1:
        bad = np.flatnonzero(beta[0] <= 0.0)
        if bad.size:
            where = locations[int(bad[0])] if locations else int(bad[0])
            msg = f"residual is not increasing in the center value at node {where} (slope {beta[0, bad[0]]:.3g})"
            raise BracketError(msg)
        return -alpha[0] / beta[0]
    half = np.full(center.shape, 2.0 * max(bound, 1.0))
    lo, hi = center - half, center + half
    for _ in range(_MAX_EXPANSIONS):
        f_lo = _sup_inf(alpha, beta, lo, shape)
        f_hi = _sup_inf(alpha, beta, hi, shape)
        low_bad, high_bad = f_lo > 0.0, f_hi < 0.0
        if not (np.any(low_bad) or np.any(high_bad)):
            break
        half *= 2.0
        lo = np.where(low_bad, center - half, lo)
        hi = np.where(high_bad, center + half, hi)
    else:
        bad = int(np.flatnonzero((f_lo > 0.0) | (f_hi < 0.0))[0])
        where = locations[bad] if locations else bad
        msg = f"no sign change of the residual around node {where}"
        raise BracketError(msg)
    for _ in range(_MAX_BISECTIONS):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        positive = _sup_inf(alpha, beta, mid, shape) > 0.0
        hi = np.where(positive, mid, hi)
        lo = np.where(positive, lo, mid)
    mid = 0.5 * (lo + hi)
    # polish with the piece active at the midpoint
    table = (alpha + beta * mid).reshape(*shape, -1)
    cols = np.arange(mid.size)
    inner = table.argmin(axis=1)
    outer = table.min(axis=1).argmax(axis=0)
    k = outer * shape[1] + inner[outer, cols]
    a_k, b_k = alpha[k, cols], beta[k, cols]
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = np.where(b_k > 0.0, -a_k / b_k, mid)
    return np.where((exact >= lo - tol) & (exact <= hi + tol), exact, mid)


def _bound(u: GridFunction) -> float:
    return float(u.sup_bound() or np.abs(u.values).max(initial=0.0))


def _node_position(system: DiscreteBellmanSystem, node: int | np.ndarray) -> int:
    lattice = system.lattice
    flat = lattice.nearest_node(np.asarray(node, dtype=float)) if np.ndim(node) else int(node)
    position = np.searchsorted(system.interior, flat)
    if position >= len(system.interior) or system.interior[position] != flat:
        msg = f"node {lattice.nodes[flat].tolist()} is not an interior node"
        raise ValueError(msg)
    return int(position)


def pointwise_update(
    problem: BellmanProblem,
    u: GridFunction,
    node: int | np.ndarray,
    q: QuadratureParams,
    tol: float = 1e-12,
    system: DiscreteBellmanSystem | None = None,
) -> float:
    """Value r* at an interior node making the residual vanish with u frozen elsewhere.

    Args:
        problem: Bellman problem.
        u: Current grid function.
        node: Flat lattice index or a point (snapped to the nearest node).
        q: Quadrature controls.
        tol: Bisection tolerance.
        system: Pre-assembled system; assembled on the fly when omitted.

    Returns:
        The root r*.

    Raises:
        ValueError: If the node is not interior.
        BracketError: If the residual does not change sign.
    """
    system = system or DiscreteBellmanSystem(problem, u.lattice, q)
    i = _node_position(system, node)
    alpha, beta = system.node_affine(u.values, i)
    root = solve_affine(
        alpha[:, None], beta[:, None], np.array([u.values[system.interior[i]]]), _bound(u), system.shape, tol,
        [system.node_location(i)],
    )
    return float(root[0])


def _jacobi_chunk(
    system: DiscreteBellmanSystem, values: np.ndarray, rows: np.ndarray, bound: float, tol: float
) -> np.ndarray:
    alpha, beta = system.affine(values, rows)
    locations = [system.node_location(int(i)) for i in rows]
    return solve_affine(alpha, beta, values[system.interior[rows]], bound, system.shape, tol, locations)


def sweep(
    problem: BellmanProblem,
    u: GridFunction,
    q: QuadratureParams,
    upper: GridFunction | None = None,
    mode: SweepMode = "gauss-seidel",
    tol: float = 1e-12,
    threads: int = 1,
    system: DiscreteBellmanSystem | None = None,
) -> tuple[GridFunction, float, int]:
    """One pass of pointwise updates over the interior nodes in lexicographic order.

    Gauss-Seidel reads already-updated neighbors; Jacobi updates every node
    from the previous iterate and is split over ``threads`` workers.

    Returns:
        Updated grid function, max pointwise change and the number of clamped nodes.
    """
    system = system or DiscreteBellmanSystem(problem, u.lattice, q, threads=threads)
    values = u.values.copy()
    interior = system.interior
    ceiling = upper.values[interior] if upper is not None else np.full(interior.size, np.inf)
    bound = max(_bound(u), _bound(upper) if upper is not None else 0.0)
    if mode == "jacobi":
        chunks = np.array_split(np.arange(interior.size), max(1, threads))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(lambda rows: _jacobi_chunk(system, values, rows, bound, tol), chunks))
        else:
            parts = [_jacobi_chunk(system, values, chunks[0], bound, tol)]
        raw = np.concatenate(parts)
        new = np.minimum(raw, ceiling)
        clamped = int(np.count_nonzero(raw > ceiling))
        delta = float(np.abs(new - values[interior]).max(initial=0.0))
        values[interior] = new
    elif mode == "gauss-seidel":
        delta = 0.0
        clamped = 0
        single = len(system.pairs) == 1
        for i, node in enumerate(interior):
            alpha, beta = system.node_affine(values, i)
            if single and beta[0] > 0.0:
                root = -alpha[0] / beta[0]
            else:
                root = float(
                    solve_affine(
                        alpha[:, None], beta[:, None], values[node : node + 1], bound, system.shape, tol,
                        [system.node_location(i)],
                    )[0]
                )
            if root > ceiling[i]:
                clamped += 1
                root = ceiling[i]
            delta = max(delta, abs(root - values[node]))
            values[node] = root
    else:
        msg = f"unknown sweep mode {mode!r}, expected 'jacobi' or 'gauss-seidel'"
        raise ValueError(msg)
    return u.with_values(values), delta, clamped


def discrete_perron_solve(
    problem: BellmanProblem,
    sub: GridFunction,
    sup: GridFunction,
    q: QuadratureParams,
    tol: float = 1e-9,
    max_sweeps: int = 20_000,
    mode: SweepMode = "gauss-seidel",
    threads: int = 1,
    system: DiscreteBellmanSystem | None = None,
) -> tuple[GridFunction, SolveReport]:
    """Monotone sweeps from the subsolution until the max change drops below tol.

    Args:
        problem: Bellman problem.
        sub: Discrete subsolution (starting iterate).
        sup: Supersolution used as the clamp.
        q: Quadrature controls.
        tol: Stopping tolerance on the max pointwise change.
        max_sweeps: Sweep budget; exhausting it returns the partial iterate.
        mode: ``jacobi`` or ``gauss-seidel``.
        threads: Worker count for assembly and Jacobi sweeps.
        system: Pre-assembled system.

    Returns:
        Final iterate and its SolveReport.

    Raises:
        ValueError: If the lattices differ or sub exceeds sup somewhere.
    """
    if sub.lattice is not sup.lattice:
        msg = "subsolution and supersolution must share a lattice"
        raise ValueError(msg)
    gap = float((sub.values - sup.values).max(initial=0.0))
    if gap > 1e-12:
        msg = f"subsolution exceeds the supersolution by {gap:.3g}"
        raise ValueError(msg)
    system = system or DiscreteBellmanSystem(problem, sub.lattice, q, threads=threads)
    started = time.perf_counter()
    u = sub
    residuals: list[float] = []
    deltas: list[float] = []
    monotone = True
    clamp_total = 0
    converged = False
    inner_tol = tol / 10.0
    for k in range(1, max_sweeps + 1):
        nxt, delta, clamped = sweep(problem, u, q, upper=sup, mode=mode, tol=inner_tol, threads=threads, system=system)
        if np.any(nxt.values < u.values - 1e-12 * max(1.0, _bound(u))):
            monotone = False
        u = nxt
        clamp_total += clamped
        deltas.append(delta)
        residuals.append(float(np.abs(system.residual(u.values)).max(initial=0.0)))
        if k % 500 == 0:
            logger.debug("perron_progress", sweep=k, delta=delta, residual=residuals[-1])
        if delta < tol:
            converged = True
            break
    interior = system.interior
    sandwich = bool(
        np.all(sub.values[interior] <= u.values[interior] + 1e-12)
        and np.all(u.values[interior] <= sup.values[interior] + 1e-12)
    )
    runtime = time.perf_counter() - started
    report = SolveReport(
        mode=mode,
        iterations=len(deltas),
        converged=converged,
        residual_history=residuals,
        max_delta_history=deltas,
        monotone=monotone,
        sandwich_ok=sandwich,
        clamp_count=clamp_total,
        max_residual=residuals[-1] if residuals else 0.0,
        active_indices=system.active_indices(u.values),
        runtime_seconds=runtime,
    )
    log = logger.info if converged else logger.warning
    log("perron_solve_finished", mode=mode, sweeps=len(deltas), converged=converged, seconds=round(runtime, 3))
    return u, report


def _check(
    kind: str, problem: BellmanProblem, u: GridFunction, q: QuadratureParams, tol: float,
    system: DiscreteBellmanSystem | None,
) -> DiscreteCheckReport:
    system = system or DiscreteBellmanSystem(problem, u.lattice, q)
    residual = system.residual(u.values)
    violation = residual if kind == "subsolution" else -residual
    worst = int(np.argmax(violation))
    count = int(np.count_nonzero(violation > tol))
    return DiscreteCheckReport(
        kind=kind,
        tolerance=tol,
        worst_violation=float(violation[worst]),
        worst_node=system.node_location(worst),
        violations=count,
        passed=count == 0,
    )


def check_discrete_subsolution(
    problem: BellmanProblem,
    u: GridFunction,
    q: QuadratureParams,
    tol: float = 1e-8,
    system: DiscreteBellmanSystem | None = None,
) -> DiscreteCheckReport:
    """Residual <= tol at every interior node, u serving as center and environment."""
    return _check("subsolution", problem, u, q, tol, system)


def check_discrete_supersolution(
    problem: BellmanProblem,
    u: GridFunction,
    q: QuadratureParams,
    tol: float = 1e-8,
    system: DiscreteBellmanSystem | None = None,
) -> DiscreteCheckReport:
    """Residual >= -tol at every interior node."""
    return _check("supersolution", problem, u, q, tol, system)


def solve_linear_reference(
    problem: BellmanProblem,
    lattice: Lattice,
    q: QuadratureParams,
    system: DiscreteBellmanSystem | None = None,
) -> GridFunction:
    """Direct sparse solve of the single-pair discretization.

    Raises:
        ValueError: If the problem has more than one index pair.
    """
    system = system or DiscreteBellmanSystem(problem, lattice, q)
    if len(system.pairs) != 1:
        msg = f"the linear reference solve needs a single index pair, got {len(system.pairs)}"
        raise ValueError(msg)
    interior = system.interior
    zero = GridFunction.constant(lattice, 0.0, problem.datum)
    matrix = system.matrices[0]
    block = (matrix[:, interior] + sparse.diags(system.c[0])).tocsc()
    rhs = -(matrix @ zero.values + system.const[0] + system.f[0])
    logger.info("linear_reference_solved", nodes=int(interior.size))
    return zero.with_interior(spsolve(block, rhs))


def comparison_holds(lower: GridFunction, upper: GridFunction, tol: float = 1e-9) -> bool:
    """lower <= upper + tol at every node."""
    return bool(np.all(lower.values <= upper.values + tol))
