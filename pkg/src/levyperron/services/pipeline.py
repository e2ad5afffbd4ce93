"""Batch stages behind the command line: certify, solve, diagnose.

Each stage builds the problem from a validated RunConfig, runs the service
modules, writes its reports under ``<out>/reports`` and its tables under
``<out>/tables``, and returns a StageResult whose ``passed`` flag drives the
exit status.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import structlog
from structlog.contextvars import bound_contextvars

from levyperron.models.domain import Domain
from levyperron.models.fields import AnalyticField, ExteriorDatum, GridFunction
from levyperron.models.kernel import Kernel
from levyperron.models.lattice import Lattice
from levyperron.models.problem import BellmanProblem, PairCoefficients
from levyperron.schemas.params import QuadratureParams
from levyperron.schemas.run_config import DatumSpec, DomainSpec, KernelSpec, ProblemSpec, RunConfig
from levyperron.services import io
from levyperron.services.barriers import (
    BarrierFamily,
    build_subsolution,
    build_supersolution,
    certify_barrier_family,
)
from levyperron.services.kernels import (
    check_annulus_bounds,
    check_boundary_cone,
    default_deltas,
    make_anisotropic_kernel,
    make_fractional_kernel,
    sufficient_cone_constants,
)
from levyperron.services.nonlocal_op import AxiomSample, BellmanOperator, check_structural_axioms, operator_field
from levyperron.services.perron_solver import (
    DiscreteBellmanSystem,
    SweepMode,
    check_discrete_subsolution,
    check_discrete_supersolution,
    discrete_perron_solve,
    solve_linear_reference,
)
from levyperron.services.regularity import (
    fit_holder_exponent,
    interior_centers,
    oscillation_profile,
    weak_harnack_check,
)

logger = structlog.get_logger(__name__)


@dataclass
class StageResult:
    """Outcome of one stage: pass flag, written artifacts and human-readable failures."""

    name: str
    passed: bool = True
    artifacts: list[Path] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def fail(self, reason: str) -> None:
        self.passed = False
        self.failures.append(reason)
        logger.warning("stage_failure", stage=self.name, reason=reason)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_domain(spec: DomainSpec) -> Domain:
    if spec.shape == "ball":
        domain = Domain.ball(spec.center or [], spec.radius or 1.0, r_omega=spec.r_omega, n_samples=spec.samples)
    else:
        domain = Domain.box(spec.lower or [], spec.upper or [], r_omega=spec.r_omega, n_per_face=spec.samples)
    if spec.boundary_csv:
        domain = domain.with_samples(io.load_boundary_samples(Path(spec.boundary_csv), domain.dim))
    return domain


def build_datum(spec: DatumSpec) -> ExteriorDatum:
    if spec.kind == "constant":
        return ExteriorDatum.constant(spec.value)
    if spec.kind == "cosine":
        return ExteriorDatum.cosine(spec.amplitude, spec.frequency, axis=spec.axis)
    return ExteriorDatum.clipped_affine(spec.slope or [], spec.offset, spec.clip)


def build_kernel(spec: KernelSpec, problem: ProblemSpec) -> Kernel:
    params = problem.params
    dim = problem.domain.dim
    if spec.type == "fractional":
        return make_fractional_kernel(params, spec.amplitude, dim=dim, label=spec.name)
    if spec.type == "anisotropic":
        axis = np.zeros(dim)
        axis[spec.axis] = 1.0
        return make_anisotropic_kernel(
            params,
            spec.amplitude,
            dim=dim,
            axis=axis,
            weight_positive=spec.weight_positive,
            weight_negative=spec.weight_negative,
            label=spec.name,
        )
    return io.load_table_kernel(Path(spec.path or ""), params, dim, spec.name)


def build_problem(config: RunConfig) -> BellmanProblem:
    """Bellman problem with constant pair coefficients from the run configuration."""
    spec = config.problem
    kernels = {k.name: build_kernel(k, spec) for k in spec.kernels}
    pairs = tuple(
        PairCoefficients(
            a=p.a,
            b=p.b,
            kernel=kernels[p.kernel],
            c=p.c,
            f=p.f,
            drift=None if p.drift is None else np.asarray(p.drift, dtype=float),
        )
        for p in spec.pairs
    )
    return BellmanProblem(
        pairs=pairs,
        domain=build_domain(spec.domain),
        datum=build_datum(spec.datum),
        params=spec.params,
        gamma=spec.gamma,
    )


def build_lattice(config: RunConfig, domain: Domain) -> Lattice:
    return Lattice(domain, config.grid.h, margin_nodes=config.grid.margin_nodes)


def build_quadrature(config: RunConfig) -> QuadratureParams:
    return config.grid.quadrature


def _base_point(config: RunConfig, domain: Domain) -> np.ndarray:
    if config.certify.base_point is not None:
        return np.asarray(config.certify.base_point, dtype=float)
    lo, up = domain.bbox
    return 0.5 * (lo + up)


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------


def _axiom_samples(problem: BellmanProblem, count: int, step: float) -> list[AxiomSample]:
    domain = problem.domain
    lo, up = domain.bbox
    dim = problem.dim
    samples = []
    for t in np.linspace(0.3, 0.7, count):
        x = lo + t * (up - lo)
        if not bool(domain.contains(np.atleast_2d(x))[0]):
            continue
        u = AnalyticField(lambda p: np.cos(p[:, 0]), dim, step=step, bound=1.0, domain=domain)
        upper = AnalyticField(
            lambda p, x=x: np.cos(p[:, 0]) + np.minimum(np.sum((p - x) ** 2, axis=1), 1.0),
            dim,
            step=step,
            bound=2.0,
            domain=domain,
        )
        samples.append(AxiomSample(x=x, r=0.0, s=1.0, constant=1.0, u=u, upper=upper, lower=u))
    return samples


def run_certify(config: RunConfig, out: Path, threads: int = 1) -> tuple[StageResult, BarrierFamily]:
    """Kernel class checks, boundary cone checks, structural axioms and the barrier family."""
    result = StageResult("certify")
    with bound_contextvars(stage="certify"):
        problem = build_problem(config)
        spec = config.problem
        q = build_quadrature(config)
        domain = problem.domain
        x = _base_point(config, domain)
        deltas = config.certify.deltas or default_deltas(config.grid.h, q.truncation, config.certify.delta_count)
        degenerate = spec.barrier_kind == "degenerate"
        kernels = {p.kernel.label: p.kernel for p in problem.pairs}

        for name, kernel in kernels.items():
            reports = check_annulus_bounds(kernel, x, deltas, q, grid=config.certify.lower_set_grid, threads=threads)
            result.artifacts.append(io.write_json(out / "reports" / f"annulus_{name}.json", reports))
            result.artifacts.append(io.write_report_table(out / "tables" / f"annulus_{name}.csv", reports))
            for flag, attr in (("H1", "pass_h1"), ("H2", "pass_h2"), ("H3", "pass_h3")):
                if degenerate and flag == "H3":
                    continue
                failing = [r.delta for r in reports if not getattr(r, attr)]
                if failing:
                    result.fail(f"kernel {name} fails {flag} at delta={', '.join(f'{d:.6g}' for d in failing)}")

        constants = sufficient_cone_constants(problem.params, problem.dim)
        r = 0.5 * domain.r_omega
        offsets = [0.5**k for k in range(1, config.certify.cone_probes + 1)]
        for name, kernel in kernels.items():
            cones = []
            for sample in domain.samples:
                for s in offsets:
                    y = sample.point + s * r * sample.normal
                    if not bool(domain.contains(np.atleast_2d(y))[0]):
                        continue
                    cones.append(
                        check_boundary_cone(
                            kernel, domain, sample, r, y, constants.C4, q,
                            lambda_bar=constants.lambda_bar, mu_bar=constants.mu_bar,
                        )
                    )
            payload = {"constants": constants, "probes": cones}
            result.artifacts.append(io.write_json(out / "reports" / f"cone_{name}.json", payload))
            if cones:
                result.artifacts.append(io.write_report_table(out / "tables" / f"cone_{name}.csv", cones))
            failing_cones = [c for c in cones if not c.passed]
            if degenerate and failing_cones:
                result.fail(f"kernel {name} fails the boundary cone condition at {len(failing_cones)} probes")

        operator = BellmanOperator(problem, q)
        axioms = check_structural_axioms(operator, _axiom_samples(problem, config.certify.axiom_samples, config.grid.h))
        result.artifacts.append(io.write_json(out / "reports" / "axioms.json", axioms))
        if not axioms.passed:
            result.fail("structural axioms failed on the sample set")

        family = certify_barrier_family(
            problem,
            kind=spec.barrier_kind,
            radii=config.certify.radii,
            q=q,
            truncation=config.certify.truncation,
            threads=threads,
        )
        result.artifacts.append(io.write_json(out / "reports" / "barriers.json", family.reports))
        result.artifacts.append(io.write_report_table(out / "tables" / "barriers.csv", family.reports))
        if not family.passed:
            failed = [rep.kind for rep in family.reports if not rep.passed]
            result.fail(f"{spec.barrier_kind} barrier certification failed: {', '.join(failed) or 'no certificates'}")
        logger.info("certify_finished", passed=result.passed, alpha=family.alpha, epsilon=family.epsilon)
    return result, family


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def _boundary_gap(w: GridFunction, sub: GridFunction, sup: GridFunction) -> dict[str, float]:
    lattice = w.lattice
    nodes = lattice.nodes[lattice.interior_index]
    near = lattice.domain.distance_to_boundary(nodes) < 2.0 * lattice.h
    if not np.any(near):
        return {"boundary_nodes": 0, "max_gap": 0.0, "allowed_gap": 0.0}
    idx = lattice.interior_index[near]
    g = w.datum(lattice.nodes[idx])
    return {
        "boundary_nodes": int(idx.size),
        "max_gap": float(np.abs(w.values[idx] - g).max()),
        "allowed_gap": float((sup.values[idx] - sub.values[idx]).max()),
    }


def run_solve(
    config: RunConfig,
    out: Path,
    mode: SweepMode | None = None,
    threads: int = 1,
    force: bool = False,
    family: BarrierFamily | None = None,
) -> StageResult:
    """Initial pair, monotone Perron sweeps, solution dump and consistency checks."""
    result = StageResult("solve")
    solver = config.solver
    mode = mode or solver.mode
    with bound_contextvars(stage="solve", mode=mode):
        problem = build_problem(config)
        q = build_quadrature(config)
        lattice = build_lattice(config, problem.domain)
        system = DiscreteBellmanSystem(problem, lattice, q, threads=threads)
        datum = problem.datum

        start = solver.start
        if start == "barrier":
            family = family or certify_barrier_family(
                problem,
                kind=config.problem.barrier_kind,
                radii=config.certify.radii,
                q=q,
                truncation=config.certify.truncation,
                threads=threads,
            )
            if family.passed:
                sub = build_subsolution(problem, lattice, family)
                sup = build_supersolution(problem, lattice, family)
            elif force:
                logger.warning("barrier_certification_failed_forcing_constant_start")
                start = "constant"
            else:
                result.fail("barrier certification failed; rerun with --force to start from constants")
                return result
        if start == "constant":
            sub = GridFunction.constant(lattice, solver.sub_value, datum)
            sup = GridFunction.constant(lattice, solver.super_value, datum)

        initial = [
            check_discrete_subsolution(problem, sub, q, tol=solver.check_tol, system=system),
            check_discrete_supersolution(problem, sup, q, tol=solver.check_tol, system=system),
        ]
        checks_path = out / "reports" / "initial_checks.json"
        result.artifacts.append(io.write_json(checks_path, {"start": start, "checks": initial}))
        interior = lattice.interior_index
        nodes = lattice.nodes[interior]
        result.artifacts.append(
            io.write_field(
                out / "tables" / "initial_pair.csv",
                nodes,
                {"sub": sub.values[interior], "super": sup.values[interior]},
            )
        )
        if not all(check.passed for check in initial) and not force:
            result.fail(f"{start} start is not a discrete sub/supersolution pair; rerun with --force to solve anyway")
            return result

        w, report = discrete_perron_solve(
            problem, sub, sup, q, tol=solver.tol, max_sweeps=solver.max_sweeps, mode=mode, threads=threads,
            system=system,
        )
        residual = system.residual(w.values)
        result.artifacts.append(io.write_solution(out / "solution.csv", w, residual, system.active_indices(w.values)))
        if solver.operator_field:
            values, halfwidths = operator_field(BellmanOperator(problem, q), w, nodes, threads=threads)
            result.artifacts.append(
                io.write_field(
                    out / "tables" / "operator_field.csv", nodes, {"value": values, "tail_halfwidth": halfwidths}
                )
            )
        result.artifacts.append(io.write_json(out / "reports" / "solve.json", report))
        result.artifacts.append(
            io.write_table(
                out / "tables" / "solve_history.csv",
                ["sweep", "max_delta", "residual"],
                [
                    {"sweep": k + 1, "max_delta": d, "residual": r}
                    for k, (d, r) in enumerate(zip(report.max_delta_history, report.residual_history, strict=True))
                ],
            )
        )
        checks: dict[str, object] = {
            "subsolution": check_discrete_subsolution(problem, w, q, tol=solver.check_tol, system=system),
            "supersolution": check_discrete_supersolution(problem, w, q, tol=solver.check_tol, system=system),
            "boundary": _boundary_gap(w, sub, sup),
        }
        if len(problem.pairs) == 1:
            reference = solve_linear_reference(problem, lattice, q, system=system)
            checks["linear_reference_max_difference"] = float(
                np.abs(reference.values[interior] - w.values[interior]).max(initial=0.0)
            )
        result.artifacts.append(io.write_json(out / "reports" / "solution_checks.json", checks))

        if not report.converged:
            result.fail(f"Perron iteration did not converge in {report.iterations} sweeps")
        if not report.monotone:
            result.fail("iterates were not nodewise nondecreasing")
        if not report.sandwich_ok:
            result.fail("solution left the sub/supersolution sandwich")
        logger.info("solve_finished", passed=result.passed, sweeps=report.iterations, residual=report.max_residual)
    return result


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def run_diagnose(config: RunConfig, out: Path, solution: Path | None = None) -> StageResult:
    """Hoelder fit and weak Harnack check of a solution dump at the configured interior centers."""
    result = StageResult("diagnose")
    diag = config.diagnostics
    with bound_contextvars(stage="diagnose"):
        problem = build_problem(config)
        lattice = build_lattice(config, problem.domain)
        w = io.read_solution(solution or out / "solution.csv", lattice, problem.datum)
        requested = diag.centers or [_base_point(config, problem.domain).tolist()]
        centers = interior_centers(problem.domain, requested, diag.margin)
        if not centers:
            result.fail("no diagnostic center is far enough from the boundary")
            return result
        nonnegative = float(w.values.min(initial=0.0)) >= 0.0
        if not nonnegative:
            logger.warning("harnack_check_skipped_negative_solution", minimum=float(w.values.min()))

        for i, center in enumerate(centers):
            with bound_contextvars(center=center):
                try:
                    holder = fit_holder_exponent(
                        oscillation_profile(w, center, base=diag.base, levels=diag.levels, min_nodes=diag.min_nodes)
                    )
                except ValueError as exc:
                    result.fail(f"Hoelder fit at {center} failed: {exc}")
                else:
                    result.artifacts.append(io.write_json(out / "reports" / f"holder_{i}.json", holder))
                    result.artifacts.append(
                        io.write_table(
                            out / "tables" / f"holder_{i}.csv",
                            ["level", "radius", "minimum", "maximum", "oscillation"],
                            [
                                {"level": k, "radius": rad, "minimum": lo, "maximum": hi, "oscillation": osc}
                                for k, (rad, lo, hi, osc) in enumerate(
                                    zip(holder.radii, holder.minima, holder.maxima, holder.oscillations, strict=True)
                                )
                            ],
                        )
                    )
                    if not holder.perfect_regularity and (holder.alpha_hat is None or holder.alpha_hat <= 0.0):
                        result.fail(f"fitted Hoelder exponent at {center} is not positive")

                if not nonnegative:
                    continue
                harnack = weak_harnack_check(
                    w,
                    center,
                    diag.harnack_radius,
                    diag.C1,
                    diag.thresholds,
                    sigma=problem.params.sigma,
                    max_slack=diag.harnack_slack,
                )
                result.artifacts.append(io.write_json(out / "reports" / f"harnack_{i}.json", harnack))
                base = harnack.u_center + harnack.C1 * harnack.radius**problem.params.sigma
                bound = [
                    harnack.C * harnack.radius**problem.dim * base**harnack.epsilon3 * t**-harnack.epsilon3
                    for t in harnack.thresholds
                ]
                result.artifacts.append(
                    io.write_table(
                        out / "tables" / f"harnack_{i}.csv",
                        ["threshold", "measure", "bound"],
                        [
                            {"threshold": t, "measure": m, "bound": b}
                            for t, m, b in zip(harnack.thresholds, harnack.measures, bound, strict=True)
                        ],
                    )
                )
                if harnack.fallback:
                    result.fail(f"no decaying weak Harnack fit at {center}: superlevel measures do not fall with t")
                elif not harnack.majorizes:
                    result.fail(
                        f"weak Harnack fit at {center} is exceeded by a factor {harnack.slack:.3g}"
                        f" > {harnack.max_slack:g}"
                    )
        logger.info("diagnose_finished", passed=result.passed, centers=len(centers))
    return result
