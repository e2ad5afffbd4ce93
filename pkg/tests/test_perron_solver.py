from pathlib import Path

import numpy as np
import pytest

from levyperron.models.fields import GridFunction, pointwise_max
from levyperron.schemas.run_config import load_run_config
from levyperron.services.perron_solver import (
    BracketError,
    DiscreteBellmanSystem,
    check_discrete_subsolution,
    check_discrete_supersolution,
    comparison_holds,
    discrete_perron_solve,
    pointwise_update,
    solve_affine,
    solve_linear_reference,
    sweep,
)
from levyperron.services.pipeline import build_lattice, build_problem, build_quadrature

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


class Setup:
    def __init__(self, name: str) -> None:
        self.config = load_run_config(CONFIG_DIR / name)
        self.problem = build_problem(self.config)
        self.q = build_quadrature(self.config)
        self.lattice = build_lattice(self.config, self.problem.domain)
        self.system = DiscreteBellmanSystem(self.problem, self.lattice, self.q)

    def constant(self, value: float) -> GridFunction:
        return GridFunction.constant(self.lattice, value, self.problem.datum)


@pytest.fixture(scope="module")
def model() -> Setup:
    return Setup("model_1d.toml")


@pytest.fixture(scope="module")
def reference(model):
    return solve_linear_reference(model.problem, model.lattice, model.q, system=model.system)


@pytest.fixture(scope="module", params=["gauss-seidel", "jacobi"])
def solved(request, model):
    return discrete_perron_solve(
        model.problem, model.constant(0.0), model.constant(10.0), model.q, tol=1e-9, mode=request.param,
        system=model.system,
    )


@pytest.fixture(scope="module")
def isaacs() -> Setup:
    return Setup("isaacs_2x2_1d.toml")


class TestSolveAffine:
    def test_single_pair_closed_form(self):
        root = solve_affine(np.array([[2.0, -1.0]]), np.array([[4.0, 2.0]]), np.zeros(2), 1.0, (1, 1), 1e-12)
        np.testing.assert_allclose(root, [-0.5, 0.5])

    def test_single_pair_needs_a_positive_slope(self):
        with pytest.raises(BracketError, match="not increasing"):
            solve_affine(np.array([[1.0]]), np.array([[0.0]]), np.zeros(1), 1.0, (1, 1), 1e-12)

    def test_sup_inf_root_is_polished(self):
        alpha = np.array([[1.0], [3.0], [2.0], [0.0]])
        root = solve_affine(alpha, np.ones((4, 1)), np.zeros(1), 1.0, (2, 2), 1e-12)
        assert root[0] == -1.0

    def test_flat_residual_has_no_bracket(self):
        with pytest.raises(BracketError, match="no sign change"):
            solve_affine(np.ones((4, 1)), np.zeros((4, 1)), np.zeros(1), 1.0, (2, 2), 1e-12)


class TestPointwiseUpdate:
    def test_update_zeroes_the_node_residual(self, model):
        u = model.constant(0.0)
        node = int(model.lattice.interior_index[10])
        root = pointwise_update(model.problem, u, node, model.q, system=model.system)
        values = u.values.copy()
        values[node] = root
        assert model.system.residual(values)[10] == pytest.approx(0.0, abs=1e-10)
        assert root > 0.0

    def test_points_snap_to_the_nearest_node(self, model):
        u = model.constant(0.0)
        node = int(model.lattice.interior_index[10])
        by_point = pointwise_update(
            model.problem, u, model.lattice.nodes[node] + 0.1 * model.lattice.h, model.q, system=model.system
        )
        assert by_point == pointwise_update(model.problem, u, node, model.q, system=model.system)

    def test_exterior_node_is_rejected(self, model):
        with pytest.raises(ValueError, match="not an interior node"):
            pointwise_update(model.problem, model.constant(0.0), 0, model.q, system=model.system)


class TestSweeps:
    def test_unknown_mode_is_rejected(self, model):
        with pytest.raises(ValueError, match="unknown sweep mode"):
            sweep(model.problem, model.constant(0.0), model.q, mode="sor", system=model.system)

    def test_threaded_jacobi_matches_serial(self, model):
        u = model.constant(0.0)
        serial, _, _ = sweep(model.problem, u, model.q, mode="jacobi", system=model.system)
        threaded, _, _ = sweep(model.problem, u, model.q, mode="jacobi", threads=3, system=model.system)
        np.testing.assert_array_equal(serial.values, threaded.values)

    def test_clamp_at_the_supersolution(self, model):
        u = model.constant(0.0)
        nxt, _, clamped = sweep(model.problem, u, model.q, upper=model.constant(0.0), system=model.system)
        assert clamped == model.lattice.interior_index.size
        assert np.all(nxt.values == 0.0)


class TestDiscreteChecks:
    def test_constant_pair_brackets_the_model_problem(self, model):
        assert check_discrete_subsolution(model.problem, model.constant(0.0), model.q, system=model.system).passed
        assert check_discrete_supersolution(model.problem, model.constant(10.0), model.q, system=model.system).passed

    def test_large_constant_is_not_a_subsolution(self, model):
        report = check_discrete_subsolution(model.problem, model.constant(10.0), model.q, system=model.system)
        assert not report.passed
        assert report.violations > 0
        assert report.worst_violation > 0.0

    def test_maximum_of_subsolutions_is_a_subsolution(self, model, reference):
        interior = model.lattice.interior_index

        def shrunk(t: float, s: float) -> GridFunction:
            values = reference.values.copy()
            values[interior] = (1.0 - t) * values[interior] - s
            return reference.with_values(values)

        first, second = shrunk(0.05, 0.0), shrunk(0.9, 0.5)
        for u in (first, second, pointwise_max(first, second)):
            report = check_discrete_subsolution(model.problem, u, model.q, system=model.system)
            assert report.passed
            assert report.worst_violation < -0.04

    @pytest.mark.parametrize("seed", range(20))
    def test_maximum_of_random_subsolutions(self, model, reference, seed):
        rng = np.random.default_rng(seed)
        interior = model.lattice.interior_index
        pair = []
        for t, s in zip(rng.uniform(0.05, 0.9, size=2), rng.uniform(0.0, 0.5, size=2), strict=True):
            values = reference.values.copy()
            values[interior] = (1.0 - t) * values[interior] - s
            pair.append((t, reference.with_values(values)))
        (t1, first), (t2, second) = pair
        report = check_discrete_subsolution(model.problem, pointwise_max(first, second), model.q, system=model.system)
        assert report.passed
        # each node is governed by the branch attaining the max
        assert report.worst_violation < -0.5 * min(t1, t2)


class TestPerronSolve:
    def test_converges_monotonically_inside_the_sandwich(self, solved):
        _, report = solved
        assert report.converged
        assert report.monotone
        assert report.sandwich_ok
        assert report.max_residual < 1e-5
        assert report.active_indices[0] == ("a0", "b0")

    def test_matches_the_direct_solve(self, solved, reference, model):
        w, _ = solved
        interior = model.lattice.interior_index
        np.testing.assert_allclose(w.values[interior], reference.values[interior], atol=1e-6)

    def test_history_is_recorded_per_sweep(self, solved):
        _, report = solved
        assert len(report.residual_history) == report.iterations
        assert len(report.max_delta_history) == report.iterations
        assert "runtime_seconds" not in report.model_dump()

    def test_subsolution_above_supersolution_is_rejected(self, model):
        with pytest.raises(ValueError, match="exceeds the supersolution"):
            discrete_perron_solve(model.problem, model.constant(1.0), model.constant(0.0), model.q, system=model.system)

    def test_zero_problem_stops_after_one_sweep(self, model):
        zero = model.problem.with_forcing(0.0)
        system = DiscreteBellmanSystem(zero, model.lattice, model.q)
        w, report = discrete_perron_solve(zero, model.constant(0.0), model.constant(0.0), model.q, system=system)
        assert report.converged
        assert report.iterations == 1
        assert np.all(w.values == 0.0)


class TestReferenceSolution:
    def test_solution_is_positive_and_even(self, reference, model):
        interior = model.lattice.interior_index
        values = reference.values[interior]
        assert np.all(values > 0.0)
        np.testing.assert_allclose(values, values[::-1], atol=1e-8)
        assert np.argmax(values) in (len(values) // 2 - 1, len(values) // 2)

    def test_comparison_under_a_larger_forcing(self, model, reference):
        doubled = model.problem.with_forcing(-2.0)
        larger = solve_linear_reference(doubled, model.lattice, model.q)
        assert comparison_holds(reference, larger)
        assert not comparison_holds(larger, reference)

    def test_needs_a_single_pair(self, isaacs):
        with pytest.raises(ValueError, match="single index pair"):
            solve_linear_reference(isaacs.problem, isaacs.lattice, isaacs.q, system=isaacs.system)


class TestIsaacsProblem:
    def test_constant_start_is_a_pair(self, isaacs):
        q, system = isaacs.q, isaacs.system
        assert check_discrete_subsolution(isaacs.problem, isaacs.constant(-4.0), q, system=system).passed
        assert check_discrete_supersolution(isaacs.problem, isaacs.constant(4.0), q, system=system).passed

    def test_jacobi_solve(self, isaacs):
        w, report = discrete_perron_solve(
            isaacs.problem, isaacs.constant(-4.0), isaacs.constant(4.0), isaacs.q, tol=1e-8, mode="jacobi",
            system=isaacs.system,
        )
        assert report.converged
        assert report.monotone
        assert report.sandwich_ok
        assert report.max_residual < 1e-5
        labels = {(p.a, p.b) for p in isaacs.problem.pairs}
        assert set(report.active_indices) <= labels
        assert np.all(np.abs(w.values) <= 4.0 + 1e-12)
