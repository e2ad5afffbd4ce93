import numpy as np
import pytest

from levyperron.models.domain import Domain
from levyperron.models.fields import ExteriorDatum, GridFunction
from levyperron.models.lattice import Lattice
from levyperron.services.perron_solver import solve_linear_reference
from levyperron.services.regularity import (
    GridResolutionError,
    fit_holder_exponent,
    interior_centers,
    oscillation_profile,
    weak_harnack_check,
)


@pytest.fixture(scope="module")
def fine_cusp() -> GridFunction:
    lattice = Lattice(Domain.ball([0.0], 1.0), 2.0**-12)
    return GridFunction.from_field(lattice, lambda p: np.sqrt(np.abs(p[:, 0])), ExteriorDatum.constant(1.0))


class TestOscillationProfile:
    def test_square_root_cusp_has_exponent_one_half(self, fine_cusp):
        report = fit_holder_exponent(oscillation_profile(fine_cusp, [0.0], base=8.0, levels=3))
        assert report.alpha_hat == pytest.approx(0.5, abs=0.05)
        assert report.r_value < -0.99
        assert report.epsilon4_implied == pytest.approx(2.0 * (1.0 - 8.0**-report.alpha_hat))
        assert not report.perfect_regularity

    def test_radii_and_extrema(self, fine_cusp):
        report = oscillation_profile(fine_cusp, [0.0], base=8.0, levels=3)
        assert report.radii == pytest.approx([1.0, 0.125, 0.015625, 0.001953125])
        assert all(lo == 0.0 for lo in report.minima)
        assert report.oscillations == sorted(report.oscillations, reverse=True)

    def test_coarse_lattice_is_refused(self, model_lattice):
        w = GridFunction.constant(model_lattice, 1.0, ExteriorDatum.constant(0.0))
        with pytest.raises(GridResolutionError, match="refine"):
            oscillation_profile(w, [0.0], base=8.0, levels=3)

    def test_two_levels_are_too_few_for_a_fit(self, fine_cusp):
        with pytest.raises(ValueError, match="3 levels"):
            fit_holder_exponent(oscillation_profile(fine_cusp, [0.0], base=8.0, levels=2))

    def test_constant_profile_is_perfectly_regular(self, model_lattice):
        w = GridFunction.constant(model_lattice, 2.0, ExteriorDatum.constant(2.0))
        report = fit_holder_exponent(oscillation_profile(w, [0.0], base=2.0, levels=3, min_nodes=6))
        assert report.perfect_regularity
        assert report.alpha_hat is None

    @pytest.mark.parametrize("base, levels", [(1.0, 3), (8.0, 0)])
    def test_invalid_scales_are_rejected(self, fine_cusp, base, levels):
        with pytest.raises(ValueError, match="base > 1"):
            oscillation_profile(fine_cusp, [0.0], base=base, levels=levels)


class TestWeakHarnack:
    @pytest.fixture
    def parabola(self, model_lattice) -> GridFunction:
        return GridFunction.from_field(model_lattice, lambda p: 1.0 - p[:, 0] ** 2, ExteriorDatum.constant(0.0))

    def test_bound_majorizes_the_superlevel_measures(self, parabola):
        report = weak_harnack_check(parabola, [0.0], 0.5, C1=1.0, thresholds=[0.1, 0.3, 0.5, 0.8], sigma=1.5)
        assert report.majorizes
        assert report.passed
        assert report.epsilon3 > 0.0
        assert not report.fallback
        assert 1.0 <= report.slack <= report.max_slack
        assert report.C_envelope == pytest.approx(report.slack * report.C)
        assert report.measures == sorted(report.measures, reverse=True)
        assert report.u_center == pytest.approx(1.0, abs=1e-3)

    def test_negative_functions_are_rejected(self, model_lattice):
        w = GridFunction.constant(model_lattice, -1.0, ExteriorDatum.constant(0.0))
        with pytest.raises(ValueError, match="u >= 0"):
            weak_harnack_check(w, [0.0], 0.5, C1=1.0, thresholds=[0.1])

    def test_radius_must_be_positive(self, parabola):
        with pytest.raises(ValueError, match="positive"):
            weak_harnack_check(parabola, [0.0], 0.0, C1=1.0, thresholds=[0.1])

    def test_empty_superlevel_sets_fall_back(self, parabola):
        report = weak_harnack_check(parabola, [0.0], 0.5, C1=1.0, thresholds=[2.0, 3.0])
        assert report.fallback
        assert report.epsilon3 == 1.0
        assert report.C == 0.0
        assert not report.passed

    def test_flat_measures_do_not_pass(self, model_lattice):
        w = GridFunction.constant(model_lattice, 1.0, ExteriorDatum.constant(0.0))
        report = weak_harnack_check(w, [0.0], 0.5, C1=1.0, thresholds=[0.1, 0.3, 0.5, 0.8])
        assert report.fallback
        assert not report.passed

    def test_measures_far_from_a_power_law_fail(self, model_lattice):
        # a spike of two nodes on a plateau: the top threshold sees almost nothing
        w = GridFunction.from_field(
            model_lattice, lambda p: np.where(np.abs(p[:, 0]) < 0.02, 1.0, 0.5), ExteriorDatum.constant(0.0)
        )
        report = weak_harnack_check(w, [0.0], 0.5, C1=1.0, thresholds=[0.1, 0.2, 0.4, 0.8], max_slack=2.0)
        assert not report.fallback
        assert report.slack > 2.5
        assert not report.majorizes
        assert not report.passed
        assert report.C_envelope > report.C

    def test_slack_below_one_is_rejected(self, parabola):
        with pytest.raises(ValueError, match="max_slack"):
            weak_harnack_check(parabola, [0.0], 0.5, C1=1.0, thresholds=[0.1], max_slack=0.5)


def test_centers_near_the_boundary_are_skipped(interval):
    assert interior_centers(interval, [[0.0], [0.95], [2.0]], 0.25) == [[0.0]]


class TestSolvedModel:
    def test_holder_fit_is_stable_under_refinement(self, model_problem, model_lattice, interval, quad):
        fits = []
        for h in (model_lattice.h, 0.5 * model_lattice.h):
            w = solve_linear_reference(model_problem, Lattice(interval, h), quad)
            profile = oscillation_profile(w, [0.3], base=2.0, levels=3, min_nodes=6)
            fits.append(fit_holder_exponent(profile).alpha_hat)
        assert fits[0] > 0.0
        assert fits[1] == pytest.approx(fits[0], rel=0.2)
