import math

import numpy as np
import pytest

from levyperron.models.kernel import Kernel
from levyperron.schemas.params import EllipticityParams, QuadratureParams
from levyperron.services.kernels import (
    annulus_report,
    check_annulus_bounds,
    check_boundary_cone,
    default_deltas,
    find_symmetric_lower_set,
    fractional_amplitude_window,
    fractional_class_params,
    halfspace_mass,
    make_fractional_kernel,
    make_table_kernel,
    slab_fraction,
    sufficient_cone_constants,
)

ORIGIN = np.zeros(1)


class TestConstructors:
    def test_fractional_density(self, kernel):
        values = kernel(ORIGIN, np.array([[1.0], [-2.0]]))
        np.testing.assert_allclose(values, [0.5, 0.5 * 2.0**-2.5])

    def test_nonpositive_amplitude_is_rejected(self, params):
        with pytest.raises(ValueError, match="amplitude"):
            make_fractional_kernel(params, 0.0)

    def test_one_sided_kernel_vanishes_on_the_negative_side(self, one_sided):
        values = one_sided(ORIGIN, np.array([[0.5], [-0.5]]))
        assert values[0] > 0.0
        assert values[1] == 0.0

    def test_table_kernel_reproduces_a_power_profile(self, params, kernel):
        radii = np.geomspace(1e-3, 1e3, 40)
        offsets = np.concatenate([-radii[::-1], radii])[:, None]
        table = make_table_kernel(params, offsets, kernel(ORIGIN, offsets))
        probes = np.array([[0.0123], [-0.7], [5.5], [2e3]])
        np.testing.assert_allclose(table(ORIGIN, probes), kernel(ORIGIN, probes), rtol=1e-12)

    def test_table_kernel_rejects_negative_density(self, params):
        with pytest.raises(ValueError, match="nonnegative"):
            make_table_kernel(params, np.array([[1.0], [2.0]]), np.array([1.0, -1.0]))

    def test_amplitude_window(self, params):
        low, high = fractional_amplitude_window(params, 1)
        assert low == pytest.approx(0.15 * 2.0**2.5)
        assert high == pytest.approx(1.5 / (2.0 * (1.0 - 2.0**-1.5)))
        assert low < 1.0 < high

    def test_class_params_of_the_unit_amplitude(self):
        cls = fractional_class_params(1.5, 1, 1.0)
        assert cls.lambda_ == pytest.approx(2.0**-2.5)
        assert cls.Lambda == pytest.approx(2.0 * (1.0 - 2.0**-1.5) / 1.5)
        window = fractional_amplitude_window(cls, 1)
        assert window[0] == pytest.approx(1.0)
        assert window[1] == pytest.approx(1.0)

    def test_kernel_tail_bound_matches_the_exact_tail(self, kernel):
        mass, _ = kernel.tail_bounds(8.0)
        # 2 * 0.5 * integral of r^-2.5 over (8, inf)
        assert mass == pytest.approx(8.0**-1.5 / 1.5, rel=1e-9)

    def test_rescaled_kernel(self, kernel):
        z = np.array([[0.3]])
        r = 0.25
        assert kernel.rescaled(r)(ORIGIN, z)[0] == pytest.approx(r**2.5 * kernel(ORIGIN, r * z)[0])


class TestTailBounds:
    @pytest.fixture
    def near_one(self) -> EllipticityParams:
        return EllipticityParams(sigma=1.01, lambda_=0.1, Lambda=1.0)

    def test_fractional_tail_just_above_order_one(self, near_one):
        mass, moment = make_fractional_kernel(near_one, 1.0).tail_bounds(1.0)
        # 2 * 0.99 * integral of r^-2.01 and r^-1.01 over (1, inf)
        assert mass == pytest.approx(2.0 * 0.99 / 1.01, rel=1e-8)
        assert moment == pytest.approx(2.0 * 0.99 / 0.01, rel=1e-8)

    def test_default_class_bounds_sum_the_whole_series(self, near_one):
        kernel = Kernel(density=lambda x, z: np.ones(len(z)), params=near_one, dim=1)
        mass, moment = kernel.tail_bounds(1.0)
        assert mass == pytest.approx(0.99 / (1.0 - 2.0**-1.01), rel=1e-8)
        assert moment == pytest.approx(2.0 * 0.99 / (1.0 - 2.0**-0.01), rel=1e-8)
        assert moment > 286.0

    def test_shells_that_do_not_decay_are_rejected(self, params):
        kernel = Kernel(density=lambda x, z: np.ones(len(z)), params=params, dim=1, shell_mass=lambda a: 1.0)
        with pytest.raises(ValueError, match="do not decay geometrically"):
            kernel.tail_bounds(1.0)


class TestAnnulusBounds:
    @pytest.mark.parametrize("delta", [1e-3, 0.1, 1.0, 50.0])
    def test_fractional_kernel_passes_every_bound(self, kernel, delta):
        report = annulus_report(kernel, ORIGIN, delta)
        assert report.pass_h1
        assert report.pass_h2
        assert report.pass_h3
        assert report.lower_set_fraction == pytest.approx(1.0)
        assert report.mass == pytest.approx(delta**-1.5 * (1.0 - 2.0**-1.5) / 1.5, rel=1e-6)

    def test_one_sided_kernel_fails_the_lower_set(self, one_sided):
        reports = check_annulus_bounds(one_sided, ORIGIN, [0.1, 1.0])
        assert all(r.pass_h1 for r in reports)
        assert not any(r.pass_h3 for r in reports)
        assert all(r.lower_set_fraction == 0.0 for r in reports)

    def test_reports_keep_input_order_across_workers(self, kernel):
        deltas = [0.4, 0.1, 0.2, 0.05]
        reports = check_annulus_bounds(kernel, ORIGIN, deltas, threads=2)
        assert [r.delta for r in reports] == deltas

    def test_nonpositive_radius_is_rejected(self, kernel):
        with pytest.raises(ValueError, match="positive"):
            check_annulus_bounds(kernel, ORIGIN, [0.1, -0.1])

    def test_lower_set_threshold_above_the_kernel(self, kernel):
        report = find_symmetric_lower_set(kernel, ORIGIN, 1.0, lam=10.0)
        assert report.lower_set_fraction == 0.0
        assert not report.pass_h3

    def test_lower_set_covers_the_fractional_annulus(self, kernel):
        report = find_symmetric_lower_set(kernel, ORIGIN, 0.5, grid=16)
        assert report.lower_set_fraction == 1.0
        assert report.fraction_stderr == 0.0
        assert report.pass_h3
        assert report.mass == pytest.approx(annulus_report(kernel, ORIGIN, 0.5).mass)

    def test_report_serializes_with_flag_aliases(self, kernel):
        dumped = annulus_report(kernel, ORIGIN, 0.5).model_dump(by_alias=True)
        assert {"pass_H1", "pass_H2", "pass_H3"} <= dumped.keys()

    def test_default_radii_span_the_range(self):
        deltas = default_deltas(0.01, 8.0, count=5)
        assert deltas[0] == pytest.approx(0.01)
        assert deltas[-1] == pytest.approx(8.0)


class TestBoundaryCone:
    def test_cone_constants_in_one_dimension(self, params):
        constants = sufficient_cone_constants(params, 1)
        assert constants.C4 == 2.0
        assert constants.mu_C4 == 0.0
        assert constants.lambda_bar == pytest.approx(params.lambda_)
        assert constants.mu_bar == pytest.approx(0.25)

    def test_slab_fraction_of_the_plane(self):
        assert slab_fraction(2.0, 2) > slab_fraction(8.0, 2)

    def test_fractional_kernel_clears_the_cone_threshold(self, kernel, interval):
        left = next(s for s in interval.samples if s.point[0] < 0)
        report = check_boundary_cone(
            kernel, interval, left, 0.25, np.array([-0.875]), 2.0, lambda_bar=0.15, mu_bar=0.25
        )
        assert report.s == pytest.approx(0.5)
        assert report.required_mass == pytest.approx(0.0375 * 0.125**-1.5)
        assert report.cone_mass == pytest.approx((0.125**-1.5 - 0.25**-1.5) / 3.0, rel=1e-2)
        assert report.passed

    def test_one_sided_kernel_has_no_inward_cone_mass(self, one_sided, interval):
        left = next(s for s in interval.samples if s.point[0] < 0)
        report = check_boundary_cone(one_sided, interval, left, 0.25, np.array([-0.875]), 2.0)
        assert report.cone_mass == 0.0
        assert not report.passed

    def test_probe_outside_the_domain_is_rejected(self, kernel, interval):
        left = next(s for s in interval.samples if s.point[0] < 0)
        with pytest.raises(ValueError, match="not in the domain"):
            check_boundary_cone(kernel, interval, left, 0.25, np.array([-1.1]), 2.0)

    def test_probe_on_the_exterior_sphere_is_flagged(self, kernel, interval):
        left = next(s for s in interval.samples if s.point[0] < 0)
        report = check_boundary_cone(kernel, interval, left, 0.25, np.array([-1.0 + 1e-5]), 2.0)
        assert report.below_s_min
        assert not report.passed

    @pytest.mark.parametrize("r", [0.0, 2.0, 3.5])
    def test_radius_outside_the_enclosing_ball_is_rejected(self, kernel, interval, r):
        left = next(s for s in interval.samples if s.point[0] < 0)
        with pytest.raises(ValueError, match="R1"):
            check_boundary_cone(kernel, interval, left, r, np.array([-0.875]), 2.0)


class TestHalfSpaceMass:
    def test_mass_below_a_level(self, kernel):
        mass = halfspace_mass(kernel, 2.0 * np.ones(1), 1.0, "below", outer=1e4)
        exact = 0.5 * (1.0 - 1e4**-1.5) / 1.5
        assert mass == pytest.approx(exact, rel=1e-2)
        assert mass <= exact

    def test_sides_are_symmetric_for_a_symmetric_kernel(self, kernel):
        below = halfspace_mass(kernel, ORIGIN, 0.5, "below")
        above = halfspace_mass(kernel, ORIGIN, 0.5, "above")
        assert below == pytest.approx(above)

    def test_one_sided_kernel_has_no_mass_below(self, one_sided):
        assert halfspace_mass(one_sided, ORIGIN, 1.0, "below") == 0.0

    def test_coarser_shells_change_little(self, kernel):
        fine = halfspace_mass(kernel, ORIGIN, 1.0, q=QuadratureParams(annuli_per_decade=48))
        coarse = halfspace_mass(kernel, ORIGIN, 1.0, q=QuadratureParams(annuli_per_decade=12))
        assert math.isclose(fine, coarse, rel_tol=3e-2)


def test_class_params_reject_inverted_constants():
    with pytest.raises(ValueError, match="exceeds"):
        EllipticityParams(sigma=1.0, lambda_=2.0, Lambda=1.0)
