import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from . import energy
from .energy import StackConfig
from .exceptions import ConfigError

P_S = math.sqrt(2.242e8 / 2.170e9)

fields_strategy = st.floats(min_value=-5e8, max_value=5e8, allow_nan=False)
d_strategy = st.floats(min_value=-0.6, max_value=0.6, allow_nan=False)


class StackConfigTests(SimpleTestCase):
    def test_saturation_polarization(self):
        self.assertAlmostEqual(StackConfig().p_s, 0.3214, places=4)

    def test_invalid_stack_is_rejected(self):
        with self.assertRaises(ConfigError):
            StackConfig(beta=0.0)
        with self.assertRaises(ConfigError):
            StackConfig(d_fe=0.0)
        with self.assertRaises(ConfigError):
            StackConfig(area=-1.0)
        with self.assertRaises(ConfigError):
            StackConfig(polarity=0)

    def test_paraelectric_has_no_saturation(self):
        self.assertTrue(math.isnan(StackConfig(alpha=1e8).p_s))

    def test_divider_and_applied_field(self):
        stack = StackConfig(d_int=0.0)
        self.assertEqual(stack.divider, 1.0)
        # chi = -1: negative voltage pushes toward P-up (positive Landau coordinate)
        self.assertAlmostEqual(stack.applied_field(-6.6), 1e9, delta=1.0)
        self.assertLess(StackConfig().divider, 1.0)


class DepolarizationFactorTests(SimpleTestCase):
    def test_interface_value(self):
        stack = StackConfig(d_int=0.2e-9, eps_int=75.0)
        self.assertAlmostEqual(energy.depolarization_factor(stack) / 4.563e7, 1.0, places=3)

    def test_no_interface(self):
        self.assertEqual(energy.depolarization_factor(StackConfig(d_int=0.0)), 0.0)

    def test_doubling_thickness_halves_gamma(self):
        thin = energy.depolarization_factor(StackConfig(eps_int=75.0))
        thick = energy.depolarization_factor(StackConfig(eps_int=75.0, d_fe=13.2e-9))
        self.assertAlmostEqual(thick / thin, 0.5, places=12)

    def test_zero_permittivity_with_interface_is_an_error(self):
        with self.assertRaises(ConfigError):
            energy.depolarization_factor(StackConfig(d_int=0.2e-9, eps_int=0.0))


class FreeEnergyTests(SimpleTestCase):
    def test_zero_polarization_has_zero_energy(self):
        self.assertEqual(energy.free_energy_density(0.0, StackConfig(), e_ext=3e8, e_bias=-1e7), 0.0)

    def test_evenness_without_fields(self):
        stack = StackConfig(d_int=0.0)
        rng = np.random.default_rng(1)
        d = rng.uniform(-1.0, 1.0, 1000)
        np.testing.assert_array_equal(energy.free_energy_density(d, stack), energy.free_energy_density(-d, stack))

    def test_intrinsic_minima(self):
        stack = StackConfig(d_int=0.0)
        d, f = energy.landscape_curve(stack, d_grid=np.linspace(-0.6, 0.6, 120001))
        minima = energy.landscape_minima(d, f)
        np.testing.assert_allclose(minima, [-0.3214, 0.3214], atol=1e-4)

    @given(d=d_strategy, e_ext=fields_strategy, e_bias=fields_strategy)
    @settings(max_examples=200, deadline=None)
    def test_effective_field_matches_finite_difference(self, d, e_ext, e_bias):
        stack = StackConfig(eps_int=75.0)
        h = 1e-6
        fd = -(energy.free_energy_density(d + h, stack, e_ext, e_bias)
               - energy.free_energy_density(d - h, stack, e_ext, e_bias)) / (2 * h)
        analytic = energy.effective_field(d, stack, e_ext, e_bias)
        scale = abs(stack.alpha) * 1.0 + abs(e_ext) + abs(e_bias)
        self.assertLessEqual(abs(fd - analytic), 1e-6 * scale)

    def test_effective_field_at_zero_is_the_drive(self):
        self.assertEqual(energy.effective_field(0.0, StackConfig(), e_bias=2e7), 2e7)


class FieldCompositionTests(SimpleTestCase):
    def test_zero_state(self):
        fs = energy.total_internal_field(0.0, StackConfig())
        self.assertEqual(fs.e_total, 0.0)

    def test_bias_adds(self):
        fs = energy.total_internal_field(0.0, StackConfig(), e_bias=1e7)
        self.assertEqual(fs.e_total, 1e7)

    @given(p=d_strategy, e_bias=fields_strategy, e_app=fields_strategy)
    def test_sum_is_exact(self, p, e_bias, e_app):
        fs = energy.total_internal_field(p, StackConfig(), e_bias=e_bias, e_applied=e_app)
        self.assertEqual(fs.e_total, e_app + e_bias + fs.e_dep)

    @given(p=st.floats(min_value=1e-3, max_value=0.6))
    def test_depolarization_opposes_polarization(self, p):
        stack = StackConfig(eps_int=75.0)
        self.assertLess(energy.depolarization_field(p, stack), 0.0)
        self.assertGreater(energy.depolarization_field(-p, stack), 0.0)

    def test_perfect_screening(self):
        self.assertEqual(energy.depolarization_field(0.3, StackConfig(d_int=0.0)), 0.0)

    def test_depolarization_matches_series_capacitor_divider(self):
        # charge P*A shared by C_FE and C_s in parallel
        stack = StackConfig(eps_int=75.0)
        p = 0.3214
        q = p * stack.area
        v_fe = -q / (stack.c_fe + stack.c_s)
        self.assertAlmostEqual(energy.depolarization_field(p, stack) / (v_fe / stack.d_fe), 1.0, places=12)

    def test_bias_aligned_remanent_state(self):
        p = -0.3214
        fs = energy.total_internal_field(p, StackConfig(), e_bias=-1e7)
        self.assertNotEqual(fs.e_total, 0.0)
        self.assertEqual(math.copysign(1, fs.e_total), math.copysign(1, fs.e_bias))


class StationaryPointTests(SimpleTestCase):
    def test_symmetric_double_well(self):
        points = energy.stationary_points(StackConfig(d_int=0.0))
        self.assertEqual([sp.kind for sp in points], [energy.MINIMUM, energy.MAXIMUM, energy.MINIMUM])
        np.testing.assert_allclose([sp.d for sp in points], [-P_S, 0.0, P_S], atol=1e-12)

    def test_large_tilt_leaves_one_minimum(self):
        points = energy.stationary_points(StackConfig(d_int=0.0), e_ext=5e8)
        self.assertEqual(len(points), 1)
        self.assertEqual(points[0].kind, energy.MINIMUM)
        self.assertGreater(points[0].d, 0)

    def test_double_root_is_an_inflection(self):
        stack = StackConfig(d_int=0.0)
        # coercive drive: |q| = 2 (-p/3)^(3/2) for the depressed cubic
        p = stack.alpha / stack.beta
        e_c = stack.beta * 2.0 * (-p / 3.0) ** 1.5
        points = energy.stationary_points(stack, e_ext=e_c)
        self.assertIn(energy.INFLECTION, [sp.kind for sp in points])
        self.assertEqual(len(points), 2)

    @given(e_bias=st.floats(min_value=-8e6, max_value=8e6, allow_nan=False))
    @settings(max_examples=50, deadline=None)
    def test_closed_form_agrees_with_grid_search(self, e_bias):
        stack = StackConfig(eps_int=75.0)
        d, f = energy.landscape_curve(stack, e_bias=e_bias, d_grid=np.linspace(-0.6, 0.6, 24001))
        step = d[1] - d[0]
        grid_minima = energy.landscape_minima(d, f)
        closed = [sp.d for sp in energy.stationary_points(stack, e_bias=e_bias) if sp.kind == energy.MINIMUM]
        self.assertEqual(len(grid_minima), len(closed))
        for got, want in zip(grid_minima, closed):
            self.assertLessEqual(abs(got - want), step)

    def test_presets_form_the_triptych(self):
        intrinsic_stack, e0 = energy.LANDSCAPE_PRESETS['intrinsic']
        interface_stack, e1 = energy.LANDSCAPE_PRESETS['interface']
        biased_stack, e2 = energy.LANDSCAPE_PRESETS['fixed_charge_interface']

        intrinsic = energy.barrier_heights(intrinsic_stack, e_bias=e0)
        self.assertLess(abs(intrinsic.from_up - intrinsic.from_down), 1e-9 * intrinsic.from_up)

        interface = energy.barrier_heights(interface_stack, e_bias=e1)
        self.assertLess(interface.from_up, 0.7 * intrinsic.from_up)
        wells_intrinsic = [sp.d for sp in energy.stationary_points(intrinsic_stack) if sp.kind == energy.MINIMUM]
        wells_interface = [sp.d for sp in energy.stationary_points(interface_stack) if sp.kind == energy.MINIMUM]
        self.assertLess(wells_interface[-1], wells_intrinsic[-1])

        biased = energy.barrier_heights(biased_stack, e_bias=e2)
        self.assertLess(biased.from_up, biased.from_down)
        self.assertLess(biased.from_up, intrinsic.from_up)

    def test_barrier_shrinks_with_interface_penalty(self):
        barriers = [
            energy.barrier_heights(StackConfig(d_int=d_int, eps_int=75.0)).from_up
            for d_int in (0.0, 0.05e-9, 0.1e-9, 0.2e-9)
        ]
        self.assertTrue(all(b > a for a, b in zip(barriers[1:], barriers[:-1])))


class LandscapeCurveTests(SimpleTestCase):
    def test_empty_grid(self):
        d, f = energy.landscape_curve(StackConfig(), d_grid=[])
        self.assertEqual(d.size, 0)
        self.assertEqual(f.size, 0)

    def test_non_monotone_grid_is_rejected(self):
        with self.assertRaises(ValueError):
            energy.landscape_curve(StackConfig(), d_grid=[0.0, 0.1, 0.05])

    def test_default_grid_spans_both_wells(self):
        d, f = energy.landscape_curve(StackConfig())
        self.assertEqual(d.size, 601)
        self.assertLess(d[0], -P_S)
        self.assertGreater(d[-1], P_S)
