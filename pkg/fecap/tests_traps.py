import math

from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from . import traps
from .energy import StackConfig
from .exceptions import ConfigError
from .traps import TrapParams, TrapRates, TrapState

STACK = StackConfig()
PARAMS = TrapParams().calibrated(STACK)

voltages = st.floats(min_value=-6.0, max_value=6.0, allow_nan=False)
fractions = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


class TrapParamsTests(SimpleTestCase):
    def test_negative_rate_is_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            TrapParams(c0=-1.0)
        self.assertEqual(ctx.exception.key, 'c0')

    def test_zero_activation_scale_is_rejected(self):
        with self.assertRaises(ConfigError):
            TrapParams(v_e=0.0)

    def test_full_deactivation_is_rejected(self):
        with self.assertRaises(ConfigError):
            TrapParams(g_max=1.0)

    def test_calibration_without_vacancies(self):
        self.assertEqual(TrapParams(n_v=0.0).calibrated(STACK).kappa, 0.0)

    def test_calibration_ignores_target_sign(self):
        self.assertEqual(TrapParams().calibrated(STACK, -1e7).kappa, PARAMS.kappa)

    def test_occupancy_out_of_range(self):
        with self.assertRaises(ValueError):
            TrapState(f_occ=1.5)


class TrapRatesTests(SimpleTestCase):
    def test_zero_voltage(self):
        self.assertEqual(traps.trap_rates(0.0, PARAMS), (PARAMS.c0, PARAMS.e0))

    def test_capture_at_activation_scale(self):
        rates = traps.trap_rates(PARAMS.v_c, PARAMS)
        self.assertAlmostEqual(rates.capture, PARAMS.c0 * math.e, places=12)
        self.assertEqual(rates.emission, PARAMS.e0)

    def test_asymmetry_grows_with_magnitude(self):
        ratios = [traps.trap_rates(0.25 * k, PARAMS) for k in range(25)]
        capture_bias = [r.capture / r.emission for r in ratios]
        self.assertTrue(all(b > a for a, b in zip(capture_bias, capture_bias[1:])))
        ratios = [traps.trap_rates(-0.25 * k, PARAMS) for k in range(25)]
        emission_bias = [r.emission / r.capture for r in ratios]
        self.assertTrue(all(b > a for a, b in zip(emission_bias, emission_bias[1:])))

    def test_extreme_voltage_keeps_rates_finite(self):
        rates = traps.trap_rates(10.0, TrapParams(v_c=0.01))
        self.assertTrue(math.isfinite(rates.capture))
        for v in (-1e4, 1e4):
            self.assertTrue(all(math.isfinite(rate) for rate in traps.deactivation_rates(v, PARAMS)))
        state = traps.advance(TrapState(f_occ=0.5), 1e4, PARAMS, 1e-6)
        self.assertEqual(state.f_occ, 1.0)
        self.assertEqual(state.h_gen, PARAMS.h_max)

    @given(v=voltages)
    def test_rates_are_finite(self, v):
        rates = traps.trap_rates(v, PARAMS)
        self.assertTrue(math.isfinite(rates.capture) and math.isfinite(rates.emission))
        self.assertGreater(rates.capture, 0)
        self.assertGreater(rates.emission, 0)


class StepTrapsTests(SimpleTestCase):
    def test_steady_state_is_fixed(self):
        rates = TrapRates(3.0, 7.0)
        state = TrapState(f_occ=traps.steady_occupancy(rates))
        self.assertEqual(traps.step_traps(state, rates, 1e-3).f_occ, state.f_occ)

    def test_equal_rates_settle_at_half(self):
        rates = TrapRates(5.0, 5.0)
        self.assertEqual(traps.steady_occupancy(rates), 0.5)
        state = traps.step_traps(TrapState(f_occ=1.0), rates, 100.0)
        self.assertAlmostEqual(state.f_occ, 0.5, places=14)

    def test_nonpositive_step_is_rejected(self):
        with self.assertRaises(ValueError):
            traps.step_traps(TrapState(), TrapRates(1.0, 1.0), 0.0)

    def test_zero_rates_leave_state_alone(self):
        state = TrapState(f_occ=0.3)
        self.assertIs(traps.step_traps(state, TrapRates(0.0, 0.0), 1.0), state)

    @given(f=fractions, v=voltages, dt=st.floats(min_value=1e-9, max_value=1e-2))
    @settings(max_examples=200)
    def test_two_half_steps_equal_one_full_step(self, f, v, dt):
        rates = traps.trap_rates(v, PARAMS)
        full = traps.step_traps(TrapState(f_occ=f), rates, dt)
        half = traps.step_traps(traps.step_traps(TrapState(f_occ=f), rates, dt / 2), rates, dt / 2)
        self.assertLessEqual(abs(full.f_occ - half.f_occ), 1e-14)

    @given(f=fractions, waveform=st.lists(st.tuples(voltages, st.floats(min_value=1e-9, max_value=1.0)), max_size=30))
    def test_occupancy_stays_in_bounds(self, f, waveform):
        state = TrapState(f_occ=f)
        for v, dt in waveform:
            state = traps.advance(state, v, PARAMS, dt)
            self.assertGreaterEqual(state.f_occ, 0.0)
            self.assertLessEqual(state.f_occ, 1.0)

    def test_monotone_convergence_at_constant_voltage(self):
        rates = traps.trap_rates(-1.0, PARAMS)
        target = traps.steady_occupancy(rates)
        state = TrapState(f_occ=0.9)
        distances = []
        for _ in range(50):
            state = traps.step_traps(state, rates, 1e-5)
            distances.append(state.f_occ - target)
        self.assertTrue(all(d >= 0 for d in distances))
        self.assertTrue(all(b <= a for a, b in zip(distances, distances[1:])))

    def test_longer_negative_pulse_leaves_fewer_trapped_electrons(self):
        start = traps.rest_state(PARAMS)
        ends = [traps.step_traps(start, traps.trap_rates(-2.0, PARAMS), width).f_occ
                for width in (1e-7, 1e-6, 3e-6)]
        self.assertTrue(all(b < a for a, b in zip(ends, ends[1:])))
        self.assertLess(ends[0], start.f_occ)

    def test_stronger_negative_pulse_leaves_fewer_trapped_electrons(self):
        start = traps.rest_state(PARAMS)
        ends = [traps.step_traps(start, traps.trap_rates(v, PARAMS), 1e-6).f_occ for v in (-1.0, -1.5, -2.0)]
        self.assertTrue(all(b < a for a, b in zip(ends, ends[1:])))

    def test_rest_occupancy(self):
        self.assertAlmostEqual(traps.rest_state(PARAMS).f_occ, 1.0 / 101.0, places=15)


class VacancyBudgetTests(SimpleTestCase):
    def test_negative_stress_deactivates(self):
        state = traps.step_vacancies(TrapState(), -4.5, PARAMS, 1e-3)
        self.assertGreater(state.g_deact, 0.1)
        self.assertLess(state.g_deact, PARAMS.g_max)
        self.assertEqual(state.h_gen, 0.0)

    def test_reset_pulse_recovers_faster_than_rest(self):
        stressed = traps.step_vacancies(TrapState(), -4.5, PARAMS, 1e-3)
        reset = traps.step_vacancies(stressed, 2.5, PARAMS, 1e-5)
        rest = traps.step_vacancies(stressed, 0.0, PARAMS, 1e-5)
        self.assertLess(reset.g_deact, 0.5 * stressed.g_deact)
        self.assertGreater(rest.g_deact, 0.99 * stressed.g_deact)

    def test_positive_voltage_heals_deactivation(self):
        stressed = traps.step_vacancies(TrapState(), -4.5, PARAMS, 1e-3)
        healed = traps.step_vacancies(stressed, 1.0, PARAMS, 1e-3)
        self.assertLess(healed.g_deact, 1e-4 * stressed.g_deact)

    def test_generation_needs_positive_voltage(self):
        self.assertEqual(traps.step_vacancies(TrapState(), -3.0, PARAMS, 1.0).h_gen, 0.0)
        grown = traps.step_vacancies(TrapState(), 2.5, PARAMS, 1e-2)
        self.assertGreater(grown.h_gen, 0.0)
        saturated = traps.step_vacancies(TrapState(), 2.5, PARAMS, 1e3)
        self.assertLessEqual(saturated.h_gen, PARAMS.h_max)


class BiasFieldTests(SimpleTestCase):
    def test_compensated_vacancies_give_no_bias(self):
        self.assertEqual(traps.bias_field(TrapState(f_occ=1.0), PARAMS, STACK), 0.0)

    def test_default_calibration(self):
        e_bias = traps.bias_field(TrapState(f_occ=0.0), PARAMS, STACK)
        self.assertAlmostEqual(e_bias / -1e7, 1.0, places=12)

    def test_linear_in_empty_fraction(self):
        empty = traps.bias_field(TrapState(f_occ=0.0), PARAMS, STACK)
        half = traps.bias_field(TrapState(f_occ=0.5), PARAMS, STACK)
        self.assertAlmostEqual(half / empty, 0.5, places=14)

    def test_deactivation_and_generation_scale_the_budget(self):
        base = traps.bias_field(TrapState(), PARAMS, STACK)
        self.assertAlmostEqual(traps.bias_field(TrapState(g_deact=0.1), PARAMS, STACK) / base, 0.9, places=12)
        self.assertAlmostEqual(traps.bias_field(TrapState(h_gen=0.2), PARAMS, STACK) / base, 1.2, places=12)

    @given(f=fractions, g=st.floats(min_value=0.0, max_value=PARAMS.g_max),
           h=st.floats(min_value=0.0, max_value=PARAMS.h_max))
    def test_sign_never_flips(self, f, g, h):
        self.assertLessEqual(traps.bias_field(TrapState(f_occ=f, g_deact=g, h_gen=h), PARAMS, STACK), 0.0)
