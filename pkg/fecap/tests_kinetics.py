import csv
import math
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from . import energy, kinetics
from .energy import StackConfig
from .exceptions import ConfigError, IntegratorError
from .instrument import hold, pulse
from .kinetics import DeviceModel, Domain, EnsembleConfig, sample_ensemble
from .traps import TrapParams


def make_model(n_domains=32, seed=3, stack=None, **options):
    stack = stack or StackConfig()
    ensemble = sample_ensemble(EnsembleConfig(n_domains=n_domains, seed=seed), stack)
    options.setdefault('traps', TrapParams().calibrated(stack))
    options.setdefault('steps_per_segment', 1000)
    return DeviceModel(stack=stack, ensemble=ensemble, **options)


class SampleEnsembleTests(SimpleTestCase):
    def test_zero_spread_gives_median(self):
        ensemble = sample_ensemble(EnsembleConfig(n_domains=16, e_act_log_sigma=0.0))
        np.testing.assert_array_equal(ensemble.e_act, np.full(16, 6.5e9))
        np.testing.assert_array_equal(ensemble.e_act_down, np.full(16, 1.3e8))

    def test_same_seed_same_ensemble(self):
        first = sample_ensemble(EnsembleConfig(n_domains=64, seed=11))
        second = sample_ensemble(EnsembleConfig(n_domains=64, seed=11))
        np.testing.assert_array_equal(first.e_act, second.e_act)
        np.testing.assert_array_equal(first.e_act_down, second.e_act_down)
        other = sample_ensemble(EnsembleConfig(n_domains=64, seed=12))
        self.assertFalse(np.array_equal(first.e_act, other.e_act))

    def test_sample_median(self):
        ensemble = sample_ensemble(EnsembleConfig(n_domains=10000, e_act_log_sigma=0.8, seed=5))
        self.assertLess(abs(np.median(ensemble.e_act) / 6.5e9 - 1.0), 0.05)

    def test_weights_and_starting_orientation(self):
        ensemble = sample_ensemble(EnsembleConfig(n_domains=100))
        self.assertLessEqual(abs(ensemble.weights.sum() - 1.0), 1e-12)
        self.assertEqual(len(ensemble), 100)
        self.assertAlmostEqual(ensemble.polarization, -StackConfig().p_s, places=12)

    def test_paraelectric_stack_needs_explicit_saturation(self):
        with self.assertRaises(ConfigError):
            sample_ensemble(EnsembleConfig(n_domains=4), StackConfig(alpha=1e8))
        ensemble = sample_ensemble(EnsembleConfig(n_domains=4, p_s=0.2), StackConfig(alpha=1e8))
        self.assertEqual(ensemble.p_s, 0.2)

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            EnsembleConfig(n_domains=0)
        with self.assertRaises(ConfigError):
            EnsembleConfig(tau0=0.0)
        with self.assertRaises(ConfigError):
            EnsembleConfig(e_act_log_sigma=-0.1)
        with self.assertRaises(ConfigError):
            EnsembleConfig(e_act_depol=0.0)


class SwitchingTimeTests(SimpleTestCase):
    config = EnsembleConfig(tau0=1e-9, merz_n=1.0)

    def test_reference_value(self):
        tau = kinetics.switching_time(1e7, Domain(1.0, 1.5e8), self.config)
        self.assertAlmostEqual(tau / (1e-9 * math.exp(15.0)), 1.0, places=12)
        self.assertAlmostEqual(tau, 3.27e-3, delta=1e-5)

    def test_large_field_approaches_attempt_time(self):
        tau = kinetics.switching_time(1e16, Domain(1.0, 6.5e9), self.config)
        self.assertAlmostEqual(tau / 1e-9, 1.0, places=5)

    def test_zero_field_never_switches(self):
        self.assertEqual(kinetics.switching_time(0.0, Domain(1.0, 1.5e8), self.config), math.inf)

    def test_field_toward_current_state(self):
        self.assertEqual(kinetics.switching_time(-1e8, Domain(1.0, 1.5e8, s=0.0), self.config), math.inf)
        self.assertEqual(kinetics.switching_time(1e8, Domain(1.0, 1.5e8, s=1.0), self.config), math.inf)

    def test_reversal_uses_down_activation(self):
        domain = Domain(1.0, 6.5e9, s=1.0, e_act_down=1.3e8)
        tau = kinetics.switching_time(-1e7, domain, self.config)
        self.assertAlmostEqual(tau / (1e-9 * math.exp(13.0)), 1.0, places=12)

    def test_splitting_needs_a_net_field_against_the_polarization(self):
        ensemble = sample_ensemble(EnsembleConfig(n_domains=4, tau0=1e-9, merz_n=1.0, e_act_depol=6.75e6))
        tau = kinetics.splitting_time(-6.75e5, -6.75e5, ensemble)
        self.assertAlmostEqual(tau / (1e-9 * math.exp(10.0)), 1.0, places=12)
        self.assertEqual(kinetics.splitting_time(-6.75e5, 1e7, ensemble), math.inf)
        self.assertEqual(kinetics.splitting_time(6.75e5, -1e7, ensemble), math.inf)
        self.assertEqual(kinetics.splitting_time(0.0, -1e7, ensemble), math.inf)

    def test_splitting_relaxes_toward_half(self):
        ensemble = sample_ensemble(EnsembleConfig(n_domains=4, e_act_depol=1e5)).with_fraction(1.0)
        stepped, dp = kinetics.step_ensemble(ensemble, -1e6, 1e-10, e_dep=-1e6)
        self.assertLess(dp, 0.0)
        self.assertTrue(np.all(stepped.s > 0.5))
        settled, _ = kinetics.step_ensemble(ensemble, -1e6, 1e-3, e_dep=-1e6)
        np.testing.assert_allclose(settled.s, 0.5, atol=1e-9)

    def test_domain_validation(self):
        with self.assertRaises(ValueError):
            Domain(1.0, 0.0)
        with self.assertRaises(ValueError):
            Domain(1.0, 1e8, s=1.5)


class StepEnsembleTests(SimpleTestCase):
    def test_first_order_bound(self):
        ensemble = sample_ensemble(EnsembleConfig(n_domains=64, seed=2))
        dt = 1e-12
        updated, delta = kinetics.step_ensemble(ensemble, 1e9, dt)
        tau_min = kinetics.switching_times(1e9, ensemble).min()
        # P spans 2 p_s between the two orientations
        self.assertGreater(delta, 0.0)
        self.assertLessEqual(delta, 2.0 * ensemble.p_s * dt / tau_min)
        self.assertAlmostEqual(updated.polarization - ensemble.polarization, delta, places=15)

    def test_single_domain_semigroup(self):
        ensemble = sample_ensemble(EnsembleConfig(n_domains=1, seed=4))
        full, _ = kinetics.step_ensemble(ensemble, 1e9, 1e-6)
        half, _ = kinetics.step_ensemble(ensemble, 1e9, 5e-7)
        half, _ = kinetics.step_ensemble(half, 1e9, 5e-7)
        self.assertLessEqual(abs(full.polarization - half.polarization), 1e-12)
        self.assertGreater(full.s[0], 0.0)

    def test_reversal_matches_analytic_mixture(self):
        ensemble = sample_ensemble(EnsembleConfig(n_domains=50, seed=9)).with_fraction(1.0)
        tau = kinetics.switching_times(-1e7, ensemble)
        dt = 1e-5
        for k in range(1, 201):
            ensemble, _ = kinetics.step_ensemble(ensemble, -1e7, dt)
            if k % 50 == 0:
                expected = ensemble.p_s * np.dot(ensemble.weights, 2.0 * np.exp(-k * dt / tau) - 1.0)
                self.assertLessEqual(abs(ensemble.polarization - expected), 1e-9)

    def test_nonpositive_step_is_rejected(self):
        ensemble = sample_ensemble(EnsembleConfig(n_domains=2))
        with self.assertRaises(ValueError):
            kinetics.step_ensemble(ensemble, 1e8, 0.0)


class LandauKhalatnikovTests(SimpleTestCase):
    stack = StackConfig(d_int=0.0)

    def test_minimum_is_stationary(self):
        p_s = self.stack.p_s
        self.assertAlmostEqual(kinetics.lk_step(p_s, self.stack, 0.0, 0.0, 300.0, 1e-6), p_s, delta=1e-6 * p_s)

    def test_energy_never_increases(self):
        d = 0.05
        energies = [energy.free_energy_density(d, self.stack, 1e7)]
        for _ in range(40):
            d = kinetics.lk_step(d, self.stack, 1e7, 0.0, 300.0, 2e-7)
            energies.append(energy.free_energy_density(d, self.stack, 1e7))
        tolerance = 1e-9 * abs(energies[0])
        self.assertTrue(all(b <= a + tolerance for a, b in zip(energies, energies[1:])))

    def test_relaxation_from_the_barrier_top(self):
        d = kinetics.lk_step(1e-3, self.stack, 0.0, 0.0, 300.0, 1e-4)
        reference = 1e-3
        for _ in range(20000):
            reference += 5e-9 * energy.effective_field(reference, self.stack) / 300.0
        self.assertAlmostEqual(d, self.stack.p_s, delta=1e-4)
        self.assertAlmostEqual(d, reference, delta=1e-4)

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            kinetics.lk_step(0.1, self.stack, 0.0, 0.0, 0.0, 1e-6)
        with self.assertRaises(ValueError):
            kinetics.lk_step(0.1, self.stack, 0.0, 0.0, 300.0, 0.0)

    def test_evaluation_budget(self):
        with self.assertRaises(IntegratorError):
            kinetics.lk_step(1e-3, self.stack, 0.0, 0.0, 300.0, 1e-4, max_nfev=1)


class DeviceModelTests(SimpleTestCase):
    def test_unknown_mode(self):
        with self.assertRaises(ConfigError):
            make_model(mode='preisach')

    def test_nls_needs_ensemble(self):
        with self.assertRaises(ConfigError):
            DeviceModel(stack=StackConfig())

    def test_initial_states(self):
        model = make_model()
        self.assertAlmostEqual(model.initial_state().p, -model.p_s, places=12)
        self.assertAlmostEqual(model.initial_state(up=True).p, model.p_s, places=12)
        self.assertAlmostEqual(model.initial_state().traps.f_occ, 1.0 / 101.0, places=15)

    def test_bias_can_be_switched_off(self):
        model = make_model()
        state = model.initial_state()
        self.assertLess(model.bias(state.traps), 0.0)
        self.assertEqual(model.with_options(bias_enabled=False).bias(state.traps), 0.0)
        self.assertEqual(make_model(traps=None).bias(state.traps), 0.0)


class SimulateTests(SimpleTestCase):
    def test_zero_waveform_keeps_zero_polarization(self):
        model = make_model(traps=None)
        start = kinetics.SimState(traps=model.initial_state().traps, p=0.0,
                                  ensemble=model.ensemble.with_fraction(0.5))
        record = kinetics.simulate(hold(0.0, 1e-3), model, start)
        np.testing.assert_array_equal(record.p, np.zeros(len(record)))

    def test_stable_state_is_flat(self):
        model = make_model()
        record = kinetics.simulate(hold(0.0, 1e-3), model)
        self.assertTrue(np.all(record.p == record.p[0]))
        self.assertLess(record.p[0], 0.0)

    def test_bias_reverses_the_up_state(self):
        model = make_model()
        record = kinetics.simulate(hold(0.0, 2e-2), model, model.initial_state(up=True))
        self.assertGreater(record.p[0], 0.0)
        self.assertTrue(np.any(np.diff(np.sign(record.p)) != 0))
        self.assertLess(record.p[-1], -0.99 * model.p_s)
        self.assertTrue(np.all(np.diff(record.p) <= 0))

    def test_without_bias_the_up_state_depolarizes(self):
        model = make_model(bias_enabled=False)
        record = kinetics.simulate(hold(0.0, 2e-2), model, model.initial_state(up=True))
        self.assertTrue(np.all(record.p > 0))
        self.assertTrue(np.all(np.diff(record.p) < 0))
        self.assertLess(record.p[-1], 0.97 * model.p_s)
        self.assertGreater(record.p[-1], 0.8 * model.p_s)

    def test_halving_the_step_converges(self):
        coarse = make_model(steps_per_segment=1000)
        fine = coarse.with_options(steps_per_segment=2000)
        up = coarse.initial_state(up=True)
        p_coarse = kinetics.simulate(hold(0.0, 1e-3), coarse, up).p[-1]
        p_fine = kinetics.simulate(hold(0.0, 1e-3), fine, up).p[-1]
        self.assertLess(abs(p_coarse - p_fine), 1e-4 * coarse.p_s)
        self.assertLess(p_coarse, 0.9 * coarse.p_s)

    def test_deterministic(self):
        wave = pulse(-4.0, 1e-6, 1e-7).then(hold(0.0, 1e-4))
        first = kinetics.simulate(wave, make_model(steps_per_segment=100))
        second = kinetics.simulate(wave, make_model(steps_per_segment=100))
        np.testing.assert_array_equal(first.as_matrix(), second.as_matrix())

    def test_area_independence(self):
        small = make_model(steps_per_segment=200)
        large_stack = StackConfig(area=25 * small.stack.area)
        large = make_model(steps_per_segment=200, stack=large_stack)
        wave = pulse(-4.5, 50e-6, 1e-7).then(hold(0.0, 1e-3))
        a = kinetics.simulate(wave, small)
        b = kinetics.simulate(wave, large)
        np.testing.assert_array_equal(a.p, b.p)
        np.testing.assert_allclose(b.i, 25.0 * a.i, rtol=1e-12, atol=0.0)

    def test_polarization_stays_bounded(self):
        model = make_model(steps_per_segment=100)
        wave = pulse(-5.0, 1e-4, 1e-7).then(pulse(3.0, 1e-4, 1e-7))
        record = kinetics.simulate(wave, model)
        self.assertTrue(np.all(np.abs(record.p) <= model.p_s * (1 + 1e-9)))

    def test_negative_pulse_writes_up(self):
        model = make_model(steps_per_segment=200)
        end = kinetics.evolve(model, model.initial_state(), pulse(-5.0, 1e-3, 1e-7))
        self.assertGreater(end.p, 0.5 * model.p_s)

    def test_record_every_keeps_the_last_sample(self):
        model = make_model(steps_per_segment=10)
        record = kinetics.simulate(hold(0.0, 1e-6), model, record_every=3)
        self.assertEqual(len(record), 5)
        self.assertAlmostEqual(record.t[-1], 1e-6, places=18)
        with self.assertRaises(ValueError):
            kinetics.simulate(hold(0.0, 1e-6), model, record_every=0)

    def test_final_state_continues_the_clock(self):
        model = make_model(steps_per_segment=10)
        first = kinetics.simulate(hold(0.0, 1e-6), model)
        second = kinetics.simulate(hold(0.0, 1e-6), model, first.final_state)
        self.assertAlmostEqual(second.t[0], 1e-6, places=18)
        self.assertAlmostEqual(second.final_state.t, 2e-6, places=18)

    def test_lk_mode_switches_and_stays(self):
        stack = StackConfig()
        model = DeviceModel(stack=stack, mode=kinetics.LK, steps_per_segment=50)
        record = kinetics.simulate(pulse(-4.5, 1e-6, 1e-7).then(hold(0.0, 5e-6)), model)
        self.assertLess(record.p[0], 0.0)
        self.assertGreater(record.p[-1], 0.9 * stack.p_s)


class TraceRecordTests(SimpleTestCase):
    def setUp(self):
        self.record = kinetics.simulate(hold(0.0, 1e-6), make_model(steps_per_segment=4))

    def test_csv_columns(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'trace.csv')
            self.record.to_csv(path)
            with open(path, newline='') as handle:
                rows = list(csv.reader(handle))
        self.assertEqual(tuple(rows[0]), kinetics.TRACE_COLUMNS)
        self.assertEqual(len(rows), len(self.record) + 1)
        self.assertAlmostEqual(float(rows[-1][0]), 1e-6, places=18)

    def test_concatenate(self):
        joined = self.record.concatenate(self.record)
        self.assertEqual(len(joined), 2 * len(self.record))
        self.assertAlmostEqual(joined.t[-1], 2e-6, places=18)
        trimmed = self.record.concatenate(self.record, drop_first=True)
        self.assertEqual(len(trimmed), 2 * len(self.record) - 1)
        self.assertTrue(np.all(np.diff(trimmed.t) > 0))

    def test_thinned(self):
        thinned = self.record.thinned(2)
        np.testing.assert_array_equal(thinned.t, self.record.t[[0, 2, 4]])
        np.testing.assert_array_equal(thinned.p, self.record.p[[0, 2, 4]])
        self.assertEqual(len(self.record.thinned(3)), 3)
        self.assertIs(self.record.thinned(1), self.record)
        self.assertIs(thinned.final_state, self.record.final_state)
        with self.assertRaises(ValueError):
            self.record.thinned(0)
