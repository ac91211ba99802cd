import math
from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from scipy.integrate import trapezoid

from . import analysis, instrument
from .energy import EPS0, StackConfig
from .exceptions import ConfigError, WaveformError
from .instrument import (
    EnduranceConfig, KineticsConfig, LeakageParams, PundConfig, RetentionConfig, Segment, SweepConfig, Waveform,
)
from .kinetics import DeviceModel, EnsembleConfig, evolve, sample_ensemble
from .traps import TrapParams


def make_model(steps=100, n_domains=32, **options):
    stack = StackConfig()
    return DeviceModel(
        stack=stack,
        ensemble=sample_ensemble(EnsembleConfig(n_domains=n_domains, seed=7), stack),
        traps=TrapParams().calibrated(stack),
        steps_per_segment=steps,
        **options,
    )


class WaveformTests(SimpleTestCase):
    def test_discontinuous_segments(self):
        with self.assertRaises(WaveformError):
            Waveform((Segment('ramp', 0.0, 1.0, 1e-6), Segment('ramp', 0.5, 0.0, 1e-6)))

    def test_invalid_segments(self):
        with self.assertRaises(WaveformError):
            Segment('ramp', 0.0, math.nan, 1e-6)
        with self.assertRaises(WaveformError):
            Segment('ramp', 0.0, 1.0, 0.0)
        with self.assertRaises(WaveformError):
            Segment('hold', 0.0, 1.0, 1e-6)
        with self.assertRaises(WaveformError):
            Segment('sine', 0.0, 1.0, 1e-6)
        with self.assertRaises(WaveformError):
            Waveform(())

    def test_pulse_shape(self):
        wave = instrument.pulse(-4.5, 50e-6, 100e-9)
        self.assertAlmostEqual(wave.duration, 50.2e-6, places=15)
        self.assertEqual(wave.voltage_at(25e-6), -4.5)
        self.assertEqual(wave.voltage_at(0.0), 0.0)
        self.assertAlmostEqual(wave.voltage_at(wave.duration), 0.0, places=9)
        self.assertAlmostEqual(wave.max_ramp_rate, 4.5e7, places=3)

    def test_then_keeps_order(self):
        wave = instrument.hold(0.0, 1e-6).then(instrument.ramp(0.0, 1.0, 1e-6))
        np.testing.assert_allclose(wave.breakpoints, [0.0, 1e-6, 2e-6])
        self.assertAlmostEqual(wave.voltage_at(1.5e-6), 0.5, places=12)

    def test_continuity(self):
        wave = instrument.build_pund(PundConfig())
        t, v = wave.time_grid(200)
        steps = np.abs(np.diff(v))
        self.assertTrue(np.all(steps <= wave.max_ramp_rate * np.diff(t) * (1 + 1e-9) + 1e-12))

    def test_time_grid_refinement(self):
        wave = instrument.pulse(-4.5, 1e-4, 1e-7)
        t, _ = wave.time_grid(10, dt_max=3e-6)
        self.assertEqual(t.size, 1 + 10 + 34 + 10)
        self.assertLessEqual(np.diff(t).max(), 3e-6)
        for edge in wave.breakpoints:
            self.assertTrue(np.any(np.isclose(t, edge, rtol=0.0, atol=1e-18)))


class BuildPundTests(SimpleTestCase):
    def test_duration_at_one_kilohertz(self):
        wave = instrument.build_pund(PundConfig(frequency=1e3))
        self.assertAlmostEqual(wave.duration, 2e-3, places=15)
        self.assertEqual(len(wave.segments), 8)

    def test_pulses_are_centred(self):
        config = PundConfig()
        wave = instrument.build_pund(config)
        t, v = wave.time_grid(200)
        self.assertEqual(v[0], config.center)
        self.assertAlmostEqual(v[-1], config.center, places=9)
        self.assertAlmostEqual(v.max(), config.v_max)
        self.assertAlmostEqual(v.min(), config.v_min)

    def test_symmetric_limits_are_antisymmetric(self):
        wave = instrument.build_pund(PundConfig(center=0.0, v_max=3.0, v_min=-3.0))
        t = np.linspace(0.0, wave.duration, 4001)
        np.testing.assert_allclose(wave.voltage_at(wave.duration - t), -wave.voltage_at(t), atol=1e-12)

    def test_center_outside_the_limits(self):
        with self.assertRaises(ConfigError):
            PundConfig(center=3.0)
        with self.assertRaises(ConfigError):
            PundConfig(frequency=0.0)


class SynthesizeCurrentTests(SimpleTestCase):
    stack = StackConfig()

    def test_static_state(self):
        leak = LeakageParams()
        self.assertEqual(instrument.synthesize_current(0.0, 0.0, 0.0, self.stack, leak), 0.0)

    def test_triangle_gives_rectangular_displacement_current(self):
        t = np.linspace(0.0, 1e-3, 1001)
        v = instrument.triangle(0.0, 2.0, 1e-3).voltage_at(t)
        de_dt = np.gradient(v / self.stack.thickness, t)
        current = instrument.synthesize_current(np.zeros_like(t), de_dt, v, self.stack)
        level = self.stack.area * EPS0 * self.stack.eps_eff * 4e3 / self.stack.thickness
        np.testing.assert_allclose(current[1:499], level, rtol=1e-9)
        np.testing.assert_allclose(current[502:-1], -level, rtol=1e-9)

    def test_leakage_asymmetry(self):
        leak = LeakageParams()
        positive = instrument.synthesize_current(0.0, 0.0, 1.0, self.stack, leak)
        negative = instrument.synthesize_current(0.0, 0.0, -1.0, self.stack, leak)
        self.assertGreater(positive, 0.0)
        self.assertLess(negative, 0.0)
        self.assertNotAlmostEqual(abs(positive), abs(negative))

    def test_leakage_validation(self):
        with self.assertRaises(ConfigError):
            LeakageParams(j0=-1.0)
        with self.assertRaises(ConfigError):
            LeakageParams(v0n=0.0)


class PundProtocolTests(SimpleTestCase):
    def test_frozen_device_has_no_remanence(self):
        model = make_model(steps=100, frozen=True, leakage=LeakageParams())
        result = instrument.run_pund(model, PundConfig())
        self.assertLess(abs(result.loop.two_pr), 1e-6 * model.p_s)

    def test_volatile_device_loop(self):
        model = make_model(steps=200)
        result = instrument.run_pund(model, PundConfig())
        loop = result.loop
        self.assertGreater(loop.two_pr, 0.0)
        self.assertGreater(loop.area, 0.0)
        # the P-up branch gives way near zero volts
        self.assertLess(abs(loop.peak_v_pos), 0.5)
        self.assertLess(loop.peak_v_neg, 0.0)
        self.assertAlmostEqual(loop.pr_pos + loop.pr_neg, 0.0, places=12)

    def test_switched_charge_matches_polarization_change(self):
        model = make_model(steps=200, leakage=LeakageParams())
        result = instrument.run_pund(model, PundConfig())
        n = len(result.switching) // 2
        charge = analysis.pund_charge(result.switching, result.non_switching, model.stack.area)
        switched = result.switching.p[0] - result.switching.p[n - 1]
        self.assertGreater(switched, 0.0)
        self.assertAlmostEqual(charge[n - 1], switched, delta=0.01 * switched)

    def test_switched_charge_equals_the_loop_window(self):
        model = make_model(steps=200)
        result = instrument.run_pund(model, PundConfig())
        loop = result.loop
        n = len(result.switching) // 2
        sw, ns = result.switching, result.non_switching
        charge = trapezoid(sw.i[:n] - ns.i[:n], sw.t[:n])
        self.assertAlmostEqual(charge / (model.stack.area * loop.two_pr), 1.0, delta=0.01)

    def test_window_matches_the_internal_polarization(self):
        model = make_model(steps=200)
        result = instrument.run_pund(model, PundConfig())
        loop = result.loop
        n = len(result.switching) // 2
        # falling edge of the positive pulse, after the switching peak
        k = np.nonzero(result.switching.v[:n] >= 0.0)[0][-1]
        internal = result.switching.p[0] - result.switching.p[k]
        self.assertGreater(internal, 0.0)
        self.assertAlmostEqual(loop.two_pr / internal, 1.0, delta=0.02)
        self.assertAlmostEqual(loop.p[k], loop.pr_pos, delta=0.02 * loop.two_pr)

    def test_trace_is_continuous(self):
        result = instrument.run_pund(make_model(steps=50), PundConfig())
        self.assertTrue(np.all(np.diff(result.trace.t) > 0))
        self.assertAlmostEqual(result.trace.t[-1] - result.trace.t[0], 2e-3, places=12)


class RetentionProtocolTests(SimpleTestCase):
    def setUp(self):
        self.model = make_model(steps=100)
        self.config = RetentionConfig(delays=(1e-5, 1e-4, 1e-3))

    def test_short_delay_reads_the_programmed_state(self):
        programmed = instrument.programmed_state(self.model, self.config)
        point = instrument.retention_point(self.model, self.config, 1e-9)
        self.assertAlmostEqual(point, programmed.p, delta=0.02 * self.model.p_s)

    def test_long_delay_reads_full_reversal(self):
        point = instrument.retention_point(self.model, self.config, 2e-2)
        self.assertAlmostEqual(point, -self.model.p_s, delta=0.01 * self.model.p_s)

    def test_points_are_independent(self):
        forward = [instrument.retention_point(self.model, self.config, d) for d in (1e-5, 1e-4, 1e-3)]
        backward = [instrument.retention_point(self.model, self.config, d) for d in (1e-3, 1e-4, 1e-5)]
        self.assertEqual(forward, backward[::-1])

    def test_curve_decays(self):
        points = instrument.run_retention(self.model, self.config)
        self.assertEqual([d for d, _ in points], list(self.config.delays))
        values = [p for _, p in points]
        self.assertTrue(all(b < a for a, b in zip(values, values[1:])))

    def test_curve_matches_independent_points(self):
        chained = [p for _, p in instrument.run_retention(self.model, self.config)]
        independent = [instrument.retention_point(self.model, self.config, d) for d in self.config.delays]
        np.testing.assert_allclose(chained, independent, atol=0.02 * self.model.p_s)

    def test_reads_run_on_the_coarse_grid(self):
        state = instrument.programmed_state(self.model, self.config)
        config = RetentionConfig(delays=(1e-5,), read_steps_per_segment=20)
        with mock.patch('fecap.instrument.simulate', wraps=instrument.simulate) as simulate:
            instrument.read_polarization(self.model, config, state)
        self.assertEqual(simulate.call_count, 2)
        for call in simulate.call_args_list:
            self.assertEqual(call.args[1].steps_per_segment, 20)

    def test_stable_state_does_not_decay(self):
        config = RetentionConfig(delays=(1e-5, 1e-3), state='down')
        values = [p for _, p in instrument.run_retention(self.model, config)]
        for value in values:
            self.assertAlmostEqual(value, -self.model.p_s, delta=0.01 * self.model.p_s)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            RetentionConfig(delays=(1e-3, 1e-4))
        with self.assertRaises(ConfigError):
            RetentionConfig(delays=())
        with self.assertRaises(ConfigError):
            RetentionConfig(state='sideways')
        with self.assertRaises(ConfigError):
            RetentionConfig(read_amplitude=-2.5)
        with self.assertRaises(ConfigError):
            RetentionConfig(read_steps_per_segment=0)

    def test_default_delays(self):
        delays = RetentionConfig().delays
        self.assertEqual(len(delays), 17)
        self.assertAlmostEqual(delays[0], 1e-6)
        self.assertAlmostEqual(delays[-1], 1e-2)


class SweepTests(SimpleTestCase):
    def setUp(self):
        self.model = make_model(steps=50)
        self.config = RetentionConfig(delays=tuple(np.logspace(-5, -2, 5)))
        self.sweep = SweepConfig(widths=(10e-6, 50e-6), amplitudes=(-4.5,))

    def test_serial_sweep(self):
        cells, tau_map = instrument.run_sweep(self.model, self.config, self.sweep, jobs=1)
        self.assertEqual(len(cells), 2)
        self.assertEqual(tau_map.shape, (2, 1))
        self.assertEqual([(c.width, c.amplitude) for c in cells], [(10e-6, -4.5), (50e-6, -4.5)])
        self.assertTrue(all(len(c.points) == 5 for c in cells))

    @mock.patch('fecap.instrument.ProcessPoolExecutor')
    def test_parallel_sweep_uses_a_process_pool(self, pool_cls):
        pool = pool_cls.return_value.__enter__.return_value
        pool.map.side_effect = map
        cells, _ = instrument.run_sweep(self.model, self.config, self.sweep, jobs=2)
        pool_cls.assert_called_once_with(max_workers=2)
        serial, _ = instrument.run_sweep(self.model, self.config, self.sweep, jobs=1)
        self.assertEqual([c.points for c in cells], [c.points for c in serial])

    def test_empty_grid(self):
        with self.assertRaises(ConfigError):
            SweepConfig(widths=())


class EnduranceProtocolTests(SimpleTestCase):
    def test_checkpoint_schedule(self):
        self.assertEqual(EnduranceConfig(n_cycles=1000).checkpoints, (0, 1, 10, 100, 1000))
        self.assertEqual(EnduranceConfig(n_cycles=0).checkpoints, (0,))
        self.assertEqual(EnduranceConfig(n_cycles=50, checkpoints=(10, 0, 10)).checkpoints, (0, 10))
        with self.assertRaises(ConfigError):
            EnduranceConfig(n_cycles=5, checkpoints=(10,))

    def test_high_voltage_preset(self):
        config = EnduranceConfig.high_voltage(n_cycles=3)
        self.assertEqual((config.v_min, config.v_max, config.n_cycles), (-5.0, 3.0, 3))

    def test_cycling_waveform(self):
        wave = instrument.cycling_waveform(EnduranceConfig())
        self.assertAlmostEqual(wave.duration, 1e-5, places=18)
        t = np.linspace(0.0, wave.duration, 1001)
        v = wave.voltage_at(t)
        self.assertAlmostEqual(v.max(), 2.5)
        self.assertAlmostEqual(v.min(), -4.5)
        # the reset half comes last
        self.assertAlmostEqual(wave.voltage_at(0.25 * wave.duration), -4.5)
        self.assertAlmostEqual(wave.voltage_at(0.75 * wave.duration), 2.5)
        self.assertEqual(wave.voltage_at(wave.duration), 0.0)

    def test_pristine_only(self):
        rows = instrument.run_endurance(make_model(steps=50), EnduranceConfig(n_cycles=0, relax_pause=1e-4))
        self.assertEqual([r.cycle for r in rows], [0])
        self.assertGreater(rows[0].two_pr, 0.0)

    def test_few_cycles(self):
        config = EnduranceConfig(n_cycles=10, relax_pause=1e-4)
        rows = instrument.run_endurance(make_model(steps=50), config)
        self.assertEqual([r.cycle for r in rows], [0, 1, 10])
        first = rows[0].two_pr
        for row in rows:
            self.assertLess(abs(row.two_pr - first), 0.1 * first)

    def test_peak_drifts_down_while_the_window_holds(self):
        stack = StackConfig()
        model = make_model(steps=1000).with_options(traps=TrapParams(gen0=5.0).calibrated(stack))
        config = EnduranceConfig(n_cycles=30, checkpoints=(0, 1, 10, 30), relax_pause=1e-4)
        rows = instrument.run_endurance(model, config)
        peaks = np.array([r.peak_v_pos for r in rows])
        self.assertTrue(np.all(np.diff(peaks) <= 2e-4), peaks)
        self.assertLess(peaks[-1], peaks[0])
        windows = np.array([r.two_pr for r in rows])
        self.assertTrue(np.all(np.abs(windows - windows[0]) < 0.1 * windows[0]), windows)


class KineticsProtocolTests(SimpleTestCase):
    def setUp(self):
        self.config = KineticsConfig(amplitudes=(-3.5, -4.5, -5.5), widths=(1e-9, 1e-6, 1e-4, 1e-2))
        self.result = instrument.run_kinetics(make_model(steps=100), self.config)

    def test_shape_and_range(self):
        self.assertEqual(self.result.delta_p.shape, (3, 4))
        self.assertTrue(np.all((self.result.delta_p >= 0) & (self.result.delta_p <= 1)))

    def test_vanishing_width(self):
        self.assertTrue(np.all(self.result.delta_p[:, 0] < 0.05))

    def test_monotone_in_amplitude_and_width(self):
        delta = self.result.delta_p
        self.assertTrue(np.all(np.diff(delta, axis=0) >= -1e-12))
        self.assertTrue(np.all(np.diff(delta, axis=1) >= -1e-12))
        self.assertGreater(delta[-1, -1], 0.9)

    def test_half_switching_width_spans_decades(self):
        widths = tuple(float(w) for w in np.logspace(-8, -2, 25))
        config = KineticsConfig(amplitudes=(-3.0, -5.0), widths=widths)
        result = instrument.run_kinetics(make_model(steps=100), config)
        log_w = np.log10(widths)
        half = []
        for row in result.delta_p:
            k = int(np.argmax(row >= 0.5))
            self.assertGreaterEqual(row[k], 0.5)
            self.assertGreater(k, 0)
            half.append(log_w[k - 1] + (0.5 - row[k - 1]) * (log_w[k] - log_w[k - 1]) / (row[k] - row[k - 1]))
        self.assertGreaterEqual(half[0] - half[1], 2.0)

    def test_empty_grid(self):
        with self.assertRaises(ConfigError):
            KineticsConfig(widths=())


class RetentionTimeTests(SimpleTestCase):
    """Reduced-grid retention sweeps under the shipped calibration"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = make_model(steps=200, n_domains=64)
        cls.config = RetentionConfig(delays=tuple(float(d) for d in np.logspace(-6, -2, 9)))
        cls.by_width = [instrument.retention_cell(cls.model, cls.config, w, -4.5).fit
                        for w in (1e-6, 1e-5, 1e-4, 1e-3)]
        cls.by_amplitude = [instrument.retention_cell(cls.model, cls.config, 50e-6, a).fit
                            for a in (-3.5, -3.75, -4.0, -4.5)]

    def test_default_program_pulse(self):
        fit = self.by_amplitude[-1]
        self.assertTrue(fit.converged)
        self.assertGreaterEqual(fit.tau, 1e-4)
        self.assertLessEqual(fit.tau, 2e-3)
        self.assertLess(fit.rmse, 0.05 * abs(fit.p0))

    def test_fits_are_clean(self):
        for fit in self.by_width + self.by_amplitude:
            self.assertTrue(fit.converged and fit.identifiable)
            self.assertLess(fit.rmse, 0.05 * abs(fit.p0))

    def test_tau_grows_with_width(self):
        taus = [fit.tau for fit in self.by_width]
        self.assertTrue(all(b > a for a, b in zip(taus, taus[1:])), taus)

    def test_tau_grows_with_amplitude(self):
        taus = [fit.tau for fit in self.by_amplitude]
        self.assertTrue(all(b > a for a, b in zip(taus, taus[1:])), taus)

    def test_tau_follows_initial_polarization(self):
        widths = tuple(float(w) for w in np.logspace(-5.7, -4, 6))
        sweep = SweepConfig(widths=widths, amplitudes=(-4.25, -4.5))
        _, tau_map = instrument.run_sweep(self.model, self.config, sweep, jobs=1)
        points = analysis.correlate_tau_polarization(tau_map)
        curves = []
        for amplitude in sweep.amplitudes:
            p_init = np.array([p for p, _, a in points if a == amplitude])
            tau = np.array([t for _, t, a in points if a == amplitude])
            self.assertTrue(np.all(np.diff(p_init) > 0))
            self.assertTrue(np.all(p_init < 0.95 * self.model.p_s))
            curves.append((p_init, tau))
        low = max(curve[0][0] for curve in curves)
        high = min(curve[0][-1] for curve in curves)
        self.assertLess(low, high)
        for target in np.linspace(low, high, 3):
            first, second = (np.interp(target, p, t) for p, t in curves)
            self.assertLess(abs(first / second - 1.0), 0.15)
