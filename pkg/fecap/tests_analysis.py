import math
from types import SimpleNamespace

import numpy as np
from django.test import SimpleTestCase

from . import analysis
from .analysis import RetentionFit
from .exceptions import WaveformError

AREA = 625e-12
T = np.linspace(0.0, 1e-3, 1001)


def trace(i, t=T, v=None):
    return SimpleNamespace(t=t, v=np.linspace(-1.0, 2.5, t.size) if v is None else v, i=np.asarray(i, dtype=float))


def current_pulse(peak, start=200, top=300, stop=400, n=T.size):
    """Triangular current pulse between sample indices, exact under the trapezoidal rule"""
    i = np.zeros(n)
    i[start:top + 1] = np.linspace(0.0, peak, top - start + 1)
    i[top:stop + 1] = np.linspace(peak, 0.0, stop - top + 1)
    return i


def decay(t, p0=0.30, p_inf=-0.10, tau=5e-4):
    return p0 * np.exp(-t / tau) + p_inf


class IntegratePundTests(SimpleTestCase):
    def test_identical_traces_give_a_flat_loop(self):
        i = current_pulse(1e-6)
        loop = analysis.integrate_pund(trace(i), trace(i), AREA)
        np.testing.assert_array_equal(loop.p, np.zeros(T.size))
        self.assertEqual(loop.two_pr, 0.0)
        self.assertTrue(math.isnan(loop.peak_v_pos))

    def test_current_pulse_gives_charge_step(self):
        peak = 2e-6
        charge = 0.5 * (T[400] - T[200]) * peak
        background = np.full(T.size, 3e-7)
        switching = trace(current_pulse(peak) + background)
        non_switching = trace(background)
        self.assertAlmostEqual(analysis.switched_polarization(switching, non_switching, AREA) / (charge / AREA),
                               1.0, places=10)
        loop = analysis.integrate_pund(switching, non_switching, AREA)
        self.assertAlmostEqual(loop.two_pr / (charge / AREA), 1.0, places=10)
        self.assertAlmostEqual(loop.pr_pos, -loop.pr_neg, places=12)
        self.assertEqual(loop.peak_v_pos, switching.v[300])

    def test_loop_invariants(self):
        rng = np.random.default_rng(0)
        loop = analysis.integrate_pund(trace(rng.normal(size=T.size)), trace(np.zeros(T.size)), AREA)
        self.assertEqual(loop.v.shape, loop.p.shape)
        self.assertGreaterEqual(loop.pr_pos, loop.pr_neg)
        self.assertAlmostEqual(loop.p.max() + loop.p.min(), 0.0, places=9)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        a, b, c, d = (rng.normal(scale=1e-6, size=T.size) for _ in range(4))
        combined = analysis.pund_charge(trace(a + b), trace(c + d), AREA)
        separate = analysis.pund_charge(trace(a), trace(c), AREA) + analysis.pund_charge(trace(b), trace(d), AREA)
        np.testing.assert_allclose(combined, separate, rtol=1e-9, atol=1e-12 * np.abs(separate).max())

    def test_clock_offset_is_ignored(self):
        i = current_pulse(1e-6)
        shifted = trace(np.zeros(T.size), t=T + 0.37)
        self.assertAlmostEqual(
            analysis.switched_polarization(trace(i), shifted, AREA),
            analysis.switched_polarization(trace(i), trace(np.zeros(T.size)), AREA),
            places=12,
        )

    def test_misaligned_traces(self):
        with self.assertRaises(WaveformError):
            analysis.integrate_pund(trace(np.zeros(T.size)), trace(np.zeros(11), t=T[:11]), AREA)
        stretched = np.linspace(0.0, 2e-3, T.size)
        with self.assertRaises(WaveformError):
            analysis.integrate_pund(trace(np.zeros(T.size)), trace(np.zeros(T.size), t=stretched), AREA)
        with self.assertRaises(ValueError):
            analysis.pund_charge(trace([0.0], t=T[:1], v=T[:1]), trace([0.0], t=T[:1], v=T[:1]), AREA)

    def test_rectangular_loop_area(self):
        loop = analysis.PolLoop(v=np.array([0.0, 1.0, 1.0, 0.0, 0.0]), p=np.array([-1.0, -1.0, 1.0, 1.0, -1.0]),
                                pr_pos=1.0, pr_neg=-1.0, peak_v_pos=1.0, peak_v_neg=0.0)
        self.assertEqual(loop.area, 2.0)
        self.assertEqual(loop.two_pr, 2.0)


class PeakVoltageTests(SimpleTestCase):
    def test_vertex_between_samples(self):
        v = np.linspace(0.0, 1.0, 11)
        self.assertAlmostEqual(analysis.peak_voltage(v, -(v - 0.537) ** 2), 0.537, places=12)

    def test_descending_sweep(self):
        v = np.linspace(1.0, 0.0, 11)
        self.assertAlmostEqual(analysis.peak_voltage(v, -(v - 0.262) ** 2), 0.262, places=12)

    def test_maximum_on_the_edge(self):
        v = np.linspace(0.0, 1.0, 11)
        self.assertEqual(analysis.peak_voltage(v, v), 1.0)

    def test_drift_below_the_voltage_step_shows(self):
        v = np.linspace(0.0, 1.0, 11)
        peaks = [analysis.peak_voltage(v, np.exp(-((v - centre) / 0.2) ** 2)) for centre in (0.50, 0.52, 0.54)]
        self.assertTrue(peaks[0] < peaks[1] < peaks[2])


class FitExponentialTests(SimpleTestCase):
    t = np.logspace(-6, -2, 20)

    def test_noiseless_recovery(self):
        fit = analysis.fit_exponential(self.t, decay(self.t))
        self.assertTrue(fit.converged)
        self.assertTrue(fit.identifiable)
        self.assertAlmostEqual(fit.p0 / 0.30, 1.0, places=6)
        self.assertAlmostEqual(fit.p_inf / -0.10, 1.0, places=6)
        self.assertAlmostEqual(fit.tau / 5e-4, 1.0, places=6)
        self.assertAlmostEqual(fit.p_init, 0.20, places=6)
        self.assertLess(fit.rmse, 1e-9)
        self.assertLess(fit.optimality, 1e-8)

    def test_constant_data(self):
        fit = analysis.fit_exponential(self.t, np.full(self.t.size, -0.25))
        self.assertEqual(fit.p0, 0.0)
        self.assertEqual(fit.p_inf, -0.25)
        self.assertFalse(fit.identifiable)
        self.assertTrue(math.isnan(fit.tau))

    def test_noisy_median_error(self):
        rng = np.random.default_rng(2024)
        errors = []
        for _ in range(100):
            noisy = decay(self.t) + rng.normal(scale=0.01 * 0.30, size=self.t.size)
            fit = analysis.fit_exponential(self.t, noisy)
            errors.append(abs(fit.tau / 5e-4 - 1.0))
        self.assertLess(float(np.median(errors)), 0.05)

    def test_time_rescaling(self):
        base = analysis.fit_exponential(self.t, decay(self.t))
        scaled = analysis.fit_exponential(1024.0 * self.t, decay(self.t))
        self.assertAlmostEqual(scaled.tau / (1024.0 * base.tau), 1.0, places=12)
        self.assertAlmostEqual(scaled.p0, base.p0, places=12)
        self.assertAlmostEqual(scaled.p_inf, base.p_inf, places=12)

    def test_unsorted_input(self):
        order = np.random.default_rng(3).permutation(self.t.size)
        fit = analysis.fit_exponential(self.t[order], decay(self.t)[order])
        self.assertAlmostEqual(fit.tau / 5e-4, 1.0, places=6)

    def test_fit_window(self):
        p = decay(self.t)
        p[-3:] += 0.05
        windowed = analysis.fit_exponential(self.t, p, t_max=self.t[-4])
        self.assertAlmostEqual(windowed.tau / 5e-4, 1.0, places=6)
        full = analysis.fit_exponential(self.t, p)
        self.assertGreater(full.rmse, windowed.rmse)

    def test_too_few_samples(self):
        with self.assertRaises(ValueError):
            analysis.fit_exponential(self.t[:3], decay(self.t[:3]))
        with self.assertRaises(ValueError):
            analysis.fit_exponential(self.t, decay(self.t), t_min=self.t[-2])

    def test_duplicate_times(self):
        t = np.array([1e-6, 1e-5, 1e-5, 1e-4, 1e-3])
        with self.assertRaises(ValueError):
            analysis.fit_exponential(t, decay(t))

    def test_length_mismatch(self):
        with self.assertRaises(ValueError):
            analysis.fit_exponential(self.t, decay(self.t)[:-1])

    def test_to_dict(self):
        data = analysis.fit_exponential(self.t, decay(self.t)).to_dict()
        self.assertEqual(set(data), {'p0', 'p_inf', 'tau', 'rmse', 'n_iter', 'converged', 'identifiable',
                                     'optimality', 'p_init'})


class TauMapTests(SimpleTestCase):
    def fit(self, tau, converged=True, identifiable=True):
        return RetentionFit(0.2, -0.1, tau, 1e-4, 12, converged, identifiable)

    def test_single_cell(self):
        tau_map = analysis.build_tau_map([5e-5], [-4.5], {(5e-5, -4.5): self.fit(4e-4)})
        self.assertEqual(tau_map.shape, (1, 1))
        self.assertEqual(tau_map.tau[0, 0], 4e-4)
        self.assertAlmostEqual(tau_map.p_init[0, 0], 0.1)

    def test_flagged_cells(self):
        widths, amplitudes = (1e-5, 5e-5), (-4.0, -4.5)
        fits = {
            (1e-5, -4.0): self.fit(1e-4),
            (1e-5, -4.5): self.fit(2e-4, converged=False),
            (5e-5, -4.0): self.fit(math.nan, identifiable=False),
        }
        tau_map = analysis.build_tau_map(widths, amplitudes, fits)
        self.assertEqual(tau_map.tau.shape, (2, 2))
        self.assertEqual(tau_map.tau[0, 0], 1e-4)
        self.assertTrue(math.isnan(tau_map.tau[0, 1]))
        self.assertTrue(math.isnan(tau_map.p_init[0, 1]))
        self.assertTrue(math.isnan(tau_map.tau[1, 0]))
        self.assertFalse(math.isnan(tau_map.p_init[1, 0]))
        self.assertTrue(math.isnan(tau_map.tau[1, 1]))

    def test_correlation_points(self):
        widths, amplitudes = (1e-5, 5e-5, 1e-4), (-4.0, -4.5)
        fits = {(w, a): self.fit(1e-4 * (i + 1)) for i, w in enumerate(widths) for a in amplitudes}
        points = analysis.correlate_tau_polarization(analysis.build_tau_map(widths, amplitudes, fits))
        self.assertEqual(len(points), 6)
        self.assertEqual(points[0], (analysis.build_tau_map(widths, amplitudes, fits).p_init[0, 0], 1e-4, -4.0))
        self.assertEqual([p[2] for p in points], [-4.0, -4.5] * 3)
