"""
Measurement analysis: PUND integration into P-V loops, exponential retention fits and tau maps.

Inputs are plain traces exposing ``t``, ``v`` and ``i`` arrays, so lab data can be analysed the
same way as simulated records.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import least_squares

from .exceptions import WaveformError

logger = logging.getLogger(__name__)

MAX_FIT_EVALUATIONS = 200


@dataclass(eq=False)
class PolLoop:
    v: np.ndarray
    p: np.ndarray
    pr_pos: float
    pr_neg: float
    peak_v_pos: float
    peak_v_neg: float

    @property
    def two_pr(self) -> float:
        return self.pr_pos - self.pr_neg

    @property
    def area(self) -> float:
        """Enclosed |integral of P dV| around the loop"""
        return abs(trapezoid(self.p, self.v))


class RetentionFit(NamedTuple):
    p0: float
    p_inf: float
    tau: float
    rmse: float
    n_iter: int
    converged: bool
    identifiable: bool = True
    optimality: float = math.nan

    @property
    def p_init(self) -> float:
        return self.p0 + self.p_inf

    def to_dict(self) -> dict:
        data = self._asdict()
        data['p_init'] = self.p_init
        return data


@dataclass(eq=False)
class TauMap:
    """tau and initial polarization over a widths x amplitudes grid; NaN marks flagged cells"""
    widths: Tuple[float, ...]
    amplitudes: Tuple[float, ...]
    tau: np.ndarray
    p_init: np.ndarray

    @property
    def shape(self):
        return len(self.widths), len(self.amplitudes)


def _check_aligned(first, second):
    t1 = np.asarray(first.t, dtype=float)
    t2 = np.asarray(second.t, dtype=float)
    if t1.shape != t2.shape:
        raise WaveformError(f'traces have different lengths ({t1.size} and {t2.size})')
    if t1.size < 2:
        raise WaveformError('traces need at least two samples')
    rel1 = t1 - t1[0]
    rel2 = t2 - t2[0]
    span = max(rel1[-1], 1e-300)
    if np.any(np.diff(rel1) < 0) or not np.allclose(rel1, rel2, rtol=0.0, atol=1e-9 * span):
        raise WaveformError('switching and non-switching traces are not time-aligned')
    return rel1


def pund_charge(switching, non_switching, area: float) -> np.ndarray:
    """Running polarization (1/A) * integral of (I_sw - I_ns) dt, starting at zero"""
    t = _check_aligned(switching, non_switching)
    diff = np.asarray(switching.i, dtype=float) - np.asarray(non_switching.i, dtype=float)
    return cumulative_trapezoid(diff, t, initial=0.0) / area


def switched_polarization(switching, non_switching, area: float) -> float:
    return float(pund_charge(switching, non_switching, area)[-1])


def peak_voltage(v, y) -> float:
    """Voltage at the maximum of ``y``, refined by a parabola through the largest sample and its neighbours"""
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    k = int(np.argmax(y))
    if k == 0 or k == y.size - 1:
        return float(v[k])
    left, mid, right = y[k - 1], y[k], y[k + 1]
    curvature = left - 2.0 * mid + right
    if curvature >= 0:
        return float(v[k])
    offset = 0.5 * (left - right) / curvature
    return float(np.interp(k + offset, np.arange(v.size), v))


def integrate_pund(switching, non_switching, area: float) -> PolLoop:
    """P-V loop from a switching and a non-switching trace, centred so that max + min = 0.

    Switching peaks are located between samples, so a drift smaller than the voltage step still shows.
    """
    p = pund_charge(switching, non_switching, area)
    p = p - 0.5 * (p.max() + p.min())
    v = np.asarray(switching.v, dtype=float)
    diff = np.asarray(switching.i, dtype=float) - np.asarray(non_switching.i, dtype=float)
    if np.any(diff != 0):
        peak_pos = peak_voltage(v, diff)
        peak_neg = peak_voltage(v, -diff)
    else:
        peak_pos = peak_neg = math.nan
    return PolLoop(v=v, p=p, pr_pos=float(p.max()), pr_neg=float(p.min()),
                   peak_v_pos=peak_pos, peak_v_neg=peak_neg)


def _initial_tau(t, p, p_inf, p0):
    threshold = abs(p0) / math.e
    remaining = np.abs(p - p_inf)
    below = np.nonzero(remaining < threshold)[0]
    if below.size == 0:
        return float(np.median(t))
    k = below[0]
    if k == 0:
        return float(t[0]) if t[0] > 0 else float(t[1])
    r0, r1 = remaining[k - 1], remaining[k]
    tau = t[k - 1] + (r0 - threshold) * (t[k] - t[k - 1]) / (r0 - r1)
    return float(tau) if tau > 0 else float(t[k])


def fit_exponential(t: Sequence[float], p: Sequence[float],
                    t_min: Optional[float] = None, t_max: Optional[float] = None) -> RetentionFit:
    """Least-squares fit of P(t) = p0 exp(-t/tau) + p_inf.

    Levenberg-Marquardt on (p0, p_inf, log tau) with times and polarizations scaled to order one.
    Samples outside [t_min, t_max] are ignored. Flat data yields p0 = 0 and an unidentifiable tau.
    """
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if t.shape != p.shape:
        raise ValueError('t and P must have the same length')
    keep = np.ones(t.size, dtype=bool)
    if t_min is not None:
        keep &= t >= t_min
    if t_max is not None:
        keep &= t <= t_max
    t, p = t[keep], p[keep]
    order = np.argsort(t, kind='stable')
    t, p = t[order], p[order]
    if t.size < 4:
        raise ValueError('at least 4 samples are needed for an exponential fit')
    if np.unique(t).size != t.size:
        raise ValueError('sample times must be distinct')

    p_scale = float(np.max(np.abs(p)))
    if p_scale == 0 or np.ptp(p) <= 1e-12 * p_scale:
        level = float(np.mean(p))
        rmse = float(np.sqrt(np.mean((p - level) ** 2)))
        return RetentionFit(0.0, level, math.nan, rmse, 0, True, identifiable=False)

    t_scale = float(np.max(np.abs(t)))
    tn = t / t_scale
    pn = p / p_scale

    p_inf0 = pn[-1]
    p00 = pn[0] - pn[-1]
    tau0 = _initial_tau(tn, pn, p_inf0, p00)
    x0 = np.array([p00, p_inf0, math.log(tau0)])

    def residual(x):
        return x[0] * np.exp(-tn / math.exp(x[2])) + x[1] - pn

    def jacobian(x):
        tau = math.exp(x[2])
        decay = np.exp(-tn / tau)
        return np.column_stack([decay, np.ones_like(tn), x[0] * decay * tn / tau])

    grad0 = np.linalg.norm(jacobian(x0).T @ residual(x0))
    with np.errstate(over='ignore', under='ignore'):
        result = least_squares(residual, x0, jac=jacobian, method='lm',
                               xtol=1e-10, ftol=1e-15, gtol=1e-15, max_nfev=MAX_FIT_EVALUATIONS)
    x = result.x
    converged = bool(result.status > 0)
    grad = np.linalg.norm(jacobian(x).T @ residual(x))
    optimality = float(grad / grad0) if grad0 > 0 else 0.0
    rmse = float(p_scale * np.sqrt(np.mean(result.fun ** 2)))
    if not converged:
        logger.warning('exponential fit did not converge after %d evaluations', result.nfev)
    return RetentionFit(
        p0=float(x[0] * p_scale),
        p_inf=float(x[1] * p_scale),
        tau=float(math.exp(x[2]) * t_scale),
        rmse=rmse,
        n_iter=int(result.nfev),
        converged=converged,
        identifiable=True,
        optimality=optimality,
    )


def build_tau_map(widths: Sequence[float], amplitudes: Sequence[float],
                  fits: Dict[Tuple[float, float], RetentionFit]) -> TauMap:
    """Assemble tau and p0 + p_inf matrices (widths x amplitudes) from per-cell fits"""
    widths = tuple(widths)
    amplitudes = tuple(amplitudes)
    tau = np.full((len(widths), len(amplitudes)), np.nan)
    p_init = np.full_like(tau, np.nan)
    for i, w in enumerate(widths):
        for j, a in enumerate(amplitudes):
            fit = fits.get((w, a))
            if fit is None or not fit.converged:
                continue
            p_init[i, j] = fit.p_init
            if fit.identifiable:
                tau[i, j] = fit.tau
    return TauMap(widths, amplitudes, tau, p_init)


def correlate_tau_polarization(tau_map: TauMap) -> List[Tuple[float, float, float]]:
    """Flatten a tau map into (p_init, tau, amplitude) scatter points"""
    points = []
    for i in range(len(tau_map.widths)):
        for j, amplitude in enumerate(tau_map.amplitudes):
            points.append((float(tau_map.p_init[i, j]), float(tau_map.tau[i, j]), amplitude))
    return points
