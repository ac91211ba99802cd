"""
Virtual instrument: piecewise-linear waveforms, current synthesis and the measurement protocols
(PUND, switching kinetics, retention, endurance) plus the retention sweep used for tau maps.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from . import analysis
from .energy import EPS0, StackConfig
from .exceptions import ConfigError, WaveformError
from .kinetics import DeviceModel, SimState, TraceRecord, evolve, simulate

logger = logging.getLogger(__name__)

RAMP = 'ramp'
HOLD = 'hold'


@dataclass(frozen=True)
class Segment:
    kind: str
    v_start: float
    v_end: float
    duration: float

    def __post_init__(self):
        if self.kind not in (RAMP, HOLD):
            raise WaveformError(f"unknown segment kind '{self.kind}'")
        if not (math.isfinite(self.v_start) and math.isfinite(self.v_end)):
            raise WaveformError('segment voltages must be finite')
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise WaveformError('segment duration must be positive')
        if self.kind == HOLD and self.v_start != self.v_end:
            raise WaveformError('a hold segment must keep its voltage')

    @property
    def slope(self) -> float:
        return (self.v_end - self.v_start) / self.duration


@dataclass(frozen=True)
class Waveform:
    segments: Tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, 'segments', tuple(self.segments))
        if not self.segments:
            raise WaveformError('a waveform needs at least one segment')
        for prev, nxt in zip(self.segments, self.segments[1:]):
            scale = max(1.0, abs(prev.v_end))
            if abs(nxt.v_start - prev.v_end) > 1e-12 * scale:
                raise WaveformError(f'discontinuous waveform: {prev.v_end} V followed by {nxt.v_start} V')

    @property
    def duration(self) -> float:
        return math.fsum(seg.duration for seg in self.segments)

    @property
    def breakpoints(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([seg.duration for seg in self.segments])])

    @property
    def max_ramp_rate(self) -> float:
        return max(abs(seg.slope) for seg in self.segments)

    def voltage_at(self, t):
        volts = [self.segments[0].v_start] + [seg.v_end for seg in self.segments]
        return np.interp(t, self.breakpoints, volts)

    def time_grid(self, steps_per_segment: int = 1000, dt_max: Optional[float] = None):
        """Integration grid: every breakpoint plus ``steps_per_segment`` equal steps per segment,
        refined where needed so that no step exceeds ``dt_max``."""
        edges = self.breakpoints
        pieces = [edges[:1]]
        for seg, start in zip(self.segments, edges[:-1]):
            n = steps_per_segment
            if dt_max:
                n = max(n, int(math.ceil(seg.duration / dt_max)))
            pieces.append(start + np.linspace(0.0, seg.duration, n + 1)[1:])
        t = np.concatenate(pieces)
        return t, self.voltage_at(t)

    def then(self, other: 'Waveform') -> 'Waveform':
        return Waveform(self.segments + other.segments)


def ramp(v_start: float, v_end: float, duration: float) -> Waveform:
    return Waveform((Segment(RAMP, v_start, v_end, duration),))


def hold(v: float, duration: float) -> Waveform:
    return Waveform((Segment(HOLD, v, v, duration),))


def triangle(base: float, peak: float, duration: float) -> Waveform:
    half = duration / 2
    return Waveform((Segment(RAMP, base, peak, half), Segment(RAMP, peak, base, half)))


def pulse(amplitude: float, width: float, edge: float, base: float = 0.0) -> Waveform:
    """Trapezoidal pulse: rising edge, plateau of ``width`` at ``amplitude``, falling edge"""
    return Waveform((
        Segment(RAMP, base, amplitude, edge),
        Segment(HOLD, amplitude, amplitude, width),
        Segment(RAMP, amplitude, base, edge),
    ))


def concat(*waveforms: Waveform) -> Waveform:
    segments = []
    for wf in waveforms:
        segments.extend(wf.segments)
    return Waveform(tuple(segments))


@dataclass(frozen=True)
class LeakageParams:
    j0: float = field(default=0.05, metadata={'unit': 'current_density'})
    v0p: float = field(default=0.45, metadata={'unit': 'voltage'})
    v0n: float = field(default=0.7, metadata={'unit': 'voltage'})

    def __post_init__(self):
        if self.j0 < 0:
            raise ConfigError('j0 must not be negative', key='j0')
        if not self.v0p > 0:
            raise ConfigError('v0p must be positive', key='v0p')
        if not self.v0n > 0:
            raise ConfigError('v0n must be positive', key='v0n')


def synthesize_current(dP_dt, dE_dt, v, stack: StackConfig, leak: Optional[LeakageParams] = None):
    """I = A (dP/dt + eps0 eps_eff dE/dt) + A j0 (exp(v/v0p) - exp(-v/v0n))"""
    current = stack.area * (dP_dt + EPS0 * stack.eps_eff * dE_dt)
    if leak is not None and leak.j0 > 0:
        current = current + stack.area * leak.j0 * (np.exp(v / leak.v0p) - np.exp(-v / leak.v0n))
    return current


@dataclass(frozen=True)
class PundConfig:
    frequency: float = field(default=1e3, metadata={'unit': 'frequency'})
    v_max: float = field(default=2.5, metadata={'unit': 'voltage'})
    v_min: float = field(default=-4.5, metadata={'unit': 'voltage'})
    center: float = field(default=-1.0, metadata={'unit': 'voltage'})
    precondition: bool = field(default=True, metadata={'unit': 'bool'})

    def __post_init__(self):
        if not self.frequency > 0:
            raise ConfigError('frequency must be positive', key='frequency')
        if not self.v_min < self.center < self.v_max:
            raise ConfigError('center must lie between v_min and v_max', key='center')

    @property
    def pulse_duration(self) -> float:
        return 1.0 / (2.0 * self.frequency)


def _log_delays():
    return tuple(float(x) for x in np.logspace(-6, -2, 17))


@dataclass(frozen=True)
class RetentionConfig:
    preset_amplitude: float = field(default=2.5, metadata={'unit': 'voltage'})
    preset_width: float = field(default=10e-6, metadata={'unit': 'time'})
    program_amplitude: float = field(default=-4.5, metadata={'unit': 'voltage'})
    program_width: float = field(default=50e-6, metadata={'unit': 'time'})
    read_amplitude: float = field(default=2.5, metadata={'unit': 'voltage'})
    read_width: float = field(default=10e-6, metadata={'unit': 'time'})
    edge: float = field(default=100e-9, metadata={'unit': 'time'})
    gap: float = field(default=1e-6, metadata={'unit': 'time'})
    delays: Tuple[float, ...] = field(default_factory=_log_delays, metadata={'unit': 'time_list'})
    state: str = field(default='up', metadata={'unit': 'word'})
    saturation_tol: float = field(default=0.05, metadata={'unit': 'number'})
    read_steps_per_segment: int = field(default=100, metadata={'unit': 'integer'})

    def __post_init__(self):
        object.__setattr__(self, 'delays', tuple(float(d) for d in self.delays))
        if not self.delays:
            raise ConfigError('delays must not be empty', key='delays')
        if self.delays[0] <= 0 or any(b <= a for a, b in zip(self.delays, self.delays[1:])):
            raise ConfigError('delays must be positive and strictly increasing', key='delays')
        if self.state not in ('up', 'down'):
            raise ConfigError("state must be 'up' or 'down'", key='state')
        for name in ('preset_width', 'program_width', 'read_width', 'edge', 'gap'):
            if not getattr(self, name) > 0:
                raise ConfigError(f'{name} must be positive', key=name)
        if self.read_amplitude <= 0:
            raise ConfigError('read pulses must be positive to switch toward P-down', key='read_amplitude')
        if self.read_steps_per_segment < 1:
            raise ConfigError('read_steps_per_segment must be at least 1', key='read_steps_per_segment')


def _checkpoint_schedule(n_cycles):
    points = [0]
    k = 1
    while k < n_cycles:
        points.append(k)
        k *= 10
    if n_cycles > 0:
        points.append(n_cycles)
    return tuple(points)


@dataclass(frozen=True)
class EnduranceConfig:
    n_cycles: int = field(default=100000, metadata={'unit': 'integer'})
    frequency: float = field(default=1e5, metadata={'unit': 'frequency'})
    v_min: float = field(default=-4.5, metadata={'unit': 'voltage'})
    v_max: float = field(default=2.5, metadata={'unit': 'voltage'})
    checkpoints: Optional[Tuple[int, ...]] = field(default=None, metadata={'unit': 'integer_list'})
    relax_pause: float = field(default=1e-3, metadata={'unit': 'time'})
    cycling_steps_per_segment: int = field(default=8, metadata={'unit': 'integer'})

    def __post_init__(self):
        if self.n_cycles < 0:
            raise ConfigError('n_cycles must not be negative', key='n_cycles')
        if not self.frequency > 0:
            raise ConfigError('frequency must be positive', key='frequency')
        if self.relax_pause < 0:
            raise ConfigError('relax_pause must not be negative', key='relax_pause')
        if self.cycling_steps_per_segment < 1:
            raise ConfigError('cycling_steps_per_segment must be at least 1', key='cycling_steps_per_segment')
        if self.checkpoints is None:
            object.__setattr__(self, 'checkpoints', _checkpoint_schedule(self.n_cycles))
        else:
            points = tuple(sorted({int(c) for c in self.checkpoints}))
            if points and (points[0] < 0 or points[-1] > self.n_cycles):
                raise ConfigError('checkpoints must lie within [0, n_cycles]', key='checkpoints')
            object.__setattr__(self, 'checkpoints', points)

    @classmethod
    def high_voltage(cls, **kwargs) -> 'EnduranceConfig':
        kwargs.setdefault('v_min', -5.0)
        kwargs.setdefault('v_max', 3.0)
        return cls(**kwargs)


def _default_amplitudes():
    return (-3.0, -3.5, -4.0, -4.5, -5.0)


def _default_widths():
    return tuple(float(x) for x in np.logspace(-7, -2, 11))


@dataclass(frozen=True)
class KineticsConfig:
    amplitudes: Tuple[float, ...] = field(default_factory=_default_amplitudes, metadata={'unit': 'voltage_list'})
    widths: Tuple[float, ...] = field(default_factory=_default_widths, metadata={'unit': 'time_list'})
    edge: float = field(default=10e-9, metadata={'unit': 'time'})

    def __post_init__(self):
        object.__setattr__(self, 'amplitudes', tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, 'widths', tuple(float(w) for w in self.widths))
        if not self.amplitudes or not self.widths:
            raise ConfigError('kinetics grid must not be empty', key='amplitudes' if not self.amplitudes else 'widths')
        if any(w <= 0 for w in self.widths):
            raise ConfigError('widths must be positive', key='widths')
        if not self.edge > 0:
            raise ConfigError('edge must be positive', key='edge')


def _sweep_widths():
    return tuple(float(x) for x in np.logspace(-6, -3, 8))


def _sweep_amplitudes():
    return (-3.5, -3.75, -4.0, -4.25, -4.5)


@dataclass(frozen=True)
class SweepConfig:
    widths: Tuple[float, ...] = field(default_factory=_sweep_widths, metadata={'unit': 'time_list'})
    amplitudes: Tuple[float, ...] = field(default_factory=_sweep_amplitudes, metadata={'unit': 'voltage_list'})

    def __post_init__(self):
        object.__setattr__(self, 'widths', tuple(float(w) for w in self.widths))
        object.__setattr__(self, 'amplitudes', tuple(float(a) for a in self.amplitudes))
        if not self.widths or not self.amplitudes:
            raise ConfigError('sweep grid must not be empty', key='widths' if not self.widths else 'amplitudes')


class PundResult(NamedTuple):
    trace: TraceRecord
    loop: 'analysis.PolLoop'
    switching: TraceRecord
    non_switching: TraceRecord


class EndurancePoint(NamedTuple):
    cycle: int
    pr_pos: float
    pr_neg: float
    peak_v_pos: float
    peak_v_neg: float

    @property
    def two_pr(self) -> float:
        return self.pr_pos - self.pr_neg


class KineticsResult(NamedTuple):
    amplitudes: Tuple[float, ...]
    widths: Tuple[float, ...]
    delta_p: np.ndarray


class RetentionCell(NamedTuple):
    width: float
    amplitude: float
    points: List[Tuple[float, float]]
    fit: 'analysis.RetentionFit'


def pund_pulses(config: PundConfig) -> List[Waveform]:
    """The P, U, N and D triangles, each centred on ``config.center``"""
    dur = config.pulse_duration
    up = triangle(config.center, config.v_max, dur)
    down = triangle(config.center, config.v_min, dur)
    return [up, up, down, down]


def build_pund(config: PundConfig) -> Waveform:
    return concat(*pund_pulses(config))


def cycling_waveform(config: EnduranceConfig) -> Waveform:
    """One bipolar triangle cycle 0 -> v_min -> 0 -> v_max -> 0.

    The positive half comes last so every cycle ends on the reset that restores deactivated vacancies.
    """
    quarter = 1.0 / (4.0 * config.frequency)
    return concat(triangle(0.0, config.v_min, 2 * quarter), triangle(0.0, config.v_max, 2 * quarter))


def run_pund(model: DeviceModel, config: PundConfig, state: Optional[SimState] = None) -> PundResult:
    """Precondition into P-up, then apply P-U-N-D and integrate switching minus non-switching currents"""
    if state is None:
        state = model.initial_state()
    if config.precondition:
        state = evolve(model, state, triangle(config.center, config.v_min, config.pulse_duration))

    records = []
    for wave in pund_pulses(config):
        rec = simulate(wave, model, state)
        state = rec.final_state
        records.append(rec)
    p_rec, u_rec, n_rec, d_rec = records

    switching = p_rec.concatenate(n_rec)
    non_switching = u_rec.concatenate(d_rec)
    loop = analysis.integrate_pund(switching, non_switching, model.stack.area)
    trace = p_rec.concatenate(u_rec, drop_first=True).concatenate(n_rec, drop_first=True)
    trace = trace.concatenate(d_rec, drop_first=True)
    logger.debug('pund: 2Pr=%.4g C/m2, peaks %.3g V / %.3g V', loop.two_pr, loop.peak_v_pos, loop.peak_v_neg)
    return PundResult(trace, loop, switching, non_switching)


def _program_sequence(config: RetentionConfig, amplitude: float, width: float) -> Waveform:
    preset = pulse(config.preset_amplitude, config.preset_width, config.edge)
    if config.state == 'down':
        return preset
    return concat(preset, hold(0.0, config.gap), pulse(amplitude, width, config.edge))


def programmed_state(model: DeviceModel, config: RetentionConfig,
                     amplitude: Optional[float] = None, width: Optional[float] = None) -> SimState:
    amplitude = config.program_amplitude if amplitude is None else amplitude
    width = config.program_width if width is None else width
    return evolve(model, model.initial_state(), _program_sequence(config, amplitude, width))


def read_polarization(model: DeviceModel, config: RetentionConfig, state: SimState) -> float:
    """Polarization held by ``state``, read with a switching/non-switching pulse pair.

    The pulses only flip P and then sit saturated, so they run on the coarser
    ``read_steps_per_segment`` grid.
    """
    p_s = model.p_s
    reader = model.with_options(steps_per_segment=min(model.steps_per_segment, config.read_steps_per_segment))
    read = pulse(config.read_amplitude, config.read_width, config.edge)
    first = simulate(read, reader, state)
    if first.final_state.p > -p_s * (1.0 - config.saturation_tol):
        logger.warning('read pulse of %.3g V did not saturate P-down (P=%.4g C/m2)',
                       config.read_amplitude, first.final_state.p)
    rested = evolve(reader, first.final_state, hold(0.0, config.gap))
    second = simulate(read, reader, rested)

    switched = analysis.switched_polarization(first, second, model.stack.area)
    if switched > 2.0 * p_s * (1.0 + config.saturation_tol):
        logger.warning('read charge %.4g C/m2 exceeds the 2Ps bound', switched)
    return switched - p_s


def retention_point(model: DeviceModel, config: RetentionConfig, delay: float,
                    amplitude: Optional[float] = None, width: Optional[float] = None) -> float:
    """Polarization left after ``delay`` at 0 V.

    Every call starts from the same fresh state, so points are independent of each other.
    """
    state = programmed_state(model, config, amplitude, width)
    return read_polarization(model, config, evolve(model, state, hold(0.0, delay)))


def run_retention(model: DeviceModel, config: RetentionConfig,
                  amplitude: Optional[float] = None, width: Optional[float] = None) -> List[Tuple[float, float]]:
    """Retention curve over ``config.delays``.

    The device is programmed once and rests from one delay to the next. Each read works on its own
    copy of the rested state, so reading never disturbs the later points.
    """
    state = programmed_state(model, config, amplitude, width)
    elapsed = 0.0
    points = []
    for delay in config.delays:
        state = evolve(model, state, hold(0.0, delay - elapsed))
        elapsed = delay
        points.append((delay, read_polarization(model, config, state)))
    return points


def retention_cell(model: DeviceModel, config: RetentionConfig, width: float, amplitude: float,
                   window: Tuple[Optional[float], Optional[float]] = (None, None)) -> RetentionCell:
    """One sweep grid point: retention curve plus its exponential fit. Runs in worker processes."""
    points = run_retention(model, config, amplitude=amplitude, width=width)
    t, p = zip(*points)
    fit = analysis.fit_exponential(t, p, t_min=window[0], t_max=window[1])
    return RetentionCell(width, amplitude, points, fit)


def run_sweep(model: DeviceModel, config: RetentionConfig, sweep: SweepConfig, jobs: int = 1):
    """Fan the width x amplitude grid out to ``jobs`` processes. Returns (cells, TauMap)."""
    grid = [(w, a) for w in sweep.widths for a in sweep.amplitudes]
    args = ([model] * len(grid), [config] * len(grid), [w for w, _ in grid], [a for _, a in grid])
    if jobs > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(retention_cell, *args))
    else:
        cells = list(map(retention_cell, *args))
    tau_map = analysis.build_tau_map(
        sweep.widths, sweep.amplitudes, {(c.width, c.amplitude): c.fit for c in cells},
    )
    return cells, tau_map


def run_endurance(model: DeviceModel, config: EnduranceConfig,
                  pund: Optional[PundConfig] = None) -> List[EndurancePoint]:
    pund = pund or PundConfig()
    cycle = cycling_waveform(config)
    cycling_model = model.with_options(steps_per_segment=config.cycling_steps_per_segment, dt_max=None)

    state = model.initial_state()
    done = 0
    rows = []
    for checkpoint in config.checkpoints:
        for _ in range(checkpoint - done):
            state = evolve(cycling_model, state, cycle)
        done = checkpoint
        if config.relax_pause > 0:
            state = evolve(model, state, hold(0.0, config.relax_pause))
        result = run_pund(model, pund, state)
        state = result.trace.final_state
        loop = result.loop
        rows.append(EndurancePoint(checkpoint, loop.pr_pos, loop.pr_neg, loop.peak_v_pos, loop.peak_v_neg))
        logger.info('endurance checkpoint %d: 2Pr=%.4g C/m2, +peak %.3f V', checkpoint, loop.two_pr, loop.peak_v_pos)
    return rows


def run_kinetics(model: DeviceModel, config: KineticsConfig) -> KineticsResult:
    """Normalized switched polarization for each (amplitude, width) pulse from the stable state"""
    p_s = model.p_s
    delta = np.empty((len(config.amplitudes), len(config.widths)))
    start = model.initial_state()
    for i, amplitude in enumerate(config.amplitudes):
        for j, width in enumerate(config.widths):
            end = evolve(model, start, pulse(amplitude, width, config.edge))
            delta[i, j] = np.clip((end.p - start.p) / (2.0 * p_s), 0.0, 1.0)
    return KineticsResult(config.amplitudes, config.widths, delta)
