"""
Polarization dynamics.

Two modes share one time loop:

* ``nls``: a nucleation-limited switching ensemble. Every domain relaxes exponentially toward the
  orientation favoured by the local field, with a Merz-law waiting time. While the net field
  opposes the polarization, the depolarization field also splits domains toward P = 0, so a film
  without bias depolarizes but never reverses.
* ``lk``: single-domain gradient flow (Landau-Khalatnikov) over the free-energy landscape.

The applied field, the depolarization field and the trap bias are recombined every step. Ensemble
and trap updates use the exact exponential solution at a frozen field, evaluated at the step
midpoint so the scheme is second order in dt.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import energy
from .traps import TrapParams, TrapState, advance as advance_traps, bias_field, rest_state
from .energy import StackConfig
from .exceptions import ConfigError, IntegratorError, WaveformError

if TYPE_CHECKING:
    from .instrument import LeakageParams

logger = logging.getLogger(__name__)

NLS = 'nls'
LK = 'lk'

TRACE_COLUMNS = (
    't_s', 'V_V', 'I_A', 'P_C_per_m2', 'E_app_V_per_m', 'E_dep_V_per_m', 'E_bias_V_per_m', 'f_occ',
)
_TRACE_FIELDS = ('t', 'v', 'i', 'p', 'e_app', 'e_dep', 'e_bias', 'f_occ')


@dataclass(frozen=True)
class Domain:
    weight: float
    e_act: float
    s: float = 0.0
    e_act_down: Optional[float] = None

    def __post_init__(self):
        if not self.e_act > 0:
            raise ValueError('e_act must be positive')
        if not 0.0 <= self.s <= 1.0:
            raise ValueError('s must lie in [0, 1]')


@dataclass(frozen=True)
class EnsembleConfig:
    n_domains: int = field(default=512, metadata={'unit': 'integer'})
    e_act_median: float = field(default=6.5e9, metadata={'unit': 'field'})
    e_act_log_sigma: float = field(default=0.25, metadata={'unit': 'number'})
    tau0: float = field(default=1e-9, metadata={'unit': 'time'})
    merz_n: float = field(default=1.0, metadata={'unit': 'number'})
    p_s: Optional[float] = field(default=None, metadata={'unit': 'polarization'})
    seed: int = field(default=0, metadata={'unit': 'integer'})
    # activation toward the stable P-down orientation, correlated with e_act
    e_act_down_median: float = field(default=1.3e8, metadata={'unit': 'field'})
    down_coupling: float = field(default=0.1, metadata={'unit': 'number'})
    # domain splitting toward P = 0 driven by the depolarization field alone
    e_act_depol: float = field(default=6.75e6, metadata={'unit': 'field'})

    def __post_init__(self):
        if self.n_domains < 1:
            raise ConfigError('n_domains must be at least 1', key='n_domains')
        if not self.tau0 > 0:
            raise ConfigError('tau0 must be positive', key='tau0')
        if not self.merz_n > 0:
            raise ConfigError('merz_n must be positive', key='merz_n')
        if self.e_act_log_sigma < 0:
            raise ConfigError('e_act_log_sigma must not be negative', key='e_act_log_sigma')
        if not self.e_act_median > 0:
            raise ConfigError('e_act_median must be positive', key='e_act_median')
        if not self.e_act_down_median > 0:
            raise ConfigError('e_act_down_median must be positive', key='e_act_down_median')
        if not self.e_act_depol > 0:
            raise ConfigError('e_act_depol must be positive', key='e_act_depol')
        if self.p_s is not None and not self.p_s > 0:
            raise ConfigError('p_s must be positive', key='p_s')


@dataclass(frozen=True, eq=False)
class DomainEnsemble:
    """Weighted domains stored as parallel arrays. Treated as a value: updates return a new ensemble."""
    weights: np.ndarray
    e_act: np.ndarray
    e_act_down: np.ndarray
    s: np.ndarray
    tau0: float
    merz_n: float
    p_s: float
    e_act_depol: float = math.inf

    def __len__(self):
        return self.weights.size

    @property
    def polarization(self) -> float:
        return float(self.p_s * np.dot(self.weights, 2.0 * self.s - 1.0))

    def with_fraction(self, s) -> 'DomainEnsemble':
        s = np.broadcast_to(np.asarray(s, dtype=float), self.weights.shape).copy()
        return replace(self, s=s)


def sample_ensemble(config: EnsembleConfig, stack: Optional[StackConfig] = None) -> DomainEnsemble:
    """Draw log-normal activation fields from a generator seeded with ``config.seed``.

    All domains start in the P-down orientation (s = 0).
    """
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal(config.n_domains)
    p_s = config.p_s
    if p_s is None:
        p_s = (stack or StackConfig()).p_s
    if not p_s > 0:
        raise ConfigError('saturation polarization is undefined for alpha >= 0; set p_s', key='p_s')
    n = config.n_domains
    return DomainEnsemble(
        weights=np.full(n, 1.0 / n),
        e_act=config.e_act_median * np.exp(config.e_act_log_sigma * z),
        e_act_down=config.e_act_down_median * np.exp(config.down_coupling * config.e_act_log_sigma * z),
        s=np.zeros(n),
        tau0=config.tau0,
        merz_n=config.merz_n,
        p_s=p_s,
        e_act_depol=config.e_act_depol,
    )


def _merz(tau0, e_act, e_abs, merz_n):
    with np.errstate(over='ignore', divide='ignore'):
        return tau0 * np.exp((e_act / e_abs) ** merz_n)


def switching_time(e_total: float, domain: Domain, config: EnsembleConfig) -> float:
    """Merz waiting time tau0 * exp((e_act / |E|)^n) toward the field-favoured orientation.

    Infinite at zero field and when the domain already sits in the favoured orientation.
    """
    if e_total == 0:
        return math.inf
    target = 1.0 if e_total > 0 else 0.0
    if domain.s == target:
        return math.inf
    e_act = domain.e_act
    if e_total < 0 and domain.e_act_down is not None:
        e_act = domain.e_act_down
    return float(_merz(config.tau0, e_act, abs(e_total), config.merz_n))


def switching_times(e_total: float, ensemble: DomainEnsemble) -> np.ndarray:
    if e_total == 0:
        return np.full(len(ensemble), np.inf)
    e_act = ensemble.e_act if e_total > 0 else ensemble.e_act_down
    return _merz(ensemble.tau0, e_act, abs(e_total), ensemble.merz_n)


def splitting_time(e_dep: float, e_total: float, ensemble: DomainEnsemble) -> float:
    """Waiting time tau0 * exp((e_act_depol / |E_dep|)^n) for splitting toward P = 0.

    Splitting only proceeds while the net field points the same way as the depolarization field,
    that is against the polarization; a bias holding the state suppresses it.
    """
    if e_dep == 0 or e_dep * e_total <= 0:
        return math.inf
    return float(_merz(ensemble.tau0, ensemble.e_act_depol, abs(e_dep), ensemble.merz_n))


def _relax_fraction(ensemble: DomainEnsemble, e_total: float, dt: float, e_dep: float = 0.0) -> np.ndarray:
    if e_total == 0:
        return ensemble.s
    target = 1.0 if e_total > 0 else 0.0
    tau_split = splitting_time(e_dep, e_total, ensemble)
    if math.isinf(tau_split):
        decay = np.exp(-dt / switching_times(e_total, ensemble))
        return target + (ensemble.s - target) * decay
    # two channels at a frozen field: nucleation toward the field, splitting toward s = 1/2
    k_switch = 1.0 / switching_times(e_total, ensemble)
    k_split = 1.0 / tau_split
    rate = k_switch + k_split
    target = (k_switch * target + 0.5 * k_split) / rate
    return target + (ensemble.s - target) * np.exp(-rate * dt)


def step_ensemble(ensemble: DomainEnsemble, e_total: float, dt: float, e_dep: float = 0.0):
    """Advance every switched fraction over dt at a frozen field. Returns (ensemble, dP).

    ``e_dep`` is the depolarization part of ``e_total``; zero leaves only field-driven switching.
    """
    if not dt > 0:
        raise ValueError('dt must be positive')
    updated = replace(ensemble, s=_relax_fraction(ensemble, e_total, dt, e_dep))
    return updated, updated.polarization - ensemble.polarization


def lk_step(d: float, stack: StackConfig, e_ext: float, e_bias: float, rho: float, dt: float,
            p_s: Optional[float] = None, max_nfev: int = 20000) -> float:
    """Integrate rho dD/dt = -dF/dD over dt with adaptive RK45 sub-steps (atol = 1e-6 p_s)."""
    if not rho > 0:
        raise ValueError('rho must be positive')
    if not dt > 0:
        raise ValueError('dt must be positive')
    scale = p_s if p_s is not None else stack.p_s
    if not scale > 0:
        scale = 1.0

    def rhs(_, y):
        return energy.effective_field(y, stack, e_ext, e_bias) / rho

    sol = solve_ivp(rhs, (0.0, dt), [d], method='RK45', rtol=1e-6, atol=1e-6 * scale)
    if sol.status < 0:
        raise IntegratorError(f'gradient flow failed: {sol.message}')
    if sol.nfev > max_nfev:
        raise IntegratorError(f'gradient flow used {sol.nfev} evaluations, budget is {max_nfev}')
    return float(sol.y[0, -1])


@dataclass(frozen=True)
class SimState:
    traps: TrapState
    p: float
    t: float = 0.0
    ensemble: Optional[DomainEnsemble] = None


@dataclass(frozen=True)
class DeviceModel:
    """Everything needed to advance a device: stack, kinetics, traps and leakage."""
    stack: StackConfig
    ensemble: Optional[DomainEnsemble] = None
    traps: Optional[TrapParams] = None
    leakage: Optional['LeakageParams'] = None
    mode: str = NLS
    rho: float = 300.0
    bias_enabled: bool = True
    frozen: bool = False
    steps_per_segment: int = 1000
    dt_max: Optional[float] = None
    max_nfev: int = 20000

    def __post_init__(self):
        if self.mode not in (NLS, LK):
            raise ConfigError(f"unknown kinetics mode '{self.mode}'", key='mode')
        if self.mode == NLS and self.ensemble is None:
            raise ConfigError('nls mode needs a domain ensemble', key='mode')
        if self.steps_per_segment < 1:
            raise ConfigError('steps_per_segment must be at least 1', key='steps_per_segment')
        if self.dt_max is not None and not self.dt_max > 0:
            raise ConfigError('dt must be positive', key='dt')

    @property
    def p_s(self) -> float:
        if self.ensemble is not None:
            return self.ensemble.p_s
        return self.stack.p_s

    def with_options(self, **changes) -> 'DeviceModel':
        return replace(self, **changes)

    def initial_state(self, up: bool = False, trap_state: Optional[TrapState] = None) -> SimState:
        """Saturated P-down (or P-up) film with traps at rest equilibrium"""
        if trap_state is None:
            trap_state = rest_state(self.traps) if self.traps is not None else TrapState()
        if self.mode == LK:
            return SimState(traps=trap_state, p=self.p_s if up else -self.p_s)
        ensemble = self.ensemble.with_fraction(1.0 if up else 0.0)
        return SimState(traps=trap_state, p=ensemble.polarization, ensemble=ensemble)

    def bias(self, trap_state: TrapState) -> float:
        if self.traps is None or not self.bias_enabled:
            return 0.0
        return bias_field(trap_state, self.traps, self.stack)

    def fields(self, state: SimState, v: float) -> energy.FieldState:
        return energy.total_internal_field(
            state.p, self.stack, e_bias=self.bias(state.traps), e_applied=self.stack.applied_field(v),
        )

    def _advance_traps(self, trap_state, v, dt):
        if self.traps is None:
            return trap_state
        return advance_traps(trap_state, v, self.traps, dt)

    def step(self, state: SimState, v: float, dt: float) -> SimState:
        """Advance one step at constant voltage v"""
        trap_end = self._advance_traps(state.traps, v, dt)
        if self.frozen:
            return replace(state, traps=trap_end, t=state.t + dt)
        if self.mode == LK:
            e_app = self.stack.applied_field(v)
            d = lk_step(state.p, self.stack, e_app, self.bias(state.traps), self.rho, dt,
                        p_s=self.p_s, max_nfev=self.max_nfev)
            return replace(state, traps=trap_end, p=d, t=state.t + dt)

        # exponential midpoint: predict half a step, then redo the full step with the midpoint field
        start = self.fields(state, v)
        half = replace(state.ensemble, s=_relax_fraction(state.ensemble, start.e_total, 0.5 * dt, start.e_dep))
        mid = SimState(traps=self._advance_traps(state.traps, v, 0.5 * dt), p=half.polarization)
        fs = self.fields(mid, v)
        ensemble, _ = step_ensemble(state.ensemble, fs.e_total, dt, fs.e_dep)
        return SimState(traps=trap_end, p=ensemble.polarization, t=state.t + dt, ensemble=ensemble)


@dataclass(eq=False)
class TraceRecord:
    t: np.ndarray
    v: np.ndarray
    i: np.ndarray
    p: np.ndarray
    e_app: np.ndarray
    e_dep: np.ndarray
    e_bias: np.ndarray
    f_occ: np.ndarray
    final_state: Optional[SimState] = None

    def __len__(self):
        return self.t.size

    def as_matrix(self) -> np.ndarray:
        return np.column_stack([self.t, self.v, self.i, self.p, self.e_app, self.e_dep, self.e_bias, self.f_occ])

    def to_csv(self, path):
        np.savetxt(path, self.as_matrix(), delimiter=',', header=','.join(TRACE_COLUMNS), comments='', fmt='%.12e')

    def shifted(self, offset: float) -> 'TraceRecord':
        return replace(self, t=self.t + offset)

    def thinned(self, every: int) -> 'TraceRecord':
        """Every ``every``-th sample, always keeping the last one"""
        if every < 1:
            raise ValueError('record_every must be at least 1')
        if every == 1 or not len(self):
            return self
        keep = np.arange(0, len(self), every)
        if keep[-1] != len(self) - 1:
            keep = np.append(keep, len(self) - 1)
        return replace(self, **{name: getattr(self, name)[keep] for name in _TRACE_FIELDS})

    def concatenate(self, other: 'TraceRecord', drop_first: bool = False) -> 'TraceRecord':
        """Append ``other`` with its clock moved to start where this trace ends.

        The shared instant appears twice unless ``drop_first`` removes the first sample of ``other``.
        """
        other = other.shifted(self.t[-1] - other.t[0]) if len(self) else other
        start = 1 if drop_first and len(self) else 0
        columns = {
            name: np.concatenate([getattr(self, name), getattr(other, name)[start:]])
            for name in _TRACE_FIELDS
        }
        return TraceRecord(final_state=other.final_state, **columns)


def evolve(model: DeviceModel, state: SimState, waveform) -> SimState:
    """Advance through a waveform without recording"""
    t, v = waveform.time_grid(model.steps_per_segment, model.dt_max)
    _check_finite(v)
    for k in range(t.size - 1):
        state = model.step(state, 0.5 * (v[k] + v[k + 1]), t[k + 1] - t[k])
    return state


def _check_finite(v):
    if not np.all(np.isfinite(v)):
        raise WaveformError('waveform has non-finite samples')


def simulate(waveform, model: DeviceModel, state: Optional[SimState] = None, record_every: int = 1) -> TraceRecord:
    """Run the time loop over a waveform and return the sampled trace.

    The final state is attached to the record so protocol steps can be chained.
    """
    from .instrument import synthesize_current

    if not waveform.duration > 0:
        raise WaveformError('waveform duration must be positive')
    if record_every < 1:
        raise ValueError('record_every must be at least 1')
    if state is None:
        state = model.initial_state()

    t, v = waveform.time_grid(model.steps_per_segment, model.dt_max)
    _check_finite(v)
    t = t + state.t
    n = t.size
    p = np.empty(n)
    e_app = np.empty(n)
    e_dep = np.empty(n)
    e_bias = np.empty(n)
    f_occ = np.empty(n)

    def store(k, current):
        fs = model.fields(current, v[k])
        p[k] = current.p
        e_app[k] = fs.e_applied
        e_dep[k] = fs.e_dep
        e_bias[k] = fs.e_bias
        f_occ[k] = current.traps.f_occ

    store(0, state)
    for k in range(n - 1):
        state = model.step(state, 0.5 * (v[k] + v[k + 1]), t[k + 1] - t[k])
        store(k + 1, state)

    if np.any(np.abs(p) > model.p_s * (1 + 1e-9)):
        logger.warning('polarization left the saturation bound during simulation')

    stack = model.stack
    if n > 1:
        dp_dt = stack.polarity * np.gradient(p, t)
        de_dt = np.gradient(v / stack.thickness, t)
    else:
        dp_dt = de_dt = np.zeros(n)
    current = synthesize_current(dp_dt, de_dt, v, stack, model.leakage)

    logger.debug('simulated %d steps over %.3e s', n - 1, waveform.duration)
    record = TraceRecord(t=t, v=v, i=current, p=p, e_app=e_app, e_dep=e_dep, e_bias=e_bias, f_occ=f_occ,
                         final_state=state)
    return record.thinned(record_every)
