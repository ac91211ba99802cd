"""
Oxygen-vacancy trap occupancy at the NbOx/HZO interface and the internal bias field it sets.

Electrons are captured by the vacancy traps under positive voltage and emitted under negative
voltage. Emptied (positively charged) vacancies produce a bias field that stabilizes the P-down
state. Two slow processes modulate the active vacancy density:

* deactivation: sustained large negative voltage removes a fraction of the vacancies from the
  bias budget; positive voltage (a reset pulse) restores them quickly, rest restores them slowly.
* generation: cumulative positive-voltage stress during cycling adds active vacancies.

Both slow processes are phenomenological closures; their rates and caps are calibration knobs.

Every update is the exact solution of a linear first-order equation over the step, so all
fractions stay inside their bounds for any nonnegative rates.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from .energy import EPS0, Q_E, StackConfig
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_E_BIAS = 1.0e7  # V/m, 100 kV/cm
MAX_EXPONENT = 600.0  # cap on activated exponents


@dataclass(frozen=True)
class TrapParams:
    n_v: float = field(default=1.0e18, metadata={'unit': 'sheet_density'})
    c0: float = field(default=1.0, metadata={'unit': 'rate'})
    e0: float = field(default=100.0, metadata={'unit': 'rate'})
    v_c: float = field(default=0.2, metadata={'unit': 'voltage'})
    v_e: float = field(default=0.2, metadata={'unit': 'voltage'})
    kappa: float = field(default=0.0, metadata={'unit': 'number'})
    # deactivation under large negative voltage, recovery at rest and under positive voltage
    g_max: float = field(default=0.15, metadata={'unit': 'number'})
    d0: float = field(default=0.25, metadata={'unit': 'rate'})
    v_d: float = field(default=0.5, metadata={'unit': 'voltage'})
    r0: float = field(default=0.5, metadata={'unit': 'rate'})
    v_r: float = field(default=0.1, metadata={'unit': 'voltage'})
    # generation under cumulative positive stress
    h_max: float = field(default=0.5, metadata={'unit': 'number'})
    gen0: float = field(default=0.034, metadata={'unit': 'rate'})
    v_gen: float = field(default=0.5, metadata={'unit': 'voltage'})

    def __post_init__(self):
        for name in ('n_v', 'c0', 'e0', 'kappa', 'd0', 'r0', 'gen0', 'h_max'):
            if getattr(self, name) < 0:
                raise ConfigError(f'{name} must not be negative', key=name)
        for name in ('v_c', 'v_e', 'v_d', 'v_r', 'v_gen'):
            if not getattr(self, name) > 0:
                raise ConfigError(f'{name} must be positive', key=name)
        if not 0 <= self.g_max < 1:
            raise ConfigError('g_max must lie in [0, 1)', key='g_max')

    def calibrated(self, stack: StackConfig, e_bias: float = DEFAULT_E_BIAS) -> 'TrapParams':
        """Copy with kappa chosen so that the fully de-trapped bias magnitude equals ``e_bias``"""
        kappa = 0.0 if self.n_v == 0 else abs(e_bias) * EPS0 * stack.eps_fe / (Q_E * self.n_v)
        return replace(self, kappa=kappa)


@dataclass(frozen=True)
class TrapState:
    f_occ: float = 0.0
    g_deact: float = 0.0
    h_gen: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.f_occ <= 1.0:
            raise ValueError(f'f_occ must lie in [0, 1], got {self.f_occ}')


class TrapRates(NamedTuple):
    capture: float
    emission: float


def _activated(v: float, scale: float) -> float:
    return min(max(v, 0.0) / scale, MAX_EXPONENT)


def trap_rates(v_applied: float, params: TrapParams) -> TrapRates:
    return TrapRates(
        capture=params.c0 * math.exp(_activated(v_applied, params.v_c)),
        emission=params.e0 * math.exp(_activated(-v_applied, params.v_e)),
    )


def steady_occupancy(rates: TrapRates) -> float:
    total = rates.capture + rates.emission
    if total == 0:
        return float('nan')
    return rates.capture / total


def _relax(x: float, target: float, rate: float, dt: float) -> float:
    return target + (x - target) * math.exp(-rate * dt)


def step_traps(state: TrapState, rates: TrapRates, dt: float) -> TrapState:
    """Exact update of df/dt = c (1 - f) - e f over dt"""
    if not dt > 0:
        raise ValueError('dt must be positive')
    total = rates.capture + rates.emission
    if total == 0:
        return state
    f = _relax(state.f_occ, rates.capture / total, total, dt)
    return replace(state, f_occ=min(1.0, max(0.0, f)))


def deactivation_rates(v_applied: float, params: TrapParams):
    deact = params.d0 * math.expm1(_activated(-v_applied, params.v_d))
    recover = params.r0 * math.exp(_activated(v_applied, params.v_r))
    generate = params.gen0 * math.expm1(_activated(v_applied, params.v_gen))
    return deact, recover, generate


def step_vacancies(state: TrapState, v_applied: float, params: TrapParams, dt: float) -> TrapState:
    """Advance the deactivated and generated vacancy fractions at constant voltage"""
    deact, recover, generate = deactivation_rates(v_applied, params)
    g = state.g_deact
    if deact + recover > 0:
        g = _relax(g, deact * params.g_max / (deact + recover), deact + recover, dt)
    h = state.h_gen
    if generate > 0:
        h = _relax(h, params.h_max, generate, dt)
    return replace(state, g_deact=g, h_gen=h)


def advance(state: TrapState, v_applied: float, params: TrapParams, dt: float) -> TrapState:
    state = step_traps(state, trap_rates(v_applied, params), dt)
    return step_vacancies(state, v_applied, params, dt)


def rest_state(params: TrapParams, v_applied: float = 0.0) -> TrapState:
    """Occupancy at equilibrium for a constant voltage, with pristine vacancy budget"""
    f = steady_occupancy(trap_rates(v_applied, params))
    return TrapState(f_occ=0.0 if math.isnan(f) else f)


def bias_field(state: TrapState, params: TrapParams, stack: StackConfig) -> float:
    """E_bias = -kappa q n_v (1 - g + h) (1 - f_occ) / (eps0 eps_fe), negative in the Landau coordinate"""
    active = params.n_v * (1.0 - state.g_deact + state.h_gen)
    return -params.kappa * Q_E * active * (1.0 - state.f_occ) / (EPS0 * stack.eps_fe)
