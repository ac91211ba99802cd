"""
Free-energy landscape of the ferroelectric layer.

Landau-Devonshire energy density with an interface (depolarization) penalty,
the internal-field composition E = E_applied + E_bias + E_dep, and the closed-form
stationary points of the landscape.

Sign conventions:
    The Landau coordinate D is positive for the unstable P-up state, which is written
    by negative voltage. ``StackConfig.polarity`` (chi = -1) maps the applied voltage
    into that coordinate, so the internal bias field that stabilizes P-down is negative.
    The interface penalty is stored as a positive coefficient gamma and enters the
    energy as +gamma * D**2, which makes both wells shallower.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Tuple

import numpy as np

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

EPS0 = 8.8541878128e-12  # F/m
Q_E = 1.602176634e-19  # C

MINIMUM = 'minimum'
MAXIMUM = 'maximum'
INFLECTION = 'inflection'


@dataclass(frozen=True)
class StackConfig:
    """Geometry, permittivities and Landau coefficients of the capacitor stack (SI units)"""
    alpha: float = field(default=-2.242e8, metadata={'unit': 'landau_alpha'})
    beta: float = field(default=2.170e9, metadata={'unit': 'landau_beta'})
    theta: float = field(default=0.0, metadata={'unit': 'angle'})
    d_fe: float = field(default=6.6e-9, metadata={'unit': 'length'})
    eps_fe: float = field(default=30.0, metadata={'unit': 'number'})
    d_int: float = field(default=0.2e-9, metadata={'unit': 'length'})
    # Doped NbOx interface screens well; the landscape presets use 75.
    eps_int: float = field(default=3000.0, metadata={'unit': 'number'})
    area: float = field(default=625e-12, metadata={'unit': 'area'})
    polarity: int = field(default=-1, metadata={'unit': 'integer'})

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError('beta must be positive for a bounded energy', key='beta')
        if not self.d_fe > 0:
            raise ConfigError('d_fe must be positive', key='d_fe')
        if not self.area > 0:
            raise ConfigError('area must be positive', key='area')
        if self.d_int < 0:
            raise ConfigError('d_int must not be negative', key='d_int')
        if self.eps_fe <= 0:
            raise ConfigError('eps_fe must be positive', key='eps_fe')
        if self.eps_int < 0:
            raise ConfigError('eps_int must not be negative', key='eps_int')
        if self.polarity not in (1, -1):
            raise ConfigError('polarity must be +1 or -1', key='polarity')

    @property
    def p_s(self) -> float:
        """Saturation polarization sqrt(-alpha/beta); NaN for a paraelectric alpha >= 0"""
        if self.alpha >= 0:
            return float('nan')
        return math.sqrt(-self.alpha / self.beta)

    @property
    def capacitance_ratio(self) -> float:
        """C_s / C_FE, computed per unit area so it does not depend on the device area"""
        if self.d_int == 0:
            return math.inf
        return (self.eps_int / self.d_int) / (self.eps_fe / self.d_fe)

    @property
    def c_fe(self) -> float:
        return EPS0 * self.eps_fe * self.area / self.d_fe

    @property
    def c_s(self) -> float:
        if self.d_int == 0:
            return math.inf
        return EPS0 * self.eps_int * self.area / self.d_int

    @property
    def divider(self) -> float:
        """Fraction eta = C_s / (C_s + C_FE) of the applied voltage that drops across the ferroelectric"""
        ratio = self.capacitance_ratio
        if math.isinf(ratio):
            return 1.0
        return ratio / (1.0 + ratio)

    @property
    def eps_eff(self) -> float:
        """Series-combined background permittivity of the whole stack"""
        if self.d_int == 0:
            return self.eps_fe
        if self.eps_int == 0:
            return 0.0
        return (self.d_fe + self.d_int) / (self.d_fe / self.eps_fe + self.d_int / self.eps_int)

    @property
    def thickness(self) -> float:
        return self.d_fe + self.d_int

    def applied_field(self, v):
        """Field from an external voltage in the Landau coordinate: chi * eta * V / d_fe"""
        return self.polarity * self.divider * v / self.d_fe


class FieldState(NamedTuple):
    e_applied: float
    e_dep: float
    e_bias: float
    e_total: float


class StationaryPoint(NamedTuple):
    d: float
    kind: str


class Barriers(NamedTuple):
    """Barrier heights (J/m^3) seen from the D>0 (P-up) and D<0 (P-down) wells; NaN when a well is missing"""
    from_up: float
    from_down: float


# Stacks for the three landscape illustrations: no interface layer, a dielectric interface layer,
# and the interface layer with a fixed-charge bias. "intrinsic" carries no interface layer.
LANDSCAPE_PRESETS = {
    'intrinsic': (StackConfig(d_int=0.0, eps_int=75.0), 0.0),
    'interface': (StackConfig(d_int=0.2e-9, eps_int=75.0), 0.0),
    'fixed_charge_interface': (StackConfig(d_int=0.2e-9, eps_int=75.0), -1.0e7),
}


def depolarization_factor(stack: StackConfig) -> float:
    """Interface penalty gamma = d_int / (d_fe * eps0 * eps_int) in V*m/C, stored as a positive number"""
    if stack.d_int == 0:
        return 0.0
    if stack.eps_int <= 0:
        raise ConfigError('eps_int must be positive when an interface layer is present', key='eps_int')
    return stack.d_int / (stack.d_fe * EPS0 * stack.eps_int)


def _drive(stack: StackConfig, e_ext, e_bias):
    return (e_ext + e_bias) * math.cos(stack.theta)


def free_energy_density(d, stack: StackConfig, e_ext=0.0, e_bias=0.0):
    """F(D) = alpha/2 D^2 + beta/4 D^4 + gamma D^2 - D (E_ext + E_bias) cos(theta), in J/m^3"""
    gamma = depolarization_factor(stack)
    return (0.5 * stack.alpha * d ** 2 + 0.25 * stack.beta * d ** 4 + gamma * d ** 2
            - d * _drive(stack, e_ext, e_bias))


def effective_field(d, stack: StackConfig, e_ext=0.0, e_bias=0.0):
    """-dF/dD, the driving field of the gradient flow"""
    gamma = depolarization_factor(stack)
    return -(stack.alpha * d + stack.beta * d ** 3 + 2.0 * gamma * d - _drive(stack, e_ext, e_bias))


def curvature(d, stack: StackConfig):
    """d2F/dD2"""
    return stack.alpha + 3.0 * stack.beta * d ** 2 + 2.0 * depolarization_factor(stack)


def depolarization_field(p, stack: StackConfig):
    """E_dep = -P / (eps0 eps_fe) / (1 + C_s/C_FE); zero for perfect screening (d_int = 0)"""
    ratio = stack.capacitance_ratio
    if math.isinf(ratio):
        return 0.0 * p
    return -p / (EPS0 * stack.eps_fe) / (1.0 + ratio)


def total_internal_field(p, stack: StackConfig, e_bias=0.0, e_applied=0.0) -> FieldState:
    e_dep = depolarization_field(p, stack)
    return FieldState(
        e_applied=e_applied,
        e_dep=e_dep,
        e_bias=e_bias,
        e_total=e_applied + e_bias + e_dep,
    )


def _classify(d: float, stack: StackConfig) -> str:
    c = curvature(d, stack)
    if c > 0:
        return MINIMUM
    if c < 0:
        return MAXIMUM
    return INFLECTION


def stationary_points(stack: StackConfig, e_ext=0.0, e_bias=0.0) -> List[StationaryPoint]:
    """Real roots of dF/dD = 0, sorted by D and classified by the sign of d2F/dD2.

    dF/dD = beta D^3 + (alpha + 2 gamma) D - E cos(theta) is solved as the depressed cubic
    D^3 + p D + q = 0 with the trigonometric form (three real roots) or Cardano's formula
    (one real root). A vanishing discriminant gives a double root, reported as an inflection.
    """
    gamma = depolarization_factor(stack)
    p = (stack.alpha + 2.0 * gamma) / stack.beta
    q = -_drive(stack, e_ext, e_bias) / stack.beta

    scale = 4.0 * abs(p) ** 3 + 27.0 * q ** 2
    disc = -(4.0 * p ** 3 + 27.0 * q ** 2)

    if scale == 0.0:
        return [StationaryPoint(0.0, INFLECTION)]

    if abs(disc) <= 1e-12 * scale:
        # double root at -3q/(2p), simple root at 3q/p
        double = -1.5 * q / p
        simple = 3.0 * q / p
        points = [StationaryPoint(double, INFLECTION), StationaryPoint(simple, _classify(simple, stack))]
        return sorted(points, key=lambda sp: sp.d)

    if disc > 0:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = (3.0 * q / (2.0 * p)) * math.sqrt(-3.0 / p)
        arg = min(1.0, max(-1.0, arg))
        phi = math.acos(arg) / 3.0
        roots = [m * math.cos(phi - 2.0 * math.pi * k / 3.0) for k in range(3)]
    else:
        s = math.sqrt(q ** 2 / 4.0 + p ** 3 / 27.0)
        roots = [float(np.cbrt(-q / 2.0 + s) + np.cbrt(-q / 2.0 - s))]

    return [StationaryPoint(r, _classify(r, stack)) for r in sorted(roots)]


def barrier_heights(stack: StackConfig, e_ext=0.0, e_bias=0.0) -> Barriers:
    points = stationary_points(stack, e_ext, e_bias)
    minima = [sp.d for sp in points if sp.kind == MINIMUM]
    maxima = [sp.d for sp in points if sp.kind == MAXIMUM]
    if len(minima) != 2 or len(maxima) != 1:
        return Barriers(float('nan'), float('nan'))
    top = free_energy_density(maxima[0], stack, e_ext, e_bias)
    return Barriers(
        from_up=top - free_energy_density(minima[1], stack, e_ext, e_bias),
        from_down=top - free_energy_density(minima[0], stack, e_ext, e_bias),
    )


def landscape_curve(stack: StackConfig, e_ext=0.0, e_bias=0.0, d_grid=None) -> Tuple[np.ndarray, np.ndarray]:
    """Sample F(D) on a monotone grid. Returns (D, F) arrays."""
    if d_grid is None:
        p_s = stack.p_s if not math.isnan(stack.p_s) else 0.5
        d_grid = np.linspace(-1.5 * p_s, 1.5 * p_s, 601)
    d = np.asarray(d_grid, dtype=float)
    if d.size == 0:
        return d, np.empty(0)
    steps = np.diff(d)
    if d.size > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise ValueError('landscape grid must be strictly monotone')
    return d, free_energy_density(d, stack, e_ext, e_bias)


def landscape_minima(d: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Interior local minima of a sampled curve"""
    if d.size < 3:
        return np.empty(0)
    idx = np.where((f[1:-1] < f[:-2]) & (f[1:-1] < f[2:]))[0] + 1
    return d[idx]
