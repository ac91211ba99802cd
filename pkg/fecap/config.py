"""
Run configuration: an INI-like text format with SI-suffixed numbers.

    [stack]
    d_fe = 6.6nm            # comments start with '#'
    [protocol.retention]
    delays = 1us, 10us, 100us, 1ms

Bare numbers are SI. ``dump_config`` writes the canonical form that ``parse_config`` reads back
to an equal RunConfig.
"""

import logging
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import NamedTuple, Optional, Tuple

from .energy import StackConfig
from .exceptions import ConfigError
from .instrument import (
    EnduranceConfig, KineticsConfig, LeakageParams, PundConfig, RetentionConfig, SweepConfig,
)
from .kinetics import DeviceModel, EnsembleConfig, sample_ensemble
from .traps import DEFAULT_E_BIAS, TrapParams

logger = logging.getLogger(__name__)

UNITS = {
    'length': {'m': 1.0, 'mm': 1e-3, 'um': 1e-6, 'nm': 1e-9},
    'area': {'m2': 1.0, 'cm2': 1e-4, 'mm2': 1e-6, 'um2': 1e-12},
    'time': {'s': 1.0, 'ms': 1e-3, 'us': 1e-6, 'ns': 1e-9},
    'voltage': {'V': 1.0, 'mV': 1e-3},
    'field': {'V/m': 1.0, 'kV/cm': 1e5, 'MV/cm': 1e8},
    'frequency': {'Hz': 1.0, 'kHz': 1e3, 'MHz': 1e6},
    'polarization': {'C/m2': 1.0, 'uC/cm2': 1e-2},
    'sheet_density': {'/m2': 1.0, '/cm2': 1e4},
    'rate': {'/s': 1.0},
    'current_density': {'A/m2': 1.0, 'A/cm2': 1e4},
    'angle': {'rad': 1.0, 'deg': math.pi / 180.0},
    'landau_alpha': {},
    'landau_beta': {},
    'viscosity': {},
    'number': {},
}

_NUMBER = re.compile(r'^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]?inf|nan)\s*(.*)$')


@dataclass(frozen=True)
class SimulationSettings:
    seed: int = field(default=0, metadata={'unit': 'integer'})
    mode: str = field(default='nls', metadata={'unit': 'word'})
    rho: float = field(default=300.0, metadata={'unit': 'viscosity'})
    steps_per_segment: int = field(default=1000, metadata={'unit': 'integer'})
    dt: Optional[float] = field(default=None, metadata={'unit': 'time'})
    record_every: int = field(default=1, metadata={'unit': 'integer'})

    def __post_init__(self):
        if self.steps_per_segment < 1:
            raise ConfigError('steps_per_segment must be at least 1', key='steps_per_segment')
        if self.record_every < 1:
            raise ConfigError('record_every must be at least 1', key='record_every')
        if self.dt is not None and not self.dt > 0:
            raise ConfigError('dt must be positive', key='dt')
        if not self.rho > 0:
            raise ConfigError('rho must be positive', key='rho')


@dataclass(frozen=True)
class OutputSettings:
    directory: Optional[str] = field(default=None, metadata={'unit': 'path'})
    formats: Tuple[str, ...] = field(default=('csv', 'json'), metadata={'unit': 'word_list'})

    def __post_init__(self):
        object.__setattr__(self, 'formats', tuple(self.formats))
        unknown = set(self.formats) - {'csv', 'json'}
        if unknown:
            raise ConfigError(f"unknown output format '{sorted(unknown)[0]}'", key='formats')


@dataclass(frozen=True)
class RunConfig:
    stack: StackConfig = field(default_factory=StackConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    traps: TrapParams = field(default_factory=TrapParams)
    traps_enabled: bool = True
    trap_bias: float = DEFAULT_E_BIAS
    leakage: LeakageParams = field(default_factory=LeakageParams)
    leakage_enabled: bool = True
    pund: PundConfig = field(default_factory=PundConfig)
    retention: RetentionConfig = field(default_factory=RetentionConfig)
    endurance: EnduranceConfig = field(default_factory=EnduranceConfig)
    kinetics: KineticsConfig = field(default_factory=KineticsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def with_overrides(self, seed=None, dt=None, out=None) -> 'RunConfig':
        """Apply command-line flags, which take precedence over the file"""
        sim = self.simulation
        if seed is not None:
            sim = replace(sim, seed=int(seed))
        if dt is not None:
            sim = replace(sim, dt=float(dt))
        output = self.output if out is None else replace(self.output, directory=str(out))
        return replace(self, simulation=sim, output=output)

    def build_model(self, **overrides) -> DeviceModel:
        """DeviceModel with the ensemble drawn from the simulation seed and calibrated traps"""
        sim = self.simulation
        ensemble = sample_ensemble(replace(self.ensemble, seed=sim.seed), self.stack)
        trap_params = self.traps.calibrated(self.stack, self.trap_bias) if self.traps_enabled else None
        options = dict(
            stack=self.stack,
            ensemble=ensemble,
            traps=trap_params,
            leakage=self.leakage if self.leakage_enabled else None,
            mode=sim.mode,
            rho=sim.rho,
            steps_per_segment=sim.steps_per_segment,
            dt_max=sim.dt,
        )
        options.update(overrides)
        return DeviceModel(**options)


class Section(NamedTuple):
    name: str
    attr: str
    cls: type
    exclude: Tuple[str, ...] = ()
    extras: Tuple[Tuple[str, str, str], ...] = ()  # (key, RunConfig attribute, unit)


SECTIONS = (
    Section('stack', 'stack', StackConfig),
    Section('ensemble', 'ensemble', EnsembleConfig, exclude=('seed',)),
    Section('traps', 'traps', TrapParams, exclude=('kappa',),
            extras=(('enabled', 'traps_enabled', 'bool'), ('e_bias', 'trap_bias', 'field'))),
    Section('leakage', 'leakage', LeakageParams, extras=(('enabled', 'leakage_enabled', 'bool'),)),
    Section('protocol.pund', 'pund', PundConfig),
    Section('protocol.retention', 'retention', RetentionConfig),
    Section('protocol.endurance', 'endurance', EnduranceConfig),
    Section('protocol.kinetics', 'kinetics', KineticsConfig),
    Section('protocol.sweep', 'sweep', SweepConfig),
    Section('simulation', 'simulation', SimulationSettings),
    Section('output', 'output', OutputSettings),
)
_BY_NAME = {s.name: s for s in SECTIONS}


def _keys(section: Section):
    """key -> unit for every key a section accepts"""
    keys = {f.name: f.metadata.get('unit', 'number') for f in fields(section.cls) if f.name not in section.exclude}
    for key, _, unit in section.extras:
        keys[key] = unit
    return keys


def parse_quantity(text: str, unit: str, key: Optional[str] = None) -> float:
    """Convert '6.6nm' to 6.6e-9 given the dimension of the key"""
    match = _NUMBER.match(text.strip())
    if not match:
        raise ConfigError(f"'{text}' is not a number", key=key)
    number, suffix = match.groups()
    value = float(number)
    if not suffix:
        return value
    table = UNITS.get(unit, {})
    if suffix not in table:
        allowed = ', '.join(table) or 'none (SI number expected)'
        raise ConfigError(f"unknown unit '{suffix}' (allowed: {allowed})", key=key)
    return value * table[suffix]


def _convert(raw: str, unit: str, key: str):
    raw = raw.strip()
    if raw.lower() == 'none':
        return None
    if unit == 'bool':
        if raw.lower() in ('true', 'yes', 'on', '1'):
            return True
        if raw.lower() in ('false', 'no', 'off', '0'):
            return False
        raise ConfigError(f"'{raw}' is not a boolean", key=key)
    if unit in ('word', 'path'):
        return raw
    if unit.endswith('_list'):
        base = unit[:-len('_list')]
        items = [item.strip() for item in raw.split(',') if item.strip()]
        return tuple(_convert(item, base, key) for item in items)
    if unit == 'integer':
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"'{raw}' is not an integer", key=key) from None
    return parse_quantity(raw, unit, key)


def parse_config(text: str) -> RunConfig:
    """Parse configuration text into a validated RunConfig; missing keys keep their defaults"""
    values = {s.name: {} for s in SECTIONS}
    locations = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split('#', 1)[0].rstrip()
        stripped = content.strip()
        if not stripped:
            continue
        column = len(content) - len(content.lstrip()) + 1
        if stripped.startswith('['):
            if not stripped.endswith(']'):
                raise ConfigError('unterminated section header', line=lineno, column=column)
            name = stripped[1:-1].strip()
            if name not in _BY_NAME:
                raise ConfigError('unknown section', key=name, line=lineno, column=column)
            current = _BY_NAME[name]
            continue
        if '=' not in content:
            raise ConfigError("expected 'key = value'", line=lineno, column=column)
        if current is None:
            raise ConfigError('key outside of any section', line=lineno, column=column)
        key_part, raw = content.split('=', 1)
        key = key_part.strip()
        accepted = _keys(current)
        if key not in accepted:
            raise ConfigError(f"unknown key in [{current.name}]", key=key, line=lineno, column=column)
        if key in values[current.name]:
            raise ConfigError(f"duplicate key in [{current.name}]", key=key, line=lineno, column=column)
        value_column = len(key_part) + 2 + (len(raw) - len(raw.lstrip()))
        try:
            values[current.name][key] = _convert(raw, accepted[key], key)
        except ConfigError as exc:
            raise ConfigError(exc.reason, key=key, line=lineno, column=value_column) from None
        locations[(current.name, key)] = (lineno, value_column)

    kwargs = {}
    for section in SECTIONS:
        section_values = dict(values[section.name])
        for key, attr, _ in section.extras:
            if key in section_values:
                kwargs[attr] = section_values.pop(key)
        try:
            kwargs[section.attr] = section.cls(**section_values)
        except ConfigError as exc:
            line, column = locations.get((section.name, exc.key), (None, None))
            raise ConfigError(exc.reason, key=exc.key, line=line, column=column) from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), key=section.name) from None
    config = RunConfig(**kwargs)
    if config.simulation.mode not in ('nls', 'lk'):
        line, column = locations.get(('simulation', 'mode'), (None, None))
        raise ConfigError(f"unknown kinetics mode '{config.simulation.mode}'", key='mode', line=line, column=column)
    logger.debug('parsed configuration with %d explicit keys', len(locations))
    return config


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigError(f'cannot read configuration file {path}: {exc.strerror}') from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f'configuration file {path} is not valid UTF-8 (byte {exc.start})') from None
    return parse_config(text)


def _format(value) -> str:
    if value is None:
        return 'none'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ', '.join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config: RunConfig) -> str:
    """Canonical text form: every key of every section, SI values, fixed order"""
    lines = []
    for section in SECTIONS:
        obj = getattr(config, section.attr)
        lines.append(f'[{section.name}]')
        for f in fields(section.cls):
            if f.name in section.exclude:
                continue
            lines.append(f'{f.name} = {_format(getattr(obj, f.name))}')
        for key, attr, _ in section.extras:
            lines.append(f'{key} = {_format(getattr(config, attr))}')
        lines.append('')
    return '\n'.join(lines)
