"""
Experiment services for the simulator.
Runs one subcommand against a RunConfig, writes CSV/JSON outputs plus a manifest into one
directory per run, and keeps a SimulationRun record when the database is available.
"""

import hashlib
import json
import logging
import math
import platform
import shutil
from dataclasses import replace
from pathlib import Path
from typing import List, NamedTuple, Optional

import django
import numpy as np
import scipy
from django.conf import settings
from django.db import DatabaseError
from django.utils import timezone

from . import __version__, analysis, energy, instrument
from .config import RunConfig, dump_config
from .exceptions import ConfigError, NumericalError, WaveformError
from .kinetics import TRACE_COLUMNS
from .models import OutputFile, RetentionFitRecord, SimulationRun

logger = logging.getLogger(__name__)

SUBCOMMANDS = ('landscape', 'pund', 'kinetics', 'retention', 'endurance', 'sweep', 'fit')

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

POLARIZATION_UNITS = {'C/m2': 1.0, 'uC/cm2': 1e-2}
POLARIZATION_COLUMNS = {'P_C_per_m2': 'C/m2', 'P_uC_per_cm2': 'uC/cm2'}


class RunOutcome(NamedTuple):
    exit_code: int
    directory: Optional[Path]
    files: List[str]
    summary: List[dict]
    error: str = ''


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(dump_config(config).encode('utf-8')).hexdigest()


def package_versions() -> dict:
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'django': django.get_version(),
        'fecap': __version__,
    }


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(65536), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(value):
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def _half_width(widths, delta_p) -> float:
    """Pulse width at which the switched fraction first reaches 0.5, interpolated in log(width)"""
    above = np.nonzero(delta_p >= 0.5)[0]
    if above.size == 0:
        return math.nan
    k = above[0]
    if k == 0:
        return float(widths[0])
    lo, hi = delta_p[k - 1], delta_p[k]
    frac = (0.5 - lo) / (hi - lo)
    return float(np.exp(np.log(widths[k - 1]) + frac * (np.log(widths[k]) - np.log(widths[k - 1]))))


def read_polarization_csv(path, units: Optional[str] = None):
    """Load (t, P) from a CSV with a ``t_s`` column and a P column; P is returned in C/m2"""
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as fh:
            header = [name.strip() for name in fh.readline().split(',')]
        data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f'cannot read measurement file {path}: {exc}') from None
    if 't_s' not in header:
        raise ConfigError(f'measurement file {path} has no t_s column', key='t_s')
    p_columns = [name for name in header if name in POLARIZATION_COLUMNS or name == 'P']
    if not p_columns:
        raise ConfigError(f'measurement file {path} has no polarization column', key='P_C_per_m2')
    column = p_columns[0]
    if units is None:
        units = POLARIZATION_COLUMNS.get(column, 'C/m2')
    if units not in POLARIZATION_UNITS:
        raise ConfigError(f"unknown polarization unit '{units}'", key='units')
    t = data[:, header.index('t_s')]
    p = data[:, header.index(column)] * POLARIZATION_UNITS[units]
    return t, p


class ExperimentService:
    """Runs subcommands for one configuration and owns the resulting run directory"""

    def __init__(self, config: RunConfig, output_root=None, force: bool = False, jobs: Optional[int] = None):
        self.config = config
        root = output_root or config.output.directory or getattr(settings, 'FECAP_OUTPUT_ROOT', 'runs')
        self.output_root = Path(root)
        self.force = force
        self.jobs = jobs or getattr(settings, 'FECAP_DEFAULT_JOBS', 1)
        self.config_hash = config_hash(config)
        self._files = []
        self._summary = []
        self._fits = []

    def run_directory(self, name: str, options: dict, out=None) -> Path:
        if out is not None:
            return Path(out)
        key = json.dumps({'subcommand': name, 'options': options}, sort_keys=True, default=str)
        digest = hashlib.sha256((dump_config(self.config) + key).encode('utf-8')).hexdigest()
        return self.output_root / f'{name}-{digest[:12]}-seed{self.config.simulation.seed}'

    def _prepare_directory(self, directory: Path):
        if directory.exists():
            if not self.force:
                raise ConfigError(f'output directory {directory} already exists; use --force to overwrite')
            shutil.rmtree(directory)
        directory.mkdir(parents=True)

    def _start_record(self, name: str, directory: Path):
        try:
            return SimulationRun.objects.create(
                subcommand=name,
                config_hash=self.config_hash,
                seed=self.config.simulation.seed,
                output_dir=str(directory),
                versions=package_versions(),
            )
        except DatabaseError as e:
            logger.warning(f"Run not recorded in the database: {e}")
            return None

    def _finish_record(self, record, exit_code: int, error: str = ''):
        if record is None:
            return
        try:
            record.status = 'succeeded' if exit_code == EXIT_OK else 'failed'
            record.exit_code = exit_code
            record.error_message = error
            record.finished_at = timezone.now()
            record.save()
            if exit_code != EXIT_OK:
                return
            OutputFile.objects.bulk_create([
                OutputFile(run=record, path=entry['path'], kind=entry['kind'], sha256=entry['sha256'])
                for entry in self._files
            ])
            RetentionFitRecord.objects.bulk_create([
                RetentionFitRecord(
                    run=record, width=width, amplitude=amplitude, p0=fit.p0, p_inf=fit.p_inf,
                    tau=fit.tau if fit.identifiable and math.isfinite(fit.tau) else None, rmse=fit.rmse,
                    converged=fit.converged, identifiable=fit.identifiable,
                )
                for width, amplitude, fit in self._fits
            ])
        except DatabaseError as e:
            logger.warning(f"Run {record.id} could not be finalized in the database: {e}")

    def _register(self, directory: Path, relative: str, kind: str):
        self._files.append({'path': relative, 'kind': kind, 'sha256': _sha256(directory / relative)})

    def _write_csv(self, directory: Path, relative: str, columns, matrix):
        if 'csv' not in self.config.output.formats:
            return
        np.savetxt(directory / relative, np.asarray(matrix, dtype=float).reshape(-1, len(columns)),
                   delimiter=',', header=','.join(columns), comments='', fmt='%.12e')
        self._register(directory, relative, 'csv')

    def _write_trace(self, directory: Path, relative: str, record):
        record = record.thinned(self.config.simulation.record_every)
        self._write_csv(directory, relative, TRACE_COLUMNS, record.as_matrix())

    def _write_json(self, directory: Path, relative: str, payload: dict):
        if 'json' not in self.config.output.formats:
            return
        payload = {k: _jsonable(v) for k, v in payload.items()}
        (directory / relative).write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')
        self._register(directory, relative, 'json')

    def _emit(self, protocol: str, **values):
        row = {'protocol': protocol}
        row.update({k: _jsonable(v) for k, v in values.items()})
        self._summary.append(row)

    def _write_bookkeeping(self, directory: Path, name: str):
        (directory / 'config.ini').write_text(dump_config(self.config), encoding='utf-8')
        self._register(directory, 'config.ini', 'ini')
        lines = ''.join(json.dumps(row, sort_keys=True) + '\n' for row in self._summary)
        (directory / 'summary.jsonl').write_text(lines, encoding='utf-8')
        self._register(directory, 'summary.jsonl', 'jsonl')
        manifest = {
            'subcommand': name,
            'config_hash': self.config_hash,
            'seed': self.config.simulation.seed,
            'versions': package_versions(),
            'files': sorted(self._files, key=lambda entry: entry['path']),
        }
        (directory / 'manifest.json').write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n', encoding='utf-8')

    def run(self, name: str, out=None, **options) -> RunOutcome:
        if name not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand '{name}'")
        handler = getattr(self, f'_run_{name}')
        self._files, self._summary, self._fits = [], [], []

        directory = self.run_directory(name, options, out)
        try:
            self._prepare_directory(directory)
        except ConfigError as exc:
            return RunOutcome(EXIT_CONFIG, None, [], [], str(exc))

        record = self._start_record(name, directory)
        logger.info(f"Starting {name} run in {directory} (config {self.config_hash[:12]}, seed {self.config.simulation.seed})")
        try:
            handler(directory, **options)
            self._write_bookkeeping(directory, name)
        except ConfigError as exc:
            return self._fail(record, directory, EXIT_CONFIG, exc)
        except (NumericalError, WaveformError) as exc:
            return self._fail(record, directory, EXIT_NUMERICAL, exc)
        except Exception:
            shutil.rmtree(directory, ignore_errors=True)
            self._finish_record(record, EXIT_NUMERICAL, 'unexpected error')
            raise

        self._finish_record(record, EXIT_OK)
        files = [entry['path'] for entry in self._files] + ['manifest.json']
        logger.info(f"Finished {name} run: {len(files)} files written")
        return RunOutcome(EXIT_OK, directory, files, list(self._summary))

    def _fail(self, record, directory: Path, code: int, exc: Exception) -> RunOutcome:
        logger.error(f"Run failed with exit code {code}: {exc}")
        shutil.rmtree(directory, ignore_errors=True)
        self._finish_record(record, code, str(exc))
        return RunOutcome(code, None, [], [], str(exc))

    def _run_landscape(self, directory: Path, source: str = 'presets'):
        if source == 'presets':
            cases = energy.LANDSCAPE_PRESETS
        elif source == 'config':
            e_bias = -self.config.trap_bias if self.config.traps_enabled else 0.0
            cases = {'config': (self.config.stack, e_bias)}
        else:
            raise ConfigError(f"unknown landscape source '{source}'", key='source')

        for case, (stack, e_bias) in cases.items():
            d, f = energy.landscape_curve(stack, e_bias=e_bias)
            self._write_csv(directory, f'landscape_{case}.csv', ('D_C_per_m2', 'F_J_per_m3'), np.column_stack([d, f]))
            minima = [sp.d for sp in energy.stationary_points(stack, e_bias=e_bias) if sp.kind == energy.MINIMUM]
            barriers = energy.barrier_heights(stack, e_bias=e_bias)
            low, high = (minima[0], minima[-1]) if minima else (math.nan, math.nan)
            self._emit(
                'landscape', case=case, e_bias_v_per_m=e_bias, n_minima=len(minima),
                d_min_low=low, d_min_high=high,
                f_min_low=energy.free_energy_density(low, stack, e_bias=e_bias),
                f_min_high=energy.free_energy_density(high, stack, e_bias=e_bias),
                barrier_from_up=barriers.from_up, barrier_from_down=barriers.from_down,
            )

    def _pund_outputs(self, directory: Path, prefix: str, result):
        self._write_trace(directory, f'{prefix}_trace.csv', result.trace)
        loop = result.loop
        self._write_csv(directory, f'{prefix}_loop.csv', ('V_V', 'P_C_per_m2'), np.column_stack([loop.v, loop.p]))
        self._emit(
            prefix, two_pr=loop.two_pr, pr_pos=loop.pr_pos, pr_neg=loop.pr_neg,
            peak_v_pos=loop.peak_v_pos, peak_v_neg=loop.peak_v_neg, loop_area=loop.area,
            frequency_hz=self.config.pund.frequency, center_v=self.config.pund.center,
        )

    def _run_pund(self, directory: Path, reference: bool = False):
        result = instrument.run_pund(self.config.build_model(), self.config.pund)
        self._pund_outputs(directory, 'pund', result)
        if reference:
            # electrode without vacancy traps: no internal bias
            ref = instrument.run_pund(self.config.build_model(traps=None), self.config.pund)
            self._pund_outputs(directory, 'pund_reference', ref)

    def _run_kinetics(self, directory: Path):
        result = instrument.run_kinetics(self.config.build_model(), self.config.kinetics)
        rows = [
            (a, w, result.delta_p[i, j])
            for i, a in enumerate(result.amplitudes) for j, w in enumerate(result.widths)
        ]
        self._write_csv(directory, 'kinetics.csv', ('amplitude_V', 'width_s', 'delta_p_norm'), rows)
        for i, amplitude in enumerate(result.amplitudes):
            self._emit('kinetics', amplitude_v=amplitude,
                       width_half_switched_s=_half_width(np.asarray(result.widths), result.delta_p[i]))

    def _run_retention(self, directory: Path, state: Optional[str] = None):
        cfg = self.config.retention if state is None else replace(self.config.retention, state=state)
        model = self.config.build_model()
        points = instrument.run_retention(model, cfg)
        self._write_csv(directory, 'retention.csv', ('delay_s', 'P_C_per_m2'), points)
        t, p = (np.asarray(col) for col in zip(*points))
        if cfg.state == 'down':
            flatness = float(np.max(np.abs(p - p[0])) / (2.0 * model.p_s))
            self._emit('retention', state='down', p_first=p[0], p_last=p[-1], max_change_over_2ps=flatness)
            return
        if len(points) < 4:
            logger.warning("Retention curve has fewer than 4 delays; skipping the exponential fit")
            return
        fit = analysis.fit_exponential(t, p)
        self._fits.append((cfg.program_width, cfg.program_amplitude, fit))
        self._write_json(directory, 'retention_fit.json', fit.to_dict())
        self._emit('retention', state='up', amplitude_v=cfg.program_amplitude, width_s=cfg.program_width,
                   **fit.to_dict())

    def _run_endurance(self, directory: Path, high_voltage: bool = False):
        cfg = self.config.endurance
        if high_voltage:
            cfg = replace(cfg, v_min=-5.0, v_max=3.0)
        rows = instrument.run_endurance(self.config.build_model(), cfg, self.config.pund)
        columns = ('cycle', 'pr_pos_C_per_m2', 'pr_neg_C_per_m2', 'two_pr_C_per_m2', 'peak_v_pos_V', 'peak_v_neg_V')
        matrix = [(r.cycle, r.pr_pos, r.pr_neg, r.two_pr, r.peak_v_pos, r.peak_v_neg) for r in rows]
        self._write_csv(directory, 'endurance.csv', columns, matrix)
        first, last = rows[0], rows[-1]
        drift = (last.two_pr - first.two_pr) / first.two_pr if first.two_pr else math.nan
        self._emit('endurance', n_cycles=cfg.n_cycles, frequency_hz=cfg.frequency, v_min=cfg.v_min, v_max=cfg.v_max,
                   relax_pause_s=cfg.relax_pause, two_pr_drift=drift,
                   peak_v_pos_first=first.peak_v_pos, peak_v_pos_last=last.peak_v_pos)

    def _run_sweep(self, directory: Path):
        model = self.config.build_model()
        cells, tau_map = instrument.run_sweep(model, self.config.retention, self.config.sweep, jobs=self.jobs)
        amp_columns = tuple(f'A={a:g}V' for a in tau_map.amplitudes)
        widths = np.asarray(tau_map.widths)[:, None]
        self._write_csv(directory, 'tau_map.csv', ('width_s',) + amp_columns, np.hstack([widths, tau_map.tau]))
        self._write_csv(directory, 'p_init_map.csv', ('width_s',) + amp_columns, np.hstack([widths, tau_map.p_init]))
        self._write_csv(directory, 'tau_scatter.csv', ('p_init_C_per_m2', 'tau_s', 'amplitude_V'),
                        analysis.correlate_tau_polarization(tau_map))
        rows = [(c.width, c.amplitude, delay, p) for c in cells for delay, p in c.points]
        self._write_csv(directory, 'retention_cells.csv', ('width_s', 'amplitude_V', 'delay_s', 'P_C_per_m2'), rows)
        for cell in cells:
            self._fits.append((cell.width, cell.amplitude, cell.fit))
            self._emit('sweep', width_s=cell.width, amplitude_v=cell.amplitude, **cell.fit.to_dict())

    def _run_fit(self, directory: Path, csv_path=None, units: Optional[str] = None,
                 t_min: Optional[float] = None, t_max: Optional[float] = None):
        if csv_path is None:
            raise ConfigError('fit needs a measurement CSV')
        t, p = read_polarization_csv(csv_path, units)
        try:
            fit = analysis.fit_exponential(t, p, t_min=t_min, t_max=t_max)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self._fits.append((None, None, fit))
        self._write_json(directory, 'fit.json', fit.to_dict())
        self._emit('fit', source=str(csv_path), t_min=t_min, t_max=t_max, **fit.to_dict())


def run_subcommand(name: str, config: RunConfig, seed=None, dt=None, out=None, force=False,
                   jobs=None, output_root=None, **options) -> RunOutcome:
    """Apply flag overrides and run one subcommand; see ExperimentService.run"""
    config = config.with_overrides(seed=seed, dt=dt)
    service = ExperimentService(config, output_root=output_root, force=force, jobs=jobs)
    return service.run(name, out=out, **options)
