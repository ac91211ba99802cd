import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.db import DatabaseError
from django.test import TestCase, override_settings

from .config import parse_config
from .exceptions import NumericalError
from .models import OutputFile, RetentionFitRecord, SimulationRun
from .services import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, _sha256, read_polarization_csv, run_subcommand

SMALL_CONFIG = """
[ensemble]
n_domains = 8

[simulation]
seed = 3
steps_per_segment = 20

[protocol.retention]
delays = 1us, 10us, 100us, 1ms

[protocol.endurance]
n_cycles = 3
relax_pause = 100us

[protocol.kinetics]
amplitudes = -4, -4.5
widths = 1us, 10us, 100us

[protocol.sweep]
widths = 10us, 50us
amplitudes = -4, -4.5
"""


class CommandTestCase(TestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)
        self.config_path = self.tmp / 'small.ini'
        self.config_path.write_text(SMALL_CONFIG, encoding='utf-8')

    def run_command(self, name, *args, out=None, **kwargs):
        stdout = StringIO()
        directory = self.tmp / (out or name)
        call_command(name, *args, '--config', str(self.config_path), '--out', str(directory), stdout=stdout, **kwargs)
        return directory, stdout.getvalue()

    def read_csv(self, path):
        return np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)

    def summary(self, directory):
        lines = (directory / 'summary.jsonl').read_text(encoding='utf-8').splitlines()
        return [json.loads(line) for line in lines]


class LandscapeCommandTests(CommandTestCase):
    def test_presets(self):
        directory, stdout = self.run_command('landscape')
        for case in ('intrinsic', 'interface', 'fixed_charge_interface'):
            data = self.read_csv(directory / f'landscape_{case}.csv')
            self.assertEqual(data.shape, (601, 2))
        rows = self.summary(directory)
        self.assertEqual([row['case'] for row in rows], ['intrinsic', 'interface', 'fixed_charge_interface'])
        self.assertTrue(all(row['n_minima'] == 2 for row in rows))
        self.assertIn('landscape: wrote', stdout)
        self.assertIn('"protocol": "landscape"', stdout)

    def test_config_source(self):
        directory, _ = self.run_command('landscape', '--source', 'config')
        self.assertTrue((directory / 'landscape_config.csv').exists())
        self.assertFalse((directory / 'landscape_intrinsic.csv').exists())


class PundCommandTests(CommandTestCase):
    def test_outputs(self):
        directory, _ = self.run_command('pund')
        trace = self.read_csv(directory / 'pund_trace.csv')
        self.assertEqual(trace.shape[1], 8)
        loop = self.read_csv(directory / 'pund_loop.csv')
        self.assertEqual(loop.shape[1], 2)
        row, = self.summary(directory)
        self.assertEqual(row['protocol'], 'pund')
        self.assertGreaterEqual(row['two_pr'], 0.0)

    def test_reference_electrode(self):
        directory, _ = self.run_command('pund', '--reference')
        self.assertTrue((directory / 'pund_reference_loop.csv').exists())
        self.assertEqual([row['protocol'] for row in self.summary(directory)], ['pund', 'pund_reference'])

    def test_same_seed_is_byte_identical(self):
        first, _ = self.run_command('pund', out='first')
        second, _ = self.run_command('pund', out='second')
        for name in ('pund_trace.csv', 'pund_loop.csv', 'summary.jsonl'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_seed_flag_changes_the_ensemble(self):
        first, _ = self.run_command('pund', out='first')
        other, _ = self.run_command('pund', '--seed', '4', out='other')
        self.assertNotEqual((first / 'pund_trace.csv').read_bytes(), (other / 'pund_trace.csv').read_bytes())
        manifest = json.loads((other / 'manifest.json').read_text())
        self.assertEqual(manifest['seed'], 4)


class ProtocolCommandTests(CommandTestCase):
    def test_kinetics(self):
        directory, _ = self.run_command('kinetics')
        data = self.read_csv(directory / 'kinetics.csv')
        self.assertEqual(data.shape, (6, 3))
        self.assertTrue(np.all(data[:, 2] >= -1e-9))
        self.assertTrue(np.all(data[:, 2] <= 1.0 + 1e-9))
        self.assertEqual([row['amplitude_v'] for row in self.summary(directory)], [-4.0, -4.5])

    def test_retention_with_fit(self):
        directory, _ = self.run_command('retention')
        data = self.read_csv(directory / 'retention.csv')
        np.testing.assert_allclose(data[:, 0], [1e-6, 1e-5, 1e-4, 1e-3])
        fit = json.loads((directory / 'retention_fit.json').read_text())
        self.assertEqual(set(fit), {'p0', 'p_inf', 'tau', 'rmse', 'n_iter', 'converged', 'identifiable',
                                    'optimality', 'p_init'})
        self.assertEqual(RetentionFitRecord.objects.count(), 1)

    def test_retention_down_state(self):
        directory, _ = self.run_command('retention', '--state', 'down')
        self.assertFalse((directory / 'retention_fit.json').exists())
        row, = self.summary(directory)
        self.assertEqual(row['state'], 'down')
        self.assertLess(row['p_last'], 0.0)

    def test_endurance(self):
        directory, _ = self.run_command('endurance')
        data = self.read_csv(directory / 'endurance.csv')
        np.testing.assert_array_equal(data[:, 0], [0, 1, 3])
        row, = self.summary(directory)
        self.assertEqual((row['v_min'], row['v_max']), (-4.5, 2.5))

    def test_endurance_high_voltage(self):
        directory, _ = self.run_command('endurance', '--high-voltage')
        row, = self.summary(directory)
        self.assertEqual((row['v_min'], row['v_max']), (-5.0, 3.0))

    def test_sweep(self):
        directory, _ = self.run_command('sweep', '--jobs', '1')
        tau_map = self.read_csv(directory / 'tau_map.csv')
        self.assertEqual(tau_map.shape, (2, 3))
        np.testing.assert_allclose(tau_map[:, 0], [1e-5, 5e-5])
        header = (directory / 'tau_map.csv').read_text().splitlines()[0]
        self.assertEqual(header, 'width_s,A=-4V,A=-4.5V')
        cells = self.read_csv(directory / 'retention_cells.csv')
        self.assertEqual(cells.shape, (16, 4))
        self.assertTrue((directory / 'tau_scatter.csv').exists())
        self.assertEqual(RetentionFitRecord.objects.count(), 4)


class FitCommandTests(CommandTestCase):
    def write_measurement(self, rows=20, column='P_uC_per_cm2', scale=100.0):
        t = np.logspace(-6, -2, rows)
        p = (0.30 * np.exp(-t / 5e-4) - 0.10) * scale
        path = self.tmp / 'measured.csv'
        np.savetxt(path, np.column_stack([t, p]), delimiter=',', header=f't_s,{column}', comments='')
        return path

    def test_fit_in_micro_coulomb(self):
        path = self.write_measurement()
        directory, stdout = self.run_command('fit', str(path))
        fit = json.loads((directory / 'fit.json').read_text())
        self.assertAlmostEqual(fit['tau'] / 5e-4, 1.0, places=5)
        self.assertAlmostEqual(fit['p_inf'], -0.10, places=6)
        self.assertIn('fit: wrote', stdout)

        run = SimulationRun.objects.get()
        self.assertEqual(run.subcommand, 'fit')
        self.assertEqual(run.status, 'succeeded')
        self.assertEqual(run.exit_code, EXIT_OK)
        self.assertEqual(run.total_files, 3)
        record = RetentionFitRecord.objects.get()
        self.assertIsNone(record.width)
        self.assertAlmostEqual(record.tau / 5e-4, 1.0, places=5)

    def test_explicit_units_override_the_column_name(self):
        path = self.write_measurement(column='P', scale=100.0)
        directory, _ = self.run_command('fit', str(path), '--units', 'uC/cm2')
        fit = json.loads((directory / 'fit.json').read_text())
        self.assertAlmostEqual(fit['p0'], 0.30, places=6)

    def test_fit_window(self):
        path = self.write_measurement()
        directory, _ = self.run_command('fit', str(path), '--t-min', '10us', '--t-max', '5ms')
        row, = self.summary(directory)
        self.assertAlmostEqual(row['t_min'], 1e-5)
        self.assertAlmostEqual(row['t_max'], 5e-3)

    def test_too_few_samples(self):
        path = self.write_measurement(rows=3)
        with self.assertRaises(CommandError) as ctx:
            self.run_command('fit', str(path))
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)
        self.assertFalse((self.tmp / 'fit').exists())

    def test_read_polarization_csv(self):
        path = self.write_measurement(rows=5)
        t, p = read_polarization_csv(path)
        self.assertEqual(t.size, 5)
        self.assertAlmostEqual(p[0], 0.30 * np.exp(-1e-6 / 5e-4) - 0.10, places=10)


class OutputSettingsTests(CommandTestCase):
    def test_csv_only(self):
        self.config_path.write_text(SMALL_CONFIG + '\n[output]\nformats = csv\n', encoding='utf-8')
        directory, _ = self.run_command('retention')
        self.assertTrue((directory / 'retention.csv').exists())
        self.assertFalse((directory / 'retention_fit.json').exists())
        manifest = json.loads((directory / 'manifest.json').read_text())
        self.assertFalse(any(entry['path'].endswith('.json') for entry in manifest['files']))
        self.assertEqual(RetentionFitRecord.objects.count(), 1)

    def test_json_only(self):
        self.config_path.write_text(SMALL_CONFIG + '\n[output]\nformats = json\n', encoding='utf-8')
        directory, _ = self.run_command('retention')
        self.assertFalse((directory / 'retention.csv').exists())
        self.assertTrue((directory / 'retention_fit.json').exists())

    def test_record_every_thins_the_trace(self):
        full, _ = self.run_command('pund', out='full')
        self.config_path.write_text(SMALL_CONFIG + '\n[simulation]\nrecord_every = 10\n', encoding='utf-8')
        thinned, _ = self.run_command('pund', out='thinned')
        everything = self.read_csv(full / 'pund_trace.csv')
        kept = self.read_csv(thinned / 'pund_trace.csv')
        n = everything.shape[0]
        self.assertEqual(kept.shape[0], len(range(0, n, 10)) + (1 if (n - 1) % 10 else 0))
        np.testing.assert_array_equal(kept[0], everything[0])
        np.testing.assert_array_equal(kept[-1], everything[-1])
        # the loop is computed from the full record
        self.assertEqual((full / 'pund_loop.csv').read_bytes(), (thinned / 'pund_loop.csv').read_bytes())


class ExitCodeTests(CommandTestCase):
    def test_bad_config_file(self):
        self.config_path.write_text('[stack]\nd_fe = 6.6nmm\n', encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('landscape')
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)
        self.assertIn('d_fe', str(ctx.exception))

    def test_config_file_is_not_utf8(self):
        self.config_path.write_bytes(b'[stack]\nd_fe = 6.6nm # \xe9paisseur\n')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('landscape')
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)
        self.assertIn('UTF-8', str(ctx.exception))

    def test_missing_config_file(self):
        self.config_path.unlink()
        with self.assertRaises(CommandError) as ctx:
            self.run_command('landscape')
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)

    def test_bad_time_flag(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('pund', '--dt', '10parsec')
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)

    def test_existing_directory_needs_force(self):
        directory, _ = self.run_command('landscape')
        stale = directory / 'stale.txt'
        stale.write_text('left over')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('landscape')
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)
        self.assertTrue(stale.exists())
        self.run_command('landscape', '--force')
        self.assertFalse(stale.exists())

    def test_numerical_failure_removes_the_directory(self):
        with mock.patch('fecap.services.instrument.run_pund', side_effect=NumericalError('step size underflow')):
            with self.assertRaises(CommandError) as ctx:
                self.run_command('pund')
        self.assertEqual(ctx.exception.returncode, EXIT_NUMERICAL)
        self.assertFalse((self.tmp / 'pund').exists())
        run = SimulationRun.objects.get()
        self.assertEqual(run.status, 'failed')
        self.assertEqual(run.exit_code, EXIT_NUMERICAL)
        self.assertIn('underflow', run.error_message)
        self.assertEqual(OutputFile.objects.count(), 0)


class ManifestTests(CommandTestCase):
    def test_manifest_lists_every_file(self):
        directory, _ = self.run_command('retention')
        manifest = json.loads((directory / 'manifest.json').read_text())
        self.assertEqual(manifest['subcommand'], 'retention')
        self.assertEqual(manifest['seed'], 3)
        self.assertEqual(len(manifest['config_hash']), 64)
        self.assertEqual(set(manifest['versions']), {'python', 'numpy', 'scipy', 'django', 'fecap'})

        listed = {entry['path']: entry for entry in manifest['files']}
        on_disk = {p.name for p in directory.iterdir()} - {'manifest.json'}
        self.assertEqual(set(listed), on_disk)
        for name, entry in listed.items():
            self.assertEqual(entry['sha256'], _sha256(directory / name))
        self.assertEqual([entry['path'] for entry in manifest['files']], sorted(listed))

        stored = OutputFile.objects.filter(run__subcommand='retention')
        self.assertEqual({f.path for f in stored}, on_disk)

    def test_config_snapshot_reproduces_the_run_config(self):
        directory, _ = self.run_command('landscape', '--seed', '9')
        snapshot = parse_config((directory / 'config.ini').read_text())
        self.assertEqual(snapshot.simulation.seed, 9)
        self.assertEqual(snapshot.ensemble.n_domains, 8)


class ServiceTests(CommandTestCase):
    def test_default_run_directory(self):
        config = parse_config(SMALL_CONFIG)
        with override_settings(FECAP_OUTPUT_ROOT=self.tmp / 'runs'):
            outcome = run_subcommand('landscape', config)
            self.assertEqual(outcome.exit_code, EXIT_OK)
            self.assertEqual(outcome.directory.parent, self.tmp / 'runs')
            self.assertTrue(outcome.directory.name.startswith('landscape-'))
            self.assertTrue(outcome.directory.name.endswith('-seed3'))
            self.assertIn('manifest.json', outcome.files)

            again = run_subcommand('landscape', config)
            self.assertEqual(again.exit_code, EXIT_CONFIG)
            self.assertIsNone(again.directory)

            other_seed = run_subcommand('landscape', config, seed=4)
            self.assertEqual(other_seed.exit_code, EXIT_OK)
            self.assertNotEqual(other_seed.directory, outcome.directory)

    def test_unknown_landscape_source(self):
        outcome = run_subcommand('landscape', parse_config(''), out=self.tmp / 'bad', source='measured')
        self.assertEqual(outcome.exit_code, EXIT_CONFIG)
        self.assertFalse((self.tmp / 'bad').exists())

    def test_database_failure_is_only_a_warning(self):
        with mock.patch.object(SimulationRun.objects, 'create', side_effect=DatabaseError('no such table')):
            with self.assertLogs('fecap.services', level='WARNING') as logs:
                outcome = run_subcommand('landscape', parse_config(''), out=self.tmp / 'nodb')
        self.assertEqual(outcome.exit_code, EXIT_OK)
        self.assertTrue((self.tmp / 'nodb' / 'manifest.json').exists())
        self.assertTrue(any('not recorded' in line for line in logs.output))
        self.assertEqual(SimulationRun.objects.count(), 0)
