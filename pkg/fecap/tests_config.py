import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from .config import RunConfig, dump_config, load_config, parse_config, parse_quantity
from .exceptions import ConfigError

SAMPLE = """
# thin HZO stack on a NbOx interface
[stack]
d_fe = 6.6nm
eps_int = 75
area = 625um2

[ensemble]
n_domains = 64
e_act_median = 65MV/cm

[traps]
enabled = yes
e_bias = 80kV/cm

[leakage]
enabled = false

[protocol.retention]
delays = 1us, 10us, 100us, 1ms
state = down

[protocol.endurance]
checkpoints = 0, 10, 100
n_cycles = 100

[simulation]
seed = 11
mode = lk
dt = 5ns

[output]
directory = none
formats = csv
"""


class ParseQuantityTests(SimpleTestCase):
    def test_bare_number_is_si(self):
        self.assertEqual(parse_quantity('1e-3', 'time'), 1e-3)

    def test_suffixes(self):
        self.assertAlmostEqual(parse_quantity('6.6nm', 'length') / 6.6e-9, 1.0, places=14)
        self.assertAlmostEqual(parse_quantity('100 kV/cm', 'field'), 1e7)
        self.assertAlmostEqual(parse_quantity('30uC/cm2', 'polarization'), 0.3)
        self.assertAlmostEqual(parse_quantity('100kHz', 'frequency'), 1e5)
        self.assertAlmostEqual(parse_quantity('-250mV', 'voltage'), -0.25)

    def test_unknown_unit(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_quantity('6.6nmm', 'length', key='d_fe')
        self.assertEqual(ctx.exception.key, 'd_fe')
        self.assertIn('nmm', ctx.exception.reason)

    def test_dimensionless_keys_take_no_suffix(self):
        with self.assertRaises(ConfigError):
            parse_quantity('30nm', 'number')

    def test_not_a_number(self):
        with self.assertRaises(ConfigError):
            parse_quantity('thin', 'length')


class ParseConfigTests(SimpleTestCase):
    def test_empty_text_gives_defaults(self):
        self.assertEqual(parse_config(''), RunConfig())
        self.assertEqual(parse_config('# nothing here\n\n'), RunConfig())

    def test_sample(self):
        config = parse_config(SAMPLE)
        self.assertAlmostEqual(config.stack.d_fe / 6.6e-9, 1.0, places=14)
        self.assertEqual(config.stack.eps_int, 75.0)
        self.assertAlmostEqual(config.stack.area / 625e-12, 1.0, places=14)
        self.assertEqual(config.ensemble.n_domains, 64)
        self.assertAlmostEqual(config.ensemble.e_act_median / 6.5e9, 1.0, places=14)
        self.assertTrue(config.traps_enabled)
        self.assertAlmostEqual(config.trap_bias, 8e6)
        self.assertFalse(config.leakage_enabled)
        np.testing.assert_allclose(config.retention.delays, [1e-6, 1e-5, 1e-4, 1e-3])
        self.assertEqual(config.retention.state, 'down')
        self.assertEqual(config.endurance.checkpoints, (0, 10, 100))
        self.assertEqual(config.simulation.seed, 11)
        self.assertEqual(config.simulation.mode, 'lk')
        self.assertAlmostEqual(config.simulation.dt, 5e-9)
        self.assertIsNone(config.output.directory)
        self.assertEqual(config.output.formats, ('csv',))

    def test_malformed_unit_reports_location(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('[stack]\nd_fe = 6.6nmm\n')
        self.assertEqual(ctx.exception.key, 'd_fe')
        self.assertEqual(ctx.exception.line, 2)
        self.assertEqual(ctx.exception.column, 8)
        self.assertIn('line 2', str(ctx.exception))

    def test_unknown_section(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('[stack]\n[protocol.fatigue]\n')
        self.assertEqual(ctx.exception.key, 'protocol.fatigue')
        self.assertEqual(ctx.exception.line, 2)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('[stack]\n  thickness = 6.6nm\n')
        self.assertEqual(ctx.exception.key, 'thickness')
        self.assertEqual((ctx.exception.line, ctx.exception.column), (2, 3))

    def test_derived_keys_are_not_settable(self):
        with self.assertRaises(ConfigError):
            parse_config('[traps]\nkappa = 1e-30\n')
        with self.assertRaises(ConfigError):
            parse_config('[ensemble]\nseed = 3\n')

    def test_duplicate_key(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('[stack]\nd_fe = 6nm\nd_fe = 7nm\n')
        self.assertEqual(ctx.exception.line, 3)

    def test_key_outside_section(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('d_fe = 6.6nm\n')
        self.assertEqual(ctx.exception.line, 1)

    def test_missing_equals_sign(self):
        with self.assertRaises(ConfigError):
            parse_config('[stack]\nd_fe 6.6nm\n')

    def test_unterminated_header(self):
        with self.assertRaises(ConfigError):
            parse_config('[stack\n')

    def test_unknown_mode(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('[simulation]\nmode = rk4\n')
        self.assertEqual(ctx.exception.key, 'mode')
        self.assertEqual(ctx.exception.line, 2)

    def test_semantic_error_keeps_location(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('[stack]\neps_fe = 30\nd_fe = 0\n')
        self.assertEqual(ctx.exception.key, 'd_fe')
        self.assertEqual(ctx.exception.line, 3)

    def test_bad_boolean_and_integer(self):
        with self.assertRaises(ConfigError):
            parse_config('[traps]\nenabled = maybe\n')
        with self.assertRaises(ConfigError):
            parse_config('[ensemble]\nn_domains = 1.5\n')

    def test_unknown_output_format(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('[output]\nformats = csv, xlsx\n')
        self.assertEqual(ctx.exception.key, 'formats')

    def test_unsorted_delays(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('[protocol.retention]\ndelays = 1ms, 1us\n')
        self.assertEqual(ctx.exception.key, 'delays')


class DumpConfigTests(SimpleTestCase):
    def test_defaults_survive_a_round_trip(self):
        self.assertEqual(parse_config(dump_config(RunConfig())), RunConfig())

    def test_sample_survives_a_round_trip(self):
        config = parse_config(SAMPLE)
        text = dump_config(config)
        self.assertEqual(parse_config(text), config)
        self.assertEqual(dump_config(parse_config(text)), text)

    def test_dump_lists_every_section(self):
        text = dump_config(RunConfig())
        for header in ('[stack]', '[traps]', '[protocol.pund]', '[protocol.sweep]', '[simulation]', '[output]'):
            self.assertIn(header, text)
        self.assertNotIn('kappa', text)


class RunConfigTests(SimpleTestCase):
    def test_overrides_take_precedence(self):
        config = parse_config(SAMPLE).with_overrides(seed=5, dt=1e-7, out='/tmp/run')
        self.assertEqual(config.simulation.seed, 5)
        self.assertEqual(config.simulation.dt, 1e-7)
        self.assertEqual(config.output.directory, '/tmp/run')
        self.assertEqual(config.simulation.mode, 'lk')

    def test_no_overrides(self):
        config = parse_config(SAMPLE)
        self.assertEqual(config.with_overrides(), config)

    def test_build_model(self):
        config = parse_config('[ensemble]\nn_domains = 16\n[simulation]\nseed = 4\nsteps_per_segment = 50\n')
        model = config.build_model()
        self.assertEqual(len(model.ensemble), 16)
        self.assertEqual(model.steps_per_segment, 50)
        self.assertGreater(model.traps.kappa, 0.0)
        self.assertIsNotNone(model.leakage)
        again = config.build_model()
        np.testing.assert_array_equal(model.ensemble.e_act, again.ensemble.e_act)

    def test_build_model_with_components_disabled(self):
        config = parse_config('[traps]\nenabled = off\n[leakage]\nenabled = off\n[ensemble]\nn_domains = 4\n')
        model = config.build_model(frozen=True)
        self.assertIsNone(model.traps)
        self.assertIsNone(model.leakage)
        self.assertTrue(model.frozen)


class LoadConfigTests(SimpleTestCase):
    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config('/nonexistent/fecap.ini')

    def test_reads_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'device.ini'
            path.write_text(SAMPLE, encoding='utf-8')
            self.assertEqual(load_config(path), parse_config(SAMPLE))

    def test_undecodable_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'latin1.ini'
            path.write_bytes(b'[stack]\nd_fe = 6.6nm # \xe9paisseur\n')
            with self.assertRaises(ConfigError) as ctx:
                load_config(path)
        self.assertIn('UTF-8', str(ctx.exception))
