"""
Shared plumbing for the simulator management commands
"""

import json

from django.core.management.base import BaseCommand, CommandError

from fecap.config import RunConfig, load_config, parse_quantity
from fecap.exceptions import ConfigError
from fecap.services import EXIT_CONFIG, run_subcommand


class SimulationCommand(BaseCommand):
    """Base command: common flags, config loading and exit-code translation"""
    subcommand = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Path to a run configuration file (defaults apply when omitted)')
        parser.add_argument('--seed', type=int, help='Random seed for the domain ensemble')
        parser.add_argument('--out', help='Run directory (default: derived from config hash and seed)')
        parser.add_argument('--force', action='store_true', help='Overwrite an existing run directory')
        parser.add_argument('--jobs', type=int, help='Worker processes for sweeps')
        parser.add_argument('--dt', help='Largest integration step, e.g. 10ns or 1e-8')
        self.add_subcommand_arguments(parser)

    def add_subcommand_arguments(self, parser):
        pass

    def subcommand_options(self, options):
        return {}

    def parse_time(self, value, key):
        if value is None:
            return None
        try:
            return parse_quantity(value, 'time', key=key)
        except ConfigError as e:
            raise CommandError(str(e), returncode=EXIT_CONFIG)

    def handle(self, *args, **options):
        try:
            config = load_config(options['config']) if options['config'] else RunConfig()
        except ConfigError as e:
            raise CommandError(str(e), returncode=EXIT_CONFIG)

        outcome = run_subcommand(
            self.subcommand,
            config,
            seed=options['seed'],
            dt=self.parse_time(options['dt'], 'dt'),
            out=options['out'],
            force=options['force'],
            jobs=options['jobs'],
            **self.subcommand_options(options),
        )
        if outcome.exit_code:
            raise CommandError(outcome.error, returncode=outcome.exit_code)

        for row in outcome.summary:
            self.stdout.write(json.dumps(row, sort_keys=True))
        self.stdout.write(
            self.style.SUCCESS(f'{self.subcommand}: wrote {len(outcome.files)} files to {outcome.directory}')
        )
