from fecap.management.commands._base import SimulationCommand


class Command(SimulationCommand):
    help = 'Retention of the programmed state over the configured delays, with exponential fit'
    subcommand = 'retention'

    def add_subcommand_arguments(self, parser):
        parser.add_argument('--state', choices=['up', 'down'],
                            help='Programmed P-up state (default) or the stable P-down state')

    def subcommand_options(self, options):
        return {'state': options['state']}
