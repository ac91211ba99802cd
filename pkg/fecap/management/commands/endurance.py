from fecap.management.commands._base import SimulationCommand


class Command(SimulationCommand):
    help = 'Bipolar cycling with PUND checkpoints'
    subcommand = 'endurance'

    def add_subcommand_arguments(self, parser):
        parser.add_argument('--high-voltage', action='store_true', help='Cycle between -5 V and 3 V')

    def subcommand_options(self, options):
        return {'high_voltage': options['high_voltage']}
