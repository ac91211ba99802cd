from fecap.management.commands._base import SimulationCommand


class Command(SimulationCommand):
    help = 'Run a PUND measurement and extract the polarization loop'
    subcommand = 'pund'

    def add_subcommand_arguments(self, parser):
        parser.add_argument('--reference', action='store_true',
                            help='Also run a reference device without vacancy traps')

    def subcommand_options(self, options):
        return {'reference': options['reference']}
