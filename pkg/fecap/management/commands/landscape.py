from fecap.management.commands._base import SimulationCommand


class Command(SimulationCommand):
    help = 'Sample the free-energy landscape (intrinsic, interface and fixed-charge cases by default)'
    subcommand = 'landscape'

    def add_subcommand_arguments(self, parser):
        parser.add_argument('--source', choices=['presets', 'config'], default='presets',
                            help='Preset triptych or the stack from the configuration file')

    def subcommand_options(self, options):
        return {'source': options['source']}
