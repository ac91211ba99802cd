from fecap.management.commands._base import SimulationCommand


class Command(SimulationCommand):
    help = 'Fit P(t) = p0 exp(-t/tau) + p_inf to a measured retention CSV'
    subcommand = 'fit'

    def add_subcommand_arguments(self, parser):
        parser.add_argument('csv', help='CSV with t_s and P_C_per_m2 (or P_uC_per_cm2) columns')
        parser.add_argument('--units', choices=['C/m2', 'uC/cm2'], help='Unit of the polarization column')
        parser.add_argument('--t-min', help='Ignore samples before this time, e.g. 10us')
        parser.add_argument('--t-max', help='Ignore samples after this time')

    def subcommand_options(self, options):
        return {
            'csv_path': options['csv'],
            'units': options['units'],
            't_min': self.parse_time(options['t_min'], 't_min'),
            't_max': self.parse_time(options['t_max'], 't_max'),
        }
