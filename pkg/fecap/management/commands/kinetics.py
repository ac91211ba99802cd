from fecap.management.commands._base import SimulationCommand


class Command(SimulationCommand):
    help = 'Switched polarization over a pulse amplitude x width grid'
    subcommand = 'kinetics'
