from fecap.management.commands._base import SimulationCommand


class Command(SimulationCommand):
    help = 'Retention fits over a program width x amplitude grid (tau map)'
    subcommand = 'sweep'
