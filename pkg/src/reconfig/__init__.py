"""Self-organised reconfiguration management for modular production systems.

Given the current state of a set of production modules and a new production
order, find out whether the modules must be reconfigured, enumerate the
alternative production sequences and layouts, optimise their production
parameters by simulation with learned process models, and select the
configuration with the best weighted time/energy/cost trade-off.
"""

from importlib import resources

__version__ = "0.1.0"


def demo_scenario_path(name: str = "demo.json"):
    """Path of a bundled example scenario (``demo.json`` or ``demo_feasible.json``)."""
    return resources.files(__package__).joinpath("data", name)
