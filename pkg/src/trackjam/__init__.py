"""Cooperative target tracking and radio-jamming simulation toolkit."""

__version__ = "0.1.0"

from .bernoulli import BernoulliBelief, FilterParams
from .metrics import OspaParams
from .models import OFF, Box, ControlGrid, SensingParams, TargetDynamicsParams
from .sim import ScenarioConfig, Trace, run_scenario

__all__ = [
    "OFF",
    "BernoulliBelief",
    "Box",
    "ControlGrid",
    "FilterParams",
    "OspaParams",
    "ScenarioConfig",
    "SensingParams",
    "TargetDynamicsParams",
    "Trace",
    "run_scenario",
    "__version__",
]
