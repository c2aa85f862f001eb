"""Joint merge sequencing and MPC with control Lyapunov-barrier functions for a roundabout."""

from .dynamics import Limits, VehicleState
from .sim import ScenarioConfig, Simulation, run
from .topology import RoundaboutTopology, Route

__all__ = ["Limits", "VehicleState", "ScenarioConfig", "Simulation", "run", "RoundaboutTopology", "Route"]
__version__ = "0.1.0"
