"""Rollback and fork detection for a service hosted in a trusted execution
context, plus the simulator and checker used to exercise it."""
from .checker import check_fork_linearizable, stability_oracle, verdict
from .client import LcmClient, Stability
from .context import TrustedContext
from .simulator import SimConfig, Simulation, simulate
from .workload import WorkloadSpec

__all__ = [
    "LcmClient",
    "SimConfig",
    "Simulation",
    "Stability",
    "TrustedContext",
    "WorkloadSpec",
    "check_fork_linearizable",
    "simulate",
    "stability_oracle",
    "verdict",
]

__version__ = "0.1.0"
