"""Deterministic simulation: scenarios, the scheduler, adversary policies,
and the exhaustive interleaving enumerator."""

from .exhaustive import EnumerationResult, enumerate_interleavings
from .policies import (
    CoveringBookkeeping,
    CoveringPolicy,
    CrashPolicy,
    RandomPolicy,
    build_policy,
    measure_cov,
    run_scenario,
)
from .scenario import (
    Scenario,
    WorkloadItem,
    bundled_names,
    bundled_path,
    load_scenario,
    scenario_from_dict,
)
from .scheduler import LLOp, Simulation

__all__ = [
    "CoveringBookkeeping",
    "CoveringPolicy",
    "CrashPolicy",
    "EnumerationResult",
    "LLOp",
    "RandomPolicy",
    "Scenario",
    "Simulation",
    "WorkloadItem",
    "build_policy",
    "bundled_names",
    "bundled_path",
    "enumerate_interleavings",
    "load_scenario",
    "measure_cov",
    "run_scenario",
    "scenario_from_dict",
]
