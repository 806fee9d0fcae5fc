"""casreg: deterministic simulation and verification of reliable-register
emulations over crash-prone servers.

The package has four layers:

* `core`: timestamps, values, events, histories, and the JSONL trace format.
* `base` / `protocol`: the fault-prone base objects (CAS cells and plain
  registers) and the two register emulations built on them — a CAS-backed
  multi-writer atomic register with constant storage, and a plain-register
  baseline whose storage grows with the writer count.
* `sim`: scenarios, the single-threaded adversarial scheduler, scheduling
  policies (seeded random, crash-injecting, covering), and an exhaustive
  interleaving enumerator for tiny workloads.
* `verify`: offline checkers — linearizability, decision-point replay
  through a sequential oracle, timestamp uniqueness, quantitative bounds,
  coverage growth — plus resource accounting and report plumbing.
"""

from .base import ConfigError, InvariantViolation, Placement, World
from .core import (
    EVENT_KINDS,
    INITIAL_TAGGED_VALUE,
    INITIAL_TIMESTAMP,
    INITIAL_VALUE,
    Event,
    History,
    HistoryError,
    RegOpRecord,
    TaggedValue,
    Timestamp,
    Value,
    point_contention,
    precedes,
    read_trace,
    serialize_history,
    validate_history,
    write_trace,
)
from .protocol import (
    AbdoOracle,
    BaselineClient,
    CasAbdClient,
    baseline_slots,
)
from .sim import (
    EnumerationResult,
    Scenario,
    Simulation,
    bundled_names,
    enumerate_interleavings,
    load_scenario,
    run_scenario,
    scenario_from_dict,
)
from .verify import (
    CHECK_FUNCTIONS,
    DEFAULT_CHECKS,
    CheckReport,
    CheckResult,
    HlOp,
    check_bounds,
    check_covering,
    check_decision_points,
    check_linearizable,
    check_resource,
    check_sw_safety,
    check_ts_uniqueness,
    exhaustive_check,
    obstruction_bound,
    project_hl,
    resource_consumption,
    run_checks,
)

__version__ = "0.1.0"

__all__ = [
    "AbdoOracle",
    "BaselineClient",
    "CHECK_FUNCTIONS",
    "CasAbdClient",
    "CheckReport",
    "CheckResult",
    "ConfigError",
    "DEFAULT_CHECKS",
    "EVENT_KINDS",
    "EnumerationResult",
    "Event",
    "History",
    "HistoryError",
    "HlOp",
    "INITIAL_TAGGED_VALUE",
    "INITIAL_TIMESTAMP",
    "INITIAL_VALUE",
    "InvariantViolation",
    "Placement",
    "RegOpRecord",
    "Scenario",
    "Simulation",
    "TaggedValue",
    "Timestamp",
    "Value",
    "World",
    "baseline_slots",
    "bundled_names",
    "check_bounds",
    "check_covering",
    "check_decision_points",
    "check_linearizable",
    "check_resource",
    "check_sw_safety",
    "check_ts_uniqueness",
    "enumerate_interleavings",
    "exhaustive_check",
    "load_scenario",
    "obstruction_bound",
    "point_contention",
    "precedes",
    "project_hl",
    "read_trace",
    "resource_consumption",
    "run_checks",
    "run_scenario",
    "scenario_from_dict",
    "serialize_history",
    "validate_history",
    "write_trace",
    "__version__",
]
