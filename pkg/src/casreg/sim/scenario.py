"""Scenario configuration: what to run, under which adversary, with which seed.

A scenario file is a JSON object with the fields of `Scenario`.  Everything
that influences a run is in the scenario plus the seed, so (scenario, seed)
fully determines the trace bytes.  Random workloads are materialized from
the seed before the run starts and the resolved form is embedded in the
trace meta line, which keeps traces self-describing.

Bundled scenarios ship as package data; `bundled_path(name)` resolves them
and the CLI accepts `builtin:<name>` wherever a scenario path is expected.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..base import ConfigError, Placement

ALGORITHMS = ("cas-abd", "baseline-rw")
POLICIES = ("random", "crash", "covering")

_WORKLOAD_SEED_SALT = 0x9E3779B97F4A7C15


@dataclass
class WorkloadItem:
    client: int
    op: str  # "write" | "read"
    value: str | None = None  # payload token for writes
    not_before_step: int = 0

    def to_json(self) -> dict:
        d: dict = {"client": self.client, "op": self.op}
        if self.value is not None:
            d["value"] = self.value
        if self.not_before_step:
            d["not_before_step"] = self.not_before_step
        return d


@dataclass
class Scenario:
    name: str
    algorithm: str
    n: int  # servers
    f: int  # crash tolerance
    k: int  # clients issuing operations (baseline: writers; +1 reader)
    placement: Placement
    workload_spec: dict
    adversary: dict
    seed: int = 0
    step_budget: int = 20_000
    fairness_bound: int | None = None  # None -> default 4*n*k
    beyond_tolerance: bool = False
    reader: int | None = None  # baseline designated reader, default k
    resolved_workload: list[WorkloadItem] = field(default_factory=list)

    # --- derived ---------------------------------------------------------------

    @property
    def policy(self) -> str:
        return self.adversary.get("policy", "random")

    def effective_fairness_bound(self) -> int | None:
        if self.fairness_bound is not None:
            return self.fairness_bound
        return 4 * self.n * max(self.k, 1)

    def sequential(self) -> bool:
        return bool(self.workload_spec.get("sequential", False))

    # --- workload materialization ---------------------------------------------

    def materialize(self, seed: int) -> "Scenario":
        """Return a copy with `seed` set and the workload resolved to an
        explicit operation list."""
        sc = Scenario(
            name=self.name,
            algorithm=self.algorithm,
            n=self.n,
            f=self.f,
            k=self.k,
            placement=self.placement,
            workload_spec=self.workload_spec,
            adversary=self.adversary,
            seed=seed,
            step_budget=self.step_budget,
            fairness_bound=self.fairness_bound,
            beyond_tolerance=self.beyond_tolerance,
            reader=self.reader,
        )
        kind = self.workload_spec.get("kind", "explicit")
        if kind == "explicit":
            items = []
            for i, d in enumerate(self.workload_spec.get("ops", [])):
                try:
                    items.append(
                        WorkloadItem(
                            client=d["client"],
                            op=d["op"],
                            value=d.get("value"),
                            not_before_step=d.get("not_before_step", 0),
                        )
                    )
                except KeyError as exc:
                    raise ConfigError(f"workload op {i}: missing field {exc}")
            sc.resolved_workload = items
        elif kind == "random":
            sc.resolved_workload = _random_workload(sc, seed)
        else:
            raise ConfigError(f"workload: unknown kind {kind!r}")
        _validate_workload(sc)
        return sc

    # --- serialization ----------------------------------------------------------

    def to_canonical_dict(self) -> dict:
        return {
            "name": self.name,
            "algorithm": self.algorithm,
            "n": self.n,
            "f": self.f,
            "k": self.k,
            "placement": {
                "pairs": [[o, s] for o, s in sorted(self.placement.mapping.items())],
                "capacity": self.placement.capacity,
            },
            "workload": [it.to_json() for it in self.resolved_workload],
            "sequential": self.sequential(),
            "adversary": self.adversary,
            "seed": self.seed,
            "step_budget": self.step_budget,
            "fairness_bound": self.effective_fairness_bound()
            if self.policy in ("random", "crash")
            else None,
            "beyond_tolerance": self.beyond_tolerance,
            "reader": self.effective_reader() if self.algorithm == "baseline-rw" else None,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_canonical_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def effective_reader(self) -> int:
        return self.k if self.reader is None else self.reader


# ---------------------------------------------------------------------------
# Random workloads
# ---------------------------------------------------------------------------


def _random_workload(sc: Scenario, seed: int) -> list[WorkloadItem]:
    if sc.algorithm != "cas-abd":
        raise ConfigError("random workloads are only defined for cas-abd")
    spec = sc.workload_spec
    max_ops = int(spec.get("max_ops", 8))
    read_fraction = float(spec.get("read_fraction", 0.5))
    if max_ops < 1:
        raise ConfigError("workload: max_ops must be >= 1")
    rng = random.Random((seed * _WORKLOAD_SEED_SALT + 1) % 2**64)
    total = rng.randint(min(2, max_ops), max_ops)
    items: list[WorkloadItem] = []
    for i in range(total):
        client = i % sc.k if i < sc.k else rng.randrange(sc.k)
        if rng.random() < read_fraction:
            items.append(WorkloadItem(client=client, op="read"))
        else:
            items.append(WorkloadItem(client=client, op="write", value=f"w{i}"))
    return items


def _validate_workload(sc: Scenario) -> None:
    for i, it in enumerate(sc.resolved_workload):
        if it.op not in ("write", "read"):
            raise ConfigError(f"workload op {i}: unknown op {it.op!r}")
        if it.op == "write" and it.value is None:
            raise ConfigError(f"workload op {i}: write without value")
        max_client = sc.k if sc.algorithm == "baseline-rw" else sc.k - 1
        if not 0 <= it.client <= max_client:
            raise ConfigError(f"workload op {i}: client {it.client} out of range")
        if it.not_before_step < 0:
            raise ConfigError(f"workload op {i}: negative step constraint")
    if sc.algorithm == "baseline-rw":
        reader = sc.effective_reader()
        for i, it in enumerate(sc.resolved_workload):
            if it.op == "read" and it.client != reader:
                raise ConfigError(
                    f"workload op {i}: only the designated reader "
                    f"(client {reader}) may read under baseline-rw"
                )
            if it.op == "write" and it.client >= sc.k:
                raise ConfigError(f"workload op {i}: client {it.client} is not a writer")


# ---------------------------------------------------------------------------
# Scenario parsing and validation
# ---------------------------------------------------------------------------


def _placement_from_config(cfg, n: int) -> Placement:
    if isinstance(cfg, dict) and "one_object_per_server" in cfg:
        cnt = cfg["one_object_per_server"]
        if cnt != n:
            raise ConfigError(
                f"placement: one_object_per_server={cnt} but scenario has n={n}"
            )
        return Placement.one_object_per_server(cnt)
    if isinstance(cfg, dict) and "pairs" in cfg:
        mapping = {}
        for pair in cfg["pairs"]:
            if len(pair) != 2:
                raise ConfigError(f"placement: malformed pair {pair!r}")
            obj, srv = pair
            if obj in mapping:
                raise ConfigError(f"placement: duplicate object {obj}")
            if not 0 <= srv < n:
                raise ConfigError(f"placement: server {srv} out of range 0..{n - 1}")
            mapping[obj] = srv
        return Placement(mapping, capacity=cfg.get("capacity"))
    raise ConfigError(
        "placement: expected {'one_object_per_server': n} or {'pairs': [[obj, server], ...]}"
    )


def scenario_from_dict(d: dict, name: str = "<dict>") -> Scenario:
    if not isinstance(d, dict):
        raise ConfigError("scenario: top level must be a JSON object")

    def need(field: str):
        if field not in d:
            raise ConfigError(f"scenario field {field!r}: missing")
        return d[field]

    algorithm = need("algorithm")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"scenario field 'algorithm': unknown value {algorithm!r}")
    n = int(need("n"))
    f = int(need("f"))
    k = int(need("k"))
    if n < 1:
        raise ConfigError("scenario field 'n': need at least one server")
    if f < 0:
        raise ConfigError("scenario field 'f': must be >= 0")
    if k < 1:
        raise ConfigError("scenario field 'k': need at least one client")
    placement = _placement_from_config(need("placement"), n)

    workload = need("workload")
    if not isinstance(workload, dict):
        raise ConfigError("scenario field 'workload': must be an object")
    adversary = d.get("adversary", {"policy": "random"})
    if not isinstance(adversary, dict):
        raise ConfigError("scenario field 'adversary': must be an object")
    policy = adversary.get("policy", "random")
    if policy not in POLICIES:
        raise ConfigError(f"adversary policy: unknown value {policy!r}")

    fairness = d.get("fairness_bound")
    if fairness is not None:
        if fairness in ("inf", "unbounded", 0):
            if policy in ("random", "crash"):
                raise ConfigError(
                    "fairness_bound: unbounded delays are not allowed in fair mode"
                )
            fairness = None
        else:
            fairness = int(fairness)
            if fairness < 1:
                raise ConfigError("fairness_bound: must be >= 1")

    sc = Scenario(
        name=d.get("name", name),
        algorithm=algorithm,
        n=n,
        f=f,
        k=k,
        placement=placement,
        workload_spec=workload,
        adversary=adversary,
        seed=int(d.get("seed", 0)),
        step_budget=int(d.get("step_budget", 20_000)),
        fairness_bound=fairness,
        beyond_tolerance=bool(d.get("beyond_tolerance", False)),
        reader=d.get("reader"),
    )
    _validate_scenario(sc)
    return sc


def _validate_scenario(sc: Scenario) -> None:
    if sc.step_budget < 1:
        raise ConfigError("step_budget: must be >= 1")
    objs = sc.placement.objects

    if sc.algorithm == "cas-abd":
        if sc.n <= 2 * sc.f:
            raise ConfigError(
                f"cas-abd requires n > 2f (got n={sc.n}, f={sc.f})"
            )
        if len(objs) != sc.n:
            raise ConfigError(
                f"cas-abd uses one object per server (expected {sc.n} objects, "
                f"placement has {len(objs)})"
            )
        servers_used = {sc.placement.server_of(o) for o in objs}
        if len(servers_used) != len(objs):
            raise ConfigError("cas-abd placement must put objects on distinct servers")
    else:
        width = 2 * sc.f + 1
        if len(objs) < sc.k * width:
            raise ConfigError(
                f"baseline-rw needs k*(2f+1) = {sc.k * width} objects, "
                f"placement has {len(objs)}"
            )
        for c in range(sc.k):
            slot = objs[c * width : (c + 1) * width]
            servers = {sc.placement.server_of(o) for o in slot}
            if len(servers) != width:
                raise ConfigError(
                    f"baseline-rw slot for writer {c} must span {width} distinct servers"
                )

    policy = sc.policy
    params = sc.adversary
    if policy == "crash":
        schedule = params.get("schedule")
        if not isinstance(schedule, list) or not schedule:
            raise ConfigError("crash policy: needs a non-empty 'schedule' of [step, server]")
        seen: set[int] = set()
        for entry in schedule:
            if len(entry) != 2:
                raise ConfigError(f"crash schedule: malformed entry {entry!r}")
            step, srv = entry
            if not 0 <= srv < sc.n:
                raise ConfigError(f"crash schedule: server {srv} out of range")
            if srv in seen:
                raise ConfigError(f"crash schedule: server {srv} crashed twice")
            seen.add(srv)
            if not 0 <= step <= sc.step_budget:
                raise ConfigError(
                    f"crash schedule: step {step} outside budget {sc.step_budget}"
                )
        if len(seen) > sc.f and not sc.beyond_tolerance:
            raise ConfigError(
                f"crash schedule: {len(seen)} crashes exceed f={sc.f}; "
                "set beyond_tolerance to allow"
            )
    elif policy == "covering":
        if sc.algorithm != "baseline-rw":
            raise ConfigError(
                "covering policy targets plain-register algorithms; "
                "CAS-backed emulations are rejected"
            )
        F = params.get("F")
        if not isinstance(F, list) or len(set(F)) != len(F):
            raise ConfigError("covering policy: needs 'F', a list of distinct servers")
        if len(F) != sc.f:
            raise ConfigError(f"covering policy: |F| must equal f={sc.f}")
        for srv in F:
            if not 0 <= srv < sc.n:
                raise ConfigError(f"covering policy: server {srv} out of range")
        if not sc.sequential():
            raise ConfigError("covering policy: workload must be sequential")


def load_scenario(path: str) -> Scenario:
    """Load a scenario from a JSON file or a `builtin:<name>` reference."""
    if path.startswith("builtin:"):
        real = bundled_path(path[len("builtin:") :])
    else:
        real = Path(path)
    if not real.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        d = json.loads(real.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"scenario {path}: invalid JSON at line {exc.lineno} col {exc.colno}: {exc.msg}"
        )
    return scenario_from_dict(d, name=real.stem)


def bundled_path(name: str) -> Path:
    base = resources.files("casreg") / "scenarios"
    p = Path(str(base / f"{name}.json"))
    if not p.exists():
        known = sorted(q.stem for q in Path(str(base)).glob("*.json"))
        raise ConfigError(
            f"unknown builtin scenario {name!r}; available: {', '.join(known)}"
        )
    return p


def bundled_names() -> list[str]:
    base = Path(str(resources.files("casreg") / "scenarios"))
    return sorted(p.stem for p in base.glob("*.json"))
