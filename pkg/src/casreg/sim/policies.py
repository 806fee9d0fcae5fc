"""Adversary policies: who gets scheduled next.

* `RandomPolicy`: seeded pseudo-random choice among enabled actions, with a
  fairness bound D: an enabled action passed over D times in a row is chosen
  next (oldest first).  D=1 behaves almost synchronously; unbounded D is not
  allowed in fair mode.
* `CrashPolicy`: RandomPolicy plus a static crash schedule [(step, server)];
  a due crash takes priority over everything else.
* `CoveringPolicy`: the coverage-growing adversary for plain-register
  emulations.  It drives a sequential write-only workload one write per
  epoch and refuses to apply two families of low-level writes: writes by
  clients whose high-level write already finished in an earlier epoch, and
  writes on the registers of Q, the first f servers outside the protected
  set F that became covered in the current epoch.  The epoch's writer still
  returns (its slot spans 2f+1 servers, so f+1 acks remain reachable), and
  each epoch strands f more covered registers whose servers avoid F.  The
  per-epoch account ends up in the trace meta, and `measure_cov` can
  recompute coverage from the events alone.

The blocked-set bookkeeping lives in `CoveringBookkeeping`, driven purely by
public events, so the offline conformance checker replays the same rules
against a finished trace.
"""

from __future__ import annotations

import random

from ..base import ConfigError, InvariantViolation, Placement
from ..core import Event, History
from .scenario import Scenario

_PRIORITY = {"respond": 0, "apply": 1, "advance": 2, "invoke": 3, "crash": 4}


# ---------------------------------------------------------------------------
# random
# ---------------------------------------------------------------------------


class RandomPolicy:
    fair = True

    def __init__(
        self,
        seed: int,
        fairness_bound: int,
        weights: dict[str, float] | None = None,
    ) -> None:
        if fairness_bound is None or fairness_bound < 1:
            raise ConfigError("random policy: fairness bound must be >= 1")
        self.rng = random.Random(seed)
        self.bound = fairness_bound
        self.weights = weights
        self._ages: dict[tuple, int] = {}

    def on_event(self, e: Event) -> None:
        pass

    def report(self) -> dict | None:
        return None

    def choose(self, sim, enabled: list[tuple]) -> tuple:
        ages = self._ages
        overdue: list[tuple[int, int, tuple]] = []
        for i, a in enumerate(enabled):
            age = ages.get(a, 0)
            if age >= self.bound and a[0] != "crash":
                overdue.append((-age, i, a))
        if overdue:
            choice = min(overdue)[2]
        elif self.weights:
            cats = sorted({a[0] for a in enabled})
            wts = [self.weights.get(c, 1.0) for c in cats]
            cat = self.rng.choices(cats, weights=wts, k=1)[0]
            pool = [a for a in enabled if a[0] == cat]
            choice = pool[self.rng.randrange(len(pool))]
        else:
            choice = enabled[self.rng.randrange(len(enabled))]
        live = set(enabled)
        for a in enabled:
            ages[a] = ages.get(a, 0) + 1
        for a in list(ages):
            if a not in live or a == choice:
                del ages[a]
        return choice


# ---------------------------------------------------------------------------
# crash schedule
# ---------------------------------------------------------------------------


class CrashPolicy(RandomPolicy):
    """Random scheduling, except that a due server crash happens first."""

    def choose(self, sim, enabled: list[tuple]) -> tuple:
        crashes = [a for a in enabled if a[0] == "crash"]
        if crashes:
            return crashes[0]
        return super().choose(sim, enabled)

    def report(self) -> dict | None:
        return None


# ---------------------------------------------------------------------------
# covering adversary
# ---------------------------------------------------------------------------


class CoveringBookkeeping:
    """Event-driven account of covered registers and the blocked rules.

    Maintained per event, because coverage changes at trigger granularity:
    Q grows while the newly covered servers outside F still number at most
    f, then freezes for the rest of the epoch.  Q never shrinks within an
    epoch; the bookkeeping asserts that.
    """

    def __init__(self, placement: Placement, F: list[int], f: int) -> None:
        self.placement = placement
        self.F = frozenset(F)
        self.f = f
        self.completed_writers: set[int] = set()
        self.cov_at_epoch_start: frozenset[int] = frozenset()
        self.pending: dict[int, set[str]] = {}  # obj -> pending write ll ids
        self.writer_of: dict[str, int] = {}  # ll id -> client
        self.Q: frozenset[int] = frozenset()

    def covered_now(self) -> set[int]:
        return {obj for obj, lls in self.pending.items() if lls}

    def observe(self, e: Event) -> None:
        if e.kind == "ll-trigger" and e.payload.get("action") == "write":
            obj = e.payload["obj"]
            self.pending.setdefault(obj, set()).add(e.op)
            self.writer_of[e.op] = int(e.actor[1:])
        elif e.kind == "ll-apply" and e.payload.get("action") == "write":
            obj = e.payload["obj"]
            self.pending.get(obj, set()).discard(e.op)
        elif e.kind == "server-crash":
            for obj in e.payload.get("objects", []):
                self.pending.pop(obj, None)
        else:
            return
        cov_new = self.covered_now() - self.cov_at_epoch_start
        d = {self.placement.server_of(o) for o in cov_new} - self.F
        if len(d) <= self.f:
            if not self.Q <= d:
                raise InvariantViolation(
                    f"covering: Q shrank within an epoch ({sorted(self.Q)} -> {sorted(d)})"
                )
            self.Q = frozenset(d)

    def blocked(self, ll_id: str, obj: int) -> bool:
        if self.writer_of.get(ll_id) in self.completed_writers:
            return True
        return self.placement.server_of(obj) in self.Q

    def close_epoch(self, writer: int) -> None:
        self.completed_writers.add(writer)
        self.cov_at_epoch_start = frozenset(self.covered_now())
        self.Q = frozenset()


class CoveringPolicy:
    fair = False

    def __init__(self, scenario: Scenario) -> None:
        F = scenario.adversary["F"]
        self.book = CoveringBookkeeping(scenario.placement, F, scenario.f)
        self.F = sorted(F)
        self.epoch = 0
        self.epoch_writer: int | None = None
        self.release_mode = False
        self.epochs: list[dict] = []
        self.last_step = 0

    def on_event(self, e: Event) -> None:
        self.book.observe(e)
        self.last_step = e.step
        if e.kind == "hl-invoke":
            self.epoch += 1
            self.epoch_writer = int(e.actor[1:])
        elif e.kind == "hl-return":
            self.release_mode = True

    def report(self) -> dict:
        return {"policy": "covering", "F": self.F, "epochs": self.epochs}

    def choose(self, sim, enabled: list[tuple]):
        responds = []
        applies = []
        advances = []
        invokes = []
        for a in enabled:
            kind = a[0]
            if kind == "respond":
                responds.append(a)
            elif kind == "apply":
                op = sim.ll_ops[a[1]]
                if op.action == "reg-write" and self.book.blocked(op.id, op.obj):
                    continue
                applies.append(a)
            elif kind == "advance":
                advances.append(a)
            elif kind == "invoke":
                invokes.append(a)
        if responds:
            return responds[0]
        if applies:
            return applies[0]
        if advances:
            return advances[0]
        # Nothing left but blocked applies and possibly the next invoke:
        # the epoch's release phase is complete.  Record the boundary, then
        # let the next writer in.
        if self.release_mode:
            self._close_epoch(sim)
        if invokes:
            return invokes[0]
        return None

    def _close_epoch(self, sim) -> None:
        cov = sorted(self.book.covered_now())
        self.epochs.append(
            {
                "epoch": self.epoch,
                "writer": self.epoch_writer,
                "end_step": self.last_step,
                "cov": cov,
                "cov_size": len(cov),
                "Q": sorted(self.book.Q),
            }
        )
        self.book.close_epoch(self.epoch_writer)
        self.release_mode = False


# ---------------------------------------------------------------------------
# coverage measurement from a finished history
# ---------------------------------------------------------------------------


def measure_cov(h: History, step: int) -> set[int]:
    """Registers covered at `step`: a plain write was triggered on them at or
    before `step`, not yet applied, and the object has not crashed."""
    pending: dict[int, set[str]] = {}
    for e in h.events:
        if e.step > step:
            break
        if e.kind == "ll-trigger" and e.payload.get("action") == "write":
            pending.setdefault(e.payload["obj"], set()).add(e.op)
        elif e.kind == "ll-apply" and e.payload.get("action") == "write":
            pending.get(e.payload["obj"], set()).discard(e.op)
        elif e.kind == "server-crash":
            for obj in e.payload.get("objects", []):
                pending.pop(obj, None)
    return {obj for obj, lls in pending.items() if lls}


# ---------------------------------------------------------------------------
# policy construction and the one-call run helper
# ---------------------------------------------------------------------------


def build_policy(scenario: Scenario):
    policy = scenario.policy
    params = scenario.adversary
    if policy == "random":
        return RandomPolicy(
            scenario.seed,
            scenario.effective_fairness_bound(),
            params.get("weights"),
        )
    if policy == "crash":
        return CrashPolicy(
            scenario.seed,
            scenario.effective_fairness_bound(),
            params.get("weights"),
        )
    if policy == "covering":
        return CoveringPolicy(scenario)
    raise ConfigError(f"unknown adversary policy {policy!r}")


def run_scenario(scenario: Scenario, seed: int | None = None) -> History:
    """Materialize (if needed), attach the configured policy, run, return
    the history.  (scenario, seed) determines the result bit for bit."""
    from .scheduler import Simulation

    sc = scenario.materialize(scenario.seed if seed is None else seed)
    sim = Simulation(sc)
    sim.policy = build_policy(sc)
    return sim.run()
