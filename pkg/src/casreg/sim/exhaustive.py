"""Exhaustive interleaving enumeration for tiny workloads.

Explores every scheduler choice from the initial state at one of two
granularities:

* "op" (the default): one action completes a whole base-object operation,
  so its effect on the object and the client's receipt of the result happen
  together.  Crashes reintroduce the split where it matters: a crash action
  branches over every sequence of still-pending operations on the crashing
  server's objects that take effect, unanswered, just before the server
  dies.  This is the usual atomicity reduction for protocol state spaces;
  it keeps every choice the adversary has over completion order, quorum
  membership, client step timing, and effect-without-response crashes.
* "step": effects and responses schedule independently, exactly as the
  policy-driven scheduler runs them.  This explores strictly more
  interleavings (clients can act on stale knowledge while their own effect
  is already visible to others) at a state-space cost that grows roughly
  quadratically in the number of in-flight operations; it is tractable only
  for single-digit operation counts.

Terminal states are those where every workload operation has returned.
Three things come out:

* the exact number of distinct maximal action sequences (interleavings)
  within the chosen granularity, up to the first all-returned point,
* the set of distinct external histories they produce, each of which is
  checked for linearizability,
* liveness: a state with no enabled action before all operations returned
  is a stuck run and fails the check, and so does a path that exceeds the
  depth bound (with at most f crashes every operation must finish).

The state graph is deduplicated on `Simulation.state_key`, which renames
in-flight operation ids to canonical ranks and excludes the step counter;
path counts are computed by dynamic programming over the resulting DAG, so
the interleaving count is exact even when it far exceeds the number of
states.  Because the key contains the external trace so far, merging never
conflates schedules that already produced different histories.

Only tiny scenarios are accepted.  The point is a complete oracle at small
scope, not a model checker for production workloads.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from itertools import permutations

from ..base import ConfigError
from ..verify import lin_failure_for_trace
from .scenario import Scenario
from .scheduler import Simulation

_MAX_ITEMS = 3
_MAX_CLIENTS = 3
_MAX_OBJECTS = 6

GRANULARITIES = ("op", "step")


@dataclass
class EnumerationResult:
    verdict: str  # "pass" | "fail" | "partial"
    states: int  # deduplicated states expanded
    interleavings: int  # distinct maximal action sequences
    histories: list[tuple]  # distinct external histories observed
    violations: list[dict] = field(default_factory=list)
    include_crashes: bool = False
    granularity: str = "op"
    depth_bound: int = 0
    max_depth: int = 0
    capped: bool = False  # state cap hit; counts are lower bounds
    depth_cutoffs: int = 0  # paths stopped at the depth bound

    @property
    def complete(self) -> bool:
        return not self.capped and self.depth_cutoffs == 0

    def summary(self) -> str:
        qual = "" if self.complete else " (incomplete)"
        return (
            f"verdict={self.verdict}{qual} granularity={self.granularity} "
            f"states={self.states} interleavings={self.interleavings} "
            f"histories={len(self.histories)} max_depth={self.max_depth} "
            f"violations={len(self.violations)}"
        )


def _validate_tiny(sc: Scenario, granularity: str) -> None:
    if granularity not in GRANULARITIES:
        raise ConfigError(
            f"unknown granularity {granularity!r}; pick one of {GRANULARITIES}"
        )
    items = sc.resolved_workload
    if len(items) > _MAX_ITEMS:
        raise ConfigError(
            f"enumeration accepts at most {_MAX_ITEMS} operations, "
            f"got {len(items)}"
        )
    if sc.k > _MAX_CLIENTS:
        raise ConfigError(
            f"enumeration accepts at most {_MAX_CLIENTS} clients, got {sc.k}"
        )
    if len(sc.placement.objects) > _MAX_OBJECTS:
        raise ConfigError(
            f"enumeration accepts at most {_MAX_OBJECTS} objects, "
            f"got {len(sc.placement.objects)}"
        )
    for it in items:
        if it.not_before_step > 1:
            raise ConfigError(
                "enumeration does not support not_before_step: state "
                "deduplication drops the step counter"
            )
    if sc.policy == "crash" and sc.adversary.get("schedule"):
        raise ConfigError(
            "enumeration cannot honor step-keyed crash schedules: state "
            "deduplication drops the step counter; use include_crashes "
            "to explore crashes at every point instead"
        )


def _crash_variants(sim: Simulation, srv: int) -> list[tuple]:
    """All crash schedules for one server: every ordered sequence of pending
    effects on its objects that lands, unanswered, right before the crash.

    The empty sequence is the plain crash.  Orders within one object are
    distinct schedules (each effect sees the previous one's state); orders
    across objects produce identical states that the memoization merges,
    but they are distinct schedules all the same and count as such.
    """
    pending: list[str] = []
    for obj in sim.world.servers[srv].objects:
        if sim.world.alive(obj):
            pending.extend(sim.pending_apply.get(obj, ()))
    variants: list[tuple] = []
    for r in range(len(pending) + 1):
        for seq in permutations(pending, r):
            variants.append(("crash-after", srv, seq))
    return variants


def children_actions(
    sim: Simulation, include_crashes: bool, fused: bool,
    expand_crashes: bool = False,
) -> list[tuple[tuple, int]]:
    """Every action the adversary may pick next at the given granularity,
    as (action, multiplicity) pairs.

    Multiplicity counts schedule variants that provably reach the same
    state: every ordered sequence of pending effects a crashing server
    absorbs before dying leaves nothing observable behind (the object and
    its unanswered ops die together), so one representative crash carries
    the count of all sequences.  `expand_crashes` lists every sequence
    explicitly instead; the reference path enumerator uses that to validate
    the shortcut.
    """
    if fused:
        acts: list[tuple[tuple, int]] = []
        for c in sorted(sim.clients):
            cl = sim.clients[c]
            if not cl.busy():
                idx = sim._next_item(c)
                if idx is not None and sim._invocable(idx):
                    acts.append((("invoke", c), 1))
            elif cl.ready():
                acts.append((("advance", c), 1))
        for obj in sorted(sim.pending_apply):
            if sim.world.alive(obj):
                for ll in sim.pending_apply[obj]:
                    acts.append((("complete", ll), 1))
    else:
        acts = [(a, 1) for a in sim.enabled_actions()]
    if include_crashes and len(sim.world.crashed_servers()) < sim.sc.f:
        for s in sim.sc.placement.servers:
            if sim.world.servers[s].crashed:
                continue
            if not fused:
                acts.append((("crash", s), 1))
            elif expand_crashes:
                acts.extend((v, 1) for v in _crash_variants(sim, s))
            else:
                m = sum(
                    len(sim.pending_apply.get(obj, ()))
                    for obj in sim.world.servers[s].objects
                    if sim.world.alive(obj)
                )
                # ordered sequences over an m-set, all lengths: sum of m!/(m-r)!
                mult = seqs = 1
                for r in range(1, m + 1):
                    seqs *= m - r + 1
                    mult += seqs
                acts.append((("crash-after", s, ()), mult))
    return acts


def execute_action(sim: Simulation, action: tuple) -> None:
    """Run one enumeration action, including the composite kinds the
    policy-driven scheduler never uses."""
    kind = action[0]
    if kind == "complete":
        sim._do_apply(action[1])
        sim._do_respond(action[1])
    elif kind == "crash-after":
        for ll in action[2]:
            sim._do_apply(ll)
        sim._do_crash(action[1])
    else:
        sim.execute(action)


def enumerate_interleavings(
    scenario: Scenario,
    include_crashes: bool = False,
    granularity: str = "op",
    depth_bound: int = 500,
    max_states: int = 2_000_000,
) -> EnumerationResult:
    """Explore every schedule of a tiny scenario at the chosen granularity.

    `include_crashes` additionally offers a crash of each alive server at
    every state, as long as fewer than f servers have crashed; each crash
    branches over the pending effects that land before the server dies.
    Verdicts: "pass" when the exploration is complete and every history
    linearizes and every path terminates; "fail" on a non-linearizable
    history or a stuck run; "partial" when the state cap or depth bound
    was hit first.
    """
    sc = scenario.materialize(scenario.seed)
    _validate_tiny(sc, granularity)
    root = Simulation(sc, record_events=False)

    memo: dict[tuple, tuple[int, bool]] = {}
    in_progress = object()
    final_histories: set[tuple] = set()
    violations: list[dict] = []
    stats = {"max_depth": 0, "capped": False, "cutoffs": 0, "stuck": 0}
    fused = granularity == "op"
    # interchangeable objects collapse into sorted record multisets; path
    # counts stay exact because relabeling maps schedules to schedules
    key_of = (
        Simulation.state_key_sym if root.objects_symmetric()
        else Simulation.state_key
    )

    def explore(sim: Simulation, depth: int) -> tuple[int, bool]:
        """Returns (path count, tainted).  Tainted subtrees hit the depth
        bound or the state cap somewhere, so their count is a lower bound."""
        if depth > stats["max_depth"]:
            stats["max_depth"] = depth
        if sim.all_returned():
            final_histories.add(sim.hl_trace)
            return 1, False
        key = key_of(sim)
        hit = memo.get(key)
        if hit is in_progress:
            raise AssertionError("state graph has a cycle; key is unsound")
        if hit is not None:
            return hit
        if stats["capped"] or len(memo) >= max_states:
            stats["capped"] = True
            return 0, True
        if depth >= depth_bound:
            stats["cutoffs"] += 1
            if stats["cutoffs"] == 1:
                violations.append(
                    {
                        "kind": "depth-exceeded",
                        "depth": depth,
                        "detail": (
                            "a schedule did not finish within the depth "
                            "bound; raise depth_bound"
                        ),
                    }
                )
            return 1, True
        acts = children_actions(sim, include_crashes, fused)
        if not acts:
            stats["stuck"] += 1
            if stats["stuck"] <= 3:
                violations.append(
                    {
                        "kind": "stuck",
                        "depth": depth,
                        "pending": sorted(
                            h for h, r in sim.hl_ops.items() if not r.returned
                        ),
                        "detail": "no enabled action before all ops returned",
                    }
                )
            final_histories.add(sim.hl_trace)
            return 1, False
        memo[key] = in_progress
        total = 0
        tainted = False
        last = len(acts) - 1
        for i, (a, mult) in enumerate(acts):
            # the last child consumes sim itself; single-action chains
            # therefore advance clone-free
            child = sim if i == last else sim.clone()
            execute_action(child, a)
            cnt, t = explore(child, depth + 1)
            total += mult * cnt
            tainted = tainted or t
        memo[key] = (total, tainted)
        return total, tainted

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, depth_bound * 4 + 1000))
    try:
        interleavings, _tainted = explore(root, 0)
    finally:
        sys.setrecursionlimit(old_limit)

    histories = sorted(final_histories)
    for trace in histories:
        failure = lin_failure_for_trace(trace)
        if failure is not None:
            violations.append(
                {
                    "kind": "non-linearizable",
                    "history": [list(e) for e in trace],
                    "detail": failure,
                }
            )

    hard_fail = any(
        v["kind"] in ("non-linearizable", "stuck") for v in violations
    )
    incomplete = stats["capped"] or stats["cutoffs"] > 0
    if hard_fail:
        verdict = "fail"
    elif incomplete:
        verdict = "partial"
    else:
        verdict = "pass"
    return EnumerationResult(
        verdict=verdict,
        states=len(memo),
        interleavings=interleavings,
        histories=histories,
        violations=violations,
        include_crashes=include_crashes,
        granularity=granularity,
        depth_bound=depth_bound,
        max_depth=stats["max_depth"],
        capped=stats["capped"],
        depth_cutoffs=stats["cutoffs"],
    )
