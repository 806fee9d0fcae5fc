"""Deterministic event-loop scheduler.

One run is a loop: compute the set of enabled actions, ask the adversary
policy to pick one, execute it.  Actions are:

* ("invoke", c)   client c starts its next workload operation
* ("advance", c)  client c performs its ripe local transitions (finish a
                  round, issue retry CASes, return)
* ("apply", ll)   a triggered low-level operation takes effect on its object
* ("respond", ll) an applied low-level operation's result reaches its client
* ("crash", s)    server s crashes (only under a crash schedule or the
                  exhaustive enumerator)

Executing one action can emit several events (an invoke emits the hl-invoke
plus one trigger per object); each event occupies its own strictly
increasing step, so the trace remains a serialized interleaving.  Client
local decisions that emit no event (the update guard) still consume a step;
those step numbers appear only in the side table.

The policy sees pending sets and public events, never client private state.
Identifiers are client-scoped ("l2.5" is client 2's fifth trigger), which
makes them independent of how actions interleave; the exhaustive enumerator
relies on that for state deduplication.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..base import ConfigError, World
from ..core import (
    Event,
    History,
    RegOpRecord,
    TaggedValue,
    Timestamp,
    Value,
    client_actor,
    server_actor,
    tv_to_json,
)
from ..protocol import BaselineClient, CasAbdClient, baseline_slots, cas_ll_slot
from .scenario import Scenario

Action = tuple


@dataclass(slots=True)
class LLOp:
    id: str
    seq: int  # per-client issue counter; rank source for key canonicalization
    client: int
    hl: str
    regop: str
    phase: str  # "collect" | "update" | "" for plain register ops
    obj: int
    action: str  # "cas" | "reg-write" | "reg-read"
    exp: TaggedValue | None = None
    new: TaggedValue | None = None
    tv: TaggedValue | None = None
    applied: bool = False
    apply_step: int = -1
    result: object = None
    swapped: bool = False
    responded: bool = False

    def copy(self) -> "LLOp":
        # hand-rolled: copy.copy on a slots dataclass goes through
        # __reduce_ex__ and is ~10x slower, and clone() is the hot path
        # of the exhaustive search
        new = LLOp.__new__(LLOp)
        new.id = self.id
        new.seq = self.seq
        new.client = self.client
        new.hl = self.hl
        new.regop = self.regop
        new.phase = self.phase
        new.obj = self.obj
        new.action = self.action
        new.exp = self.exp
        new.new = self.new
        new.tv = self.tv
        new.applied = self.applied
        new.apply_step = self.apply_step
        new.result = self.result
        new.swapped = self.swapped
        new.responded = self.responded
        return new


@dataclass(slots=True)
class HlRecord:
    id: str
    client: int
    kind: str
    item_index: int
    value: Value | None
    returned: bool = False

    def copy(self) -> "HlRecord":
        new = HlRecord.__new__(HlRecord)
        new.id = self.id
        new.client = self.client
        new.kind = self.kind
        new.item_index = self.item_index
        new.value = self.value
        new.returned = self.returned
        return new


class Simulation:
    """Mutable state of one run plus the driver API protocol clients use."""

    def __init__(self, scenario: Scenario, record_events: bool = True) -> None:
        if not scenario.resolved_workload and scenario.workload_spec.get("ops"):
            raise ConfigError("scenario must be materialized before simulation")
        self.sc = scenario
        self.record_events = record_events
        kind = "cas" if scenario.algorithm == "cas-abd" else "register"
        self.world = World(
            scenario.placement,
            kind,
            f=scenario.f,
            beyond_tolerance=scenario.beyond_tolerance,
        )
        self.next_step = 1
        self.events: list[Event] = []
        # a tuple, extended by replacement: it changes rarely (only on
        # invoke and return) and clones then share it for free
        self.hl_trace: tuple[tuple, ...] = ()
        self.ll_ops: dict[str, LLOp] = {}
        self.hl_ops: dict[str, HlRecord] = {}
        self.reg_ops: list[RegOpRecord] = []
        self.pending_apply: dict[int, list[str]] = {}
        self.pending_respond: dict[str, None] = {}
        self._cseq: dict[int, int] = {}
        self._aseq: dict[int, int] = {}
        self._hseq: dict[int, int] = {}
        self.items = list(scenario.resolved_workload)
        # also a replaced tuple, for the same sharing reason
        self.item_state = ("todo",) * len(self.items)  # todo | active | done
        self.queues: dict[int, list[int]] = {}
        for i, it in enumerate(self.items):
            self.queues.setdefault(it.client, []).append(i)
        self.returned_items = 0
        self.crash_schedule: list[list] = list(
            scenario.adversary.get("schedule", [])
        ) if scenario.policy == "crash" else []
        self.crashes_done: set[int] = set()
        self.clients: dict[int, CasAbdClient | BaselineClient] = {}
        objs = scenario.placement.objects
        if scenario.algorithm == "cas-abd":
            for c in range(scenario.k):
                self.clients[c] = CasAbdClient(self, c, objs, scenario.f)
        else:
            slots = baseline_slots(scenario.k, scenario.f, objs)
            reader = scenario.effective_reader()
            ids = sorted(set(range(scenario.k)) | {reader})
            for c in ids:
                self.clients[c] = BaselineClient(self, c, slots, scenario.f, reader)
        self.policy = None  # attached by run_scenario; None for the enumerator

    # ------------------------------------------------------------------
    # step and event plumbing
    # ------------------------------------------------------------------

    def _alloc_step(self) -> int:
        s = self.next_step
        self.next_step += 1
        return s

    def _emit(self, kind: str, actor: str, op: str, payload: dict) -> None:
        e = Event(self._alloc_step(), kind, actor, op, payload)
        if self.record_events:
            self.events.append(e)
        if kind == "hl-invoke":
            p = payload.get("value")
            self.hl_trace = self.hl_trace + (
                ("inv", actor, payload["op"], tuple(p) if p else None),
            )
        elif kind == "hl-return":
            r = payload.get("result")
            self.hl_trace = self.hl_trace + (
                ("ret", actor, payload["op"], tuple(r) if isinstance(r, list) else r),
            )
        if self.policy is not None:
            self.policy.on_event(e)

    def _quiet(self) -> bool:
        """Nobody is watching low-level events: skip payload building, keep
        the step allocation so numbering matches a recorded run."""
        return not self.record_events and self.policy is None

    # ------------------------------------------------------------------
    # driver API (called by protocol clients)
    # ------------------------------------------------------------------

    def _next_ll_id(self, client: int) -> tuple[str, int]:
        seq = self._cseq.get(client, 0) + 1
        self._cseq[client] = seq
        return f"l{client}.{seq}", seq

    def trigger_cas(
        self, client: int, hl: str, regop: str, phase: str,
        obj: int, exp: TaggedValue, new: TaggedValue,
    ) -> str:
        ll, seq = self._next_ll_id(client)
        self.ll_ops[ll] = LLOp(
            id=ll, seq=seq, client=client, hl=hl, regop=regop, phase=phase,
            obj=obj, action="cas", exp=exp, new=new,
        )
        self.pending_apply.setdefault(obj, []).append(ll)
        if self._quiet():
            self._alloc_step()
        else:
            self._emit(
                "ll-trigger", client_actor(client), ll,
                {
                    "obj": obj, "action": "cas", "phase": phase,
                    "exp": tv_to_json(exp), "new": tv_to_json(new),
                    "hl": hl, "regop": regop,
                },
            )
        return ll

    def trigger_reg_write(self, client: int, hl: str, obj: int, tv: TaggedValue) -> str:
        ll, seq = self._next_ll_id(client)
        self.ll_ops[ll] = LLOp(
            id=ll, seq=seq, client=client, hl=hl, regop="", phase="",
            obj=obj, action="reg-write", tv=tv,
        )
        self.world.register_trigger_write(obj, ll, tv)
        self.pending_apply.setdefault(obj, []).append(ll)
        self._emit(
            "ll-trigger", client_actor(client), ll,
            {"obj": obj, "action": "write", "tv": tv_to_json(tv), "hl": hl},
        )
        return ll

    def trigger_reg_read(self, client: int, hl: str, obj: int) -> str:
        ll, seq = self._next_ll_id(client)
        self.ll_ops[ll] = LLOp(
            id=ll, seq=seq, client=client, hl=hl, regop="", phase="",
            obj=obj, action="reg-read",
        )
        self.pending_apply.setdefault(obj, []).append(ll)
        self._emit(
            "ll-trigger", client_actor(client), ll,
            {"obj": obj, "action": "read", "hl": hl},
        )
        return ll

    def local_step(self) -> int:
        return self._alloc_step()

    def new_regop(
        self, hl: str, client: int, obj: int, kind: str,
        t: Timestamp | None, value: Value | None,
    ) -> RegOpRecord:
        seq = self._aseq.get(client, 0) + 1
        self._aseq[client] = seq
        rec = RegOpRecord(
            id=f"a{client}.{seq}", hl=hl, client=client, obj=obj,
            kind=kind, t=t, value=value, start_step=self.next_step,
        )
        self.reg_ops.append(rec)
        return rec

    def _set_item_state(self, idx: int, state: str) -> None:
        st = list(self.item_state)
        st[idx] = state
        self.item_state = tuple(st)

    def hl_return(self, client: int, hl: str, payload: dict) -> None:
        rec = self.hl_ops[hl]
        rec.returned = True
        self._set_item_state(rec.item_index, "done")
        self.returned_items += 1
        self._emit("hl-return", client_actor(client), hl, payload)

    # ------------------------------------------------------------------
    # enabled actions
    # ------------------------------------------------------------------

    def _next_item(self, client: int) -> int | None:
        for idx in self.queues.get(client, ()):
            if self.item_state[idx] == "todo":
                return idx
            if self.item_state[idx] == "active":
                return None
        return None

    def _invocable(self, idx: int) -> bool:
        item = self.items[idx]
        if self.next_step < item.not_before_step:
            return False
        if self.sc.sequential():
            if any(self.item_state[j] != "done" for j in range(idx)):
                return False
        return True

    def enabled_actions(self) -> list[Action]:
        acts: list[Action] = []
        for c in sorted(self.clients):
            cl = self.clients[c]
            if not cl.busy():
                idx = self._next_item(c)
                if idx is not None and self._invocable(idx):
                    acts.append(("invoke", c))
            elif cl.ready():
                acts.append(("advance", c))
        for obj in sorted(self.pending_apply):
            if self.world.alive(obj):
                for ll in self.pending_apply[obj]:
                    acts.append(("apply", ll))
        for ll in self.pending_respond:
            if self.world.alive(self.ll_ops[ll].obj):
                acts.append(("respond", ll))
        for step, srv in self.crash_schedule:
            if srv not in self.crashes_done and self.next_step >= step:
                if not self.world.servers[srv].crashed:
                    acts.append(("crash", srv))
        return acts

    # ------------------------------------------------------------------
    # action execution
    # ------------------------------------------------------------------

    def execute(self, action: Action) -> None:
        kind = action[0]
        if kind == "invoke":
            self._do_invoke(action[1])
        elif kind == "advance":
            self.clients[action[1]].advance()
        elif kind == "apply":
            self._do_apply(action[1])
        elif kind == "respond":
            self._do_respond(action[1])
        elif kind == "crash":
            self._do_crash(action[1])
        else:
            raise ConfigError(f"unknown action {action!r}")

    def _do_invoke(self, client: int) -> None:
        idx = self._next_item(client)
        assert idx is not None and self._invocable(idx)
        item = self.items[idx]
        hseq = self._hseq.get(client, 0)
        self._hseq[client] = hseq + 1
        hl = f"h{client}.{hseq}"
        value = None
        payload: dict = {"op": item.op}
        if item.op == "write":
            value = Value(item.value, client, idx + 1)
            payload["value"] = [value.payload, value.writer, value.seq]
        self.hl_ops[hl] = HlRecord(
            id=hl, client=client, kind=item.op, item_index=idx, value=value
        )
        self._set_item_state(idx, "active")
        self._emit("hl-invoke", client_actor(client), hl, payload)
        self.clients[client].begin(hl, item.op, value)

    def _do_apply(self, ll_id: str) -> None:
        # mutate a private copy: clones share low-level op entries, so the
        # stored object must never change in place
        op = self.ll_ops[ll_id].copy()
        self.ll_ops[ll_id] = op
        self.pending_apply[op.obj].remove(ll_id)
        quiet = self._quiet()
        payload: dict | None = None
        if op.action == "cas":
            prev, swapped = self.world.cas_apply(op.obj, op.exp, op.new)
            op.result = (prev, swapped)
            op.swapped = swapped
            if not quiet:
                payload = {
                    "obj": op.obj, "action": "cas", "phase": op.phase,
                    "prev": tv_to_json(prev), "swapped": swapped,
                    "state": tv_to_json(self.world.state_of(op.obj)),
                    "hl": op.hl, "regop": op.regop,
                }
        elif op.action == "reg-write":
            tv = self.world.register_apply_write(op.obj, ll_id)
            op.result = "ack"
            if not quiet:
                payload = {
                    "obj": op.obj, "action": "write",
                    "state": tv_to_json(tv), "hl": op.hl,
                }
        else:
            tv = self.world.register_read(op.obj)
            op.result = tv
            if not quiet:
                payload = {
                    "obj": op.obj, "action": "read",
                    "result": tv_to_json(tv), "hl": op.hl,
                }
        op.applied = True
        op.apply_step = self.next_step
        if quiet:
            self._alloc_step()
        else:
            srv = self.sc.placement.server_of(op.obj)
            self._emit("ll-apply", server_actor(srv), ll_id, payload)
        self.pending_respond[ll_id] = None

    def _do_respond(self, ll_id: str) -> None:
        op = self.ll_ops[ll_id].copy()
        self.ll_ops[ll_id] = op
        del self.pending_respond[ll_id]
        op.responded = True
        if self._quiet():
            self._alloc_step()
        else:
            if op.action == "cas":
                prev, swapped = op.result
                payload = {
                    "obj": op.obj,
                    "result": {"prev": tv_to_json(prev), "swapped": swapped},
                    "hl": op.hl,
                }
            elif op.action == "reg-write":
                payload = {"obj": op.obj, "result": "ack", "hl": op.hl}
            else:
                payload = {"obj": op.obj, "result": tv_to_json(op.result), "hl": op.hl}
            self._emit("ll-respond", client_actor(op.client), ll_id, payload)
        self.clients[op.client].on_response(ll_id, op.result)

    def _do_crash(self, srv: int) -> None:
        objs = self.world.crash_server(srv)
        self.crashes_done.add(srv)
        self._emit("server-crash", server_actor(srv), "", {"objects": sorted(objs)})

    # ------------------------------------------------------------------
    # state-space search support
    # ------------------------------------------------------------------

    def clone(self) -> Simulation:
        """Copy for exhaustive search.  The copy shares everything immutable
        (scenario, workload, queues) and owns all mutable state.  Trace
        bookkeeping is not preserved: clones record no events and no
        per-object records, so extract histories from policy-driven runs,
        never from clones."""
        new = object.__new__(Simulation)
        new.sc = self.sc
        new.record_events = False
        new.world = self.world.clone()
        new.next_step = self.next_step
        new.events = []
        new.hl_trace = self.hl_trace
        # low-level op entries are shared: every mutation goes through a
        # private copy (see _do_apply), so sharing is safe.  Responded ones
        # are dead weight for a clone (state_key skips them, pending sets
        # never contain them, clones never build a History) and are dropped.
        new.ll_ops = {
            k: v for k, v in self.ll_ops.items() if not v.responded
        }
        # returned records never mutate again, so clones may share them
        new.hl_ops = {
            k: (v if v.returned else v.copy()) for k, v in self.hl_ops.items()
        }
        new.reg_ops = []
        new.pending_apply = {o: list(ls) for o, ls in self.pending_apply.items()}
        new.pending_respond = dict(self.pending_respond)
        new._cseq = dict(self._cseq)
        new._aseq = dict(self._aseq)
        new._hseq = dict(self._hseq)
        new.items = self.items
        new.item_state = self.item_state
        new.queues = self.queues
        new.returned_items = self.returned_items
        new.crash_schedule = self.crash_schedule
        new.crashes_done = set(self.crashes_done)
        new.clients = {c: cl.clone(new) for c, cl in self.clients.items()}
        new.policy = None
        return new

    def state_key(self) -> tuple:
        """Canonical hashable key for deduplication during exhaustive search.

        Excludes the step counter, so two states that differ only in how many
        steps it took to reach them merge; this is what keeps the search
        tractable.  Consequently scenarios with timed constraints (workload
        not_before_step, crash schedules keyed on steps) must not be
        deduplicated on this key.  Includes the external trace so far, so a
        path count through the deduplicated graph still counts distinct
        interleavings per external history exactly.

        In-flight low-level ids are renamed to (client, rank) by per-client
        issue order, and everything derivable from the rest of the key is
        dropped: the id counters, the high-level records (determined by
        item_state and the static workload), dead bookkeeping such as
        expectations of already-answered CASes, and ops on crashed objects
        (they can never take effect or respond).  Two states with equal
        keys therefore have isomorphic futures under the renaming, so
        merging them keeps the path count exact; it also merges runs that
        differ only in how many low-level ops they ever issued.
        """
        pending: dict[int, list[LLOp]] = {}
        for op in self.ll_ops.values():
            if not op.responded and self.world.alive(op.obj):
                pending.setdefault(op.client, []).append(op)
        rename: dict[str, tuple[int, int]] = {}
        ll_part = []
        for c in sorted(pending):
            ops = pending[c]
            ops.sort(key=lambda o: o.seq)
            for rank, op in enumerate(ops):
                rename[op.id] = (c, rank)
                # only what can still influence the future is encoded:
                # spent arguments and the unread halves of results are
                # dropped, an unapplied update CAS keeps win-or-lose
                # against the current object state plus the pair a win
                # would install (see cas_ll_slot), and clients consume
                # only the prev half of a CAS result
                tv = res = None
                if op.action == "cas":
                    if op.applied:
                        res = op.result[0]
                    elif op.phase == "update":
                        if op.exp == self.world.objects[op.obj].state:
                            tv = (True, op.new)
                        else:
                            tv = (False, None)
                elif op.action == "reg-write":
                    if op.applied:
                        res = op.result
                    else:
                        tv = op.tv
                elif op.applied:  # reg-read
                    res = op.result
                ll_part.append(
                    (c, rank, op.obj, op.action, op.phase, tv, op.applied, res)
                )
        client_part = []
        for c in sorted(self.clients):
            cl = self.clients[c]
            # a client with nothing left to invoke and no op in flight can
            # never act again; late responses only touch caches nobody reads
            if not cl.busy() and self._next_item(c) is None:
                client_part.append((c, "inert"))
            else:
                client_part.append((c, cl.state_key(rename)))
        return (
            self.world.state_key(rename),
            tuple(ll_part),
            tuple(client_part),
            self.item_state,
            self.hl_trace,
        )

    def objects_symmetric(self) -> bool:
        """Whether object identity is pure labeling: every server holds one
        object, all objects start equal, and every client addresses all of
        them uniformly.  Exactly then, states differing by an object
        permutation behave identically up to that permutation."""
        return self.sc.algorithm == "cas-abd" and all(
            len(s.objects) == 1 for s in self.world.servers.values()
        )

    def state_key_sym(self) -> tuple:
        """Like `state_key`, but canonicalizes object identity away: all
        per-object data (object state, live low-level ops, update machines,
        collect slots, expectation caches) is gathered into one
        self-contained record per object, and the key holds the sorted
        record multiset.  Requires `objects_symmetric()`.  The server crash
        set is derivable (one object each), external traces never mention
        objects, and path counts through the merged graph stay exact
        because relabeling objects bijectively maps schedules to schedules.
        """
        live: dict[int, dict[int, list[LLOp]]] = {}
        for op in self.ll_ops.values():
            if not op.responded and self.world.alive(op.obj):
                live.setdefault(op.client, {}).setdefault(op.obj, []).append(op)
        globals_part = []
        per_client: list[tuple[int, dict[int, tuple]]] = []
        for c in sorted(self.clients):
            cl = self.clients[c]
            mine = live.get(c, {})
            for ls in mine.values():
                ls.sort(key=lambda o: o.seq)
            if not cl.busy() and self._next_item(c) is None:
                # inert, but stragglers it fired are still in flight; an
                # unapplied update CAS still changes the object when it
                # lands, and each completion is a distinct schedule choice
                globals_part.append((c, "inert"))
                per_obj = {}
                for obj in self.sc.placement.objects:
                    lls = mine.get(obj, ())
                    state = self.world.objects[obj].state
                    per_obj[obj] = (None, tuple(
                        cas_ll_slot(o, state) for o in lls
                    ), None, None)
                per_client.append((c, per_obj))
            else:
                g, per_obj = cl.sym_parts(mine)
                globals_part.append((c, g))
                per_client.append((c, per_obj))
        records = []
        for obj in self.sc.placement.objects:
            o = self.world.objects[obj]
            # every client addresses every object here (objects_symmetric),
            # so each record slots one entry per client, in client order
            cols = tuple(pc[obj] for _, pc in per_client)
            records.append(
                (None, True, cols) if o.crashed else (o.state, False, cols)
            )
        records.sort(key=hash)
        return (
            tuple(records),
            tuple(globals_part),
            self.item_state,
            self.hl_trace,
        )

    # ------------------------------------------------------------------
    # main loop
    # ------------------------------------------------------------------

    def all_returned(self) -> bool:
        return self.returned_items == len(self.items)

    def run(self) -> History:
        budget_hit = False
        while True:
            if self.next_step > self.sc.step_budget:
                budget_hit = True
                break
            acts = self.enabled_actions()
            if not acts:
                break
            choice = self.policy.choose(self, acts) if self.policy else acts[0]
            if choice is None:
                break
            self.execute(choice)
        return self._finalize(budget_hit)

    def _finalize(self, budget_hit: bool) -> History:
        h = History(
            events=self.events,
            scenario=self.sc.to_canonical_dict(),
            truncated=budget_hit or not self.all_returned(),
            pending_hl=sorted(
                op.id for op in self.hl_ops.values() if not op.returned
            ),
            pending_ll=sorted(
                op.id for op in self.ll_ops.values() if not op.responded
            ),
            reg_ops=self.reg_ops,
            adversary_report=self.policy.report() if self.policy else None,
        )
        return h
