"""Register emulation protocols.

Two high-level register emulations run over the base objects:

* `CasAbdClient` ("cas-abd"): a multi-writer multi-reader atomic register
  over n CAS objects, tolerating f < n/2 server crashes with constant
  storage.  A write reads a quorum to pick a fresh timestamp, then installs
  (timestamp, value) on a quorum through a per-object conditional-update
  loop.  A read picks the max timestamped pair from a quorum and writes it
  back the same way before returning.

* `BaselineClient` ("baseline-rw"): the storage-hungry alternative built
  from plain registers.  Every writer owns a private slot of 2f+1 registers
  on distinct servers and a single designated reader scans all slots.  This
  client exists to exhibit covering: a plain write that is triggered but
  delayed forever leaves its register covered, and storage grows with the
  number of writers.  It is illustrative rather than optimal, and it is only
  sequentially consistent per writer, so workloads drive it with one write
  per writer.

Per-object conditional update (the heart of cas-abd)
----------------------------------------------------
Each client keeps, per object, a cached expectation `exp`: the last state it
observed of that object.  `update(obj, t, v)` must make the object's stored
timestamp reach at least t, installing (t, v) if nothing newer got there
first:

    if t > exp.ts:
        repeat:
            old = CAS(obj, exp, (t, v))
            done = (old == exp) or (old.ts >= t)
            exp = old
        until done
    return ack

The guard makes a warm-cache no-op update free: no base object access at
all.  Every CAS in the loop is issued only while t > exp.ts; the runtime
asserts this, and the offline checkers re-verify it from the trace.  The
decision point of an update is the guard evaluation (when the loop is
skipped) or the apply step of the CAS that set done.  A read is a single
CAS(obj, exp, exp): it can never change the object state but returns the
current pair atomically; its decision point is that CAS's apply.

`AbdoOracle` is the independent sequential reference for this per-object
interface: update installs iff the stored timestamp is lower, read returns
the stored pair.  The checkers replay decision points through the oracle and
demand identical return values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

from .base import ConfigError, InvariantViolation
from .core import (
    ClientId,
    INITIAL_TAGGED_VALUE,
    ObjectId,
    RegOpRecord,
    TaggedValue,
    Timestamp,
    Value,
)

ACK = "ack"


def cas_ll_slot(o, state: TaggedValue) -> tuple:
    """Canonical key slot for one in-flight CAS against an object in
    `state`: its phase, applied-ness, and exactly what its future can
    still do.  An applied CAS is spent except for the prev half of its
    result (all a client ever reads back).  An unapplied collect CAS can
    never change the object.  An unapplied update CAS wins exactly when
    its expectation still matches the object (stored timestamps only
    grow, so once stale it stays stale), and the pair it would install
    matters only on a win.  This covers stragglers of finished ops too,
    whose arguments no machine remembers any more."""
    if o.applied:
        return (o.phase, True, o.result[0])
    if o.phase == "update":
        if o.exp == state:
            return (o.phase, False, (True, o.new))
        return (o.phase, False, (False, None))
    return (o.phase, False, None)


# ---------------------------------------------------------------------------
# Sequential oracle
# ---------------------------------------------------------------------------


class AbdoOracle:
    """Sequential specification of the per-object register interface.

    One instance models one object.  `update` installs (t, v) iff t is above
    the stored timestamp; `read` returns the stored pair.  Used by tests as
    the ground truth for the conditional-update semantics and by the
    decision-point checker as the replay target.
    """

    def __init__(self, initial: TaggedValue = INITIAL_TAGGED_VALUE) -> None:
        self.state = initial

    def update(self, t: Timestamp, v: Value) -> str:
        if self.state.ts < t:
            self.state = TaggedValue(t, v)
        return ACK

    def read(self) -> TaggedValue:
        return self.state


# ---------------------------------------------------------------------------
# Driver interface provided by the scheduler
# ---------------------------------------------------------------------------


class Driver(Protocol):
    """What a protocol client may ask of the scheduler.

    Triggers enqueue a low-level operation and return its id; the apply and
    respond steps happen later, at the adversary's pleasure.  `local_step`
    burns one step for a client-local action that emits no event (the update
    guard) and returns the step number.  `hl_return` emits the high-level
    return event.
    """

    def trigger_cas(
        self, client: ClientId, hl: str, regop: str, phase: str,
        obj: ObjectId, exp: TaggedValue, new: TaggedValue,
    ) -> str: ...

    def trigger_reg_write(
        self, client: ClientId, hl: str, obj: ObjectId, tv: TaggedValue
    ) -> str: ...

    def trigger_reg_read(self, client: ClientId, hl: str, obj: ObjectId) -> str: ...

    def local_step(self) -> int: ...

    def new_regop(
        self, hl: str, client: ClientId, obj: ObjectId, kind: str,
        t: Timestamp | None, value: Value | None,
    ) -> RegOpRecord: ...

    def hl_return(self, client: ClientId, hl: str, payload: dict) -> None: ...


# ---------------------------------------------------------------------------
# cas-abd client
# ---------------------------------------------------------------------------


@dataclass
class _UpdateMachine:
    """One in-flight conditional update on one object."""

    record: RegOpRecord
    t: Timestamp
    v: Value
    awaiting_ll: str | None = None  # CAS id we are waiting on
    exp_sent: TaggedValue | None = None  # expectation used by that CAS
    needs_retry: bool = False
    done: bool = False


@dataclass
class _ActiveOp:
    hl: str
    kind: str  # "write" | "read"
    value: Value | None
    phase: str = "collect"
    collect_lls: dict[str, ObjectId] = field(default_factory=dict)
    collect_results: dict[ObjectId, TaggedValue] = field(default_factory=dict)
    chosen_ts: Timestamp | None = None
    chosen_val: Value | None = None
    machines: dict[ObjectId, _UpdateMachine] = field(default_factory=dict)
    done_updates: int = 0


class CasAbdClient:
    """Multi-writer register client over CAS objects.

    Write: round 1 reads all n objects and waits for n-f responses, picks
    timestamp (max observed counter + 1, own id); round 2 runs the
    conditional update on all n objects and waits for n-f of them to finish.
    Read: round 1 as above, picks the pair with the max timestamp, round 2
    writes that pair back, returns the value.

    The expectation cache persists across this client's operations.  A
    response that arrives after its round already moved on only refreshes
    the cache; it never changes a decision already taken.  Once the
    high-level operation returns, unfinished per-object updates are
    abandoned: their outstanding CAS may still apply, but no retry is ever
    issued for them.
    """

    def __init__(
        self, driver: Driver, client: ClientId, objects: list[ObjectId], f: int
    ) -> None:
        self.driver = driver
        self.client = client
        self.objects = sorted(objects)
        self.n = len(objects)
        self.f = f
        self.quorum = self.n - f
        self.exp: dict[ObjectId, TaggedValue] = {
            o: INITIAL_TAGGED_VALUE for o in self.objects
        }
        self.op: _ActiveOp | None = None
        # ll id -> routing info for responses, including ops that belong to
        # already-finished rounds (kept so late responses refresh the cache).
        self._route: dict[str, tuple[str, ObjectId, object]] = {}
        self._ready = False

    # --- scheduler-facing API -------------------------------------------------

    def busy(self) -> bool:
        return self.op is not None

    def ready(self) -> bool:
        return self._ready

    def begin(self, hl: str, kind: str, value: Value | None) -> None:
        if self.op is not None:
            raise InvariantViolation(f"client {self.client} began op while busy")
        self.op = _ActiveOp(hl=hl, kind=kind, value=value)
        for obj in self.objects:
            exp = self.exp[obj]
            ll = self.driver.trigger_cas(
                self.client, hl, regop="", phase="collect", obj=obj, exp=exp, new=exp
            )
            self.op.collect_lls[ll] = obj
            self._route[ll] = ("collect", obj, self.op)
        self._ready = False

    def on_response(self, ll: str, result: tuple[TaggedValue, bool]) -> None:
        prev, _swapped = result
        route = self._route.pop(ll, None)
        if route is None:
            return
        tag, obj, ctx = route
        if tag == "collect":
            op = ctx
            if op is not None and op is self.op and op.phase == "collect":
                op.collect_results.setdefault(obj, prev)
                self._refresh_exp(obj, prev)
                if len(op.collect_results) >= self.quorum:
                    self._ready = True
            else:
                # Round already decided (or op finished): cache refresh only.
                self._refresh_exp(obj, prev)
        elif tag == "update":
            machine = ctx
            if machine is None:
                self._refresh_exp(obj, prev)
            else:
                self._on_update_response(obj, machine, prev)

    def advance(self) -> None:
        """Run every ripe local transition: finish round 1, issue retries,
        and return once enough per-object updates are done."""
        self._ready = False
        op = self.op
        if op is None:
            return
        if op.phase == "collect" and len(op.collect_results) >= self.quorum:
            self._start_update_phase()
        if op.phase == "update":
            for obj in self.objects:
                m = op.machines.get(obj)
                if m is not None and m.needs_retry:
                    m.needs_retry = False
                    self._issue_cas(obj, m)
            if op.done_updates >= self.quorum:
                self._finish()

    # --- internals -------------------------------------------------------------

    def _refresh_exp(self, obj: ObjectId, observed: TaggedValue) -> None:
        """Adopt an observed state as the new expectation, unless an active
        update loop on this object owns the cache right now."""
        op = self.op
        if op is not None:
            m = op.machines.get(obj)
            if m is not None and not m.done:
                return
        self.exp[obj] = observed

    def _start_update_phase(self) -> None:
        op = self.op
        assert op is not None
        results = op.collect_results
        if op.kind == "write":
            top = max(results.values(), key=lambda tv: tv.ts.key())
            op.chosen_ts = Timestamp(top.ts.num + 1, self.client)
            op.chosen_val = op.value
        else:
            top = max(results.values(), key=lambda tv: tv.ts.key())
            for tv in results.values():
                if tv.ts == top.ts and tv.val != top.val:
                    raise InvariantViolation(
                        f"objects disagree on value for timestamp {top.ts}"
                    )
            op.chosen_ts = top.ts
            op.chosen_val = top.val
        op.phase = "update"
        for obj in self.objects:
            record = self.driver.new_regop(
                hl=op.hl, client=self.client, obj=obj, kind="update",
                t=op.chosen_ts, value=op.chosen_val,
            )
            m = _UpdateMachine(record=record, t=op.chosen_ts, v=op.chosen_val)
            op.machines[obj] = m
            if not op.chosen_ts > self.exp[obj].ts:
                # Guard: nothing newer to install here.  Decision point is
                # this client-local step; no base object is touched.
                m.done = True
                record.lin_kind = "guard"
                record.guard_step = self.driver.local_step()
                record.completed = True
                op.done_updates += 1
            else:
                self._issue_cas(obj, m)

    def _issue_cas(self, obj: ObjectId, m: _UpdateMachine) -> None:
        exp = self.exp[obj]
        if not m.t > exp.ts:
            raise InvariantViolation(
                f"client {self.client} object {obj}: CAS issued with "
                f"t={m.t} <= exp.ts={exp.ts}"
            )
        op = self.op
        assert op is not None
        ll = self.driver.trigger_cas(
            self.client, op.hl, regop=m.record.id, phase="update",
            obj=obj, exp=exp, new=TaggedValue(m.t, m.v),
        )
        m.awaiting_ll = ll
        m.exp_sent = exp
        self._route[ll] = ("update", obj, m)

    def _on_update_response(
        self, obj: ObjectId, m: _UpdateMachine, old: TaggedValue
    ) -> None:
        if m.done:
            # Late response for an abandoned machine.  It no longer owns the
            # cache, so only the guarded refresh applies (a newer operation
            # may be mid-loop on this object).
            self._refresh_exp(obj, old)
            return
        succeeded = old == m.exp_sent
        if not succeeded:
            m.record.failed_cas += 1
        # The live loop always adopts the returned state as its expectation.
        self.exp[obj] = old
        if succeeded or old.ts >= m.t:
            m.done = True
            m.record.lin_kind = "cas"
            m.record.deciding_ll = m.awaiting_ll
            m.record.completed = True
            op = self.op
            if op is not None and obj in op.machines and op.machines[obj] is m:
                op.done_updates += 1
                if op.done_updates >= self.quorum:
                    self._ready = True
        else:
            m.needs_retry = True
            self._ready = True

    def _finish(self) -> None:
        op = self.op
        assert op is not None and op.chosen_ts is not None
        if op.kind == "write":
            payload = {
                "op": "write",
                "result": ACK,
                "ts": [op.chosen_ts.num, op.chosen_ts.client],
            }
        else:
            v = op.chosen_val
            assert v is not None
            payload = {
                "op": "read",
                "result": [v.payload, v.writer, v.seq],
                "ts": [op.chosen_ts.num, op.chosen_ts.client],
            }
        # Abandon unfinished machines: mark them incomplete so the checkers
        # exclude them; late responses will still refresh the cache.
        for m in op.machines.values():
            if not m.done:
                m.done = True
                m.record.completed = False
        self.op = None
        self._ready = False
        self.driver.hl_return(self.client, op.hl, payload)

    # --- state-space search support ---------------------------------------------

    def clone(self, driver: Driver) -> CasAbdClient:
        """Copy for exhaustive search.  The copy is behaviorally identical but
        its per-object records are private, so trace bookkeeping on the
        original is not shared."""
        new = object.__new__(CasAbdClient)
        new.driver = driver
        new.client = self.client
        new.objects = self.objects
        new.n = self.n
        new.f = self.f
        new.quorum = self.quorum
        new.exp = dict(self.exp)
        new._ready = self._ready
        machine_map: dict[int, _UpdateMachine] = {}
        op = self.op
        if op is None:
            new.op = None
        else:
            nop = _ActiveOp.__new__(_ActiveOp)
            nop.__dict__.update(op.__dict__)
            nop.collect_lls = dict(op.collect_lls)
            nop.collect_results = dict(op.collect_results)
            nop.machines = {}
            for obj, m in op.machines.items():
                nm = _UpdateMachine.__new__(_UpdateMachine)
                # the record stays shared: exhaustive search never reads
                # per-op records (only policy runs do, and they never clone),
                # and the protocol itself only writes them
                nm.__dict__.update(m.__dict__)
                nop.machines[obj] = nm
                machine_map[id(m)] = nm
            new.op = nop
        new._route = {}
        for ll, (tag, obj, ctx) in self._route.items():
            if tag == "collect":
                new_ctx = new.op if (op is not None and ctx is op) else None
            else:
                new_ctx = machine_map.get(id(ctx))
            new._route[ll] = (tag, obj, new_ctx)
        return new

    def state_key(self, rename: dict[str, tuple]) -> tuple:
        """Canonical hashable encoding of everything that can influence this
        client's future behavior.  Two clients with equal keys react
        identically to any sequence of scheduler actions.

        `rename` maps in-flight low-level ids to canonical names.  Dead
        bookkeeping is normalized away: a decided machine keeps only its
        decidedness, an expectation sent with an already-answered CAS is
        dropped (a retry re-reads the cache), and collect-round state is
        kept only while the round is still collecting.  A machine's target
        pair is not encoded (every machine of a round installs the op's
        chosen pair, which is in the key), and neither is response routing;
        both are derivable (a response contributes to the collect exactly
        when its id is in the live collect set, and to an update machine
        exactly when that machine awaits it).  A machine whose in-flight
        CAS died with its object keeps nothing but undecidedness: it can
        never act again, whatever it was waiting for.

        Two relational encodings exploit timestamp uniqueness (one writer
        per timestamp, so distinct pairs have distinct timestamps).  The
        expectation sent with a live CAS is stored as equal or not to the
        state it will be compared against: equal means literal equality,
        and a stale expectation loses the swap whatever else happens, since
        object timestamps only grow.  And an unfinished collect keeps only
        what the round can still use: the count of responses, plus the
        largest timestamp number for a write (it picks a larger number) or
        the response multiset for a read (it adopts the largest pair)."""
        op = self.op
        if op is None:
            op_k = None
        else:
            machines_k = []
            for obj, m in sorted(op.machines.items()):
                if m.done:
                    machines_k.append((obj, True))
                    continue
                awaiting = rename.get(m.awaiting_ll) if m.awaiting_ll else None
                sent = None
                if awaiting is not None:
                    llop = self.driver.ll_ops[m.awaiting_ll]
                    ref = (
                        llop.result[0] if llop.applied
                        else self.driver.world.objects[obj].state
                    )
                    sent = m.exp_sent == ref
                machines_k.append(
                    (obj, awaiting, sent, m.needs_retry, False)
                )
            if op.phase == "collect":
                pending_collect = tuple(sorted(
                    rename[ll] for ll in op.collect_lls if ll in rename
                ))
                results = op.collect_results
                if op.kind == "write":
                    results_k = (
                        len(results),
                        max((tv.ts.num for tv in results.values()), default=None),
                    )
                else:
                    results_k = tuple(sorted(
                        (tv for tv in results.values()),
                        key=lambda tv: (tv.ts.key(), repr(tv.val)),
                    ))
            else:
                # round decided: which stragglers remain matters only via
                # the in-flight list, and the results are already summarized
                # in the chosen pair
                pending_collect = ()
                results_k = ()
            op_k = (
                op.kind, op.phase, pending_collect, results_k,
                op.chosen_ts, op.chosen_val,
                tuple(machines_k), op.done_updates,
            )
        return (
            tuple(sorted(self.exp.items())),
            self._ready,
            op_k,
        )

    def sym_parts(
        self, live: dict[ObjectId, list]
    ) -> tuple[tuple, dict[ObjectId, tuple]]:
        """Split this client's key into an object-free global part and one
        self-contained record per object, for searches that canonicalize
        away object identity.  `live` holds this client's unanswered
        low-level ops per object, in issue order; records reference them by
        index into that list, so no global id renaming is needed.  The
        encodings match `state_key` otherwise."""
        op = self.op
        objects = self.driver.world.objects
        per_obj: dict[ObjectId, tuple] = {}
        for obj in self.objects:
            lls = live.get(obj, ())
            state = objects[obj].state
            lls_k = tuple(cas_ll_slot(o, state) for o in lls)
            mach_k = None
            coll_k = None
            if op is not None:
                m = op.machines.get(obj)
                if m is not None:
                    if m.done:
                        mach_k = ("done",)
                    else:
                        idx = None
                        sent = None
                        if m.awaiting_ll is not None:
                            for i, o in enumerate(lls):
                                if o.id == m.awaiting_ll:
                                    idx = i
                                    ref = (
                                        o.result[0] if o.applied
                                        else self.driver.world.objects[obj].state
                                    )
                                    sent = m.exp_sent == ref
                                    break
                        mach_k = (idx, sent, m.needs_retry)
                if op.phase == "collect":
                    for i, o in enumerate(lls):
                        if o.id in op.collect_lls:
                            coll_k = i
                            break
            per_obj[obj] = (self.exp[obj], lls_k, mach_k, coll_k)
        if op is None:
            op_k = None
        else:
            if op.phase == "collect":
                results = op.collect_results
                if op.kind == "write":
                    results_k: tuple = (
                        len(results),
                        max((tv.ts.num for tv in results.values()), default=None),
                    )
                else:
                    results_k = tuple(sorted(
                        (tv for tv in results.values()),
                        key=lambda tv: (tv.ts.key(), repr(tv.val)),
                    ))
            else:
                results_k = ()
            op_k = (
                op.kind, op.phase, results_k,
                op.chosen_ts, op.chosen_val, op.done_updates,
            )
        return (self._ready, op_k), per_obj


# ---------------------------------------------------------------------------
# baseline-rw client
# ---------------------------------------------------------------------------


@dataclass
class _BaselineOp:
    hl: str
    kind: str
    value: Value | None
    ts: Timestamp | None = None
    outstanding: dict[str, ObjectId] = field(default_factory=dict)
    acks: int = 0
    reads: dict[ObjectId, TaggedValue] = field(default_factory=dict)


class BaselineClient:
    """Plain-register client with per-writer slots.

    A writer stamps each write with (local counter + 1, own id) and triggers
    it on all 2f+1 registers of its slot; the write returns after f+1
    responses, so up to f replicas may be left covered forever and the write
    still completes.  The designated reader reads every slot, needs f+1
    responses per slot, and returns the payload of the max timestamped pair.
    """

    def __init__(
        self,
        driver: Driver,
        client: ClientId,
        slots: dict[ClientId, list[ObjectId]],
        f: int,
        reader: ClientId,
    ) -> None:
        self.driver = driver
        self.client = client
        self.slots = slots
        self.f = f
        self.reader = reader
        self.counter = 0
        self.op: _BaselineOp | None = None
        self._ready = False

    def busy(self) -> bool:
        return self.op is not None

    def ready(self) -> bool:
        return self._ready

    def begin(self, hl: str, kind: str, value: Value | None) -> None:
        if self.op is not None:
            raise InvariantViolation(f"client {self.client} began op while busy")
        if kind == "write":
            if self.client not in self.slots:
                raise ConfigError(f"client {self.client} has no writer slot")
            self.counter += 1
            op = _BaselineOp(hl=hl, kind=kind, value=value)
            op.ts = Timestamp(self.counter, self.client)
            tv = TaggedValue(op.ts, value)
            for obj in self.slots[self.client]:
                ll = self.driver.trigger_reg_write(self.client, hl, obj, tv)
                op.outstanding[ll] = obj
            self.op = op
        else:
            if self.client != self.reader:
                raise ConfigError(
                    f"client {self.client} is not the designated reader"
                )
            op = _BaselineOp(hl=hl, kind=kind, value=None)
            for slot in self.slots.values():
                for obj in slot:
                    ll = self.driver.trigger_reg_read(self.client, hl, obj)
                    op.outstanding[ll] = obj
            self.op = op
        self._ready = False

    def on_response(self, ll: str, result) -> None:
        op = self.op
        if op is None or ll not in op.outstanding:
            return
        obj = op.outstanding.pop(ll)
        if op.kind == "write":
            op.acks += 1
            if op.acks >= self.f + 1:
                self._ready = True
        else:
            op.reads[obj] = result
            if self._read_quorums_met(op):
                self._ready = True

    def _read_quorums_met(self, op: _BaselineOp) -> bool:
        for slot in self.slots.values():
            have = sum(1 for obj in slot if obj in op.reads)
            if have < self.f + 1:
                return False
        return True

    def advance(self) -> None:
        self._ready = False
        op = self.op
        if op is None:
            return
        if op.kind == "write" and op.acks >= self.f + 1:
            payload = {
                "op": "write",
                "result": ACK,
                "ts": [op.ts.num, op.ts.client],
            }
            self.op = None
            self.driver.hl_return(self.client, op.hl, payload)
        elif op.kind == "read" and self._read_quorums_met(op):
            top = max(op.reads.values(), key=lambda tv: tv.ts.key())
            for tv in op.reads.values():
                if tv.ts == top.ts and tv.val != top.val:
                    raise InvariantViolation(
                        f"registers disagree on value for timestamp {top.ts}"
                    )
            payload = {
                "op": "read",
                "result": [top.val.payload, top.val.writer, top.val.seq],
                "ts": [top.ts.num, top.ts.client],
            }
            self.op = None
            self.driver.hl_return(self.client, op.hl, payload)

    # --- state-space search support ---------------------------------------------

    def clone(self, driver: Driver) -> BaselineClient:
        new = object.__new__(BaselineClient)
        new.driver = driver
        new.client = self.client
        new.slots = self.slots
        new.f = self.f
        new.reader = self.reader
        new.counter = self.counter
        new._ready = self._ready
        op = self.op
        if op is None:
            new.op = None
        else:
            nop = _BaselineOp(hl=op.hl, kind=op.kind, value=op.value)
            nop.ts = op.ts
            nop.outstanding = dict(op.outstanding)
            nop.acks = op.acks
            nop.reads = dict(op.reads)
            new.op = nop
        return new

    def state_key(self, rename: dict[str, tuple]) -> tuple:
        op = self.op
        if op is None:
            op_k = None
        else:
            op_k = (
                op.kind, op.ts,
                tuple(sorted(
                    (rename[ll], obj)
                    for ll, obj in op.outstanding.items()
                    if ll in rename  # dropped entries died with their object
                )),
                op.acks,
                tuple(sorted(op.reads.items())),
            )
        return (self.counter, self._ready, op_k)


def baseline_slots(
    k: int, f: int, objects: list[ObjectId]
) -> dict[ClientId, list[ObjectId]]:
    """Assign writer i the objects [i*(2f+1), (i+1)*(2f+1))."""
    width = 2 * f + 1
    if len(objects) < k * width:
        raise ConfigError(
            f"baseline-rw needs at least k*(2f+1) = {k * width} objects, "
            f"got {len(objects)}"
        )
    ordered = sorted(objects)
    return {c: ordered[c * width : (c + 1) * width] for c in range(k)}
