"""Core domain types: timestamps, values, events, and histories.

Everything downstream (base objects, protocol clients, the scheduler, the
checkers) speaks in terms of the types defined here.  A run of the simulator
is a `History`: an ordered sequence of `Event` records plus a few side tables.
Histories are plain data; they serialize to a line-delimited text trace that
is byte-stable for a given scenario and seed, so traces can be hashed,
diffed, and re-checked offline.

Identifier conventions
----------------------
Clients, servers, and base objects are dense naturals starting at 0.  Event
actors are rendered as short strings ("c0", "s2") so a trace line is readable
without a lookup table.  Operation identifiers are "h<i>" for high-level
operations, "l<i>" for low-level (per-object) operations, and "a<i>" for the
per-object register-operation records kept in the side table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Iterator

ClientId = int
ServerId = int
ObjectId = int

# ---------------------------------------------------------------------------
# Timestamps and values
# ---------------------------------------------------------------------------


class Ordering(Enum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


@dataclass(frozen=True, slots=True)
class Timestamp:
    """Logical timestamp: a pair (num, client), ordered lexicographically.

    The client component breaks ties between equal counters, which makes the
    order total.  The initial timestamp on every object is (0, 0): counter
    zero, attributed to client 0.
    """

    num: int
    client: ClientId
    # cached at construction: these sit inside exhaustive-search state keys,
    # where the generated recompute-every-time hash showed up in profiles
    _hash: int = field(init=False, repr=False, compare=False, default=0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_hash", hash((self.num, self.client)))

    def __hash__(self) -> int:
        return self._hash

    def key(self) -> tuple[int, int]:
        return (self.num, self.client)

    def __lt__(self, other: "Timestamp") -> bool:
        return self.key() < other.key()

    def __le__(self, other: "Timestamp") -> bool:
        return self.key() <= other.key()

    def __gt__(self, other: "Timestamp") -> bool:
        return self.key() > other.key()

    def __ge__(self, other: "Timestamp") -> bool:
        return self.key() >= other.key()


def compare_timestamps(a: Timestamp, b: Timestamp) -> Ordering:
    """Three-way comparison under the lexicographic (num, client) order."""
    if a.key() < b.key():
        return Ordering.LESS
    if a.key() > b.key():
        return Ordering.GREATER
    return Ordering.EQUAL


INITIAL_TIMESTAMP = Timestamp(0, 0)


@dataclass(frozen=True, slots=True)
class Value:
    """A written value.

    `payload` is the application-visible token.  `(writer, seq)` uniquely
    identifies the write that produced the value, which is what lets the
    linearizability checker match reads to writes without ambiguity.  The
    distinguished initial value has writer None and seq 0.
    """

    payload: str
    writer: ClientId | None
    seq: int
    _hash: int = field(init=False, repr=False, compare=False, default=0)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_hash", hash((self.payload, self.writer, self.seq))
        )

    def __hash__(self) -> int:
        return self._hash

    def is_initial(self) -> bool:
        return self.writer is None


INITIAL_VALUE = Value("v0", None, 0)


@dataclass(frozen=True, slots=True)
class TaggedValue:
    ts: Timestamp
    val: Value
    _hash: int = field(init=False, repr=False, compare=False, default=0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_hash", hash((self.ts, self.val)))

    def __hash__(self) -> int:
        return self._hash


INITIAL_TAGGED_VALUE = TaggedValue(INITIAL_TIMESTAMP, INITIAL_VALUE)


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

# Low-level operations are split into three phases so a scheduler can delay
# each independently: the trigger (client-local), the apply (the step at
# which the operation takes effect on the object), and the respond (the step
# at which the client learns the outcome).  A write that has been triggered
# but not applied is what "covers" a plain register.
EVENT_KINDS = (
    "hl-invoke",
    "hl-return",
    "ll-trigger",
    "ll-apply",
    "ll-respond",
    "server-crash",
    "client-crash",
)


@dataclass(frozen=True, slots=True)
class Event:
    step: int
    kind: str
    actor: str  # "c<i>" or "s<i>"
    op: str  # operation id; "" for crash events
    payload: dict


def client_actor(c: ClientId) -> str:
    return f"c{c}"


def server_actor(s: ServerId) -> str:
    return f"s{s}"


# --- JSON helpers for the payload vocabulary -------------------------------


def ts_to_json(ts: Timestamp) -> list:
    return [ts.num, ts.client]


def ts_from_json(obj: list) -> Timestamp:
    return Timestamp(obj[0], obj[1])


def value_to_json(v: Value) -> list:
    return [v.payload, v.writer, v.seq]


def value_from_json(obj: list) -> Value:
    return Value(obj[0], obj[1], obj[2])


def tv_to_json(tv: TaggedValue) -> list:
    return [ts_to_json(tv.ts), value_to_json(tv.val)]


def tv_from_json(obj: list) -> TaggedValue:
    return TaggedValue(ts_from_json(obj[0]), value_from_json(obj[1]))


# ---------------------------------------------------------------------------
# Per-object register-operation records (side table)
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class RegOpRecord:
    """One per-object register operation (an update or read at the emulation
    layer above raw CAS cells).

    The record remembers which low-level CAS decided the operation and, for
    updates resolved purely by the local guard (no CAS issued), the step at
    which the guard ran.  That guard step has no event of its own: it is a
    client-local action, so it only exists here.  `completed` is False when
    the surrounding round gathered its quorum and moved on before this
    object's operation finished; such operations are abandoned and have no
    decision point.
    """

    id: str
    hl: str
    client: ClientId
    obj: ObjectId
    kind: str  # "update" | "read"
    t: Timestamp | None  # update only: the timestamp being installed
    value: Value | None  # update only: the value being installed
    start_step: int
    lin_kind: str | None = None  # "guard" | "cas" once decided
    guard_step: int | None = None  # set when lin_kind == "guard"
    deciding_ll: str | None = None  # set when lin_kind == "cas"
    result: TaggedValue | None = None  # read only: the returned pair
    completed: bool = False
    failed_cas: int = 0

    def copy(self) -> "RegOpRecord":
        # hand-rolled: copy.copy on a slots dataclass is ~10x slower and
        # client cloning sits on the exhaustive search's hot path
        new = RegOpRecord.__new__(RegOpRecord)
        new.id = self.id
        new.hl = self.hl
        new.client = self.client
        new.obj = self.obj
        new.kind = self.kind
        new.t = self.t
        new.value = self.value
        new.start_step = self.start_step
        new.lin_kind = self.lin_kind
        new.guard_step = self.guard_step
        new.deciding_ll = self.deciding_ll
        new.result = self.result
        new.completed = self.completed
        new.failed_cas = self.failed_cas
        return new

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "hl": self.hl,
            "client": self.client,
            "obj": self.obj,
            "kind": self.kind,
            "t": None if self.t is None else ts_to_json(self.t),
            "value": None if self.value is None else value_to_json(self.value),
            "start_step": self.start_step,
            "lin_kind": self.lin_kind,
            "guard_step": self.guard_step,
            "deciding_ll": self.deciding_ll,
            "result": None if self.result is None else tv_to_json(self.result),
            "completed": self.completed,
            "failed_cas": self.failed_cas,
        }

    @staticmethod
    def from_json(obj: dict) -> "RegOpRecord":
        return RegOpRecord(
            id=obj["id"],
            hl=obj["hl"],
            client=obj["client"],
            obj=obj["obj"],
            kind=obj["kind"],
            t=None if obj["t"] is None else ts_from_json(obj["t"]),
            value=None if obj["value"] is None else value_from_json(obj["value"]),
            start_step=obj["start_step"],
            lin_kind=obj["lin_kind"],
            guard_step=obj["guard_step"],
            deciding_ll=obj["deciding_ll"],
            result=None if obj["result"] is None else tv_from_json(obj["result"]),
            completed=obj["completed"],
            failed_cas=obj["failed_cas"],
        )


# ---------------------------------------------------------------------------
# Histories
# ---------------------------------------------------------------------------


@dataclass
class History:
    """An ordered record of one run.

    `events` is the public trace: every step that touched a client, an
    object, or a server.  Step numbers strictly increase but may have gaps,
    because some client-local actions (guard evaluations) consume a step
    without emitting an event.  `reg_ops` is the side table of per-object
    register operations.  `truncated` is set when the run stopped with
    high-level operations still pending, either because the step budget ran
    out or because nothing was enabled anymore (every needed object crashed).
    """

    events: list[Event] = field(default_factory=list)
    scenario: dict = field(default_factory=dict)
    truncated: bool = False
    pending_hl: list[str] = field(default_factory=list)
    pending_ll: list[str] = field(default_factory=list)
    reg_ops: list[RegOpRecord] = field(default_factory=list)
    adversary_report: dict | None = None

    def hl_events(self) -> list[Event]:
        return [e for e in self.events if e.kind in ("hl-invoke", "hl-return")]

    def ll_events(self) -> list[Event]:
        return [e for e in self.events if e.kind.startswith("ll-")]


class HistoryError(ValueError):
    """Raised for structurally invalid histories or unknown operation ids."""


# --- validation -------------------------------------------------------------


def validate_history(h: History) -> list[str]:
    """Return a list of structural violations (empty means well formed).

    Checked: monotone step numbers, known event kinds, trigger/apply/respond
    ordering per low-level operation id, invoke-before-return per high-level
    operation id, at most one invoke and one return per id, and no two
    overlapping high-level operations on the same client.
    """
    problems: list[str] = []
    last_step = -1
    ll_phase: dict[str, str] = {}
    hl_phase: dict[str, str] = {}
    client_active: dict[str, str] = {}

    for i, e in enumerate(h.events):
        where = f"event {i} (step {e.step})"
        if e.kind not in EVENT_KINDS:
            problems.append(f"{where}: unknown kind {e.kind!r}")
            continue
        if e.step <= last_step:
            problems.append(f"{where}: step not strictly increasing")
        last_step = max(last_step, e.step)

        if e.kind == "ll-trigger":
            if e.op in ll_phase:
                problems.append(f"{where}: duplicate ll-trigger for {e.op}")
            ll_phase[e.op] = "triggered"
        elif e.kind == "ll-apply":
            if ll_phase.get(e.op) != "triggered":
                problems.append(f"{where}: ll-apply without prior trigger for {e.op}")
            ll_phase[e.op] = "applied"
        elif e.kind == "ll-respond":
            if ll_phase.get(e.op) != "applied":
                problems.append(f"{where}: ll-respond without prior apply for {e.op}")
            ll_phase[e.op] = "responded"
        elif e.kind == "hl-invoke":
            if e.op in hl_phase:
                problems.append(f"{where}: duplicate hl-invoke for {e.op}")
            hl_phase[e.op] = "invoked"
            if e.actor in client_active:
                problems.append(
                    f"{where}: client {e.actor} invokes {e.op} while "
                    f"{client_active[e.actor]} is still active"
                )
            client_active[e.actor] = e.op
        elif e.kind == "hl-return":
            if hl_phase.get(e.op) != "invoked":
                problems.append(f"{where}: hl-return without prior invoke for {e.op}")
            hl_phase[e.op] = "returned"
            if client_active.get(e.actor) == e.op:
                del client_active[e.actor]

    return problems


# --- queries ----------------------------------------------------------------


def _hl_spans(h: History) -> dict[str, tuple[int, int | None, str]]:
    """Map hl op id -> (invoke step, return step or None, client actor)."""
    spans: dict[str, tuple[int, int | None, str]] = {}
    for e in h.events:
        if e.kind == "hl-invoke":
            spans[e.op] = (e.step, None, e.actor)
        elif e.kind == "hl-return":
            inv, _, actor = spans[e.op]
            spans[e.op] = (inv, e.step, actor)
    return spans


def precedes(h: History, op1: str, op2: str) -> bool:
    """True iff op1 returned before op2 was invoked.

    A pending operation (no return event) precedes nothing.  Unknown ids
    raise `HistoryError`.
    """
    spans = _hl_spans(h)
    for op in (op1, op2):
        if op not in spans:
            raise HistoryError(f"unknown high-level operation id {op!r}")
    ret1 = spans[op1][1]
    inv2 = spans[op2][0]
    return ret1 is not None and ret1 < inv2


def point_contention(h: History, op: str) -> int:
    """Max number of clients with an incomplete high-level operation at any
    instant inside `op`'s execution interval.

    The interval runs from `op`'s invoke event to its return event, or to the
    end of the history when `op` is pending.  The count at an instant is the
    number of clients whose operation has been invoked and not yet returned,
    so the result is at least 1 (op's own client).
    """
    spans = _hl_spans(h)
    if op not in spans:
        raise HistoryError(f"unknown high-level operation id {op!r}")
    active: set[str] = set()
    best = 0
    inside = False
    for e in h.events:
        if e.kind == "hl-invoke":
            active.add(e.actor)
        if e.kind == "hl-invoke" and e.op == op:
            inside = True
        if inside:
            best = max(best, len(active))
        if e.kind == "hl-return":
            active.discard(e.actor)
        if e.kind == "hl-return" and e.op == op:
            break
    return best


# ---------------------------------------------------------------------------
# Trace serialization
# ---------------------------------------------------------------------------

# A trace is one JSON document per line.  The first line is a meta record
# (scenario, truncation flag, adversary report); subsequent lines are either
# events (keys: step, kind, actor, op, payload) or side-table records tagged
# with "rec".  Keys are sorted and separators fixed, so identical histories
# produce identical bytes.

_JSON_OPTS = {"sort_keys": True, "separators": (",", ":")}


def _event_to_line(e: Event) -> str:
    return json.dumps(
        {
            "step": e.step,
            "kind": e.kind,
            "actor": e.actor,
            "op": e.op,
            "payload": e.payload,
        },
        **_JSON_OPTS,
    )


def serialize_history(h: History) -> str:
    lines = [
        json.dumps(
            {
                "rec": "meta",
                "scenario": h.scenario,
                "truncated": h.truncated,
                "pending_hl": h.pending_hl,
                "pending_ll": h.pending_ll,
                "adversary_report": h.adversary_report,
            },
            **_JSON_OPTS,
        )
    ]
    lines.extend(_event_to_line(e) for e in h.events)
    lines.extend(
        json.dumps({"rec": "regop", **r.to_json()}, **_JSON_OPTS) for r in h.reg_ops
    )
    return "\n".join(lines) + "\n"


def deserialize_history(text: str) -> History:
    h = History()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise HistoryError(f"trace line {lineno}: not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise HistoryError(f"trace line {lineno}: expected an object")
        rec = obj.get("rec")
        if rec == "meta":
            h.scenario = obj.get("scenario", {})
            h.truncated = obj.get("truncated", False)
            h.pending_hl = obj.get("pending_hl", [])
            h.pending_ll = obj.get("pending_ll", [])
            h.adversary_report = obj.get("adversary_report")
        elif rec == "regop":
            h.reg_ops.append(RegOpRecord.from_json(obj))
        elif rec is None:
            try:
                h.events.append(
                    Event(
                        step=obj["step"],
                        kind=obj["kind"],
                        actor=obj["actor"],
                        op=obj["op"],
                        payload=obj["payload"],
                    )
                )
            except KeyError as exc:
                raise HistoryError(
                    f"trace line {lineno}: missing event field {exc}"
                ) from exc
        else:
            raise HistoryError(f"trace line {lineno}: unknown record tag {rec!r}")
    return h


def write_trace(h: History, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_history(h))


def read_trace(path: str) -> History:
    with open(path, "r", encoding="utf-8") as fh:
        return deserialize_history(fh.read())
