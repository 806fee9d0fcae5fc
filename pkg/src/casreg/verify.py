"""Offline history checkers and metrics.

Everything here is a pure function over a recorded `History` (or, for a few
entry points, over a plain list of high-level operations).  The checkers
re-derive their verdicts from the events alone; they never trust client-side
bookkeeping beyond the per-object operation records, and the decision-point
checker cross-validates even those against the event stream.

Checkers
--------
* `check_linearizable`: register linearizability via a precedence-respecting
  search.  Pending reads are excluded; each pending write may be included or
  excluded, whichever lets the history linearize.
* `check_sw_safety`: the weak guarantee for histories whose writes never
  overlap: a read overlapping no write must return the latest preceding
  write's value.
* `check_decision_points`: replays each per-object operation at its decision
  point (guard evaluation or deciding CAS apply) through the sequential
  object oracle and demands identical returns, plus step-by-step agreement
  between oracle state and recorded object state.
* `check_ts_uniqueness`: per (object, timestamp), one distinct value and at
  most one write-originated update.
* `check_bounds`: the quantitative run properties: failed-CAS counts versus
  point contention, the guard inequality on every issued CAS, per-object
  timestamp monotonicity, the timestamp-gap inequality, and obstruction
  attribution limits.
* `check_covering`: for adversarial covering runs, recomputes coverage at
  each epoch end from the events and checks the growth floor.

`run_checks` bundles any subset into a `CheckReport`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .base import ConfigError
from .core import (
    INITIAL_VALUE,
    History,
    HistoryError,
    RegOpRecord,
    TaggedValue,
    Value,
    point_contention,
    tv_from_json,
    validate_history,
)
from .protocol import AbdoOracle

# ---------------------------------------------------------------------------
# High-level projection
# ---------------------------------------------------------------------------


@dataclass
class HlOp:
    """One high-level operation as seen at the register interface."""

    id: str
    client: int
    kind: str  # "write" | "read"
    value: Value | None  # written value, None for reads
    result: object  # "ack" | (payload, writer, seq) | None while pending
    inv_step: int
    ret_step: int | None

    @property
    def complete(self) -> bool:
        return self.ret_step is not None

    def overlaps(self, other: "HlOp") -> bool:
        if self.ret_step is not None and self.ret_step < other.inv_step:
            return False
        if other.ret_step is not None and other.ret_step < self.inv_step:
            return False
        return True


def project_hl(h: History) -> list[HlOp]:
    """Project a history onto its high-level operations, in invocation order."""
    ops: dict[str, HlOp] = {}
    order: list[str] = []
    for e in h.events:
        if e.kind == "hl-invoke":
            val = None
            if e.payload.get("op") == "write":
                p = e.payload["value"]
                val = Value(p[0], p[1], p[2])
            ops[e.op] = HlOp(
                id=e.op, client=int(e.actor[1:]), kind=e.payload["op"],
                value=val, result=None, inv_step=e.step, ret_step=None,
            )
            order.append(e.op)
        elif e.kind == "hl-return":
            op = ops.get(e.op)
            if op is None:
                raise HistoryError(f"return for unknown op {e.op}")
            r = e.payload["result"]
            op.result = tuple(r) if isinstance(r, list) else r
            op.ret_step = e.step
    return [ops[i] for i in order]


def hlops_from_trace(trace) -> list[HlOp]:
    """Build operations from a compact external trace: a sequence of
    ("inv", actor, kind, value) and ("ret", actor, kind, result) tuples."""
    ops: list[HlOp] = []
    open_by_client: dict[int, HlOp] = {}
    for i, entry in enumerate(trace):
        tag, actor, kind, pv = entry
        client = int(actor[1:])
        if tag == "inv":
            op = HlOp(
                id=f"{actor}#{len(ops)}", client=client, kind=kind,
                value=Value(*pv) if pv is not None else None,
                result=None, inv_step=i, ret_step=None,
            )
            if client in open_by_client:
                raise HistoryError(f"client {client} has overlapping ops")
            open_by_client[client] = op
            ops.append(op)
        elif tag == "ret":
            op = open_by_client.pop(client, None)
            if op is None:
                raise HistoryError(f"return without invocation for {actor}")
            op.result = pv
            op.ret_step = i
        else:
            raise HistoryError(f"unknown trace tag {tag!r}")
    return ops


# ---------------------------------------------------------------------------
# Check results and reports
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    status: str  # "pass" | "fail" | "inapplicable"
    details: str = ""
    witness: dict | None = None
    metrics: dict | None = None

    @property
    def ok(self) -> bool:
        return self.status != "fail"

    def line(self) -> str:
        s = f"{self.name}: {self.status}"
        if self.details:
            s += f" ({self.details})"
        return s


@dataclass
class CheckReport:
    results: list[CheckResult] = field(default_factory=list)
    truncated: bool = False

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    @property
    def conclusive(self) -> bool:
        # A truncated run that still fails a checker is conclusively bad;
        # a truncated run that passes proves nothing about full runs.
        return not self.truncated or not self.ok

    def render_text(self) -> str:
        lines = [r.line() for r in self.results]
        if self.truncated:
            lines.append("note: run truncated; passing checks are inconclusive")
        metrics = {r.name: r.metrics for r in self.results if r.metrics}
        for name, m in metrics.items():
            lines.append(f"-- {name} metrics --")
            for k in sorted(m):
                lines.append(f"  {k}: {m[k]}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "truncated": self.truncated,
            "results": [
                {
                    "name": r.name,
                    "status": r.status,
                    "details": r.details,
                    "witness": r.witness,
                    "metrics": r.metrics,
                }
                for r in self.results
            ],
        }


# ---------------------------------------------------------------------------
# Linearizability
# ---------------------------------------------------------------------------


def _value_tuple(v: Value) -> tuple:
    return (v.payload, v.writer, v.seq)


_INITIAL_TUPLE = _value_tuple(INITIAL_VALUE)


def _as_ops(h) -> list[HlOp]:
    return project_hl(h) if isinstance(h, History) else list(h)


def _considered_for_lin(ops: list[HlOp]):
    """Split ops for the search: completed ops are required, pending writes
    are optional, pending reads drop out entirely."""
    required = [o for o in ops if o.complete]
    optional = [o for o in ops if not o.complete and o.kind == "write"]
    dropped = sum(1 for o in ops if not o.complete and o.kind == "read")
    return required, optional, dropped


def _check_unique_writes(writes: list[HlOp]) -> None:
    seen: dict[tuple, str] = {}
    for w in writes:
        vt = _value_tuple(w.value)
        if vt in seen:
            raise HistoryError(
                f"duplicate write value {vt} in ops {seen[vt]} and {w.id}; "
                "linearizability matching would be ambiguous"
            )
        seen[vt] = w.id


def check_linearizable(h, name: str = "lin") -> CheckResult:
    """Is there a total order of the completed operations (plus any subset of
    the pending writes) that respects real-time precedence and register
    semantics?  Raises HistoryError when write values are not unique."""
    ops = _as_ops(h)
    required, optional, dropped = _considered_for_lin(ops)
    considered = required + optional
    _check_unique_writes([o for o in considered if o.kind == "write"])

    written = {_value_tuple(o.value) for o in considered if o.kind == "write"}
    for o in required:
        if o.kind == "read" and o.result != _INITIAL_TUPLE and o.result not in written:
            return CheckResult(
                name, "fail",
                details=f"read {o.id} returned a never-written value",
                witness={"read": o.id, "returned": list(o.result)},
            )

    by_id = {o.id: o for o in considered}
    preds = {
        o.id: frozenset(
            p.id for p in considered
            if p.ret_step is not None and p.ret_step < o.inv_step
        )
        for o in considered
    }
    target = frozenset(o.id for o in required)
    writes_val = {
        o.id: _value_tuple(o.value) for o in considered if o.kind == "write"
    }

    visited: set[tuple] = set()
    best: dict = {"done": frozenset(), "cur": _INITIAL_TUPLE}

    def dfs(done: frozenset, cur: tuple, path: list) -> list | None:
        if target <= done:
            return list(path)
        key = (done, cur)
        if key in visited:
            return None
        visited.add(key)
        if len(done) > len(best["done"]):
            best["done"], best["cur"] = done, cur
        for o in considered:
            if o.id in done or not preds[o.id] <= done:
                continue
            if o.kind == "write":
                path.append(o.id)
                res = dfs(done | {o.id}, writes_val[o.id], path)
                if res is not None:
                    return res
                path.pop()
            elif o.result == cur:
                path.append(o.id)
                res = dfs(done | {o.id}, cur, path)
                if res is not None:
                    return res
                path.pop()
        return None

    order = dfs(frozenset(), _INITIAL_TUPLE, [])
    if order is not None:
        det = f"{len(required)} ops linearized"
        if optional:
            det += f", {len(optional)} pending writes optional"
        if dropped:
            det += f", {dropped} pending reads excluded"
        return CheckResult(name, "pass", details=det,
                           witness={"linearization": order})
    stuck = sorted(target - best["done"])
    frontier = [
        {
            "op": i, "kind": by_id[i].kind,
            "result": list(by_id[i].result)
            if isinstance(by_id[i].result, tuple) else by_id[i].result,
        }
        for i in stuck
    ]
    return CheckResult(
        name, "fail",
        details=f"no linearization; {len(stuck)} ops cannot be ordered",
        witness={
            "linearized": sorted(best["done"]),
            "value_at_stall": list(best["cur"]),
            "stuck": frontier,
        },
    )


def linearizable_brute_force(ops: list[HlOp]) -> bool:
    """All-orderings reference oracle for tiny histories (<= ~7 ops)."""
    import itertools

    required, optional, _ = _considered_for_lin(ops)
    _check_unique_writes(
        [o for o in required + optional if o.kind == "write"]
    )

    def consistent(seq: tuple[HlOp, ...]) -> bool:
        pos = {o.id: i for i, o in enumerate(seq)}
        for a in seq:
            for b in seq:
                if (
                    a.ret_step is not None
                    and a.ret_step < b.inv_step
                    and pos[a.id] > pos[b.id]
                ):
                    return False
        cur = _INITIAL_TUPLE
        for o in seq:
            if o.kind == "write":
                cur = _value_tuple(o.value)
            elif o.result != cur:
                return False
        return True

    for r in range(len(optional) + 1):
        for subset in itertools.combinations(optional, r):
            pool = required + list(subset)
            for perm in itertools.permutations(pool):
                if consistent(perm):
                    return True
    return False


def lin_failure_for_trace(trace) -> str | None:
    """Linearizability verdict for a compact external trace; None when it
    linearizes, else a short description."""
    res = check_linearizable(hlops_from_trace(trace))
    if res.ok:
        return None
    return f"{res.details}; witness {res.witness}"


# ---------------------------------------------------------------------------
# SW-safety
# ---------------------------------------------------------------------------


def check_sw_safety(h, name: str = "sw") -> CheckResult:
    """Weak register guarantee: applicable only when no two writes overlap.
    A completed read that overlaps no write must return the value of the
    last write completed before it (or the initial value)."""
    ops = _as_ops(h)
    writes = [o for o in ops if o.kind == "write"]
    for i, a in enumerate(writes):
        for b in writes[i + 1:]:
            if a.overlaps(b):
                return CheckResult(
                    name, "inapplicable",
                    details=f"writes {a.id} and {b.id} overlap",
                )
    checked = 0
    for r in ops:
        if r.kind != "read" or not r.complete:
            continue
        if any(r.overlaps(w) for w in writes):
            continue  # unconstrained
        checked += 1
        before = [w for w in writes if w.ret_step is not None
                  and w.ret_step < r.inv_step]
        expected = (
            _value_tuple(max(before, key=lambda w: w.ret_step).value)
            if before else _INITIAL_TUPLE
        )
        if r.result != expected:
            return CheckResult(
                name, "fail",
                details=f"read {r.id} returned stale value",
                witness={
                    "read": r.id,
                    "returned": list(r.result),
                    "expected": list(expected),
                },
            )
    total_reads = sum(1 for o in ops if o.kind == "read" and o.complete)
    return CheckResult(
        name, "pass",
        details=f"{checked} constrained reads of {total_reads}",
    )


# ---------------------------------------------------------------------------
# Decision-point replay
# ---------------------------------------------------------------------------


def _cas_triggers(h: History) -> dict[str, dict]:
    out = {}
    for e in h.events:
        if e.kind == "ll-trigger" and e.payload.get("action") == "cas":
            out[e.op] = {
                "obj": e.payload["obj"],
                "phase": e.payload["phase"],
                "exp": tv_from_json(e.payload["exp"]),
                "new": tv_from_json(e.payload["new"]),
                "regop": e.payload["regop"],
                "hl": e.payload["hl"],
            }
    return out


def check_decision_points(h: History, name: str = "linpoints") -> CheckResult:
    """Replay every per-object operation at its decision point through the
    sequential oracle: collect-phase CAS applies are reads whose recorded
    previous value must match the oracle, the deciding step of each update
    must leave the oracle in the recorded object state, and non-deciding
    applies must not disturb it."""
    if h.scenario.get("algorithm") != "cas-abd":
        return CheckResult(name, "inapplicable", details="needs cas-abd history")
    triggers = _cas_triggers(h)
    recs: dict[str, RegOpRecord] = {r.id: r for r in h.reg_ops}
    violations: list[dict] = []

    # Per object, merge apply events and guard decisions in step order.
    points: dict[int, list[tuple]] = {}
    for e in h.events:
        if e.kind == "ll-apply" and e.payload.get("action") == "cas":
            points.setdefault(e.payload["obj"], []).append(
                (e.step, "apply", e)
            )
    excluded = 0
    for r in h.reg_ops:
        if not r.completed:
            excluded += 1
            continue
        if r.lin_kind == "guard":
            points.setdefault(r.obj, []).append((r.guard_step, "guard", r))

    for obj in sorted(points):
        seq = sorted(points[obj], key=lambda p: p[0])
        oracle = AbdoOracle()
        for step, tag, item in seq:
            if tag == "guard":
                rec = item
                if oracle.state.ts < rec.t:
                    violations.append({
                        "kind": "guard-skip-unsound", "obj": obj,
                        "regop": rec.id, "step": step,
                        "detail": f"object ts {oracle.state.ts} below {rec.t}",
                    })
                continue
            e = item
            tr = triggers.get(e.op)
            if tr is None:
                violations.append({
                    "kind": "apply-without-trigger", "obj": obj, "ll": e.op,
                })
                continue
            prev = tv_from_json(e.payload["prev"])
            state = tv_from_json(e.payload["state"])
            swapped = e.payload["swapped"]
            if prev != oracle.state:
                violations.append({
                    "kind": "state-divergence", "obj": obj, "ll": e.op,
                    "step": step,
                    "detail": "recorded previous value differs from oracle",
                })
                oracle.state = prev  # resynchronize to localize later errors
            if tr["phase"] == "collect":
                # A read: never changes the state; its return is prev.
                if state != prev:
                    violations.append({
                        "kind": "read-changed-state", "obj": obj, "ll": e.op,
                        "step": step,
                    })
                if state != oracle.read():
                    violations.append({
                        "kind": "read-return-mismatch", "obj": obj,
                        "ll": e.op, "step": step,
                    })
                continue
            rec = recs.get(tr["regop"])
            if rec is None:
                violations.append({
                    "kind": "unknown-regop", "obj": obj, "ll": e.op,
                })
                continue
            if tr["new"] != TaggedValue(rec.t, rec.value):
                violations.append({
                    "kind": "trigger-record-mismatch", "obj": obj,
                    "ll": e.op, "regop": rec.id,
                })
            if swapped:
                oracle.update(rec.t, rec.value)
                if oracle.state != TaggedValue(rec.t, rec.value):
                    violations.append({
                        "kind": "install-rejected-by-oracle", "obj": obj,
                        "ll": e.op, "step": step,
                        "detail": f"oracle kept {oracle.state.ts}, not {rec.t}",
                    })
            elif rec.deciding_ll == e.op:
                # Deciding failure: the oracle update must be a no-op.
                if oracle.state.ts < rec.t:
                    violations.append({
                        "kind": "decided-but-installable", "obj": obj,
                        "ll": e.op, "step": step,
                        "detail": (
                            f"loop gave up at ts {prev.ts} though the oracle "
                            f"would install {rec.t}"
                        ),
                    })
                oracle.update(rec.t, rec.value)
            if state != oracle.state:
                violations.append({
                    "kind": "post-state-divergence", "obj": obj, "ll": e.op,
                    "step": step,
                })
                oracle.state = state

    # Every completed update must have exactly one decision point.
    replayed = 0
    for r in h.reg_ops:
        if not r.completed:
            continue
        replayed += 1
        has_guard = r.lin_kind == "guard" and r.guard_step is not None
        has_cas = r.lin_kind == "cas" and r.deciding_ll is not None
        if has_guard == has_cas:
            violations.append({
                "kind": "missing-or-double-decision", "regop": r.id,
            })
    if violations:
        return CheckResult(
            name, "fail",
            details=f"{len(violations)} decision-point violations",
            witness={"violations": violations[:5]},
        )
    det = f"{replayed} per-object ops replayed"
    if excluded:
        det += f", {excluded} abandoned excluded"
    return CheckResult(name, "pass", details=det)


# ---------------------------------------------------------------------------
# Timestamp uniqueness
# ---------------------------------------------------------------------------


def check_ts_uniqueness(h: History, name: str = "ts") -> CheckResult:
    """Per (object, timestamp): all update attempts must carry one and the
    same value, and at most one of them may originate from a write.  Reads
    re-propagating an existing pair during write-back are legitimate."""
    if h.scenario.get("algorithm") != "cas-abd":
        return CheckResult(name, "inapplicable", details="needs cas-abd history")
    hl_kind: dict[str, str] = {}
    for e in h.events:
        if e.kind == "hl-invoke":
            hl_kind[e.op] = e.payload["op"]
    groups: dict[tuple, list[RegOpRecord]] = {}
    for r in h.reg_ops:
        if r.kind == "update" and r.t is not None:
            groups.setdefault((r.obj, r.t), []).append(r)
    for (obj, t), rs in sorted(groups.items(), key=lambda g: (g[0][0], g[0][1].key())):
        values = {_value_tuple(r.value) for r in rs}
        if len(values) > 1:
            return CheckResult(
                name, "fail",
                details=f"object {obj} timestamp {t} bound to {len(values)} values",
                witness={
                    "obj": obj, "ts": [t.num, t.client],
                    "values": sorted(map(list, values)),
                    "regops": [r.id for r in rs],
                },
            )
        writers = [r for r in rs if hl_kind.get(r.hl) == "write"]
        if len(writers) > 1:
            return CheckResult(
                name, "fail",
                details=f"object {obj} timestamp {t} updated by "
                        f"{len(writers)} distinct writes",
                witness={
                    "obj": obj, "ts": [t.num, t.client],
                    "regops": [r.id for r in writers],
                },
            )
    return CheckResult(
        name, "pass", details=f"{len(groups)} (object, timestamp) groups"
    )


# ---------------------------------------------------------------------------
# Quantitative bounds
# ---------------------------------------------------------------------------


def obstruction_bound(c: int) -> int:
    """Maximum failed CAS count per object for an operation whose point
    contention is c."""
    return c * c + 3 * c + 2


def check_bounds(h: History, name: str = "bounds") -> CheckResult:
    """All quantitative run properties of the CAS-backed emulation."""
    if h.scenario.get("algorithm") != "cas-abd":
        return CheckResult(name, "inapplicable", details="needs cas-abd history")
    violations: list[dict] = []
    triggers = _cas_triggers(h)
    ops = project_hl(h)
    by_hl = {o.id: o for o in ops}
    recs = {r.id: r for r in h.reg_ops}

    # Guard inequality on every issued update CAS.
    for ll, tr in triggers.items():
        if tr["phase"] == "update" and not tr["new"].ts > tr["exp"].ts:
            violations.append({
                "kind": "cas-without-guard", "ll": ll, "obj": tr["obj"],
                "exp_ts": [tr["exp"].ts.num, tr["exp"].ts.client],
                "new_ts": [tr["new"].ts.num, tr["new"].ts.client],
            })

    # Per-object monotone stored timestamps; reads never change state.
    applies: dict[int, list] = {}
    for e in h.events:
        if e.kind == "ll-apply" and e.payload.get("action") == "cas":
            applies.setdefault(e.payload["obj"], []).append(e)
    for obj, evs in applies.items():
        last = None
        for e in evs:
            state = tv_from_json(e.payload["state"])
            if last is not None and state.ts < last:
                violations.append({
                    "kind": "timestamp-regression", "obj": obj,
                    "ll": e.op, "step": e.step,
                })
            last = state.ts
            tr = triggers.get(e.op)
            if tr and tr["phase"] == "collect":
                if tv_from_json(e.payload["prev"]) != state:
                    violations.append({
                        "kind": "read-obstructed", "obj": obj,
                        "ll": e.op, "step": e.step,
                    })

    # Operation-level accounting.
    op_ts: dict[str, object] = {}
    op_tup: dict[str, int] = {}  # update-phase start step
    op_recs: dict[str, list[RegOpRecord]] = {}
    for r in h.reg_ops:
        op_recs.setdefault(r.hl, []).append(r)
    for hl, rs in op_recs.items():
        tss = {r.t for r in rs}
        if len(tss) != 1:
            violations.append({
                "kind": "inconsistent-op-timestamp", "hl": hl,
                "count": len(tss),
            })
            continue
        op_ts[hl] = next(iter(tss))
        op_tup[hl] = min(r.start_step for r in rs)

    pnt: dict[str, int] = {}
    per_op_metrics: list[dict] = []
    update_cas_count: dict[str, int] = {}
    for ll, tr in triggers.items():
        if tr["phase"] == "update":
            update_cas_count[tr["hl"]] = update_cas_count.get(tr["hl"], 0) + 1
    for hl, rs in op_recs.items():
        if hl not in by_hl:
            continue
        c = point_contention(h, hl)
        pnt[hl] = c
        bound = obstruction_bound(c)
        worst = max(r.failed_cas for r in rs)
        for r in rs:
            if r.failed_cas > bound:
                violations.append({
                    "kind": "obstruction-bound-exceeded", "hl": hl,
                    "obj": r.obj, "failed": r.failed_cas,
                    "pntcont": c, "bound": bound,
                })
        per_op_metrics.append({
            "hl": hl, "kind": by_hl[hl].kind, "pntcont": c,
            "rounds": 2 if update_cas_count.get(hl) else 1,
            "update_cas": update_cas_count.get(hl, 0),
            "max_failed_cas": worst,
            "total_failed_cas": sum(r.failed_cas for r in rs),
            "bound": bound,
        })

    # Timestamp gap: any operation invoked after op's update phase began
    # carries a timestamp number within k+1 below op's, where k counts the
    # operations outstanding at that moment.
    hl_list = [o for o in ops if o.id in op_ts]
    for x in hl_list:
        t_up = op_tup[x.id]
        k = sum(
            1 for o in ops
            if o.inv_step < t_up and (o.ret_step is None or o.ret_step > t_up)
        )
        floor = op_ts[x.id].num - k - 1
        for y in hl_list:
            if y.inv_step > t_up and op_ts[y.id].num < floor:
                violations.append({
                    "kind": "timestamp-gap", "op": x.id, "other": y.id,
                    "num": op_ts[y.id].num, "floor": floor,
                    "outstanding": k,
                })

    # Obstruction attribution: per (op, object), a given other operation
    # obstructs at most once, and at most two obstructors returned before
    # the op's update phase began.
    installs: dict[int, list[tuple[int, str]]] = {}
    fails: dict[int, list] = {}
    for e in h.events:
        if e.kind != "ll-apply" or e.payload.get("action") != "cas":
            continue
        tr = triggers.get(e.op)
        if not tr or tr["phase"] != "update":
            continue
        obj = e.payload["obj"]
        if e.payload["swapped"]:
            installs.setdefault(obj, []).append((e.step, tr["regop"]))
        else:
            fails.setdefault(obj, []).append((e.step, e.op, tr))
    obstructors: dict[tuple, dict[str, int]] = {}
    for obj, fl in fails.items():
        ins = installs.get(obj, [])
        for step, ll, tr in fl:
            prior = [rid for s, rid in ins if s < step]
            if not prior:
                violations.append({
                    "kind": "failure-without-install", "obj": obj, "ll": ll,
                })
                continue
            culprit_rec = recs.get(prior[-1])
            if culprit_rec is None:
                continue
            key = (tr["hl"], obj)
            d = obstructors.setdefault(key, {})
            d[culprit_rec.hl] = d.get(culprit_rec.hl, 0) + 1
    for (hl, obj), d in obstructors.items():
        for other, cnt in d.items():
            if cnt > 1:
                violations.append({
                    "kind": "repeat-obstruction", "hl": hl, "obj": obj,
                    "by": other, "count": cnt,
                })
        if hl in op_tup:
            t_up = op_tup[hl]
            early = [
                o for o in d
                if o in by_hl and by_hl[o].ret_step is not None
                and by_hl[o].ret_step < t_up
            ]
            if len(early) > 2:
                violations.append({
                    "kind": "third-early-obstructor", "hl": hl, "obj": obj,
                    "early_obstructors": sorted(early),
                })

    # Same-timestamp-number contention.  Only writes mint numbers; a read
    # adopts the largest pair its collect saw and can carry the number long
    # after the minting write returned, so reads never count toward the
    # simultaneity bound.  Two writes sharing a number must overlap (the
    # later collect would otherwise have seen the earlier install), and a
    # family of pairwise-overlapping intervals shares a common instant, so
    # the anchor's point contention caps the group size.
    minted: dict[int, list[HlOp]] = {}
    for y in hl_list:
        if y.kind == "write":
            minted.setdefault(op_ts[y.id].num, []).append(y)
    for num, group in minted.items():
        for i, a in enumerate(group):
            for b in group[i + 1:]:
                if not a.overlaps(b):
                    violations.append({
                        "kind": "same-num-disjoint-writes", "num": num,
                        "ops": sorted((a.id, b.id)),
                    })
    for x in hl_list:
        num = op_ts[x.id].num
        same = {y.id for y in minted.get(num, ()) if x.overlaps(y)}
        same.add(x.id)
        if x.id in pnt and len(same) > pnt[x.id]:
            violations.append({
                "kind": "same-num-contention", "hl": x.id, "num": num,
                "ops": sorted(same), "pntcont": pnt[x.id],
            })

    metrics = {
        "per_op": sorted(per_op_metrics, key=lambda m: m["hl"]),
        "max_pntcont": max(pnt.values(), default=0),
        "max_failed_cas": max(
            (m["max_failed_cas"] for m in per_op_metrics), default=0
        ),
        "total_failed_cas": sum(
            m["total_failed_cas"] for m in per_op_metrics
        ),
    }
    if violations:
        return CheckResult(
            name, "fail",
            details=f"{len(violations)} bound violations",
            witness={"violations": violations[:5]},
            metrics=metrics,
        )
    return CheckResult(
        name, "pass",
        details=(
            f"{len(per_op_metrics)} ops, max contention "
            f"{metrics['max_pntcont']}, max failed CAS "
            f"{metrics['max_failed_cas']}"
        ),
        metrics=metrics,
    )


# ---------------------------------------------------------------------------
# Resource consumption
# ---------------------------------------------------------------------------


def resource_consumption(h: History) -> int:
    """Number of distinct base objects touched by any low-level event."""
    objs = set()
    for e in h.events:
        if e.kind in ("ll-trigger", "ll-apply", "ll-respond"):
            objs.add(e.payload["obj"])
    return len(objs)


def check_resource(h: History, name: str = "resource") -> CheckResult:
    m = resource_consumption(h)
    algo = h.scenario.get("algorithm")
    if algo == "cas-abd":
        n = h.scenario["n"]
        if m != n:
            return CheckResult(
                name, "fail",
                details=f"used {m} objects, constant-storage target is {n}",
                witness={"used": m, "expected": n},
                metrics={"resource_consumption": m},
            )
        return CheckResult(
            name, "pass", details=f"{m} objects (constant, n={n})",
            metrics={"resource_consumption": m},
        )
    return CheckResult(
        name, "pass", details=f"{m} objects used",
        metrics={"resource_consumption": m},
    )


# ---------------------------------------------------------------------------
# Covering runs
# ---------------------------------------------------------------------------


def cov_at(h: History, step: int) -> set[int]:
    """Objects covered at `step`: a low-level write was triggered on them at
    or before that step, not yet applied, and the object is not crashed.
    Recomputed purely from events."""
    pending: dict[int, set[str]] = {}
    crashed: set[int] = set()
    for e in h.events:
        if e.step > step:
            break
        if e.kind == "ll-trigger" and e.payload.get("action") == "write":
            pending.setdefault(e.payload["obj"], set()).add(e.op)
        elif e.kind == "ll-apply" and e.payload.get("action") == "write":
            pending.get(e.payload["obj"], set()).discard(e.op)
        elif e.kind == "server-crash":
            crashed.update(e.payload["objects"])
    return {o for o, p in pending.items() if p and o not in crashed}


def check_covering(h: History, name: str = "covering") -> CheckResult:
    """For an adversarial covering run: at the end of epoch i the recomputed
    covered set has at least i*f objects, none of them on a protected
    server, and the whole run keeps point contention 1."""
    rep = h.adversary_report
    if not rep or rep.get("policy") != "covering":
        return CheckResult(name, "inapplicable",
                           details="no covering adversary report")
    placement = {
        int(o): int(s) for o, s in h.scenario["placement"]["pairs"]
    }
    f = h.scenario["f"]
    F = set(rep["F"])
    violations = []
    trajectory = []
    for i, ep in enumerate(rep.get("epochs", []), start=1):
        cov = cov_at(h, ep["end_step"])
        trajectory.append({"epoch": i, "cov_size": len(cov),
                           "floor": i * f})
        if sorted(cov) != sorted(ep["cov"]):
            violations.append({
                "kind": "report-mismatch", "epoch": i,
                "recomputed": sorted(cov), "reported": sorted(ep["cov"]),
            })
        if len(cov) < i * f:
            violations.append({
                "kind": "coverage-floor", "epoch": i,
                "cov_size": len(cov), "floor": i * f,
            })
        touched = {placement[o] for o in cov}
        if touched & F:
            violations.append({
                "kind": "protected-server-covered", "epoch": i,
                "servers": sorted(touched & F),
            })
    ops = project_hl(h)
    for i, a in enumerate(ops):
        for b in ops[i + 1:]:
            if a.overlaps(b):
                violations.append({
                    "kind": "contention-above-one", "ops": [a.id, b.id],
                })
    if violations:
        return CheckResult(
            name, "fail",
            details=f"{len(violations)} covering violations",
            witness={"violations": violations[:5]},
            metrics={"trajectory": trajectory},
        )
    return CheckResult(
        name, "pass",
        details=f"{len(trajectory)} epochs, final coverage "
                f"{trajectory[-1]['cov_size'] if trajectory else 0}",
        metrics={"trajectory": trajectory},
    )


# ---------------------------------------------------------------------------
# Exhaustive small-instance oracle
# ---------------------------------------------------------------------------


def exhaustive_check(
    scenario,
    include_crashes: bool = False,
    granularity: str = "op",
    depth_bound: int = 500,
    max_states: int = 2_000_000,
):
    """Contract wrapper around the interleaving enumerator with strict size
    preconditions: at most 2 clients, 3 objects, and 1 operation per client."""
    from .sim.exhaustive import enumerate_interleavings

    sc = scenario.materialize(scenario.seed)
    if sc.k > 2:
        raise ConfigError("exhaustive_check accepts at most 2 clients")
    if len(sc.placement.objects) > 3:
        raise ConfigError("exhaustive_check accepts at most 3 objects")
    per_client: dict[int, int] = {}
    for it in sc.resolved_workload:
        per_client[it.client] = per_client.get(it.client, 0) + 1
    if any(v > 1 for v in per_client.values()):
        raise ConfigError("exhaustive_check accepts 1 operation per client")
    return enumerate_interleavings(
        sc, include_crashes=include_crashes, granularity=granularity,
        depth_bound=depth_bound, max_states=max_states,
    )


# ---------------------------------------------------------------------------
# Bundled runner
# ---------------------------------------------------------------------------

CHECK_FUNCTIONS = {
    "lin": check_linearizable,
    "sw": check_sw_safety,
    "linpoints": check_decision_points,
    "ts": check_ts_uniqueness,
    "bounds": check_bounds,
    "resource": check_resource,
    "covering": check_covering,
}

DEFAULT_CHECKS = ("lin", "linpoints", "ts", "bounds", "resource")


def run_checks(h: History, checks=DEFAULT_CHECKS) -> CheckReport:
    """Validate the history structurally, then run the selected checkers."""
    problems = validate_history(h)
    if problems:
        raise HistoryError("; ".join(problems))
    report = CheckReport(truncated=h.truncated)
    for token in checks:
        fn = CHECK_FUNCTIONS.get(token)
        if fn is None:
            raise ConfigError(
                f"unknown check {token!r}; known: {', '.join(sorted(CHECK_FUNCTIONS))}"
            )
        report.results.append(fn(h))
    return report
