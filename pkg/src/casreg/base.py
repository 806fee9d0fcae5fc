"""Base objects, servers, and placement.

A system is a set of servers, each hosting one or more base objects.  Two
object kinds exist:

* `CasObject`: holds a tagged value; supports an atomic compare-and-swap
  that returns the pre-apply state, and a read.
* `RegisterObject`: a plain multi-writer register; writes overwrite the state
  unconditionally when applied, so a delayed apply can regress the stored
  timestamp.  Writes that have been triggered but not applied sit in the
  object's pending set; such a register is "covered".

Crashing a server instantly and permanently crashes every object placed on
it.  Pending operations on crashed objects are frozen: they stay visible in
the bookkeeping but can never apply or respond again.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import ObjectId, ServerId, TaggedValue, INITIAL_TAGGED_VALUE


class ConfigError(ValueError):
    """Invalid scenario or placement configuration."""


class InvariantViolation(AssertionError):
    """A runtime assertion the protocols promise never to trip."""


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------


@dataclass
class Placement:
    """Total map delta: object -> hosting server, with optional capacity."""

    mapping: dict[ObjectId, ServerId]
    capacity: int | None = None

    def __post_init__(self) -> None:
        if not self.mapping:
            raise ConfigError("placement: empty object map")
        objs = sorted(self.mapping)
        if objs != list(range(len(objs))):
            raise ConfigError("placement: object ids must be dense naturals from 0")
        if self.capacity is not None:
            load: dict[ServerId, int] = {}
            for srv in self.mapping.values():
                load[srv] = load.get(srv, 0) + 1
            worst = max(load.values())
            if worst > self.capacity:
                raise ConfigError(
                    f"placement: capacity {self.capacity} exceeded (server load {worst})"
                )
        self._objects = objs
        self._servers = sorted(set(self.mapping.values()))

    @staticmethod
    def one_object_per_server(n: int) -> "Placement":
        if n < 1:
            raise ConfigError("placement: need at least one server")
        return Placement({i: i for i in range(n)}, capacity=1)

    @property
    def objects(self) -> list[ObjectId]:
        return self._objects

    @property
    def servers(self) -> list[ServerId]:
        return self._servers

    def server_of(self, obj: ObjectId) -> ServerId:
        return self.mapping[obj]

    def objects_on(self, servers: set[ServerId]) -> set[ObjectId]:
        """Inverse image: every object hosted on one of `servers`."""
        return {o for o, s in self.mapping.items() if s in servers}


# ---------------------------------------------------------------------------
# Objects and servers
# ---------------------------------------------------------------------------


@dataclass
class CasObject:
    id: ObjectId
    state: TaggedValue = INITIAL_TAGGED_VALUE
    crashed: bool = False


@dataclass
class RegisterObject:
    id: ObjectId
    state: TaggedValue = INITIAL_TAGGED_VALUE
    crashed: bool = False
    # op id -> the tagged value waiting to be applied; insertion order kept.
    pending_writes: dict[str, TaggedValue] = field(default_factory=dict)

    def covered(self) -> bool:
        return bool(self.pending_writes) and not self.crashed


@dataclass
class ServerState:
    id: ServerId
    objects: list[ObjectId]
    crashed: bool = False


# ---------------------------------------------------------------------------
# World: the mutable object/server store
# ---------------------------------------------------------------------------


class World:
    """Holds all object and server state for one run.

    `kind` selects the object flavor for every object ("cas" or "register");
    the emulations under test never mix flavors.  When `monotonic_cas` is
    set, every successful compare-and-swap asserts that the stored timestamp
    does not decrease; the CAS-backed emulation promises this and the
    assertion would expose a protocol bug immediately.
    """

    def __init__(
        self,
        placement: Placement,
        kind: str,
        f: int = 0,
        beyond_tolerance: bool = False,
        monotonic_cas: bool = True,
    ) -> None:
        if kind not in ("cas", "register"):
            raise ConfigError(f"unknown base object kind {kind!r}")
        self.placement = placement
        self.kind = kind
        self.f = f
        self.beyond_tolerance = beyond_tolerance
        self.monotonic_cas = monotonic_cas
        self.objects: dict[ObjectId, CasObject | RegisterObject] = {}
        for obj in placement.objects:
            if kind == "cas":
                self.objects[obj] = CasObject(obj)
            else:
                self.objects[obj] = RegisterObject(obj)
        self.servers: dict[ServerId, ServerState] = {
            s: ServerState(s, [o for o, sv in placement.mapping.items() if sv == s])
            for s in placement.servers
        }

    def clone(self) -> "World":
        """Copy for exhaustive search; placement is shared, state is private."""
        new = object.__new__(World)
        new.placement = self.placement
        new.kind = self.kind
        new.f = self.f
        new.beyond_tolerance = self.beyond_tolerance
        new.monotonic_cas = self.monotonic_cas
        objs: dict[ObjectId, CasObject | RegisterObject] = {}
        for obj, o in self.objects.items():
            if isinstance(o, RegisterObject):
                no: CasObject | RegisterObject = object.__new__(RegisterObject)
                no.pending_writes = dict(o.pending_writes)
            else:
                no = object.__new__(CasObject)
            no.id = obj
            no.state = o.state
            no.crashed = o.crashed
            objs[obj] = no
        new.objects = objs
        servers: dict[ServerId, ServerState] = {}
        for s, st in self.servers.items():
            ns = object.__new__(ServerState)
            ns.id = s
            ns.objects = st.objects
            ns.crashed = st.crashed
            servers[s] = ns
        new.servers = servers
        return new

    def state_key(self, rename: dict[str, tuple] | None = None) -> tuple:
        """Canonical hashable encoding of all object and server state.

        `rename` maps in-flight low-level ids to canonical names; pending
        register writes are keyed by it so the key is independent of how
        many low-level ops were ever issued.  A crashed object is reduced
        to the bare fact of the crash: its value can never be read again
        and its pending writes can never land.
        """
        parts = []
        for obj in sorted(self.objects):
            o = self.objects[obj]
            if o.crashed:
                parts.append((obj, None, True, ()))
                continue
            if isinstance(o, RegisterObject):
                if rename is None:
                    pend = tuple(sorted(o.pending_writes.items()))
                else:
                    pend = tuple(sorted(
                        (rename[ll], tv) for ll, tv in o.pending_writes.items()
                    ))
            else:
                pend = ()
            parts.append((obj, o.state, False, pend))
        crashed = tuple(s for s in sorted(self.servers) if self.servers[s].crashed)
        return (tuple(parts), crashed)

    # --- crash handling -----------------------------------------------------

    def crashed_servers(self) -> list[ServerId]:
        return [s for s, st in self.servers.items() if st.crashed]

    def crash_server(self, s: ServerId) -> list[ObjectId]:
        """Crash a server and all its objects; returns the affected objects.

        At most f servers may crash unless the scenario opted into
        beyond-tolerance operation.  Crashing twice is a configuration error.
        """
        st = self.servers.get(s)
        if st is None:
            raise ConfigError(f"crash: unknown server {s}")
        if st.crashed:
            raise ConfigError(f"crash: server {s} already crashed")
        if not self.beyond_tolerance and len(self.crashed_servers()) + 1 > self.f:
            raise ConfigError(
                f"crash: crashing server {s} exceeds tolerance f={self.f}"
            )
        st.crashed = True
        for obj in st.objects:
            self.objects[obj].crashed = True
        return list(st.objects)

    def alive(self, obj: ObjectId) -> bool:
        return not self.objects[obj].crashed

    # --- CAS objects ----------------------------------------------------------

    def cas_apply(
        self, obj: ObjectId, exp: TaggedValue, new: TaggedValue
    ) -> tuple[TaggedValue, bool]:
        """Atomically: if state == exp, install new.  Returns (pre-apply
        state, whether the swap happened).  Compare and install are one step;
        nothing can interleave between them.
        """
        o = self.objects[obj]
        if not isinstance(o, CasObject):
            raise ConfigError(f"cas_apply on non-CAS object {obj}")
        if o.crashed:
            raise InvariantViolation(f"cas_apply on crashed object {obj}")
        prev = o.state
        swapped = prev == exp
        if swapped:
            if self.monotonic_cas and new.ts < prev.ts:
                raise InvariantViolation(
                    f"object {obj}: CAS would regress timestamp "
                    f"{prev.ts} -> {new.ts}"
                )
            o.state = new
        return prev, swapped

    # --- plain registers --------------------------------------------------------

    def register_trigger_write(self, obj: ObjectId, op: str, tv: TaggedValue) -> None:
        o = self.objects[obj]
        if not isinstance(o, RegisterObject):
            raise ConfigError(f"register write on non-register object {obj}")
        o.pending_writes[op] = tv

    def register_apply_write(self, obj: ObjectId, op: str) -> TaggedValue:
        """Apply a previously triggered write; overwrites unconditionally.

        Plain registers have no guard, so applying a stale write regresses
        the stored state.  That is the behavior that makes delayed writes
        dangerous and covering possible.
        """
        o = self.objects[obj]
        if not isinstance(o, RegisterObject):
            raise ConfigError(f"register apply on non-register object {obj}")
        if o.crashed:
            raise InvariantViolation(f"register apply on crashed object {obj}")
        tv = o.pending_writes.pop(op)
        o.state = tv
        return tv

    def register_read(self, obj: ObjectId) -> TaggedValue:
        o = self.objects[obj]
        if not isinstance(o, RegisterObject):
            raise ConfigError(f"register read on non-register object {obj}")
        if o.crashed:
            raise InvariantViolation(f"register read on crashed object {obj}")
        return o.state

    # --- queries -----------------------------------------------------------------

    def covered_objects(self) -> set[ObjectId]:
        return {
            o.id
            for o in self.objects.values()
            if isinstance(o, RegisterObject) and o.covered()
        }

    def state_of(self, obj: ObjectId) -> TaggedValue:
        return self.objects[obj].state
