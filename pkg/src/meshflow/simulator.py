"""Deterministic discrete-event simulation of a service mesh.

Time is a logical integer clock.  Events are processed in ``(time, seq)``
order; a message sent at ``t`` over an edge of latency ``d`` is delivered
at ``t + d``.  Handling is instantaneous, so replica count never changes
timing, only which replica handles a message.

Each external injection, clock tick and store notification starts a
*conversation*.  Sessions opened while serving a conversation close when
its last in-flight message has been delivered; clock and subscription
sessions stay open for the whole run.
"""

from __future__ import annotations

import heapq
import itertools
import random
from collections import Counter, defaultdict
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

from .backend import BackendStore, Clock
from .mesh import Edge, ExclusionViolation, MeshGraph, Policy, ReplicaDelta, Sidecar, build_mesh
from .microservice import (
    MessageContext,
    Microservice,
    Protocol,
    ServiceError,
    Session,
    close_plug,
    open_plug,
    react,
)
from .types import Type, TypeRegistry, check_payload, format_payload, format_type

__all__ = [
    "EXTERNAL",
    "Injection",
    "Scenario",
    "Message",
    "SimEvent",
    "SimulationError",
    "InvariantViolation",
    "Stats",
    "RunResult",
    "Simulation",
    "run",
    "active_at",
]

EXTERNAL = "ext"


@dataclass(frozen=True)
class Injection:
    time: int
    gateway: str
    socket: str
    payload: Any


@dataclass
class Scenario:
    """Everything a run needs; built by the scenario loader or by hand."""

    services: dict[str, Microservice] = field(default_factory=dict)
    stores: dict[str, Protocol] = field(default_factory=dict)
    clocks: dict[str, int] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)
    exclusions: list[tuple[str, ...]] = field(default_factory=list)
    subscriptions: list[tuple[str, str]] = field(default_factory=list)
    inputs: list[Injection] = field(default_factory=list)
    policies: dict[str, Policy] = field(default_factory=dict)
    seed: int = 0
    horizon: int = 100
    latency: int = 1
    registry: TypeRegistry | None = None
    name: str = "scenario"


@dataclass(frozen=True)
class Message:
    session: str
    src: tuple[str, str]
    dst: tuple[str, str]
    type: Type
    payload: Any
    conversation: int
    sent: int


@dataclass(order=True, frozen=True)
class SimEvent:
    time: int
    seq: int
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class SimulationError(Exception):
    pass


class InvariantViolation(SimulationError):
    def __init__(self, time: int, invariant: str, detail: str):
        self.time = time
        self.invariant = invariant
        super().__init__(f"t={time}: {invariant} violated: {detail}")


@dataclass
class Stats:
    edge_messages: Counter = field(default_factory=Counter)
    replicas: list[tuple[int, str, int]] = field(default_factory=list)
    scale_events: list[tuple[int, str, str]] = field(default_factory=list)
    max_queue: dict[str, int] = field(default_factory=dict)
    overlay: list[tuple[int, tuple[str, ...]]] = field(default_factory=list)
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    pending: int = 0
    sessions_opened: int = 0
    sessions_closed: int = 0
    errors: Counter = field(default_factory=Counter)

    def lines(self) -> list[str]:
        out = [f"metric=messages key={k} value={getattr(self, k)}" for k in ("sent", "delivered", "dropped", "pending")]
        out.append(f"metric=sessions key=opened value={self.sessions_opened}")
        out.append(f"metric=sessions key=closed value={self.sessions_closed}")
        out += [f"metric=edge_messages key={e} value={n}" for e, n in sorted(self.edge_messages.items())]
        out += [f"metric=max_queue key={s} value={n}" for s, n in sorted(self.max_queue.items())]
        out += [f"metric=replicas key={s}@{t} value={n}" for t, s, n in self.replicas]
        out += [f"metric=scale key={s}@{t} value={d}" for t, s, d in self.scale_events]
        out += [f"metric=overlay key={t} value={','.join(a) or '-'}" for t, a in self.overlay]
        out += [f"metric=errors key={k} value={n}" for k, n in sorted(self.errors.items())]
        return out

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())


@dataclass
class RunResult:
    trace: list[str]
    stats: Stats
    stores: dict[str, dict[str, Any]]
    store_lines: list[str]
    errors: list[str]
    backend_messages: list[Message]
    session_log: list[tuple[int, str, str, str | None]]

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace + self.store_lines)


class Simulation:
    """One run of a scenario.  Construct, optionally :meth:`inject`, then :meth:`run`."""

    def __init__(
        self,
        scenario: Scenario,
        *,
        seed: int | None = None,
        horizon: int | None = None,
        checking: bool = True,
        policies: Mapping[str, Policy] | None = None,
    ):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.horizon = scenario.horizon if horizon is None else horizon
        self.checking = checking
        self.rng = random.Random(self.seed)
        self.registry = scenario.registry
        pol = dict(scenario.policies)
        if policies is not None:
            pol.update(policies)

        vertices: dict[str, Any] = {}
        self.sidecars: dict[str, Sidecar] = {}
        for name, svc in scenario.services.items():
            sc = Sidecar(svc, pol.get(name, Policy()), self.rng)
            self.sidecars[name] = sc
            vertices[name] = sc
        self.stores: dict[str, BackendStore] = {}
        for name, proto in scenario.stores.items():
            self.stores[name] = vertices[name] = BackendStore(name, proto)
        self.clocks: dict[str, Clock] = {}
        for name, period in scenario.clocks.items():
            self.clocks[name] = vertices[name] = Clock(name, period)
        self.mesh: MeshGraph = build_mesh(
            vertices, scenario.edges, scenario.exclusions, initial={svc for svc, _ in scenario.subscriptions}
        )

        self.now = 0
        self._heap: list[SimEvent] = []
        self._seq = itertools.count()
        self._sid = itertools.count(1)
        self._conv = itertools.count(1)
        self.sessions: dict[str, Session] = {}
        self.open_sessions: set[str] = set()
        self.parent: dict[str, str | None] = {}
        self.children: dict[tuple[int, str, str], str] = {}
        self.inflight: Counter = Counter()
        self.conv_sessions: dict[int, list[str]] = defaultdict(list)
        self.pending: Counter = Counter()
        self.stats = Stats()
        self.trace: list[str] = []
        self.errors: list[str] = []
        self.backend_messages: list[Message] = []
        self.session_log: list[tuple[int, str, str, str | None]] = []
        self._service_deliveries = 0
        self._ran = False

        for sc in self.sidecars.values():
            self.stats.replicas.append((0, sc.name, sc.count()))
            self.stats.max_queue[sc.name] = 0
        for inj in scenario.inputs:
            self.inject(inj.time, inj.gateway, inj.socket, inj.payload)
        self._start_persistent()
        self._last_overlay: tuple[str, ...] = tuple(self.mesh.active_edges())
        self.stats.overlay.append((0, self._last_overlay))

    # -- setup ----------------------------------------------------------

    def _push(self, time: int, kind: str, payload: Any) -> None:
        heapq.heappush(self._heap, SimEvent(time, next(self._seq), kind, payload))

    def inject(self, time: int, gateway: str, socket: str, payload: Any) -> None:
        """Schedule an external message to ``gateway.socket`` sent at ``time``."""
        if self._ran or time < self.now:
            raise SimulationError(f"cannot inject at t={time}: simulation is at t={self.now}")
        sc = self.sidecars.get(gateway)
        if sc is None or sc.kind != "gateway":
            raise SimulationError(f"unknown gateway {gateway!r}")
        ep = next((s for s in sc.sockets if s.name == socket), None)
        if ep is None:
            raise SimulationError(f"gateway {gateway} has no socket {socket!r}")
        if not check_payload(ep.receive_type, payload):
            raise SimulationError(
                f"{gateway}.{socket} receives {format_type(ep.receive_type, self.registry)}, got {payload!r}"
            )
        self._push(time, "inject", Injection(time, gateway, socket, payload))

    def _start_persistent(self) -> None:
        for e in self.mesh.edges:
            if e.dst in self.clocks and e.src in self.sidecars:
                sc = self.sidecars[e.src]
                sid = self._new_sid("c")
                session, _ = open_plug(
                    sc.instance(1), e.plug, self.clocks[e.dst], e.socket,
                    session_id=sid, edge=e.name, mesh=self.mesh, persistent=True,
                )
                session.period = self.clocks[e.dst].period
                self._register(session, sc, 1, None, None)
                if session.period <= self.horizon:
                    self._push(session.period, "tick", sid)
        for svc, plug in self.scenario.subscriptions:
            e = self.mesh.edge_for_plug(svc, plug)
            if e is None or e.dst not in self.stores:
                raise SimulationError(f"subscription {svc}.{plug} is not an edge to a store")
            sc = self.sidecars[svc]
            sid = self._new_sid("n")
            session, _ = open_plug(
                sc.instance(1), plug, self.stores[e.dst], e.socket,
                session_id=sid, edge=e.name, mesh=self.mesh, persistent=True,
            )
            self._register(session, sc, 1, None, None)
            self.stores[e.dst].subscribe(session)

    def _new_sid(self, prefix: str = "s") -> str:
        return f"{prefix}{next(self._sid)}"

    def _register(self, session: Session, client: Sidecar | None, rid: int | None, parent: str | None, conv: int | None) -> None:
        self.sessions[session.id] = session
        self.open_sessions.add(session.id)
        self.parent[session.id] = parent
        if client is not None and rid is not None:
            client.bind(session.id, rid)
        if conv is not None:
            self.conv_sessions[conv].append(session.id)
        self.stats.sessions_opened += 1
        self.session_log.append((self.now, "open", session.id, session.edge))

    # -- messaging ------------------------------------------------------

    def _type_name(self, t: Type) -> str:
        return format_type(t, self.registry, compact=True)

    def _send(self, session: Session, src: tuple[str, str], dst: tuple[str, str], t: Type, payload: Any, conv: int) -> None:
        latency = self.mesh.edge(session.edge).latency if session.edge in self.mesh._by_name else self.scenario.latency
        msg = Message(session.id, src, dst, t, payload, conv, self.now)
        self.stats.sent += 1
        self.pending[dst[0]] += 1
        self.inflight[conv] += 1
        self._push(self.now + latency, "deliver", msg)

    def _drop(self, kind: str, detail: str) -> None:
        self.stats.sent += 1
        self.stats.dropped += 1
        self.stats.errors[kind] += 1
        self.errors.append(f"t={self.now} {kind}: {detail}")

    def _on_inject(self, inj: Injection) -> None:
        conv = next(self._conv)
        sid = self._new_sid("x")
        sc = self.sidecars[inj.gateway]
        ep = next(s for s in sc.sockets if s.name == inj.socket)
        session = Session(
            sid, ep.protocol.name, (EXTERNAL, EXTERNAL), (inj.gateway, inj.socket),
            edge=f"{EXTERNAL}->{inj.gateway}.{inj.socket}", conversation=conv,
        )
        self._register(session, None, None, None, conv)
        self._send(session, (EXTERNAL, EXTERNAL), (inj.gateway, inj.socket), ep.receive_type, inj.payload, conv)
        self._maybe_finish(conv)

    def _on_tick(self, sid: str) -> None:
        session = self.sessions[sid]
        clock = self.clocks[session.server[0]]
        conv = next(self._conv)
        # ticks arrive exactly at multiples of the period
        msg = Message(sid, session.server, session.client, clock.sockets[0].protocol.server_sends, self.now, conv, self.now)
        self.stats.sent += 1
        self.inflight[conv] += 1
        self.pending[session.client[0]] += 1
        self._deliver(msg)
        nxt = self.now + clock.period
        if nxt <= self.horizon:
            self._push(nxt, "tick", sid)

    def _deliver(self, msg: Message) -> None:
        self.pending[msg.dst[0]] -= 1
        self.inflight[msg.conversation] -= 1
        session = self.sessions[msg.session]
        if not session.is_open:
            self.stats.dropped += 1
            self.stats.errors["closed-session"] += 1
            self.errors.append(f"t={self.now} closed-session: {msg.session}")
            self._maybe_finish(msg.conversation)
            return
        self.stats.delivered += 1
        self.stats.edge_messages[session.edge] += 1
        self.trace.append(
            f"t={self.now} session={msg.session} from={_ep(msg.src)} "
            f"to={_ep(msg.dst)} type={self._type_name(msg.type)} "
            f"payload={format_payload(msg.type, msg.payload)}"
        )
        vertex = msg.dst[0]
        if vertex in self.stores:
            self.backend_messages.append(msg)
            self._at_store(self.stores[vertex], session, msg)
        elif vertex in self.sidecars:
            self._at_service(self.sidecars[vertex], session, msg)
        self._maybe_finish(msg.conversation)

    def _at_store(self, store: BackendStore, session: Session, msg: Message) -> None:
        try:
            reply, notes = store.handle(msg.payload, self.now)
        except Exception as exc:  # noqa: BLE001 - surfaced as a dropped request
            self.stats.errors["store"] += 1
            self.errors.append(f"t={self.now} store {store.name}: {exc}")
            return
        self._send(session, session.server, session.client, store.protocol.client_receives, reply, msg.conversation)
        for note in notes:
            sub = self.sessions.get(note.session)
            if sub is None or not sub.is_open:
                continue
            conv = next(self._conv)
            self._send(sub, sub.server, sub.client, store.protocol.client_receives, store.notification_payload(note), conv)

    def _at_service(self, sc: Sidecar, session: Session, msg: Message) -> None:
        self._service_deliveries += 1
        rid = sc.route_inbound(session.id)
        replica = sc.replicas[rid]
        replica.handled += 1
        ctx = MessageContext(session, self.now, msg.conversation)
        try:
            reaction = react(sc.service, msg.dst[1], msg.payload, ctx)
        except ServiceError as exc:
            self.stats.errors["handler"] += 1
            self.errors.append(f"t={self.now} handler {exc}")
            return
        for ep_name, value in reaction.outgoing:
            self._emit(sc, rid, ep_name, value, session, msg.conversation)

    def _emit(self, sc: Sidecar, rid: int, ep_name: str, value: Any, via: Session, conv: int) -> None:
        svc = sc.name
        ep = sc.service.endpoint(ep_name)
        payload = value.payload if hasattr(value, "payload") else value
        if ep.role == "socket":
            target: Session | None = via
            while target is not None and not (target.server == (svc, ep_name) and target.is_open):
                p = self.parent.get(target.id)
                target = self.sessions.get(p) if p else None
            if target is None:
                self._drop("no-session", f"{svc}.{ep_name} has no open session to reply on")
                return
            self._send(target, (svc, ep_name), target.client, ep.send_type, payload, conv)
            return
        if via.client == (svc, ep_name) and via.is_open:
            self._send(via, (svc, ep_name), via.server, ep.send_type, payload, conv)
            return
        key = (conv, via.id, ep_name)
        sid = self.children.get(key)
        session = self.sessions.get(sid) if sid else None
        if session is None or not session.is_open:
            edge = self.mesh.edge_for_plug(svc, ep_name)
            if edge is None:
                self._drop("no-edge", f"plug {svc}.{ep_name} has no edge")
                return
            sid = self._new_sid()
            try:
                session, _ = open_plug(
                    sc.instance(rid), ep_name, self.mesh.vertices[edge.dst], edge.socket,
                    session_id=sid, edge=edge.name, mesh=self.mesh, conversation=conv,
                )
            except ExclusionViolation as exc:
                self._drop("exclusion", str(exc))
                return
            self._register(session, sc, rid, via.id, conv)
            self.children[key] = sid
        self._send(session, (svc, ep_name), session.server, ep.send_type, payload, conv)

    def _maybe_finish(self, conv: int) -> None:
        if self.inflight[conv] > 0:
            return
        del self.inflight[conv]
        for sid in self.conv_sessions.pop(conv, []):
            session = self.sessions[sid]
            if session.is_open and not session.persistent:
                self._close(session)

    def _close(self, session: Session) -> None:
        client, server = session.client[0], session.server[0]
        if client in self.sidecars:
            sc = self.sidecars[client]
            rid = sc.affinity.get(session.id, session.client_replica or 1)
            close_plug(sc.instance(rid), session, self.mesh)
            self._record_delta(sc.session_closed(session.id, self.now))
        else:
            session.status = "closed"
        if server in self.sidecars:
            self._record_delta(self.sidecars[server].session_closed(session.id, self.now))
        self.open_sessions.discard(session.id)
        self.stats.sessions_closed += 1
        self.session_log.append((self.now, "close", session.id, session.edge))

    def _record_delta(self, delta: ReplicaDelta | None) -> None:
        if delta is None:
            return
        for _ in delta.added:
            self.stats.scale_events.append((delta.time, delta.service, "up"))
        for _ in delta.removed:
            self.stats.scale_events.append((delta.time, delta.service, "down"))
        if delta.added or delta.removed:
            self.stats.replicas.append((delta.time, delta.service, delta.replicas))

    # -- loop -----------------------------------------------------------

    def _check(self) -> None:
        t = self.now
        truth = sorted(
            {self.sessions[s].edge for s in self.open_sessions if self.sessions[s].edge in self.mesh._by_name}
        )
        if truth != self.mesh.active_edges():
            raise InvariantViolation(t, "overlay soundness", f"overlay {self.mesh.active_edges()} != sessions {truth}")
        if not self.mesh.exclusion_ok():
            raise InvariantViolation(t, "exclusion safety", f"active edges {self.mesh.active_edges()}")
        if self._service_deliveries != sum(sc.routed for sc in self.sidecars.values()):
            raise InvariantViolation(t, "proxy totality", "a service delivery bypassed its sidecar")
        for sc in self.sidecars.values():
            if not sc.live():
                raise InvariantViolation(t, "replica liveness", f"{sc.name} has no live replica")

    def _end_of_tick(self) -> None:
        for name in sorted(self.sidecars):
            sc = self.sidecars[name]
            q = self.pending[name]
            if q > self.stats.max_queue[name]:
                self.stats.max_queue[name] = q
            self._record_delta(sc.autoscale(q, self.now))
        active = tuple(self.mesh.active_edges())
        if active != self._last_overlay:
            self._last_overlay = active
            self.stats.overlay.append((self.now, active))
            if self.checking and not self.mesh.acyclic:
                raise InvariantViolation(self.now, "acyclicity", "static graph became cyclic")
        if self.checking:
            self._check()

    def run(self) -> RunResult:
        if self._ran:
            raise SimulationError("simulation already ran")
        self._ran = True
        for t in range(self.horizon + 1):
            self.now = t
            while self._heap and self._heap[0].time == t:
                ev = heapq.heappop(self._heap)
                if ev.kind == "inject":
                    self._on_inject(ev.payload)
                elif ev.kind == "tick":
                    self._on_tick(ev.payload)
                else:
                    self._deliver(ev.payload)
            self._end_of_tick()
        self.stats.pending = sum(1 for ev in self._heap if ev.kind == "deliver")
        store_lines = [line for name in sorted(self.stores) for line in self.stores[name].dump()]
        return RunResult(
            trace=self.trace,
            stats=self.stats,
            stores={n: dict(s.data) for n, s in self.stores.items()},
            store_lines=store_lines,
            errors=self.errors,
            backend_messages=self.backend_messages,
            session_log=self.session_log,
        )


def _ep(end: tuple[str, str]) -> str:
    return EXTERNAL if end[0] == EXTERNAL else f"{end[0]}.{end[1]}"


def run(scenario: Scenario, **kwargs: Any) -> RunResult:
    return Simulation(scenario, **kwargs).run()


def active_at(result: RunResult, time: int) -> set[str]:
    """Edges carrying an open session at the end of tick ``time``, replayed from the session log."""
    open_: dict[str, str | None] = {}
    for t, kind, sid, edge in result.session_log:
        if t > time:
            break
        if kind == "open":
            open_[sid] = edge
        else:
            open_.pop(sid, None)
    return {e for e in open_.values() if e is not None and not e.startswith(EXTERNAL + "->")}
