"""The application as a multigraph of sidecars joined by protocol edges.

Vertices are sidecars of microservices, backend stores and clocks;
an edge ``(M1, (P, S), M2)`` joins a plug of M1 to a socket of M2.  The
static graph lists every edge that may ever be used and must be
acyclic.  At run time the active overlay is the set of edges carrying
at least one open session; members of an exclusion group may not be
active together.
"""

from __future__ import annotations

import random
from collections import deque
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

from .microservice import Instance, Microservice, Protocol

__all__ = [
    "Edge",
    "MeshViolation",
    "MeshError",
    "UnknownEdgeError",
    "ExclusionViolation",
    "SessionEvent",
    "OverlayDelta",
    "MeshGraph",
    "build_mesh",
    "break_cycle",
    "update_active_overlay",
    "find_cycle",
    "Policy",
    "Replica",
    "ReplicaDelta",
    "ScalingError",
    "RoutingError",
    "Sidecar",
    "route_inbound",
    "scale",
]


@dataclass(frozen=True)
class Edge:
    src: str
    plug: str
    dst: str
    socket: str
    protocol: Protocol | None = None
    name: str = ""
    latency: int = 1
    swapped: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            object.__setattr__(self, "name", f"{self.src}.{self.plug}->{self.dst}.{self.socket}")
        if self.latency < 1:
            raise ValueError(f"edge {self.name}: latency must be at least 1")

    def __str__(self) -> str:
        return f"{self.src}.{self.plug} -> {self.dst}.{self.socket}"


@dataclass(frozen=True)
class MeshViolation:
    kind: str
    message: str
    edge: str | None = None
    witness: tuple[str, ...] | None = None

    def __str__(self) -> str:
        return self.message


class MeshError(ValueError):
    def __init__(self, violations: Sequence[MeshViolation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class UnknownEdgeError(KeyError):
    pass


class ExclusionViolation(Exception):
    def __init__(self, edge: str, active: str):
        self.edge = edge
        self.active = active
        super().__init__(f"edge {edge} excluded while {active} is active")


@dataclass(frozen=True)
class SessionEvent:
    kind: str  # "open" | "close"
    edge: str
    session: str


@dataclass(frozen=True)
class OverlayDelta:
    added: tuple[str, ...] = ()
    removed: tuple[str, ...] = ()


def find_cycle(vertices: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    """One directed cycle as a closed vertex path, or None."""
    succ: dict[str, list[str]] = {v: [] for v in vertices}
    for a, b in edges:
        succ.setdefault(a, []).append(b)
        succ.setdefault(b, [])
    for v in succ:
        succ[v].sort()
    color = dict.fromkeys(succ, 0)
    for start in sorted(succ):
        if color[start]:
            continue
        path = [start]
        stack = [iter(succ[start])]
        color[start] = 1
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                color[path.pop()] = 2
                stack.pop()
            elif color[nxt] == 1:
                return path[path.index(nxt):] + [nxt]
            elif color[nxt] == 0:
                color[nxt] = 1
                path.append(nxt)
                stack.append(iter(succ[nxt]))
    return None


class MeshGraph:
    """Static multigraph plus the mutable active overlay."""

    def __init__(
        self,
        vertices: Mapping[str, Any],
        edges: Sequence[Edge],
        exclusions: Sequence[Iterable[str]] = (),
        initial: Iterable[str] = (),
    ):
        self.vertices: dict[str, Any] = dict(vertices)
        self.initial = frozenset(initial)
        self.edges: tuple[Edge, ...] = tuple(edges)
        self.exclusions: tuple[frozenset[str], ...] = tuple(frozenset(g) for g in exclusions)
        self._by_name = {e.name: e for e in self.edges}
        self._by_plug = {(e.src, e.plug): e for e in self.edges}
        self._groups: dict[str, list[frozenset[str]]] = {}
        for group in self.exclusions:
            for name in group:
                self._groups.setdefault(name, []).append(group)
        self.overlay: dict[str, set[str]] = {}

    def edge(self, name: str) -> Edge:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownEdgeError(name) from None

    def edge_for_plug(self, vertex: str, plug: str) -> Edge | None:
        return self._by_plug.get((vertex, plug))

    def out_edges(self, vertex: str) -> list[Edge]:
        return [e for e in self.edges if e.src == vertex]

    def in_edges(self, vertex: str) -> list[Edge]:
        return [e for e in self.edges if e.dst == vertex]

    @property
    def gateways(self) -> list[str]:
        return sorted(n for n, v in self.vertices.items() if getattr(v, "kind", "") == "gateway")

    @property
    def roots(self) -> list[str]:
        """Initial vertices: gateways, clock-driven services and store subscribers."""
        timed = {e.src for e in self.edges if getattr(self.vertices[e.dst], "kind", "") == "clock"}
        return sorted(set(self.gateways) | timed | (self.initial & set(self.vertices)))

    def cycle(self) -> list[str] | None:
        return find_cycle(self.vertices, [(e.src, e.dst) for e in self.edges])

    @property
    def acyclic(self) -> bool:
        return self.cycle() is None

    # -- overlay --------------------------------------------------------

    def active_edges(self) -> list[str]:
        return sorted(e for e, sessions in self.overlay.items() if sessions)

    def is_active(self, edge: str) -> bool:
        return bool(self.overlay.get(edge))

    def open_session(self, edge: str, session: str) -> OverlayDelta:
        self.edge(edge)
        for group in self._groups.get(edge, ()):
            for other in sorted(group):
                if other != edge and self.overlay.get(other):
                    raise ExclusionViolation(edge, other)
        sessions = self.overlay.setdefault(edge, set())
        was_active = bool(sessions)
        sessions.add(session)
        return OverlayDelta(added=() if was_active else (edge,))

    def close_session(self, edge: str, session: str) -> OverlayDelta:
        self.edge(edge)
        sessions = self.overlay.get(edge, set())
        if session not in sessions:
            return OverlayDelta()
        sessions.discard(session)
        return OverlayDelta(removed=() if sessions else (edge,))

    def exclusion_ok(self) -> bool:
        return all(sum(1 for e in g if self.overlay.get(e)) <= 1 for g in self.exclusions)

    # -- views ----------------------------------------------------------

    def _reach(self, usable: set[str], roots: Iterable[str] | None) -> tuple[set[str], list[Edge]]:
        roots = list(self.roots if roots is None else roots)
        seen = set(roots)
        used: list[Edge] = []
        queue = deque(roots)
        while queue:
            v = queue.popleft()
            for e in self.out_edges(v):
                if e.name not in usable:
                    continue
                used.append(e)
                if e.dst not in seen:
                    seen.add(e.dst)
                    queue.append(e.dst)
        return seen, sorted(used, key=lambda e: e.name)

    def reachable_active(self, roots: Iterable[str] | None = None) -> tuple[set[str], list[Edge]]:
        """Vertices and active edges reachable from the initial vertices along active edges."""
        return self._reach(set(self.active_edges()), roots)

    def reduction(self, chosen: Iterable[str], roots: Iterable[str] | None = None) -> tuple[set[str], list[Edge]]:
        """The static graph once each exclusion group keeps only its chosen member."""
        chosen = set(chosen)
        dropped = {e for g in self.exclusions if g & chosen for e in g if e not in chosen}
        usable = {e.name for e in self.edges} - dropped
        return self._reach(usable, roots)

    def to_text(self, active_only: bool = False, roots: Iterable[str] | None = None) -> str:
        """Adjacency listing; ``active_only`` restricts to the reachable active subgraph."""
        if active_only:
            names, edges = self.reachable_active(roots)
            annotate = lambda e: "active"  # noqa: E731
        else:
            names, edges = set(self.vertices), sorted(self.edges, key=lambda e: e.name)
            annotate = lambda e: "active" if self.is_active(e.name) else "inactive"  # noqa: E731
        lines = [f"node {n} {getattr(self.vertices[n], 'kind', 'service')}" for n in sorted(names)]
        for e in edges:
            proto = e.protocol.name if e.protocol is not None else "?"
            lines.append(f"{e.src}.{e.plug} -> {e.dst}.{e.socket} {proto} {annotate(e)}")
        return "\n".join(lines) + "\n"


def _endpoint(vertex: Any, name: str, role: str) -> Any:
    for ep in getattr(vertex, "sockets" if role == "socket" else "plugs", ()):
        if ep.name == name:
            return ep
    return None


def build_mesh(
    vertices: Mapping[str, Any] | Iterable[Any],
    edges: Sequence[Edge],
    exclusions: Sequence[Iterable[str]] = (),
    *,
    allow_cycles: bool = False,
    initial: Iterable[str] = (),
) -> MeshGraph:
    """Validate topology against the services' endpoints; raises :class:`MeshError`.

    Besides gateways, services driven by a clock edge and those named in
    ``initial`` (store subscribers) may have no inbound edge.
    """
    initial = set(initial)
    if not isinstance(vertices, Mapping):
        vertices = {v.name: v for v in vertices}
    problems: list[MeshViolation] = []
    checked: list[Edge] = []
    names: set[str] = set()
    plugs_used: dict[tuple[str, str], str] = {}
    attempted: list[Edge] = []
    for e in edges:
        if e.name in names:
            problems.append(MeshViolation("duplicate-edge", f"duplicate edge {e.name}", e.name))
        names.add(e.name)
        missing = [v for v in (e.src, e.dst) if v not in vertices]
        if missing:
            for v in missing:
                problems.append(MeshViolation("unknown-service", f"edge {e.name}: unknown service {v!r}", e.name))
            continue
        if e.swapped:
            checked.append(e)
            continue
        plug = _endpoint(vertices[e.src], e.plug, "plug")
        sock = _endpoint(vertices[e.dst], e.socket, "socket")
        if plug is None:
            problems.append(
                MeshViolation("protocol-mismatch", f"edge {e.name}: {e.src} has no plug {e.plug!r}", e.name)
            )
        if sock is None:
            problems.append(
                MeshViolation("protocol-mismatch", f"edge {e.name}: {e.dst} has no socket {e.socket!r}", e.name)
            )
        if plug is None or sock is None:
            continue
        if plug.protocol != sock.protocol or (e.protocol is not None and e.protocol != plug.protocol):
            # keep the edge for the dangling checks so one bad edge reports once
            attempted.append(e)
            plugs_used.setdefault((e.src, e.plug), e.name)
            problems.append(
                MeshViolation(
                    "protocol-mismatch",
                    f"edge {e.name}: plug {e.src}.{e.plug} speaks {plug.protocol.name} "
                    f"but socket {e.dst}.{e.socket} speaks {sock.protocol.name}",
                    e.name,
                )
            )
            continue
        key = (e.src, e.plug)
        if key in plugs_used:
            problems.append(
                MeshViolation("plug-reused", f"plug {e.src}.{e.plug} already used by edge {plugs_used[key]}", e.name)
            )
        plugs_used[key] = e.name
        checked.append(e if e.protocol is not None else replace(e, protocol=plug.protocol))

    for vname in sorted(vertices):
        v = vertices[vname]
        kind = getattr(v, "kind", "service")
        inbound = [e for e in checked + attempted if e.dst == vname]
        if kind == "gateway" and inbound:
            problems.append(
                MeshViolation("gateway-inbound", f"gateway {vname} has inbound edge {inbound[0].name}", inbound[0].name)
            )
        timed = any(e.src == vname and getattr(vertices[e.dst], "kind", "") == "clock" for e in checked)
        if kind != "gateway" and not inbound and not timed and vname not in initial:
            problems.append(MeshViolation("dangling-service", f"{kind} {vname} is unreachable: no inbound edge"))
        for p in getattr(v, "plugs", ()):
            if (vname, p.name) not in plugs_used and not any(
                e.swapped and e.dst == vname and e.socket == p.name for e in checked
            ):
                problems.append(MeshViolation("dangling-plug", f"plug {vname}.{p.name} has no edge"))

    for group in exclusions:
        group = list(group)
        for name in group:
            if name not in names:
                problems.append(MeshViolation("unknown-edge", f"exclusion group refers to unknown edge {name!r}", name))
        if len(set(group)) < 2:
            problems.append(MeshViolation("exclusion", f"exclusion group {group} needs at least two edges"))

    if not allow_cycles:
        cycle = find_cycle(vertices, [(e.src, e.dst) for e in checked])
        if cycle is not None:
            problems.append(
                MeshViolation("cycle", "mesh cycle: " + " -> ".join(cycle), witness=tuple(cycle))
            )
    if problems:
        raise MeshError(problems)
    return MeshGraph(vertices, checked, exclusions, initial)


def break_cycle(mesh: MeshGraph, edge: str) -> MeshGraph:
    """Reverse ``edge`` with client and server roles exchanged; messages keep their direction.

    The edge must lie on a cycle, and the reversal must leave the graph acyclic.
    """
    e = mesh.edge(edge)
    reach, _ = mesh._reach({x.name for x in mesh.edges}, [e.dst])
    if e.src not in reach:
        raise MeshError([MeshViolation("not-on-cycle", f"edge {edge} does not lie on a cycle", edge)])
    proto = e.protocol.swapped() if e.protocol is not None else None
    flipped = Edge(
        src=e.dst,
        plug=e.socket,
        dst=e.src,
        socket=e.plug,
        protocol=proto,
        name=e.name + "~",
        latency=e.latency,
        swapped=not e.swapped,
    )
    edges = [flipped if x.name == edge else x for x in mesh.edges]
    cycle = find_cycle(mesh.vertices, [(x.src, x.dst) for x in edges])
    if cycle is not None:
        raise MeshError(
            [MeshViolation("cycle", f"reversing {edge} leaves cycle: " + " -> ".join(cycle), edge, tuple(cycle))]
        )
    groups = [[flipped.name if n == edge else n for n in g] for g in mesh.exclusions]
    return MeshGraph(mesh.vertices, edges, groups, mesh.initial)


def update_active_overlay(mesh: MeshGraph, event: SessionEvent) -> OverlayDelta:
    if event.kind == "open":
        return mesh.open_session(event.edge, event.session)
    if event.kind == "close":
        return mesh.close_session(event.edge, event.session)
    raise ValueError(f"unknown session event {event.kind!r}")


# ---------------------------------------------------------------------------
# Sidecars


class ScalingError(Exception):
    pass


class RoutingError(Exception):
    pass


@dataclass
class Policy:
    """Replication and routing policy of one sidecar.

    Scale up when the inbound queue exceeds ``scale_up``; close an idle
    replica when it drops below ``scale_down`` and the replica has been
    idle for ``grace`` ticks.
    """

    replicas: int = 1
    max_replicas: int = 4
    scale_up: int = 8
    scale_down: int = 1
    grace: int = 10
    routing: str = "round_robin"
    autoscale: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.replicas <= self.max_replicas:
            raise ValueError("need 1 <= replicas <= max_replicas")
        if self.scale_down >= self.scale_up:
            raise ValueError("scale_down threshold must be below scale_up")
        if self.routing not in ("round_robin", "random"):
            raise ValueError(f"unknown routing policy {self.routing!r}")


@dataclass
class Replica:
    id: int
    instance: Instance
    status: str = "live"  # live | draining | closed
    sessions: set[str] = field(default_factory=set)
    idle_since: int | None = 0
    handled: int = 0


@dataclass(frozen=True)
class ReplicaDelta:
    service: str
    time: int
    added: tuple[int, ...] = ()
    removed: tuple[int, ...] = ()
    draining: tuple[int, ...] = ()
    replicas: int = 0


class Sidecar:
    """Manager and proxy of one microservice: replicas, routing, session monitor."""

    def __init__(self, service: Microservice, policy: Policy | None = None, rng: random.Random | None = None):
        self.service = service
        self.policy = policy or Policy()
        self.rng = rng or random.Random(0)
        self.replicas: dict[int, Replica] = {}
        self.affinity: dict[str, int] = {}
        self.monitor: set[str] = set()
        self.routed = 0
        self._next_id = 1
        self._cursor = 0
        for _ in range(self.policy.replicas):
            self._add(0)

    @property
    def name(self) -> str:
        return self.service.name

    @property
    def kind(self) -> str:
        return self.service.kind

    @property
    def sockets(self) -> tuple:
        return self.service.sockets

    @property
    def plugs(self) -> tuple:
        return self.service.plugs

    def _add(self, now: int) -> int:
        rid = self._next_id
        self._next_id += 1
        self.replicas[rid] = Replica(rid, Instance(self.service, rid), idle_since=now)
        return rid

    def live(self) -> list[int]:
        return sorted(r.id for r in self.replicas.values() if r.status == "live")

    def count(self) -> int:
        return sum(1 for r in self.replicas.values() if r.status != "closed")

    def instance(self, rid: int) -> Instance:
        return self.replicas[rid].instance

    def route_inbound(self, session: str) -> int:
        """Replica for a message on ``session``; a session sticks to its first replica."""
        rid = self.affinity.get(session)
        if rid is not None and self.replicas[rid].status != "closed":
            self.routed += 1
            return rid
        live = self.live()
        if not live:
            raise RoutingError(f"{self.name}: no live replica")
        if self.policy.routing == "random":
            rid = self.rng.choice(live)
        else:
            rid = live[self._cursor % len(live)]
            self._cursor += 1
        self.bind(session, rid)
        self.routed += 1
        return rid

    def bind(self, session: str, rid: int) -> None:
        self.affinity[session] = rid
        replica = self.replicas[rid]
        replica.sessions.add(session)
        replica.idle_since = None
        self.monitor.add(session)

    def session_closed(self, session: str, now: int) -> ReplicaDelta | None:
        self.monitor.discard(session)
        rid = self.affinity.pop(session, None)
        if rid is None:
            return None
        replica = self.replicas[rid]
        replica.sessions.discard(session)
        if not replica.sessions:
            replica.idle_since = now
            if replica.status == "draining":
                replica.status = "closed"
                return ReplicaDelta(self.name, now, removed=(rid,), replicas=self.count())
        return None

    def scale(self, direction: str, now: int = 0) -> ReplicaDelta:
        if direction == "up":
            if self.count() >= self.policy.max_replicas:
                raise ScalingError(f"{self.name}: already at {self.policy.max_replicas} replicas")
            rid = self._add(now)
            return ReplicaDelta(self.name, now, added=(rid,), replicas=self.count())
        if direction == "down":
            live = self.live()
            if len(live) <= 1:
                raise ScalingError(f"{self.name}: cannot close the last replica")
            idle = [r for r in live if not self.replicas[r].sessions]
            if idle:
                rid = idle[-1]
                self.replicas[rid].status = "closed"
                return ReplicaDelta(self.name, now, removed=(rid,), replicas=self.count())
            rid = live[-1]
            self.replicas[rid].status = "draining"
            return ReplicaDelta(self.name, now, draining=(rid,), replicas=self.count())
        raise ValueError(f"unknown scaling direction {direction!r}")

    def autoscale(self, queue: int, now: int) -> ReplicaDelta | None:
        """Apply the hysteresis policy to the current inbound queue length."""
        p = self.policy
        if not p.autoscale:
            return None
        if queue > p.scale_up and self.count() < p.max_replicas:
            return self.scale("up", now)
        if queue < p.scale_down:
            live = self.live()
            if len(live) <= p.replicas:
                return None
            idle = [
                r
                for r in live
                if not self.replicas[r].sessions
                and self.replicas[r].idle_since is not None
                and now - self.replicas[r].idle_since >= p.grace
            ]
            if idle:
                rid = idle[-1]
                self.replicas[rid].status = "closed"
                return ReplicaDelta(self.name, now, removed=(rid,), replicas=self.count())
        return None


def route_inbound(sidecar: Sidecar, message: Any, session: str) -> int:
    return sidecar.route_inbound(session)


def scale(sidecar: Sidecar, direction: str, now: int = 0) -> ReplicaDelta:
    return sidecar.scale(direction, now)
