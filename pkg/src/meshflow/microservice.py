"""Microservices as (sockets, dataflow functionality, plugs).

A microservice is stateless: :func:`handle_message` is a pure function
of the definition, the message and an explicit context.  Its internal
functionality is a dataflow graph whose exposed inputs are the input
adapters of its endpoints and whose exposed outputs are the output
adapters.  Instances (replicas) track which plugs have open sessions;
the active part of the graph grows and shrinks with them.
"""

from __future__ import annotations

import itertools
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

from .calculus.graph import (
    NOT_PRODUCED,
    Adapter,
    DataflowGraph,
    ExecutionError,
    FunctionValue,
    Link,
    Relation,
    RelationEvent,
    run_partial,
)
from .types import NAT, UNIT, Type, Value, check_payload, format_type, type_equal

__all__ = [
    "Protocol",
    "Endpoint",
    "Microservice",
    "Session",
    "MessageContext",
    "Reaction",
    "Instance",
    "GraphDelta",
    "ServiceError",
    "DefinitionError",
    "MessageTypeError",
    "ClosedSessionError",
    "HandlerError",
    "CLOCK",
    "define_microservice",
    "react",
    "handle_message",
    "open_plug",
    "close_plug",
    "attach_clock",
    "prune",
]


class ServiceError(Exception):
    pass


class DefinitionError(ServiceError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class MessageTypeError(ServiceError):
    pass


class ClosedSessionError(ServiceError):
    pass


class HandlerError(ServiceError):
    """An adapter or repository function failed while handling a message."""

    def __init__(self, service: str, endpoint: str, cause: Exception):
        self.service = service
        self.endpoint = endpoint
        self.cause = cause
        super().__init__(f"{service}.{endpoint}: {cause}")


@dataclass(frozen=True)
class Protocol:
    """A client/server pair ``(P, S)``; the two roles exchange dual message types."""

    name: str
    client_sends: Type
    client_receives: Type

    @property
    def server_receives(self) -> Type:
        return self.client_sends

    @property
    def server_sends(self) -> Type:
        return self.client_receives

    @classmethod
    def from_roles(cls, name: str, client: tuple[Type, Type], server: tuple[Type, Type]) -> Protocol:
        """Build from ``client=(sends, receives)`` and ``server=(receives, sends)``."""
        c_out, c_in = client
        s_in, s_out = server
        if not (type_equal(c_out, s_in) and type_equal(s_out, c_in)):
            raise DefinitionError(
                [f"protocol {name}: client and server message types are not dual"]
            )
        return cls(name, c_out, c_in)

    def swapped(self) -> Protocol:
        """Same messages, client and server exchanged."""
        return Protocol(self.name + "~", self.client_receives, self.client_sends)


CLOCK = Protocol("Clock", UNIT, NAT)


@dataclass(frozen=True)
class Endpoint:
    """An abstract socket (``role="socket"``) or abstract plug (``role="plug"``)."""

    name: str
    protocol: Protocol
    role: str = "socket"

    @property
    def receive_type(self) -> Type:
        return self.protocol.server_receives if self.role == "socket" else self.protocol.client_receives

    @property
    def send_type(self) -> Type:
        return self.protocol.server_sends if self.role == "socket" else self.protocol.client_sends


@dataclass(frozen=True, eq=False)
class Microservice:
    name: str
    sockets: tuple[Endpoint, ...]
    plugs: tuple[Endpoint, ...]
    graph: DataflowGraph
    relations: tuple[Relation, ...] = ()
    functions: tuple[FunctionValue, ...] = ()
    gateway: bool = False
    stateless: bool = field(default=True, init=False)

    @property
    def kind(self) -> str:
        return "gateway" if self.gateway else "service"

    @property
    def endpoints(self) -> tuple[Endpoint, ...]:
        return self.sockets + self.plugs

    def endpoint(self, name: str) -> Endpoint:
        for ep in self.endpoints:
            if ep.name == name:
                return ep
        raise KeyError(f"{self.name} has no endpoint {name!r}")

    def input_index(self, endpoint: str) -> int:
        for k, (nid, _) in enumerate(self.graph.inputs):
            node = self.graph.node(nid)
            if isinstance(node, Adapter) and node.endpoint == endpoint:
                return k
        raise KeyError(f"{self.name} has no input adapter for {endpoint!r}")

    def adapters(self, endpoint: str) -> list[Adapter]:
        return [n for n in self.graph.nodes if isinstance(n, Adapter) and n.endpoint == endpoint]


def define_microservice(
    name: str,
    sockets: Sequence[Endpoint],
    plugs: Sequence[Endpoint],
    graph: DataflowGraph,
    relations: Sequence[Relation] = (),
    functions: Sequence[FunctionValue] = (),
    gateway: bool = False,
) -> Microservice:
    """Check adapter bindings and signatures, then freeze the definition."""
    problems: list[str] = []
    sockets = tuple(Endpoint(e.name, e.protocol, "socket") for e in sockets)
    plugs = tuple(Endpoint(e.name, e.protocol, "plug") for e in plugs)
    endpoints: dict[str, Endpoint] = {}
    for ep in sockets + plugs:
        if ep.name in endpoints:
            problems.append(f"duplicate endpoint {ep.name!r}")
        endpoints[ep.name] = ep
    if graph.slots:
        problems.append("functionality graph has unfilled slots")

    f_in: dict[str, list[Adapter]] = {e: [] for e in endpoints}
    for node in graph.nodes:
        if not isinstance(node, Adapter):
            continue
        ep = endpoints.get(node.endpoint)
        if ep is None:
            problems.append(f"adapter {node.id} is bound to unknown endpoint {node.endpoint!r}")
            continue
        sig = node.fn.signature
        if node.direction == "in":
            f_in[ep.name].append(node)
            if len(sig.inputs) != 1 or not type_equal(sig.inputs[0], ep.receive_type):
                problems.append(
                    f"input adapter {node.id} takes {_ports(sig.inputs)}, "
                    f"but {ep.role} {ep.name} receives {format_type(ep.receive_type)}"
                )
        elif node.direction == "out":
            if len(sig.outputs) != 1 or not type_equal(sig.outputs[0], ep.send_type):
                problems.append(
                    f"output adapter {node.id} produces {_ports(sig.outputs)}, "
                    f"but {ep.role} {ep.name} sends {format_type(ep.send_type)}"
                )
        else:
            problems.append(f"adapter {node.id} has unknown direction {node.direction!r}")
    for ep_name, adapters in f_in.items():
        if len(adapters) != 1:
            problems.append(f"endpoint {ep_name} needs exactly one input adapter, found {len(adapters)}")

    for nid, port in graph.inputs:
        node = graph.node(nid)
        if not (isinstance(node, Adapter) and node.direction == "in" and port == 0):
            problems.append(f"exposed input {nid}.{port} is not an input adapter")
    exposed_in = {nid for nid, _ in graph.inputs}
    for adapters in f_in.values():
        for a in adapters:
            if a.id not in exposed_in:
                problems.append(f"input adapter {a.id} is not exposed")
    exposed_out = set()
    for o in graph.outputs:
        node = graph.node(o.node)
        exposed_out.add(o.node)
        if not (isinstance(node, Adapter) and node.direction == "out"):
            problems.append(f"exposed output {o.node}.{o.port} is not an output adapter")
    for node in graph.nodes:
        if isinstance(node, Adapter) and node.direction == "out" and node.id not in exposed_out:
            problems.append(f"output adapter {node.id} is not exposed")
    if problems:
        raise DefinitionError(problems)
    return Microservice(name, sockets, plugs, graph, tuple(relations), tuple(functions), gateway)


def _ports(types: Sequence[Type]) -> str:
    return "(" + "; ".join(format_type(t) for t in types) + ")"


@dataclass
class Session:
    """A protocol session, always directed plug -> socket (client -> server)."""

    id: str
    protocol: str
    client: tuple[str, str]
    server: tuple[str, str]
    edge: str | None = None
    conversation: int | None = None
    persistent: bool = False
    status: str = "open"
    client_replica: int | None = None
    server_replica: int | None = None
    period: int | None = None

    @property
    def is_open(self) -> bool:
        return self.status == "open"


@dataclass(frozen=True)
class MessageContext:
    """What a stateless handler may know beyond the message itself."""

    session: Session | None = None
    time: int = 0
    conversation: int | None = None


@dataclass(frozen=True)
class Reaction:
    outgoing: tuple[tuple[str, Value], ...]
    events: tuple[RelationEvent, ...] = ()
    fired: tuple[str, ...] = ()


def react(service: Microservice, endpoint: str, message: Any, context: MessageContext | None = None) -> Reaction:
    """Handle one incoming message and report relation events alongside the output."""
    ep = service.endpoint(endpoint)
    if context is not None and context.session is not None and not context.session.is_open:
        raise ClosedSessionError(f"session {context.session.id} is closed")
    if isinstance(message, Value):
        if not type_equal(message.type, ep.receive_type):
            raise MessageTypeError(
                f"{service.name}.{endpoint} receives {format_type(ep.receive_type)}, got {format_type(message.type)}"
            )
        payload = message.payload
    else:
        payload = message
        if not check_payload(ep.receive_type, payload):
            raise MessageTypeError(
                f"{service.name}.{endpoint} receives {format_type(ep.receive_type)}, got {payload!r}"
            )
    k = service.input_index(endpoint)
    try:
        result = run_partial(service.graph, {k: payload})
    except ExecutionError as exc:
        raise HandlerError(service.name, endpoint, exc) from exc
    outgoing = []
    for o, v in zip(service.graph.outputs, result.outputs):
        if v is not NOT_PRODUCED:
            adapter = service.graph.node(o.node)
            outgoing.append((adapter.endpoint, v))
    return Reaction(tuple(outgoing), result.events, result.fired)


def handle_message(
    service: Microservice | Instance, endpoint: str, message: Any, context: MessageContext | None = None
) -> list[tuple[str, Value]]:
    """Outgoing ``(endpoint, message)`` pairs produced by one incoming message."""
    if isinstance(service, Instance):
        service = service.service
    return list(react(service, endpoint, message, context).outgoing)


# ---------------------------------------------------------------------------
# Instances and dynamic plugs


@dataclass(frozen=True)
class GraphDelta:
    added: tuple[str, ...] = ()
    removed: tuple[str, ...] = ()


def prune(graph: DataflowGraph, inactive: set[str]) -> DataflowGraph:
    """Drop the adapters of inactive endpoints and everything that can only fire through them."""
    removed = {
        n.id for n in graph.nodes if isinstance(n, Adapter) and n.endpoint in inactive
    }
    changed = True
    while changed:
        changed = False
        for link in graph.links:
            if link.src in removed and link.dst not in removed:
                removed.add(link.dst)
                changed = True
    nodes = [n for n in graph.nodes if n.id not in removed]
    links: list[Link] = [l for l in graph.links if l.src not in removed and l.dst not in removed]
    inputs = [p for p in graph.inputs if p[0] not in removed]
    outputs = [o for o in graph.outputs if o.node not in removed]
    return DataflowGraph(nodes, links, inputs, outputs)


_session_ids = itertools.count(1)


class Instance:
    """A running replica of a microservice definition."""

    def __init__(self, service: Microservice, replica: int = 1):
        self.service = service
        self.replica = replica
        self.plug_sessions: dict[str, set[str]] = {p.name: set() for p in service.plugs}
        self._graph = self._current()

    def _current(self) -> DataflowGraph:
        inactive = {p for p, s in self.plug_sessions.items() if not s}
        if not inactive:
            return self.service.graph
        return prune(self.service.graph, inactive)

    @property
    def graph(self) -> DataflowGraph:
        """The active dataflow: socket adapters always, plug adapters while a session is open."""
        return self._graph

    def _refresh(self) -> GraphDelta:
        before = {n.id for n in self._graph.nodes}
        self._graph = self._current()
        after = {n.id for n in self._graph.nodes}
        return GraphDelta(tuple(sorted(after - before)), tuple(sorted(before - after)))

    def handle(self, endpoint: str, message: Any, context: MessageContext | None = None) -> Reaction:
        return react(self.service, endpoint, message, context)

    def __repr__(self) -> str:
        return f"<Instance {self.service.name}#{self.replica}>"


def open_plug(
    instance: Instance,
    plug: str,
    target: Any,
    socket: str,
    *,
    session_id: str | None = None,
    edge: str | None = None,
    mesh: Any = None,
    conversation: int | None = None,
    persistent: bool = False,
) -> tuple[Session, GraphDelta]:
    """Open a session from one of the instance's plugs to ``target``'s socket.

    ``target`` is any vertex with a ``sockets`` tuple.  When ``mesh`` is
    given the session is registered on ``edge`` first, so an exclusion
    violation rejects the open before anything changes.
    """
    ep = instance.service.endpoint(plug)
    if ep.role != "plug":
        raise ServiceError(f"{instance.service.name}.{plug} is not a plug")
    match = [s for s in target.sockets if s.name == socket]
    if not match:
        raise ServiceError(f"{target.name} has no socket {socket!r}")
    if match[0].protocol != ep.protocol:
        raise ServiceError(
            f"{target.name}.{socket} speaks {match[0].protocol.name}, plug {plug} speaks {ep.protocol.name}"
        )
    sid = session_id or f"s{next(_session_ids)}"
    session = Session(
        sid,
        ep.protocol.name,
        (instance.service.name, plug),
        (target.name, socket),
        edge=edge,
        conversation=conversation,
        persistent=persistent,
        client_replica=instance.replica,
    )
    if mesh is not None:
        mesh.open_session(edge, sid)
    instance.plug_sessions[plug].add(sid)
    return session, instance._refresh()


def close_plug(instance: Instance, session: Session, mesh: Any = None) -> GraphDelta:
    if not session.is_open:
        raise ClosedSessionError(f"session {session.id} is already closed")
    session.status = "closed"
    if mesh is not None and session.edge is not None:
        mesh.close_session(session.edge, session.id)
    plug = session.client[1]
    instance.plug_sessions.get(plug, set()).discard(session.id)
    return instance._refresh()


def attach_clock(
    instance: Instance,
    plug: str,
    period: int,
    clock: Any,
    *,
    session_id: str | None = None,
    edge: str | None = None,
    mesh: Any = None,
) -> Session:
    """Open a persistent session on a clock plug; the simulator ticks it every ``period``."""
    if period <= 0:
        raise ValueError(f"clock period must be positive, got {period}")
    ep = instance.service.endpoint(plug)
    if ep.protocol != CLOCK:
        raise ServiceError(f"{instance.service.name}.{plug} is not a clock plug")
    session, _ = open_plug(
        instance, plug, clock, "tick", session_id=session_id, edge=edge, mesh=mesh, persistent=True
    )
    session.period = period
    return session
