"""Typed acyclic dataflow graphs that double as functions and functionals.

A graph is a set of nodes with typed input and output ports, links from
output ports to input ports, and an ordered list of exposed ports.  With
all slots filled it denotes a function from the exposed input types to
the exposed output types; with unfilled slots it is a board awaiting
functions (see :func:`fill_slots`).

Execution uses plain dataflow firing: a node fires once all its input
ports hold values.  Routers forward their data input to exactly one of
their two outputs, so anything downstream of the other branch never
fires.  Exposed outputs tagged with the same alternative group are the
``B || C`` outputs of a graph: exactly one of them is produced.
"""

from __future__ import annotations

import heapq
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace
from typing import Any, ClassVar

from ..types import (
    BOOL,
    Fn,
    FunctionLike,
    Type,
    TypeRegistry,
    Value,
    check_payload,
    format_type,
    intern,
    type_equal,
)

__all__ = [
    "NOT_PRODUCED",
    "FunctionValue",
    "Primitive",
    "GraphFunction",
    "Functional",
    "Relation",
    "Node",
    "Apply",
    "Adapter",
    "Router",
    "Slot",
    "Const",
    "Link",
    "Exposed",
    "Violation",
    "GraphError",
    "ExecutionError",
    "InputError",
    "EvaluatorError",
    "OutputTypeError",
    "AlternativeError",
    "SlotError",
    "DataflowGraph",
    "RelationEvent",
    "ExecutionResult",
    "check_graph",
    "build_graph",
    "execute",
    "run_partial",
    "fill_slots",
]


class _NotProduced:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NOT_PRODUCED"

    def __bool__(self) -> bool:
        return False


NOT_PRODUCED: Any = _NotProduced()


# ---------------------------------------------------------------------------
# Function values


class FunctionValue(FunctionLike):
    """A function-typed payload: something with a signature that can be invoked."""

    name: str
    signature: Fn

    def invoke(self, args: Sequence[Any]) -> tuple:
        """Run on raw payloads; entries of the result may be ``NOT_PRODUCED``."""
        raise NotImplementedError

    def replicate(self) -> FunctionValue:
        raise NotImplementedError

    def __call__(self, *args: Any) -> Any:
        out = self.invoke(args)
        return out[0] if len(out) == 1 else out

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}: {format_type(self.signature)}>"


class Primitive(FunctionValue):
    """A black-box function implemented in Python.

    ``impl`` returns a single payload when the signature has one output
    and a tuple otherwise.
    """

    def __init__(self, name: str, signature: Fn, impl: Callable[..., Any]):
        self.name = name
        self.signature = intern(signature)
        self.impl = impl
        self._single = len(self.signature.outputs) == 1

    def invoke(self, args: Sequence[Any]) -> tuple:
        result = self.impl(*args)
        if self._single:
            return (result,)
        return tuple(result)

    def replicate(self) -> Primitive:
        return Primitive(self.name, self.signature, self.impl)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Primitive)
            and self.name == other.name
            and self.signature == other.signature
            and self.impl is other.impl
        )

    def __hash__(self) -> int:
        return hash((self.name, self.signature))


class GraphFunction(FunctionValue):
    """A slot-free dataflow graph used as a function."""

    def __init__(self, graph: DataflowGraph, name: str | None = None):
        if graph.slots:
            raise SlotError(f"graph has {len(graph.slots)} unfilled slot(s)")
        if graph.signature is None:
            raise ValueError("a graph without exposed outputs is not a function")
        self.graph = graph
        self.name = name or "graph"
        self.signature = graph.signature

    def invoke(self, args: Sequence[Any]) -> tuple:
        if len(args) != len(self.graph.inputs):
            raise InputError(
                f"{self.name} expects {len(self.graph.inputs)} input(s), got {len(args)}"
            )
        outputs = _evaluate(self.graph, args, None, None, None)
        _check_produced(self.graph, outputs)
        return tuple(outputs)

    def replicate(self) -> GraphFunction:
        return GraphFunction(self.graph.replicate(), self.name)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GraphFunction) and self.graph == other.graph

    def __hash__(self) -> int:
        return hash(self.signature)


class Functional(FunctionValue):
    """A board with slots, taken as a function of the functions plugged into it.

    The first inputs of the signature are the slot types, in slot order.
    Uncurried, the remaining inputs are the board's exposed inputs and the
    result is what the filled board computes.  Curried, the result is the
    filled board itself as a function value.
    """

    def __init__(self, board: DataflowGraph, name: str = "functional", curried: bool = False):
        self.board = board
        self.name = name
        self.curried = curried
        slot_types = tuple(s.signature for s in board.slots)
        inner = board.signature
        if curried:
            self.signature = intern(Fn(slot_types, (inner,)))
        else:
            self.signature = intern(Fn(slot_types + inner.inputs, inner.outputs))

    def invoke(self, args: Sequence[Any]) -> tuple:
        k = len(self.board.slots)
        filled = GraphFunction(fill_slots(self.board, list(args[:k])), self.name)
        if self.curried:
            return (filled,)
        return filled.invoke(args[k:])

    def replicate(self) -> Functional:
        return Functional(self.board.replicate(), self.name, self.curried)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Functional)
            and self.curried == other.curried
            and self.board == other.board
        )

    def __hash__(self) -> int:
        return hash(self.signature)


@dataclass(frozen=True)
class Relation:
    """A boolean-valued function; each evaluation is an event."""

    name: str
    inputs: tuple[Type, ...]
    impl: Callable[..., bool] = field(repr=False)

    @property
    def signature(self) -> Fn:
        return intern(Fn(tuple(self.inputs), (BOOL,)))

    def evaluate(self, args: Sequence[Any]) -> bool:
        result = self.impl(*args)
        if type(result) is not bool:
            raise TypeError(f"relation {self.name} returned {result!r}, not a boolean")
        return result


# ---------------------------------------------------------------------------
# Nodes and links


@dataclass(frozen=True)
class Node:
    id: str
    kind: ClassVar[str] = "node"

    @property
    def inputs(self) -> tuple[Type, ...]:
        raise NotImplementedError

    @property
    def outputs(self) -> tuple[Type, ...]:
        raise NotImplementedError

    def label(self) -> str:
        return ""


@dataclass(frozen=True)
class Apply(Node):
    """A repository function (or any function value) placed in the graph."""

    fn: FunctionValue = None  # type: ignore[assignment]
    kind: ClassVar[str] = "function"

    @property
    def inputs(self) -> tuple[Type, ...]:
        return self.fn.signature.inputs

    @property
    def outputs(self) -> tuple[Type, ...]:
        return self.fn.signature.outputs

    def label(self) -> str:
        return self.fn.name


@dataclass(frozen=True)
class Adapter(Apply):
    """A message adapter bound to a protocol endpoint of a microservice.

    ``direction`` is ``"in"`` for adapters that turn an incoming message
    into data, ``"out"`` for adapters that produce an outgoing message.
    """

    endpoint: str = ""
    direction: str = "in"

    @property
    def kind(self) -> str:  # type: ignore[override]
        return "input-adapter" if self.direction == "in" else "output-adapter"

    def label(self) -> str:
        return f"{self.endpoint}:{self.fn.name}"


@dataclass(frozen=True)
class Router(Node):
    """if-then-else: input 0 carries data, inputs 1.. feed the relation.

    Output 0 receives the data when the relation holds, output 1 otherwise.
    """

    relation: Relation = None  # type: ignore[assignment]
    data: Type = None  # type: ignore[assignment]
    kind: ClassVar[str] = "router"

    @property
    def inputs(self) -> tuple[Type, ...]:
        return (self.data,) + tuple(self.relation.inputs)

    @property
    def outputs(self) -> tuple[Type, ...]:
        return (self.data, self.data)

    def label(self) -> str:
        return self.relation.name


@dataclass(frozen=True)
class Slot(Node):
    signature: Fn = None  # type: ignore[assignment]
    kind: ClassVar[str] = "slot"

    @property
    def inputs(self) -> tuple[Type, ...]:
        return self.signature.inputs

    @property
    def outputs(self) -> tuple[Type, ...]:
        return self.signature.outputs


@dataclass(frozen=True)
class Const(Node):
    type: Type = None  # type: ignore[assignment]
    payload: Any = None
    kind: ClassVar[str] = "constant"

    def __post_init__(self) -> None:
        if not check_payload(self.type, self.payload):
            raise ValueError(f"constant {self.id}: {self.payload!r} is not a {format_type(self.type)}")

    @property
    def inputs(self) -> tuple[Type, ...]:
        return ()

    @property
    def outputs(self) -> tuple[Type, ...]:
        return (self.type,)


@dataclass(frozen=True, order=True)
class Link:
    src: str
    src_port: int
    dst: str
    dst_port: int

    def __str__(self) -> str:
        return f"{self.src}.{self.src_port} -> {self.dst}.{self.dst_port}"


@dataclass(frozen=True)
class Exposed:
    """An exposed output port; ``group`` is None for outputs always produced."""

    node: str
    port: int
    group: int | None = None


# ---------------------------------------------------------------------------
# Errors


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    link: Link | None = None
    types: tuple[Type, Type] | None = None
    witness: tuple[str, ...] | None = None
    port: tuple[str, int] | None = None

    def __str__(self) -> str:
        return self.message


class GraphError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class ExecutionError(RuntimeError):
    def __init__(self, message: str, node: str | None = None):
        self.node = node
        self.detail = message
        super().__init__(f"node {node}: {message}" if node else message)


class InputError(ExecutionError):
    pass


class EvaluatorError(ExecutionError):
    pass


class OutputTypeError(ExecutionError):
    pass


class AlternativeError(ExecutionError):
    pass


class SlotError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Validation


def _find_cycle(node_ids: Sequence[str], succ: dict[str, list[str]]) -> list[str] | None:
    color = dict.fromkeys(node_ids, 0)
    for start in node_ids:
        if color[start]:
            continue
        stack = [(start, iter(succ.get(start, ())))]
        path = [start]
        color[start] = 1
        while stack:
            nid, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[nid] = 2
                stack.pop()
                path.pop()
            elif color.get(nxt) == 1:
                return path[path.index(nxt):] + [nxt]
            elif color.get(nxt) == 0:
                color[nxt] = 1
                stack.append((nxt, iter(succ.get(nxt, ()))))
                path.append(nxt)
    return None


def _topological_order(node_ids: Sequence[str], links: Iterable[Link]) -> list[str] | None:
    """Kahn's algorithm with the smallest ready node id first; None on a cycle."""
    indeg = dict.fromkeys(node_ids, 0)
    succ: dict[str, list[str]] = {n: [] for n in node_ids}
    for link in links:
        succ[link.src].append(link.dst)
        indeg[link.dst] += 1
    ready = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, m)
    return order if len(order) == len(indeg) else None


def check_graph(
    nodes: Sequence[Node],
    links: Sequence[Link],
    inputs: Sequence[tuple[str, int]],
    outputs: Sequence[Exposed | tuple],
) -> list[Violation]:
    """All structural violations of a prospective graph (empty if valid)."""
    out: list[Violation] = []
    by_id: dict[str, Node] = {}
    for node in nodes:
        if node.id in by_id:
            out.append(Violation("duplicate-node", f"duplicate node id {node.id!r}"))
        by_id[node.id] = node

    def port_ok(nid: str, port: int, side: str, what: str) -> bool:
        node = by_id.get(nid)
        if node is None:
            out.append(Violation("unknown-node", f"{what} refers to unknown node {nid!r}", port=(nid, port)))
            return False
        n = len(node.inputs if side == "in" else node.outputs)
        if not 0 <= port < n:
            out.append(
                Violation("bad-port", f"{what}: node {nid!r} has no {side}put port {port}", port=(nid, port))
            )
            return False
        return True

    fed: dict[tuple[str, int], str] = {}
    good_links = []
    for link in links:
        ok_src = port_ok(link.src, link.src_port, "out", f"link {link}")
        ok_dst = port_ok(link.dst, link.dst_port, "in", f"link {link}")
        if not (ok_src and ok_dst):
            continue
        good_links.append(link)
        t_out = by_id[link.src].outputs[link.src_port]
        t_in = by_id[link.dst].inputs[link.dst_port]
        if not type_equal(t_out, t_in):
            out.append(
                Violation(
                    "type-mismatch",
                    f"link {link}: output type {format_type(t_out)} does not match input type {format_type(t_in)}",
                    link=link,
                    types=(t_out, t_in),
                )
            )
        key = (link.dst, link.dst_port)
        if key in fed:
            out.append(
                Violation("duplicate-link", f"input port {link.dst}.{link.dst_port} has more than one incoming link", link=link, port=key)
            )
        fed[key] = "link"

    for nid, port in inputs:
        if not port_ok(nid, port, "in", f"exposed input {nid}.{port}"):
            continue
        key = (nid, port)
        if key in fed:
            out.append(
                Violation("duplicate-link", f"exposed input {nid}.{port} is already fed", port=key)
            )
        fed[key] = "input"

    seen_out = set()
    for item in outputs:
        ex = item if isinstance(item, Exposed) else Exposed(*item)
        if not port_ok(ex.node, ex.port, "out", f"exposed output {ex.node}.{ex.port}"):
            continue
        if (ex.node, ex.port) in seen_out:
            out.append(Violation("duplicate-output", f"output {ex.node}.{ex.port} exposed twice", port=(ex.node, ex.port)))
        seen_out.add((ex.node, ex.port))

    for node in nodes:
        for i in range(len(node.inputs)):
            if (node.id, i) not in fed:
                out.append(
                    Violation("dangling", f"input port {node.id}.{i} is neither linked nor exposed", port=(node.id, i))
                )

    ids = list(by_id)
    succ: dict[str, list[str]] = {}
    for link in good_links:
        succ.setdefault(link.src, []).append(link.dst)
    cycle = _find_cycle(ids, succ)
    if cycle is not None:
        out.append(Violation("cycle", "cycle: " + " -> ".join(cycle), witness=tuple(cycle)))
    return out


# ---------------------------------------------------------------------------
# The graph


class DataflowGraph:
    """An immutable validated dataflow graph. Build with :func:`build_graph`."""

    __slots__ = (
        "nodes",
        "links",
        "inputs",
        "outputs",
        "order",
        "slots",
        "signature",
        "input_types",
        "output_types",
        "_by_id",
        "_plan",
    )

    def __init__(
        self,
        nodes: Sequence[Node],
        links: Sequence[Link],
        inputs: Sequence[tuple[str, int]],
        outputs: Sequence[Exposed | tuple],
        *,
        _validated: bool = False,
    ):
        outputs = tuple(o if isinstance(o, Exposed) else Exposed(*o) for o in outputs)
        inputs = tuple((n, p) for n, p in inputs)
        if not _validated:
            violations = check_graph(nodes, links, inputs, outputs)
            if violations:
                raise GraphError(violations)
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self.links: tuple[Link, ...] = tuple(links)
        self.inputs: tuple[tuple[str, int], ...] = inputs
        self.outputs: tuple[Exposed, ...] = outputs
        self._by_id = {n.id: n for n in self.nodes}
        self.slots: tuple[Slot, ...] = tuple(n for n in self.nodes if isinstance(n, Slot))
        self.input_types = tuple(self._by_id[n].inputs[p] for n, p in self.inputs)
        self.output_types = tuple(self._by_id[o.node].outputs[o.port] for o in self.outputs)
        # a graph with no exposed outputs (a fully pruned service) denotes no function
        self.signature: Fn | None = (
            intern(Fn(self.input_types, self.output_types)) if self.output_types else None
        )
        order = _topological_order([n.id for n in self.nodes], self.links)
        assert order is not None
        self.order: tuple[str, ...] = tuple(order)
        self._plan = self._make_plan()

    def _make_plan(self) -> tuple:
        sources: dict[tuple[str, int], tuple] = {}
        for link in self.links:
            sources[(link.dst, link.dst_port)] = (False, (link.src, link.src_port), link)
        for k, key in enumerate(self.inputs):
            sources[key] = (True, k, None)
        plan = []
        for nid in self.order:
            node = self._by_id[nid]
            plan.append((node, tuple(sources[(nid, i)] for i in range(len(node.inputs)))))
        return tuple(plan)

    def node(self, node_id: str) -> Node:
        return self._by_id[node_id]

    def replicate(self) -> DataflowGraph:
        return DataflowGraph(self.nodes, self.links, self.inputs, self.outputs, _validated=True)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, DataflowGraph)
            and self.nodes == other.nodes
            and set(self.links) == set(other.links)
            and self.inputs == other.inputs
            and self.outputs == other.outputs
        )

    def __hash__(self) -> int:
        return hash((self.signature, len(self.nodes)))

    def __repr__(self) -> str:
        return f"<DataflowGraph {len(self.nodes)} nodes, {len(self.links)} links: {self.describe()}>"

    @property
    def groups(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for i, o in enumerate(self.outputs):
            if o.group is not None:
                groups.setdefault(o.group, []).append(i)
        return groups

    def describe(self, registry: TypeRegistry | None = None) -> str:
        """Signature text with ``||`` between alternative outputs, e.g. ``(D; E) -> (B || C)``."""
        fmt = lambda t: format_type(t, registry)  # noqa: E731
        ins = "; ".join(fmt(t) for t in self.input_types)
        parts: list[str] = []
        placed: dict[int, int] = {}
        for o, t in zip(self.outputs, self.output_types):
            if o.group is None:
                parts.append(fmt(t))
            elif o.group in placed:
                parts[placed[o.group]] += " || " + fmt(t)
            else:
                placed[o.group] = len(parts)
                parts.append(fmt(t))
        return f"({ins}) -> ({'; '.join(parts)})"

    def to_text(self, registry: TypeRegistry | None = None) -> str:
        """Plain adjacency listing: node lines, then link lines."""
        lines = []
        for node in self.nodes:
            sig = Fn(node.inputs, node.outputs)
            line = f"node {node.id} {node.kind} {format_type(sig, registry, compact=True)}"
            label = node.label()
            if label:
                line += f" {label}"
            lines.append(line)
        for k, (nid, port) in enumerate(self.inputs):
            lines.append(f"@in.{k} -> {nid}.{port}")
        for link in sorted(self.links):
            lines.append(str(link))
        for k, o in enumerate(self.outputs):
            tail = "" if o.group is None else f" group {o.group}"
            lines.append(f"{o.node}.{o.port} -> @out.{k}{tail}")
        return "\n".join(lines) + "\n"


def build_graph(
    nodes: Sequence[Node],
    links: Sequence[Link | tuple],
    inputs: Sequence[tuple[str, int]] = (),
    outputs: Sequence[Exposed | tuple] = (),
) -> DataflowGraph:
    """Validate and freeze a graph; raises :class:`GraphError` listing every violation."""
    links = [l if isinstance(l, Link) else Link(*l) for l in links]
    return DataflowGraph(nodes, links, inputs, outputs)


# ---------------------------------------------------------------------------
# Execution


@dataclass(frozen=True)
class RelationEvent:
    node: str
    relation: str
    result: bool


@dataclass(frozen=True)
class ExecutionResult:
    outputs: tuple[Any, ...]
    fired: tuple[str, ...] = ()
    events: tuple[RelationEvent, ...] = ()

    def payloads(self) -> tuple[Any, ...]:
        return tuple(o.payload if isinstance(o, Value) else o for o in self.outputs)


Observer = Callable[[Link, Any], None]


def _fire(node: Node, args: list, events: list | None) -> tuple:
    if isinstance(node, Router):
        try:
            truth = node.relation.evaluate(args[1:])
        except Exception as exc:
            raise EvaluatorError(f"relation {node.relation.name} failed: {exc}", node.id) from exc
        if events is not None:
            events.append(RelationEvent(node.id, node.relation.name, truth))
        return (args[0], NOT_PRODUCED) if truth else (NOT_PRODUCED, args[0])
    if isinstance(node, Apply):
        try:
            outs = node.fn.invoke(args)
        except ExecutionError as exc:
            where = f"{node.id}/{exc.node}" if exc.node else node.id
            raise type(exc)(exc.detail, where) from exc
        except Exception as exc:
            raise EvaluatorError(f"{node.fn.name} failed: {exc!r}", node.id) from exc
        types = node.outputs
        if len(outs) != len(types):
            raise OutputTypeError(f"{node.fn.name} produced {len(outs)} outputs, expected {len(types)}", node.id)
        for i, (t, v) in enumerate(zip(types, outs)):
            if v is not NOT_PRODUCED and not check_payload(t, v):
                raise OutputTypeError(f"output {i} value {v!r} is not a {format_type(t)}", node.id)
        return outs
    if isinstance(node, Const):
        return (node.payload,)
    if isinstance(node, Slot):
        raise SlotError(f"slot {node.id} is unfilled")
    raise ExecutionError(f"cannot fire {type(node).__name__}", node.id)


def _evaluate(
    graph: DataflowGraph,
    feed: Sequence[Any],
    observer: Observer | None,
    fired: list | None,
    events: list | None,
) -> list:
    values: dict[tuple[str, int], Any] = {}
    for node, sources in graph._plan:
        args = []
        for exposed, where, link in sources:
            if exposed:
                v = feed[where]
            else:
                v = values.get(where, NOT_PRODUCED)
                if v is not NOT_PRODUCED and observer is not None:
                    observer(link, v)
            if v is NOT_PRODUCED:
                break
            args.append(v)
        else:
            outs = _fire(node, args, events)
            if fired is not None:
                fired.append(node.id)
            nid = node.id
            for i, v in enumerate(outs):
                if v is not NOT_PRODUCED:
                    values[(nid, i)] = v
    return [values.get((o.node, o.port), NOT_PRODUCED) for o in graph.outputs]


def _check_produced(graph: DataflowGraph, outputs: Sequence[Any]) -> None:
    counts: dict[int, int] = {}
    for o, v in zip(graph.outputs, outputs):
        if o.group is None:
            if v is NOT_PRODUCED:
                raise AlternativeError(f"output {o.node}.{o.port} was not produced")
        else:
            counts[o.group] = counts.get(o.group, 0) + (v is not NOT_PRODUCED)
    for group, n in counts.items():
        if n != 1:
            raise AlternativeError(f"alternative group {group} produced {n} outputs, expected exactly one")


def _coerce_inputs(graph: DataflowGraph, inputs: Sequence[Any]) -> list:
    if len(inputs) != len(graph.inputs):
        raise InputError(f"graph expects {len(graph.inputs)} input(s), got {len(inputs)}")
    feed = []
    for k, (v, t) in enumerate(zip(inputs, graph.input_types)):
        if isinstance(v, Value):
            if not type_equal(v.type, t):
                raise InputError(f"input {k} has type {format_type(v.type)}, expected {format_type(t)}")
            v = v.payload
        elif not check_payload(t, v):
            raise InputError(f"input {k} value {v!r} is not a {format_type(t)}")
        feed.append(v)
    return feed


def execute(graph: DataflowGraph, inputs: Sequence[Any], observer: Observer | None = None) -> ExecutionResult:
    """Run a slot-free graph on a full set of inputs (Values or raw payloads)."""
    if graph.slots:
        raise SlotError(f"graph has {len(graph.slots)} unfilled slot(s)")
    feed = _coerce_inputs(graph, inputs)
    fired: list[str] = []
    events: list[RelationEvent] = []
    outs = _evaluate(graph, feed, observer, fired, events)
    _check_produced(graph, outs)
    wrapped = tuple(
        NOT_PRODUCED if v is NOT_PRODUCED else Value(t, v) for v, t in zip(outs, graph.output_types)
    )
    return ExecutionResult(wrapped, tuple(fired), tuple(events))


def run_partial(
    graph: DataflowGraph, feed: dict[int, Any], observer: Observer | None = None
) -> ExecutionResult:
    """Run with only some exposed inputs fed; outputs that cannot fire stay unproduced.

    Used for microservice functionality, where a message arrives on a
    single endpoint at a time.  No alternative-group check is applied.
    """
    full = [NOT_PRODUCED] * len(graph.inputs)
    for k, v in feed.items():
        t = graph.input_types[k]
        if isinstance(v, Value):
            v = v.payload
        if not check_payload(t, v):
            raise InputError(f"input {k} value {v!r} is not a {format_type(t)}")
        full[k] = v
    fired: list[str] = []
    events: list[RelationEvent] = []
    outs = _evaluate(graph, full, observer, fired, events)
    wrapped = tuple(
        NOT_PRODUCED if v is NOT_PRODUCED else Value(t, v) for v, t in zip(outs, graph.output_types)
    )
    return ExecutionResult(wrapped, tuple(fired), tuple(events))


# ---------------------------------------------------------------------------
# Plugging functions into boards


def fill_slots(functional: DataflowGraph, args: Sequence[FunctionValue | Value]) -> DataflowGraph:
    """Plug one function into each slot, in slot order.

    A graph-backed argument is spliced in place of its slot, with its node
    ids prefixed by ``<slot id>/``; any other function value becomes an
    :class:`Apply` node carrying the slot's id.  Either way the slot's
    ports are rewired to the function's ports, which is all plugging in
    amounts to.
    """
    slots = functional.slots
    if len(args) != len(slots):
        raise SlotError(f"board has {len(slots)} slot(s), got {len(args)} function(s)")
    fns = []
    for k, (slot, arg) in enumerate(zip(slots, args)):
        fn = arg.payload if isinstance(arg, Value) else arg
        if not isinstance(fn, FunctionValue):
            raise SlotError(f"slot {k} ({slot.id}) needs a function, got {fn!r}")
        if not type_equal(fn.signature, slot.signature):
            raise SlotError(
                f"slot {k} ({slot.id}) has type {format_type(slot.signature)}, "
                f"got function of type {format_type(fn.signature)}"
            )
        fns.append(fn)

    plugged = {s.id: f for s, f in zip(slots, fns)}
    in_map: dict[tuple[str, int], tuple[str, int]] = {}
    out_map: dict[tuple[str, int], tuple[str, int]] = {}
    nodes: list[Node] = []
    links: list[Link] = []
    for node in functional.nodes:
        fn = plugged.get(node.id)
        if fn is None:
            nodes.append(node)
            continue
        if isinstance(fn, GraphFunction):
            inner = fn.graph
            prefix = node.id + "/"
            nodes.extend(replace(n, id=prefix + n.id) for n in inner.nodes)
            links.extend(
                Link(prefix + l.src, l.src_port, prefix + l.dst, l.dst_port) for l in inner.links
            )
            for i, (nid, port) in enumerate(inner.inputs):
                in_map[(node.id, i)] = (prefix + nid, port)
            for j, o in enumerate(inner.outputs):
                out_map[(node.id, j)] = (prefix + o.node, o.port)
        else:
            nodes.append(Apply(node.id, fn))
            for i in range(len(node.inputs)):
                in_map[(node.id, i)] = (node.id, i)
            for j in range(len(node.outputs)):
                out_map[(node.id, j)] = (node.id, j)

    for link in functional.links:
        src = out_map.get((link.src, link.src_port), (link.src, link.src_port))
        dst = in_map.get((link.dst, link.dst_port), (link.dst, link.dst_port))
        links.append(Link(src[0], src[1], dst[0], dst[1]))
    inputs = [in_map.get(p, p) for p in functional.inputs]
    outputs = []
    for o in functional.outputs:
        nid, port = out_map.get((o.node, o.port), (o.node, o.port))
        outputs.append(Exposed(nid, port, o.group))
    # board and spliced graphs are valid and slot types match, so only a
    # prefixed id clashing with a board id could make the result invalid
    unique = len({n.id for n in nodes}) == len(nodes)
    return DataflowGraph(nodes, links, inputs, outputs, _validated=unique)
