"""Primitive functions and the functionals built from links between boards.

Every functional here returns a dataflow graph (wrapped as a function
value) rather than a Python closure: ``compose`` links two boards,
``iterate`` chains replicas of a function through ``compose``, and
``prim_rec`` unfolds a graph whose depth depends on its counter input.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Any

from ..types import NAT, Fn, Product, Type, Value, format_type, intern, type_equal
from .graph import (
    Apply,
    Const,
    DataflowGraph,
    Exposed,
    FunctionValue,
    GraphFunction,
    Link,
    Primitive,
    Relation,
    Router,
    Slot,
    build_graph,
    fill_slots,
)

__all__ = [
    "FunctionalTypeError",
    "suc",
    "pred",
    "identity",
    "const",
    "proj",
    "pack",
    "copier",
    "if_then_else",
    "compose_board",
    "compose",
    "apply",
    "copy",
    "iterate",
    "PrimitiveRecursion",
    "prim_rec",
]


class FunctionalTypeError(TypeError):
    """Arguments of a functional do not have the types it needs."""


def _fn(ins: tuple, outs: tuple) -> Fn:
    return intern(Fn(tuple(ins), tuple(outs)))


suc = Primitive("suc", _fn((NAT,), (NAT,)), lambda n: n + 1)
pred = Primitive("pred", _fn((NAT,), (NAT,)), lambda n: n - 1 if n > 0 else 0)


def identity(t: Type) -> Primitive:
    return Primitive("id", _fn((t,), (t,)), _ident)


def _ident(x: Any) -> Any:
    return x


def const(value: Any, t: Type, source: Type | None = None) -> Primitive:
    """The constant function ``source -> t`` (or ``() -> t``) returning ``value``."""
    Value(t, value)
    ins = () if source is None else (source,)
    return Primitive(f"const[{value!r}]", _fn(ins, (t,)), lambda *_: value)


def proj(i: int, product: Type) -> Primitive:
    """1-based projection out of a product type."""
    if not isinstance(product, Product):
        raise FunctionalTypeError(f"proj needs a product type, got {format_type(product)}")
    n = len(product.components)
    if not 1 <= i <= n:
        raise IndexError(f"proj index {i} out of range 1..{n}")
    k = i - 1
    return Primitive(f"proj{i}", _fn((product,), (product.components[k],)), lambda p: p[k])


def pack(components: tuple[Type, ...]) -> Primitive:
    """Tuple constructor ``(T1; ...; Tk) -> (T1, ..., Tk)``."""
    t = intern(Product(tuple(components)))
    return Primitive("pack", _fn(tuple(components), (t,)), lambda *xs: xs)


def _replicate_payload(t: Type, payload: Any) -> Any:
    if isinstance(payload, FunctionValue):
        return payload.replicate()
    if type(payload) is tuple and payload and any(isinstance(p, (FunctionValue, tuple)) for p in payload):
        comps = getattr(t, "components", None) or [c for _, c in getattr(t, "fields", ())]
        return tuple(_replicate_payload(c, p) for c, p in zip(comps, payload))
    return payload


def copier(t: Type) -> Primitive:
    """Copy as a node: ``T -> (T; T)`` returning the original and a replica."""
    return Primitive("copy", _fn((t,), (t, t)), lambda x: (x, _replicate_payload(t, x)))


def copy(value: Value) -> tuple[Value, Value]:
    """The original value and its replica; function values get a fresh graph."""
    return value, Value(value.type, _replicate_payload(value.type, value.payload))


def if_then_else(relation: Relation, data: Type) -> GraphFunction:
    """The router as a function ``(T; rel inputs...) -> (T || T)``."""
    router = Router("if", relation, data)
    n = len(router.inputs)
    graph = build_graph(
        [router],
        [],
        [("if", i) for i in range(n)],
        [Exposed("if", 0, 0), Exposed("if", 1, 0)],
    )
    return GraphFunction(graph, f"if[{relation.name}]")


def _as_function(f: Any) -> FunctionValue:
    f = f.payload if isinstance(f, Value) else f
    if not isinstance(f, FunctionValue):
        raise FunctionalTypeError(f"expected a function value, got {f!r}")
    return f


def compose_board(a: tuple[Type, ...], b: tuple[Type, ...], c: tuple[Type, ...]) -> DataflowGraph:
    """Two slots ``f: A -> B`` and ``g: B -> C`` with every output of f linked to g."""
    f = Slot("f", _fn(a, b))
    g = Slot("g", _fn(b, c))
    links = [Link("f", i, "g", i) for i in range(len(b))]
    return build_graph(
        [f, g],
        links,
        [("f", i) for i in range(len(a))],
        [Exposed("g", j) for j in range(len(c))],
    )


def compose(f: Any, g: Any) -> GraphFunction:
    """``compose(f, g)(a) == g(f(a))``, built by plugging f and g into the compose board."""
    f, g = _as_function(f), _as_function(g)
    if not all(type_equal(x, y) for x, y in zip(f.signature.outputs, g.signature.inputs)) or len(
        f.signature.outputs
    ) != len(g.signature.inputs):
        raise FunctionalTypeError(
            f"cannot compose {format_type(f.signature)} with {format_type(g.signature)}"
        )
    board = compose_board(f.signature.inputs, f.signature.outputs, g.signature.outputs)
    return GraphFunction(fill_slots(board, [f, g]), f"compose({f.name},{g.name})")


def apply(functional: Any, g: Any) -> Value:
    """Apply ``F: (A -> B) -> C`` to ``g: A -> B``.

    For board-backed functionals this fills F's slot with g, which links
    the socket of F's socket to g's input and g's output to the plug of
    F's socket, and then runs the result.
    """
    F, g = _as_function(functional), _as_function(g)
    sig = F.signature
    if len(sig.inputs) != 1 or len(sig.outputs) != 1:
        raise FunctionalTypeError(f"apply needs a functional of type (A -> B) -> C, got {format_type(sig)}")
    if not type_equal(sig.inputs[0], g.signature):
        raise FunctionalTypeError(
            f"functional expects {format_type(sig.inputs[0])}, got {format_type(g.signature)}"
        )
    (result,) = F.invoke((g,))
    return Value(sig.outputs[0], result)


def _single_board(sig: Fn) -> DataflowGraph:
    s = Slot("f", sig)
    return build_graph(
        [s], [], [("f", i) for i in range(len(sig.inputs))], [Exposed("f", j) for j in range(len(sig.outputs))]
    )


def _identity_graph(t: Type) -> GraphFunction:
    graph = build_graph([Apply("id", identity(t))], [], [("id", 0)], [Exposed("id", 0)])
    return GraphFunction(graph, "id")


def iterate(n: int, f: Any) -> GraphFunction:
    """n-fold composition of an endofunction ``f: A -> A``.

    Builds n replicas of f by repeated copying and joins them with n - 1
    compose structures; ``iterate(0, f)`` is the identity on A.
    """
    f = _as_function(f)
    sig = f.signature
    if len(sig.inputs) != 1 or len(sig.outputs) != 1 or not type_equal(sig.inputs[0], sig.outputs[0]):
        raise FunctionalTypeError(f"iterate needs A -> A, got {format_type(sig)}")
    if n < 0:
        raise ValueError("iteration count must be a natural number")
    if n == 0:
        return _identity_graph(sig.inputs[0])
    replicas = [Value(sig, f)]
    while len(replicas) < n:
        _, replica = copy(replicas[-1])
        replicas.append(replica)
    if n == 1:
        return GraphFunction(fill_slots(_single_board(sig), [replicas[0]]), f"iter1({f.name})")

    # balanced bracketing: composition is associative, and this keeps
    # construction at O(n log n) instead of re-validating a growing chain
    def chain(lo: int, hi: int) -> FunctionValue:
        if hi - lo == 1:
            return replicas[lo]
        mid = (lo + hi) // 2
        return compose(chain(lo, mid), chain(mid, hi))

    acc = chain(0, n)
    acc.name = f"iter{n}({f.name})"
    return acc


def _step_board(x: Type, y: Type) -> DataflowGraph:
    """One stage ``(n, x, acc) -> (n + 1, x, f(n, x, acc))`` with f left as a slot."""
    state = intern(Product((NAT, x, y)))
    nodes = [
        Apply("c1", copier(state)),
        Apply("c2", copier(state)),
        Apply("p1", proj(1, state)),
        Apply("p2", proj(2, state)),
        Apply("p3", proj(3, state)),
        Apply("cn", copier(NAT)),
        Apply("cx", copier(x)),
        Slot("f", _fn((NAT, x, y), (y,))),
        Apply("s", suc),
        Apply("pk", pack((NAT, x, y))),
    ]
    links = [
        Link("c1", 0, "p1", 0),
        Link("c1", 1, "c2", 0),
        Link("c2", 0, "p2", 0),
        Link("c2", 1, "p3", 0),
        Link("p1", 0, "cn", 0),
        Link("p2", 0, "cx", 0),
        Link("cn", 0, "f", 0),
        Link("cx", 0, "f", 1),
        Link("p3", 0, "f", 2),
        Link("cn", 1, "s", 0),
        Link("s", 0, "pk", 0),
        Link("cx", 1, "pk", 1),
        Link("f", 0, "pk", 2),
    ]
    return build_graph(nodes, links, [("c1", 0)], [Exposed("pk", 0)])


def _schema_board(x: Type, y: Type) -> DataflowGraph:
    """``x -> proj3(loop((0, x, g(x))))`` with g and the loop left as slots."""
    state = intern(Product((NAT, x, y)))
    nodes = [
        Apply("cx", copier(x)),
        Slot("g", _fn((x,), (y,))),
        Const("zero", NAT, 0),
        Apply("pk", pack((NAT, x, y))),
        Slot("loop", _fn((state,), (state,))),
        Apply("out", proj(3, state)),
    ]
    links = [
        Link("cx", 0, "g", 0),
        Link("zero", 0, "pk", 0),
        Link("cx", 1, "pk", 1),
        Link("g", 0, "pk", 2),
        Link("pk", 0, "loop", 0),
        Link("loop", 0, "out", 0),
    ]
    return build_graph(nodes, links, [("cx", 0)], [Exposed("out", 0)])


class PrimitiveRecursion(FunctionValue):
    """``h(0, x) = g(x)``, ``h(n + 1, x) = f(n, x, h(n, x))`` as an unfolding graph.

    Invoking with counter n expands a graph with n stages, each a replica
    of the step board with f plugged in, and runs it on x.  Expansions are
    cached per n.
    """

    def __init__(self, g: FunctionValue, f: FunctionValue, name: str | None = None):
        self.g = g
        self.f = f
        self.x, self.y = g.signature.inputs[0], g.signature.outputs[0]
        self.signature = _fn((NAT, self.x), (self.y,))
        self.name = name or f"prim_rec({g.name},{f.name})"
        self.step = GraphFunction(fill_slots(_step_board(self.x, self.y), [f]), "step")
        self._schema = _schema_board(self.x, self.y)
        self.expand = lru_cache(maxsize=64)(self._expand)

    def _expand(self, n: int) -> GraphFunction:
        loop = iterate(n, self.step)
        return GraphFunction(fill_slots(self._schema, [self.g, loop]), f"{self.name}[{n}]")

    def invoke(self, args: Any) -> tuple:
        n, x = args
        return self.expand(n).invoke((x,))

    def replicate(self) -> PrimitiveRecursion:
        return PrimitiveRecursion(self.g.replicate(), self.f.replicate(), self.name)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PrimitiveRecursion) and self.g == other.g and self.f == other.f

    def __hash__(self) -> int:
        return hash(self.signature)


def prim_rec(g: Any, f: Any) -> PrimitiveRecursion:
    g, f = _as_function(g), _as_function(f)
    gs = g.signature
    if len(gs.inputs) != 1 or len(gs.outputs) != 1:
        raise FunctionalTypeError(f"base function must be X -> Y, got {format_type(gs)}")
    x, y = gs.inputs[0], gs.outputs[0]
    want = _fn((NAT, x, y), (y,))
    if not type_equal(f.signature, want):
        raise FunctionalTypeError(
            f"step function must be {format_type(want)}, got {format_type(f.signature)}"
        )
    return PrimitiveRecursion(g, f)
