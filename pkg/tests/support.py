"""Shared constructions for the test suite."""

from __future__ import annotations

from pathlib import Path

from meshflow.calculus import (
    Adapter,
    Apply,
    Exposed,
    Link,
    Primitive,
    Relation,
    Router,
    Slot,
    build_graph,
    if_then_else,
)
from meshflow.microservice import Endpoint, Protocol, define_microservice
from meshflow.types import BOOL, NAT, TEXT, Fn, Product, intern

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "src" / "meshflow" / "scenarios"
BROKEN = Path(__file__).resolve().parent / "broken"

# D and E come in, B or C goes out.
D = NAT
E = NAT
H = NAT
B = TEXT
C = intern(Product((NAT, BOOL)))


def fn(ins, outs):
    return intern(Fn(tuple(ins), tuple(outs)))


f4_in = Primitive("f4_in", fn([D], [H]), lambda d: 2 * d)
f3_in = Primitive("f3_in", fn([E], [H]), lambda e: e + 3)
h1 = Primitive("h1", fn([H, H], [H]), lambda a, b: a + b)
g4_out = Primitive("g4_out", fn([H], [B]), lambda x: f"b{x}")
g3_out = Primitive("g3_out", fn([H], [C]), lambda x: (x, x % 2 == 0))


def phi(kind: str) -> Relation:
    """The router relation: always true, always false, or data dependent."""
    impls = {"true": lambda x: True, "false": lambda x: False, "even": lambda x: x % 2 == 0}
    return Relation(f"phi_{kind}", (H,), impls[kind])


def router_graph(rel: Relation):
    """Two input adapters, h1, a router on phi, two output adapters."""
    nodes = [
        Adapter("f4", f4_in, endpoint="D", direction="in"),
        Adapter("f3", f3_in, endpoint="E", direction="in"),
        Apply("h1", h1),
        Router("phi", rel, H),
        Adapter("g4", g4_out, endpoint="B", direction="out"),
        Adapter("g3", g3_out, endpoint="C", direction="out"),
    ]
    links = [
        Link("f4", 0, "h1", 0),
        Link("f3", 0, "h1", 1),
        Link("h1", 0, "phi", 0),
        Link("h1", 0, "phi", 1),
        Link("phi", 0, "g4", 0),
        Link("phi", 1, "g3", 0),
    ]
    return build_graph(nodes, links, [("f4", 0), ("f3", 0)], [Exposed("g4", 0, 0), Exposed("g3", 0, 0)])


def router_board():
    """The same wiring with every box left as a slot."""
    nodes = [
        Slot("f4", f4_in.signature),
        Slot("f3", f3_in.signature),
        Slot("h1", h1.signature),
        Slot("phi", fn([H, H], [H, H])),
        Slot("g4", g4_out.signature),
        Slot("g3", g3_out.signature),
    ]
    links = [
        Link("f4", 0, "h1", 0),
        Link("f3", 0, "h1", 1),
        Link("h1", 0, "phi", 0),
        Link("h1", 0, "phi", 1),
        Link("phi", 0, "g4", 0),
        Link("phi", 1, "g3", 0),
    ]
    return build_graph(nodes, links, [("f4", 0), ("f3", 0)], [Exposed("g4", 0, 0), Exposed("g3", 0, 0)])


def board_args(rel: Relation):
    return [f4_in, f3_in, h1, if_then_else(rel, H), g4_out, g3_out]


# -- microservices --------------------------------------------------------

ECHO = Protocol("Echo", TEXT, TEXT)


def identity_text():
    return Primitive("id", fn([TEXT], [TEXT]), lambda x: x)


def echo_service(name: str = "echo", gateway: bool = True):
    graph = build_graph(
        [
            Adapter("rx", identity_text(), endpoint="api", direction="in"),
            Adapter("tx", identity_text(), endpoint="api", direction="out"),
        ],
        [Link("rx", 0, "tx", 0)],
        [("rx", 0)],
        [Exposed("tx", 0)],
    )
    return define_microservice(name, [Endpoint("api", ECHO)], [], graph, gateway=gateway)
