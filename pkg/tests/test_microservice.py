import pytest

from meshflow.backend import Clock, store_protocol
from meshflow.calculus import Adapter, Apply, Exposed, Link, Primitive, build_graph, check_graph, copier
from meshflow.mesh import Edge, ExclusionViolation, build_mesh
from meshflow.microservice import (
    CLOCK,
    ClosedSessionError,
    DefinitionError,
    Endpoint,
    HandlerError,
    Instance,
    MessageContext,
    MessageTypeError,
    Protocol,
    Session,
    attach_clock,
    close_plug,
    define_microservice,
    handle_message,
    open_plug,
    react,
)
from meshflow.simulator import Scenario, Simulation
from meshflow.types import BOOL, NAT, TEXT, Record, Value, intern

from support import ECHO, echo_service, fn

CART_REQ = intern(Record((("user", TEXT), ("sku", TEXT), ("qty", NAT))))
CART_RESP = intern(Record((("ok", BOOL), ("key", TEXT))))
CART = Protocol("Cart", CART_REQ, CART_RESP)
CARTS = store_protocol("Carts", NAT)


def cart_service():
    req, rep = CARTS.client_sends, CARTS.client_receives
    graph = build_graph(
        [
            Adapter("rx", Primitive("id", fn([CART_REQ], [CART_REQ]), lambda r: r), endpoint="cart", direction="in"),
            Apply("c", copier(CART_REQ)),
            Adapter(
                "tx",
                Primitive("put", fn([CART_REQ], [req]), lambda r: ("put", f"{r[0]}:{r[1]}", r[2])),
                endpoint="db",
                direction="out",
            ),
            Adapter(
                "ack",
                Primitive("ack", fn([CART_REQ], [CART_RESP]), lambda r: (True, f"{r[0]}:{r[1]}")),
                endpoint="cart",
                direction="out",
            ),
            Adapter("ans", Primitive("seen", fn([rep], [rep]), lambda x: x), endpoint="db", direction="in"),
        ],
        [Link("rx", 0, "c", 0), Link("c", 0, "tx", 0), Link("c", 1, "ack", 0)],
        [("rx", 0), ("ans", 0)],
        [Exposed("tx", 0), Exposed("ack", 0)],
    )
    return define_microservice("cart", [Endpoint("cart", CART)], [Endpoint("db", CARTS)], graph)


def test_cart_service_defines():
    svc = cart_service()
    assert [e.name for e in svc.sockets] == ["cart"]
    assert [e.name for e in svc.plugs] == ["db"]
    assert svc.stateless


def test_wrong_adapter_type_rejected():
    bad = build_graph(
        [
            Adapter("rx", Primitive("n", fn([NAT], [NAT]), lambda n: n), endpoint="api", direction="in"),
            Adapter("tx", Primitive("s", fn([NAT], [TEXT]), str), endpoint="api", direction="out"),
        ],
        [Link("rx", 0, "tx", 0)],
        [("rx", 0)],
        [Exposed("tx", 0)],
    )
    with pytest.raises(DefinitionError) as info:
        define_microservice("bad", [Endpoint("api", ECHO)], [], bad)
    assert any("input adapter rx" in p for p in info.value.problems)


def test_unbound_adapter_rejected():
    g = build_graph(
        [
            Adapter("rx", Primitive("id", fn([TEXT], [TEXT]), lambda x: x), endpoint="nope", direction="in"),
            Adapter("tx", Primitive("id", fn([TEXT], [TEXT]), lambda x: x), endpoint="api", direction="out"),
        ],
        [Link("rx", 0, "tx", 0)],
        [("rx", 0)],
        [Exposed("tx", 0)],
    )
    with pytest.raises(DefinitionError) as info:
        define_microservice("bad", [Endpoint("api", ECHO)], [], g)
    text = str(info.value)
    assert "unknown endpoint 'nope'" in text
    assert "endpoint api needs exactly one input adapter" in text


def test_echo_handles_message():
    svc = echo_service()
    out = handle_message(svc, "api", "hi")
    assert out == [("api", Value(TEXT, "hi"))]


def test_cart_hand_trace():
    out = handle_message(cart_service(), "cart", ("ann", "sku1", 2))
    assert [(ep, v.payload) for ep, v in out] == [
        ("db", ("put", "ann:sku1", 2)),
        ("cart", (True, "ann:sku1")),
    ]


def test_handler_is_pure():
    svc = cart_service()
    a = react(svc, "cart", ("bo", "x", 1))
    b = react(svc, "cart", ("bo", "x", 1))
    assert a == b


def test_closed_session_rejected():
    s = Session("s1", "Echo", ("c", "p"), ("echo", "api"), status="closed")
    with pytest.raises(ClosedSessionError):
        handle_message(echo_service(), "api", "x", MessageContext(s))


def test_message_type_checked():
    with pytest.raises(MessageTypeError):
        handle_message(echo_service(), "api", 3)
    with pytest.raises(MessageTypeError):
        handle_message(echo_service(), "api", Value(NAT, 3))


def test_handler_failure_wrapped():
    g = build_graph(
        [
            Adapter("rx", Primitive("boom", fn([TEXT], [TEXT]), lambda x: x[10]), endpoint="api", direction="in"),
            Adapter("tx", Primitive("id", fn([TEXT], [TEXT]), lambda x: x), endpoint="api", direction="out"),
        ],
        [Link("rx", 0, "tx", 0)],
        [("rx", 0)],
        [Exposed("tx", 0)],
    )
    svc = define_microservice("fragile", [Endpoint("api", ECHO)], [], g)
    with pytest.raises(HandlerError) as info:
        handle_message(svc, "api", "short")
    assert info.value.service == "fragile"


class _Store:
    name = "carts"
    sockets = (Endpoint("api", CARTS, "socket"),)


def test_open_and_close_plug_change_graph():
    inst = Instance(cart_service())
    base = {n.id for n in inst.graph.nodes}
    assert base == {"rx", "c", "ack"}
    session, delta = open_plug(inst, "db", _Store(), "api", session_id="s1")
    assert session.is_open and session.client == ("cart", "db")
    assert delta.added == ("ans", "tx") and delta.removed == ()
    g = inst.graph
    assert check_graph(g.nodes, g.links, g.inputs, g.outputs) == []
    delta = close_plug(inst, session)
    assert delta.removed == ("ans", "tx")
    assert {n.id for n in inst.graph.nodes} == base
    g = inst.graph
    assert check_graph(g.nodes, g.links, g.inputs, g.outputs) == []
    with pytest.raises(ClosedSessionError):
        close_plug(inst, session)


def test_open_plug_needs_matching_socket():
    inst = Instance(cart_service())
    with pytest.raises(Exception, match="no socket"):
        open_plug(inst, "db", _Store(), "nope")


def _two_store_gateway():
    req = CARTS.client_sends
    g = build_graph(
        [
            Adapter("rx", Primitive("id", fn([CART_REQ], [CART_REQ]), lambda r: r), endpoint="api", direction="in"),
            Apply("c", copier(CART_REQ)),
            Adapter("ta", Primitive("pa", fn([CART_REQ], [req]), lambda r: ("put", r[0], r[2])), endpoint="red", direction="out"),
            Adapter("tb", Primitive("pb", fn([CART_REQ], [req]), lambda r: ("put", r[0], r[2])), endpoint="yellow", direction="out"),
            Adapter("ra", Primitive("x", fn([CARTS.client_receives], [CARTS.client_receives]), lambda x: x), endpoint="red", direction="in"),
            Adapter("rb", Primitive("x", fn([CARTS.client_receives], [CARTS.client_receives]), lambda x: x), endpoint="yellow", direction="in"),
        ],
        [Link("rx", 0, "c", 0), Link("c", 0, "ta", 0), Link("c", 1, "tb", 0)],
        [("rx", 0), ("ra", 0), ("rb", 0)],
        [Exposed("ta", 0), Exposed("tb", 0)],
    )
    return define_microservice(
        "white", [Endpoint("api", CART)], [Endpoint("red", CARTS), Endpoint("yellow", CARTS)], g, gateway=True
    )


def test_exclusive_plug_rejected():
    from meshflow.backend import BackendStore

    white = _two_store_gateway()
    red, yellow = BackendStore("red", CARTS), BackendStore("yellow", CARTS)
    mesh = build_mesh(
        {"white": white, "red": red, "yellow": yellow},
        [Edge("white", "red", "red", "api", name="to_red"), Edge("white", "yellow", "yellow", "api", name="to_yellow")],
        [("to_red", "to_yellow")],
    )
    inst = Instance(white)
    s, _ = open_plug(inst, "red", red, "api", edge="to_red", mesh=mesh, session_id="a")
    with pytest.raises(ExclusionViolation):
        open_plug(inst, "yellow", yellow, "api", edge="to_yellow", mesh=mesh, session_id="b")
    # the rejected open changed nothing
    assert inst.plug_sessions["yellow"] == set()
    assert mesh.active_edges() == ["to_red"]
    close_plug(inst, s, mesh)
    open_plug(inst, "yellow", yellow, "api", edge="to_yellow", mesh=mesh, session_id="c")
    assert mesh.active_edges() == ["to_yellow"]


# -- clocks -------------------------------------------------------------------


def ticker(plugs=("clk",)):
    nodes = [
        Adapter(f"t_{p}", Primitive("now", fn([NAT], [NAT]), lambda n: n), endpoint=p, direction="in") for p in plugs
    ]
    g = build_graph(nodes, [], [(n.id, 0) for n in nodes], [])
    return define_microservice("ticker", [], [Endpoint(p, CLOCK) for p in plugs], g)


def tick_times(result, plug):
    return [int(line.split()[0][2:]) for line in result.trace if f"to=ticker.{plug}" in line]


def test_clock_period_five():
    sc = Scenario(
        services={"ticker": ticker()},
        clocks={"c": 5},
        edges=[Edge("ticker", "clk", "c", "tick")],
        horizon=17,
    )
    result = Simulation(sc).run()
    assert tick_times(result, "clk") == [5, 10, 15]
    assert "payload=10" in result.trace[1]


def test_period_zero_rejected():
    with pytest.raises(ValueError):
        Clock("c", 0)
    inst = Instance(ticker())
    with pytest.raises(ValueError):
        attach_clock(inst, "clk", 0, Clock("c", 1))


def test_attach_clock_opens_persistent_session():
    inst = Instance(ticker())
    s = attach_clock(inst, "clk", 5, Clock("c", 5), session_id="k")
    assert s.persistent and s.period == 5 and s.is_open


def test_two_clocks_independent():
    sc = Scenario(
        services={"ticker": ticker(("a", "b"))},
        clocks={"ca": 3, "cb": 4},
        edges=[Edge("ticker", "a", "ca", "tick"), Edge("ticker", "b", "cb", "tick")],
        horizon=12,
    )
    result = Simulation(sc).run()
    assert tick_times(result, "a") == [3, 6, 9, 12]
    assert tick_times(result, "b") == [4, 8, 12]
