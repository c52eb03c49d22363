
import networkx as nx
import pytest

from meshflow.backend import BackendStore, store_protocol
from meshflow.calculus import Adapter, Primitive, build_graph
from meshflow.mesh import (
    Edge,
    ExclusionViolation,
    MeshError,
    Policy,
    RoutingError,
    ScalingError,
    SessionEvent,
    Sidecar,
    UnknownEdgeError,
    break_cycle,
    build_mesh,
    find_cycle,
    route_inbound,
    scale,
    update_active_overlay,
)
from meshflow.microservice import Endpoint, Protocol, define_microservice
from meshflow.types import NAT, TEXT

from support import echo_service, fn

P = Protocol("P", NAT, NAT)
Q = Protocol("Q", TEXT, TEXT)


def service(name, sockets=(), plugs=(), gateway=False, proto=P):
    eps = [(s, proto.server_receives) for s in sockets] + [(p, proto.client_receives) for p in plugs]
    nodes = [
        Adapter(f"in_{e}", Primitive("id", fn([t], [t]), lambda x: x), endpoint=e, direction="in") for e, t in eps
    ]
    g = build_graph(nodes, [], [(n.id, 0) for n in nodes], [])
    return define_microservice(
        name, [Endpoint(s, proto) for s in sockets], [Endpoint(p, proto) for p in plugs], g, gateway=gateway
    )


def kinds(err):
    return sorted(v.kind for v in err.violations)


# -- build_mesh -----------------------------------------------------------------


def test_valid_chain():
    vs = [service("gw", plugs=["o"], gateway=True), service("a", ["i"], ["o"]), service("b", ["i"])]
    mesh = build_mesh(vs, [Edge("gw", "o", "a", "i"), Edge("a", "o", "b", "i")])
    assert mesh.acyclic
    assert mesh.gateways == ["gw"]
    assert mesh.edges[0].protocol == P
    assert mesh.edges[0].name == "gw.o->a.i"


def test_unknown_service():
    vs = [service("gw", plugs=["o"], gateway=True)]
    with pytest.raises(MeshError) as info:
        build_mesh(vs, [Edge("gw", "o", "ghost", "i")])
    assert "unknown-service" in kinds(info.value)


def test_protocol_not_in_destination_sockets():
    vs = [service("gw", plugs=["o"], gateway=True), service("a", ["i"], proto=Q)]
    with pytest.raises(MeshError) as info:
        build_mesh(vs, [Edge("gw", "o", "a", "i")])
    assert kinds(info.value) == ["protocol-mismatch"]
    with pytest.raises(MeshError) as info:
        build_mesh([service("gw", plugs=["o"], gateway=True), service("a", ["i"])], [Edge("gw", "o", "a", "x")])
    assert "protocol-mismatch" in kinds(info.value)


def test_gateway_cycle_rejected():
    vs = [service("gw", ["i"], ["o"], gateway=True), service("a", ["i"], ["o"]), service("b", ["i"], ["o"])]
    edges = [Edge("gw", "o", "a", "i"), Edge("a", "o", "b", "i"), Edge("b", "o", "gw", "i")]
    with pytest.raises(MeshError) as info:
        build_mesh(vs, edges)
    cyc = [v for v in info.value.violations if v.kind == "cycle"]
    assert cyc and cyc[0].witness == ("a", "b", "gw", "a")


def test_dangling_service_and_plug():
    vs = [service("gw", plugs=["o", "spare"], gateway=True), service("a", ["i"]), service("lost", ["i"])]
    with pytest.raises(MeshError) as info:
        build_mesh(vs, [Edge("gw", "o", "a", "i")])
    assert kinds(info.value) == ["dangling-plug", "dangling-service"]


def test_subscriber_counts_as_initial():
    vs = [service("watcher", plugs=["o"]), service("a", ["i"])]
    with pytest.raises(MeshError):
        build_mesh(vs, [Edge("watcher", "o", "a", "i")])
    mesh = build_mesh(vs, [Edge("watcher", "o", "a", "i")], initial={"watcher"})
    assert mesh.roots == ["watcher"]


def test_exclusion_group_validation():
    vs = [service("gw", plugs=["a", "b"], gateway=True), service("x", ["i"]), service("y", ["i"])]
    edges = [Edge("gw", "a", "x", "i", name="ea"), Edge("gw", "b", "y", "i", name="eb")]
    with pytest.raises(MeshError) as info:
        build_mesh(vs, edges, [("ea", "zz")])
    assert kinds(info.value) == ["unknown-edge"]
    with pytest.raises(MeshError) as info:
        build_mesh(vs, edges, [("ea",)])
    assert kinds(info.value) == ["exclusion"]


def test_latency_must_be_positive():
    with pytest.raises(ValueError):
        Edge("a", "o", "b", "i", latency=0)


# -- break_cycle ------------------------------------------------------------------


def two_cycle():
    vs = [service("gw", plugs=["o"], gateway=True), service("a", ["i", "back"], ["o"]), service("b", ["i"], ["o"])]
    edges = [Edge("gw", "o", "a", "i"), Edge("a", "o", "b", "i", name="ab"), Edge("b", "o", "a", "back", name="ba")]
    return build_mesh(vs, edges, allow_cycles=True)


def test_break_two_cycle():
    mesh = two_cycle()
    assert not mesh.acyclic
    fixed = break_cycle(mesh, "ba")
    assert fixed.acyclic
    e = fixed.edge("ba~")
    assert (e.src, e.plug, e.dst, e.socket) == ("a", "back", "b", "o")
    # roles swap, message types stay
    assert e.protocol.client_sends == P.client_receives
    assert e.protocol.client_receives == P.client_sends
    assert e.swapped


def test_break_three_cycle():
    vs = [service("gw", plugs=["o"], gateway=True), service("a", ["i", "j"], ["o"]), service("b", ["i"], ["o"]), service("c", ["i"], ["o"])]
    edges = [Edge("gw", "o", "a", "i"), Edge("a", "o", "b", "i"), Edge("b", "o", "c", "i"), Edge("c", "o", "a", "j", name="ca")]
    mesh = build_mesh(vs, edges, allow_cycles=True)
    assert break_cycle(mesh, "ca").acyclic


def test_break_cycle_new_cycle_error():
    # a->b twice: reversing one copy leaves the other, so a new 2-cycle appears
    vs = [service("a", ["i"], ["o1", "o2"]), service("b", ["i1", "i2"], ["o"])]
    edges = [
        Edge("a", "o1", "b", "i1", name="e1"),
        Edge("a", "o2", "b", "i2", name="e2"),
        Edge("b", "o", "a", "i", name="back"),
    ]
    mesh = build_mesh(vs, edges, allow_cycles=True, initial={"a", "b"})
    with pytest.raises(MeshError) as info:
        break_cycle(mesh, "e1")
    (v,) = info.value.violations
    assert v.kind == "cycle" and v.witness[0] == v.witness[-1]


def test_break_cycle_needs_edge_on_cycle():
    vs = [service("gw", plugs=["o"], gateway=True), service("a", ["i"])]
    mesh = build_mesh(vs, [Edge("gw", "o", "a", "i", name="e")])
    with pytest.raises(MeshError) as info:
        break_cycle(mesh, "e")
    assert kinds(info.value) == ["not-on-cycle"]


def _mesh_for(digraph_edges):
    socks = {v: [] for v in "abc"}
    plugs = {v: [] for v in "abc"}
    edges = []
    for s, d in digraph_edges:
        plugs[s].append(f"to_{d}")
        socks[d].append(f"from_{s}")
        edges.append(Edge(s, f"to_{d}", d, f"from_{s}", name=f"{s}{d}"))
    vs = [service(v, socks[v], plugs[v]) for v in "abc"]
    return build_mesh(vs, edges, allow_cycles=True, initial="abc")


def test_break_cycle_exhaustive_three_node_oracle():
    pairs = [(s, d) for s in "abc" for d in "abc" if s != d]
    checked = 0
    for mask in range(1 << len(pairs)):
        chosen = [p for i, p in enumerate(pairs) if mask >> i & 1]
        g = nx.DiGraph(chosen)
        g.add_nodes_from("abc")
        mesh = _mesh_for(chosen)
        assert mesh.acyclic == nx.is_directed_acyclic_graph(g)
        for s, d in chosen:
            on_cycle = nx.has_path(g, d, s)
            flipped = nx.MultiDiGraph([p for p in chosen if p != (s, d)] + [(d, s)])
            flipped.add_nodes_from("abc")
            if not on_cycle:
                with pytest.raises(MeshError) as info:
                    break_cycle(mesh, f"{s}{d}")
                assert kinds(info.value) == ["not-on-cycle"]
            elif nx.is_directed_acyclic_graph(flipped):
                out = break_cycle(mesh, f"{s}{d}")
                assert out.acyclic
                assert sorted((e.src, e.dst) for e in out.edges) == sorted(flipped.edges())
            else:
                with pytest.raises(MeshError) as info:
                    break_cycle(mesh, f"{s}{d}")
                (v,) = info.value.violations
                w = v.witness
                assert all(flipped.has_edge(x, y) for x, y in zip(w, w[1:]))
            checked += 1
    assert checked == 6 * 32


def test_find_cycle_none_on_dag():
    assert find_cycle("abc", [("a", "b"), ("b", "c")]) is None
    assert find_cycle("ab", [("a", "b"), ("b", "a")]) == ["a", "b", "a"]


# -- overlay -------------------------------------------------------------------------


def white_red_yellow():
    nats = store_protocol("Nats", NAT)
    white = service("white", plugs=["red", "yellow"], gateway=True, proto=nats)
    return build_mesh(
        [white, BackendStore("red", nats), BackendStore("yellow", nats)],
        [Edge("white", "red", "red", "api", name="wr"), Edge("white", "yellow", "yellow", "api", name="wy")],
        [("wr", "wy")],
    )


def test_open_blocks_exclusive_partner():
    mesh = white_red_yellow()
    delta = mesh.open_session("wr", "s1")
    assert delta.added == ("wr",) and delta.removed == ()
    with pytest.raises(ExclusionViolation):
        mesh.open_session("wy", "s2")
    assert mesh.active_edges() == ["wr"]
    assert mesh.exclusion_ok()


def test_closing_last_session_removes_edge():
    mesh = white_red_yellow()
    update_active_overlay(mesh, SessionEvent("open", "wr", "s1"))
    update_active_overlay(mesh, SessionEvent("open", "wr", "s2"))
    assert update_active_overlay(mesh, SessionEvent("close", "wr", "s1")).removed == ()
    assert update_active_overlay(mesh, SessionEvent("close", "wr", "s2")).removed == ("wr",)
    assert mesh.active_edges() == []


def test_unknown_edge_event():
    with pytest.raises(UnknownEdgeError):
        update_active_overlay(white_red_yellow(), SessionEvent("open", "nope", "s"))


def test_reduction_view():
    mesh = white_red_yellow()
    names, edges = mesh.reduction(["wr"])
    assert names == {"white", "red"}
    assert [e.name for e in edges] == ["wr"]
    mesh.open_session("wr", "s1")
    assert mesh.reachable_active() == (names, edges)


def test_to_text_annotations():
    mesh = white_red_yellow()
    mesh.open_session("wr", "s1")
    text = mesh.to_text()
    assert "node white gateway" in text and "node red store" in text
    assert "white.red -> red.api Nats active" in text
    assert "white.yellow -> yellow.api Nats inactive" in text
    assert "yellow" not in mesh.to_text(active_only=True)


# -- sidecar -----------------------------------------------------------------------


def test_round_robin_three_replicas():
    sc = Sidecar(echo_service(), Policy(replicas=3, max_replicas=3))
    assert [route_inbound(sc, None, f"s{i}") for i in range(6)] == [1, 2, 3, 1, 2, 3]


def test_single_replica_always_one():
    sc = Sidecar(echo_service())
    assert {sc.route_inbound(f"s{i}") for i in range(5)} == {1}


def test_affinity_survives_scale_up():
    sc = Sidecar(echo_service())
    first = sc.route_inbound("s")
    scale(sc, "up")
    sc.route_inbound("other")
    assert sc.route_inbound("s") == first


def test_random_routing_seeded():
    import random

    picks = []
    for _ in range(2):
        sc = Sidecar(echo_service(), Policy(replicas=3, max_replicas=3, routing="random"), random.Random(5))
        picks.append([sc.route_inbound(f"s{i}") for i in range(10)])
    assert picks[0] == picks[1]


def test_scale_errors():
    sc = Sidecar(echo_service(), Policy(replicas=1, max_replicas=2))
    with pytest.raises(ScalingError):
        sc.scale("down")
    sc.scale("up")
    with pytest.raises(ScalingError):
        sc.scale("up")


def test_scale_down_prefers_idle_then_drains():
    sc = Sidecar(echo_service(), Policy(replicas=1, max_replicas=3))
    sc.scale("up", 1)
    delta = sc.scale("up", 1)
    assert delta.added == (3,) and delta.replicas == 3
    sc.bind("busy", 3)
    delta = sc.scale("down", 2)
    assert delta.removed == (2,)
    sc.bind("b1", 1)
    delta = sc.scale("down", 3)
    assert delta.draining == (3,)
    assert sc.route_inbound("new") == 1
    delta = sc.session_closed("busy", 4)
    assert delta.removed == (3,)
    assert sc.live() == [1]


def test_no_live_replica():
    sc = Sidecar(echo_service())
    sc.replicas[1].status = "closed"
    with pytest.raises(RoutingError):
        sc.route_inbound("s")


def test_autoscale_hysteresis():
    sc = Sidecar(echo_service(), Policy(replicas=1, max_replicas=2, scale_up=4, scale_down=1, grace=5))
    assert sc.autoscale(4, 0) is None
    assert sc.autoscale(5, 0).added == (2,)
    assert sc.autoscale(9, 1) is None  # at the cap
    assert sc.autoscale(0, 3) is None  # inside the grace period
    assert sc.autoscale(2, 9) is None  # between thresholds
    assert sc.autoscale(0, 9).removed == (2,)
    assert sc.autoscale(0, 30) is None  # never below the base replica count


def test_policy_validation():
    with pytest.raises(ValueError):
        Policy(replicas=0)
    with pytest.raises(ValueError):
        Policy(scale_up=2, scale_down=2)
    with pytest.raises(ValueError):
        Policy(routing="least")
