import pytest

from meshflow.mesh import Edge, Policy
from meshflow.scenario import load_file
from meshflow.simulator import (
    InvariantViolation,
    Scenario,
    Simulation,
    SimulationError,
    active_at,
    run,
)

from support import SCENARIOS, echo_service

ECHO_TRACE = (
    't=4 session=x1 from=ext to=echo.api type=text payload="hello"\n'
    't=5 session=x1 from=echo.api to=ext type=text payload="hello"\n'
)

ECHO_STATS = """\
metric=messages key=sent value=2
metric=messages key=delivered value=2
metric=messages key=dropped value=0
metric=messages key=pending value=0
metric=sessions key=opened value=1
metric=sessions key=closed value=1
metric=edge_messages key=ext->echo.api value=2
metric=max_queue key=echo value=1
metric=replicas key=echo@0 value=1
metric=overlay key=0 value=-
"""


@pytest.fixture(scope="module")
def shopping():
    return load_file(SCENARIOS / "shopping.scn")


@pytest.fixture(scope="module")
def shopping_run(shopping):
    return run(shopping)


def test_empty_scenario():
    result = run(Scenario())
    assert result.trace == [] and result.trace_text() == ""
    s = result.stats
    assert (s.sent, s.delivered, s.dropped, s.pending) == (0, 0, 0, 0)
    assert not s.edge_messages and not s.scale_events


def test_echo_two_line_trace():
    result = run(load_file(SCENARIOS / "echo.scn"))
    assert result.trace_text() == ECHO_TRACE
    assert result.stats.text() == ECHO_STATS


def test_inject_delivered_after_latency():
    sc = Scenario(services={"echo": echo_service()}, horizon=20, latency=3)
    sim = Simulation(sc)
    sim.inject(3, "echo", "api", "x")
    result = sim.run()
    assert result.trace[0].startswith("t=6 ")
    assert result.trace[1].startswith("t=9 ")


def test_inject_errors():
    sim = Simulation(Scenario(services={"echo": echo_service()}))
    with pytest.raises(SimulationError, match="no socket"):
        sim.inject(1, "echo", "nope", "x")
    with pytest.raises(SimulationError, match="unknown gateway"):
        sim.inject(1, "ghost", "api", "x")
    with pytest.raises(SimulationError, match="receives text"):
        sim.inject(1, "echo", "api", 5)
    sim.run()
    with pytest.raises(SimulationError):
        sim.inject(1, "echo", "api", "late")


def test_inject_in_the_past():
    sim = Simulation(Scenario(services={"echo": echo_service()}))
    sim.now = 5
    with pytest.raises(SimulationError, match="t=2"):
        sim.inject(2, "echo", "api", "x")


def test_same_tick_injections_in_seq_order():
    sim = Simulation(Scenario(services={"echo": echo_service()}, horizon=5))
    for word in ("a", "b", "c"):
        sim.inject(1, "echo", "api", word)
    result = sim.run()
    firsts = [line for line in result.trace if line.startswith("t=2 ")]
    assert [line.rsplit("=", 1)[1] for line in firsts] == ['"a"', '"b"', '"c"']


def test_run_only_once():
    sim = Simulation(Scenario())
    sim.run()
    with pytest.raises(SimulationError):
        sim.run()


def test_determinism(shopping):
    a = run(shopping).trace_text()
    b = run(shopping).trace_text()
    assert a == b


def test_seed_irrelevant_for_default_policies():
    sc = load_file(SCENARIOS / "kv.scn")
    assert run(sc, seed=1).trace_text() == run(sc, seed=99).trace_text()


def test_conservation(shopping_run):
    s = shopping_run.stats
    assert s.sent == s.delivered + s.dropped + s.pending
    assert s.dropped == 0 and not shopping_run.errors


def test_conservation_with_pending():
    sc = load_file(SCENARIOS / "echo.scn")
    s = run(sc, horizon=4).stats
    assert (s.sent, s.delivered, s.pending) == (2, 1, 1)


def _parse(line):
    fields = dict(part.split("=", 1) for part in line.split(" payload=")[0].split())
    return int(fields["t"]), fields["from"].split(".")[0], fields["to"].split(".")[0]


def test_causal_order(shopping_run):
    rows = [_parse(line) for line in shopping_run.trace]
    assert [t for t, _, _ in rows] == sorted(t for t, _, _ in rows)
    first_arrival: dict[str, int] = {}
    for t, src, dst in rows:
        # every sender other than the outside world and clocks was triggered by an earlier delivery
        if src not in ("ext", "ticker"):
            assert first_arrival.get(src, t) < t
        first_arrival.setdefault(dst, t)
    for m in shopping_run.backend_messages:
        assert m.sent >= 1


def test_overlay_timeline_matches_session_log(shopping_run):
    for t, active in shopping_run.stats.overlay:
        assert active_at(shopping_run, t) == set(active)


def test_scaled_run_records_replica_changes(shopping_run):
    s = shopping_run.stats
    ups = [x for x in s.scale_events if x[2] == "up"]
    assert ups
    t, svc, _ = ups[0]
    timeline = [n for (tt, name, n) in s.replicas if name == svc]
    assert timeline[0] == 1 and max(timeline) >= 2
    assert any(line.startswith(f"metric=scale key={svc}@{t} value=up") for line in s.lines())


def test_stores_dumped_at_end(shopping_run):
    text = shopping_run.trace_text()
    assert text.count("store=") == len(shopping_run.store_lines) > 0
    assert text.endswith(shopping_run.store_lines[-1] + "\n")


def test_checking_catches_overlay_tampering():
    sim = Simulation(load_file(SCENARIOS / "kv.scn"))
    sim.mesh.overlay["kv.db->data.api"] = {"ghost"}
    with pytest.raises(InvariantViolation, match="overlay soundness"):
        sim.run()


def test_no_check_mode_skips_invariants():
    sim = Simulation(load_file(SCENARIOS / "kv.scn"), checking=False)
    sim.mesh.overlay["kv.db->data.api"] = {"ghost"}
    sim.run()


def test_handler_error_counted_and_run_continues():
    from meshflow.calculus import Adapter, Exposed, Link, Primitive, build_graph
    from meshflow.microservice import Endpoint, define_microservice
    from meshflow.types import TEXT

    from support import ECHO, fn

    g = build_graph(
        [
            Adapter("rx", Primitive("head", fn([TEXT], [TEXT]), lambda s: s[0]), endpoint="api", direction="in"),
            Adapter("tx", Primitive("id", fn([TEXT], [TEXT]), lambda s: s), endpoint="api", direction="out"),
        ],
        [Link("rx", 0, "tx", 0)],
        [("rx", 0)],
        [Exposed("tx", 0)],
    )
    svc = define_microservice("head", [Endpoint("api", ECHO)], [], g, gateway=True)
    sim = Simulation(Scenario(services={"head": svc}, horizon=10))
    sim.inject(1, "head", "api", "")
    sim.inject(2, "head", "api", "ok")
    result = sim.run()
    assert result.stats.errors["handler"] == 1
    assert result.trace[-1].endswith('payload="o"')


def test_pinned_policy_override(shopping):
    pinned = {n: Policy(1, 1, autoscale=False) for n in shopping.services}
    result = run(shopping, policies=pinned)
    assert result.stats.scale_events == []


def test_edge_latency_used():
    sc = load_file(SCENARIOS / "kv.scn")
    result = run(sc)
    audit = [line for line in result.trace if "to=audit.api" in line]
    feed = [line for line in result.trace if "to=watcher.feed" in line]
    assert int(audit[0].split()[0][2:]) == int(feed[0].split()[0][2:]) + 2


def test_edge_messages_cover_declared_edges(shopping_run, shopping):
    names = {e.name for e in Simulation(shopping).mesh.edges}
    used = {e for e in shopping_run.stats.edge_messages if "ext->" not in e}
    assert used <= names


def test_exclusion_conflict_dropped():
    # white opens red, then a message needs yellow in the same conversation
    from meshflow.backend import store_protocol
    from meshflow.calculus import Adapter, Apply, Exposed, Link, Primitive, build_graph, copier
    from meshflow.microservice import Endpoint, Protocol, define_microservice
    from meshflow.types import NAT

    from support import fn

    nats = store_protocol("Nats", NAT)
    req, rep = nats.client_sends, nats.client_receives
    P = Protocol("P", NAT, NAT)
    put = Primitive("put", fn([NAT], [req]), lambda n: ("put", "k", n))
    g = build_graph(
        [
            Adapter("rx", Primitive("id", fn([NAT], [NAT]), lambda n: n), endpoint="api", direction="in"),
            Apply("c", copier(NAT)),
            Adapter("tr", put, endpoint="red", direction="out"),
            Adapter("ty", put, endpoint="yellow", direction="out"),
            Adapter("rr", Primitive("x", fn([rep], [rep]), lambda x: x), endpoint="red", direction="in"),
            Adapter("ry", Primitive("x", fn([rep], [rep]), lambda x: x), endpoint="yellow", direction="in"),
        ],
        [Link("rx", 0, "c", 0), Link("c", 0, "tr", 0), Link("c", 1, "ty", 0)],
        [("rx", 0), ("rr", 0), ("ry", 0)],
        [Exposed("tr", 0), Exposed("ty", 0)],
    )
    white = define_microservice(
        "white", [Endpoint("api", P)], [Endpoint("red", nats), Endpoint("yellow", nats)], g, gateway=True
    )
    sc = Scenario(
        services={"white": white},
        stores={"red": nats, "yellow": nats},
        edges=[Edge("white", "red", "red", "api", name="wr"), Edge("white", "yellow", "yellow", "api", name="wy")],
        exclusions=[("wr", "wy")],
        horizon=10,
    )
    sim = Simulation(sc)
    sim.inject(1, "white", "api", 7)
    result = sim.run()
    assert result.stats.errors["exclusion"] == 1
    assert result.stores == {"red": {"k": 7}, "yellow": {}}
    s = result.stats
    assert s.sent == s.delivered + s.dropped + s.pending
