import pytest
from hypothesis import given, strategies as st

from meshflow.backend import ABSENT, BackendStore, StoreError, is_store_protocol, store_protocol
from meshflow.microservice import ClosedSessionError, Protocol, Session
from meshflow.types import NAT, TEXT

NATS = store_protocol("Nats", NAT)


def session(sid, status="open"):
    return Session(sid, "Nats", ("svc", "feed"), ("kv", "api"), status=status)


def test_put_then_get():
    s = BackendStore("kv", NATS)
    s.store_handle("put", "k", 5)
    assert s.store_handle("get", "k") == 5


def test_get_absent():
    s = BackendStore("kv", NATS)
    assert s.get("nope") is ABSENT
    reply, notes = s.handle(("get", "nope", 0), 3)
    assert reply == ("get", "nope", 0, False, 3)
    assert notes == []


def test_put_type_checked():
    s = BackendStore("kv", NATS)
    with pytest.raises(StoreError):
        s.put("k", "five")
    with pytest.raises(StoreError):
        s.store_handle("frob", "k")


def test_two_subscribers_one_notification_each():
    s = BackendStore("kv", NATS)
    s.subscribe(session("a"))
    s.subscribe(session("b"))
    notes = s.put("k", 1, time=4)
    assert sorted(n.session for n in notes) == ["a", "b"]
    assert all(n.time == 4 and n.value == 1 for n in notes)


def test_unsubscribe_stops_notifications():
    s = BackendStore("kv", NATS)
    sub = s.subscribe(session("a"))
    s.unsubscribe(sub)
    assert s.put("k", 1) == []


def test_subscribe_needs_open_session():
    with pytest.raises(ClosedSessionError):
        BackendStore("kv", NATS).subscribe(session("a", "closed"))


def test_notifications_in_commit_order():
    s = BackendStore("kv", NATS)
    s.subscribe(session("a"))
    notes = s.put("k", 1, 1) + s.put("k", 2, 2)
    assert [(n.value, n.time) for n in notes] == [(1, 1), (2, 2)]


def test_delete_notifies_and_removes():
    s = BackendStore("kv", NATS)
    s.subscribe(session("a"))
    s.put("k", 3)
    (note,) = s.delete("k", 9)
    assert note.deleted and note.time == 9
    assert s.get("k") is ABSENT
    assert s.delete("k") == []
    assert BackendStore.notification_payload(note) == ("notify-delete", "k", 0, True, 9)


def test_store_protocol_shape():
    assert is_store_protocol(NATS)
    assert not is_store_protocol(Protocol("P", NAT, NAT))
    with pytest.raises(StoreError):
        BackendStore("x", Protocol("P", TEXT, TEXT))


def test_dump_lines_sorted():
    s = BackendStore("kv", store_protocol("T", TEXT))
    s.put("b", "two")
    s.put("a", "one")
    assert s.dump() == ['store=kv key=a value="one"', 'store=kv key=b value="two"']


ops = st.lists(
    st.tuples(st.sampled_from(["get", "put", "delete"]), st.sampled_from("abc"), st.integers(0, 50)),
    max_size=60,
)


@given(ops)
def test_linearizable_against_dict(trace):
    s = BackendStore("kv", NATS)
    oracle: dict = {}
    for t, (op, k, v) in enumerate(trace):
        reply, _ = s.handle((op, k, v), t)
        if op == "get":
            assert reply[3] == (k in oracle)
            assert reply[2] == oracle.get(k, 0)
        elif op == "put":
            oracle[k] = v
        else:
            assert reply[3] == (k in oracle)
            oracle.pop(k, None)
    assert s.data == oracle
