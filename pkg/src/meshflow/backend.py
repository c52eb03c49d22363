"""Backend storing services: the terminal vertices that hold all state.

A store is a key-value map from text keys to payloads of one declared
value type, reached through a store protocol whose request and reply
messages are records.  Subscribed sessions get one change notification
per committed put or delete, in commit order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .microservice import CLOCK, ClosedSessionError, Endpoint, Protocol, Session
from .types import BOOL, NAT, TEXT, Record, Type, check_payload, default_payload, format_payload, format_type, intern

__all__ = [
    "ABSENT",
    "StoreError",
    "Notification",
    "Subscription",
    "BackendStore",
    "Clock",
    "store_protocol",
    "is_store_protocol",
]


class _Absent:
    def __repr__(self) -> str:
        return "ABSENT"

    def __bool__(self) -> bool:
        return False


ABSENT: Any = _Absent()


class StoreError(Exception):
    pass


def store_protocol(name: str, value_type: Type) -> Protocol:
    """Protocol whose client sends ``{op, key, value}`` and receives ``{op, key, value, found, time}``."""
    request = intern(Record((("op", TEXT), ("key", TEXT), ("value", value_type))))
    reply = intern(
        Record((("op", TEXT), ("key", TEXT), ("value", value_type), ("found", BOOL), ("time", NAT)))
    )
    return Protocol(name, request, reply)


def is_store_protocol(protocol: Protocol) -> bool:
    req, rep = protocol.client_sends, protocol.client_receives
    return (
        isinstance(req, Record)
        and isinstance(rep, Record)
        and [n for n, _ in req.fields] == ["op", "key", "value"]
        and [n for n, _ in rep.fields] == ["op", "key", "value", "found", "time"]
        and req.fields[2][1] == rep.fields[2][1]
    )


@dataclass(frozen=True)
class Notification:
    session: str
    key: str
    value: Any
    time: int
    deleted: bool = False


@dataclass(frozen=True)
class Subscription:
    store: str
    session: str


class BackendStore:
    kind = "store"

    def __init__(self, name: str, protocol: Protocol):
        if not is_store_protocol(protocol):
            raise StoreError(f"{protocol.name} is not a store protocol")
        self.name = name
        self.protocol = protocol
        self.value_type: Type = protocol.client_sends.fields[2][1]
        self.sockets = (Endpoint("api", protocol, "socket"),)
        self.plugs: tuple[Endpoint, ...] = ()
        self.data: dict[str, Any] = {}
        self.subscribers: list[str] = []

    def __repr__(self) -> str:
        return f"<BackendStore {self.name}: {format_type(self.value_type)}>"

    def get(self, key: str) -> Any:
        return self.data.get(key, ABSENT)

    def put(self, key: str, value: Any, time: int = 0) -> list[Notification]:
        if not check_payload(self.value_type, value):
            raise StoreError(f"store {self.name} holds {format_type(self.value_type)}, got {value!r}")
        self.data[key] = value
        return [Notification(s, key, value, time) for s in self.subscribers]

    def delete(self, key: str, time: int = 0) -> list[Notification]:
        if self.data.pop(key, ABSENT) is ABSENT:
            return []
        blank = default_payload(self.value_type)
        return [Notification(s, key, blank, time, deleted=True) for s in self.subscribers]

    def store_handle(self, op: str, key: str, value: Any = None, time: int = 0) -> Any:
        """Apply one request; ``get`` returns the value or ``ABSENT``, writes return notifications."""
        if op == "get":
            return self.get(key)
        if op == "put":
            return self.put(key, value, time)
        if op == "delete":
            return self.delete(key, time)
        raise StoreError(f"unknown store operation {op!r}")

    def handle(self, request: tuple, time: int) -> tuple[tuple, list[Notification]]:
        """Wire-level handling: request record in, reply record and notifications out."""
        op, key, value = request
        if op == "get":
            current = self.get(key)
            found = current is not ABSENT
            value = current if found else default_payload(self.value_type)
            return (op, key, value, found, time), []
        if op == "put":
            notes = self.put(key, value, time)
            return (op, key, value, True, time), notes
        if op == "delete":
            found = key in self.data
            notes = self.delete(key, time)
            return (op, key, default_payload(self.value_type), found, time), notes
        raise StoreError(f"unknown store operation {op!r}")

    @staticmethod
    def notification_payload(note: Notification) -> tuple:
        return ("notify-delete" if note.deleted else "notify", note.key, note.value, True, note.time)

    def subscribe(self, session: Session) -> Subscription:
        if not session.is_open:
            raise ClosedSessionError(f"session {session.id} is closed")
        if session.id not in self.subscribers:
            self.subscribers.append(session.id)
        return Subscription(self.name, session.id)

    def unsubscribe(self, subscription: Subscription | str) -> None:
        sid = subscription.session if isinstance(subscription, Subscription) else subscription
        if sid in self.subscribers:
            self.subscribers.remove(sid)

    def dump(self) -> list[str]:
        return [
            f"store={self.name} key={k} value={format_payload(self.value_type, self.data[k])}"
            for k in sorted(self.data)
        ]


class Clock:
    """External time source with one socket, ``tick``, of the clock protocol."""

    kind = "clock"

    def __init__(self, name: str, period: int):
        if period <= 0:
            raise ValueError(f"clock period must be positive, got {period}")
        self.name = name
        self.period = period
        self.sockets = (Endpoint("tick", CLOCK, "socket"),)
        self.plugs: tuple[Endpoint, ...] = ()

    def __repr__(self) -> str:
        return f"<Clock {self.name} every {self.period}>"
