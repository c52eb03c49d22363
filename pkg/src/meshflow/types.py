"""Structural type universe shared by values, ports, boards and messages.

Types are frozen dataclasses interned through :func:`intern`, so two
structurally identical definitions are the same object and
``type_equal`` reduces to identity in the common case.  Names only exist
at the registry level; the type itself never refers to a name once
defined, which is what keeps recursive definitions out.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any, Union

__all__ = [
    "Type",
    "Prim",
    "Product",
    "Record",
    "Fn",
    "Ref",
    "NAT",
    "BOOL",
    "UNIT",
    "TEXT",
    "TypeError_",
    "UnknownTypeError",
    "RecursiveTypeError",
    "TypeRegistry",
    "Value",
    "FunctionLike",
    "intern",
    "type_equal",
    "conforms",
    "check_payload",
    "default_payload",
    "format_type",
    "format_payload",
]

PRIMITIVE_NAMES = ("nat", "bool", "unit", "text")


class Type:
    """Base class of every type definition."""

    __slots__ = ()


@dataclass(frozen=True)
class Prim(Type):
    name: str


@dataclass(frozen=True)
class Product(Type):
    components: tuple[Any, ...]


@dataclass(frozen=True)
class Record(Type):
    fields: tuple[tuple[str, Any], ...]

    def index(self, name: str) -> int:
        for i, (field, _) in enumerate(self.fields):
            if field == name:
                return i
        raise KeyError(name)

    def field_type(self, name: str) -> Type:
        return self.fields[self.index(name)][1]


@dataclass(frozen=True)
class Fn(Type):
    inputs: tuple[Any, ...]
    outputs: tuple[Any, ...]


@dataclass(frozen=True)
class Ref:
    """Placeholder for a named type inside a definition handed to a registry."""

    name: str


TypeLike = Union[Type, Ref]


class TypeError_(Exception):
    """Base class for type definition errors (named to avoid the builtin)."""


class UnknownTypeError(TypeError_):
    pass


class RecursiveTypeError(TypeError_):
    def __init__(self, cycle: list[str]):
        super().__init__("recursive type definition: " + " -> ".join(cycle))
        self.cycle = cycle


_INTERNED: dict[Type, Type] = {}


def intern(t: Type) -> Type:
    """Return the canonical instance for ``t``, validating its shape."""
    if isinstance(t, Prim):
        if t.name not in PRIMITIVE_NAMES:
            raise UnknownTypeError(f"unknown primitive type {t.name!r}")
    elif isinstance(t, Product):
        if not t.components:
            raise TypeError_("product types need at least one component")
        t = Product(tuple(intern(c) for c in t.components))
    elif isinstance(t, Record):
        if not t.fields:
            raise TypeError_("record types need at least one field")
        names = [n for n, _ in t.fields]
        if len(set(names)) != len(names):
            raise TypeError_(f"duplicate record field in {names}")
        t = Record(tuple((n, intern(c)) for n, c in t.fields))
    elif isinstance(t, Fn):
        if not t.outputs:
            raise TypeError_("function types need at least one output")
        t = Fn(tuple(intern(c) for c in t.inputs), tuple(intern(c) for c in t.outputs))
    elif isinstance(t, Ref):
        raise UnknownTypeError(f"unresolved type name {t.name!r}")
    else:
        raise TypeError_(f"not a type: {t!r}")
    return _INTERNED.setdefault(t, t)


NAT = intern(Prim("nat"))
BOOL = intern(Prim("bool"))
UNIT = intern(Prim("unit"))
TEXT = intern(Prim("text"))


def type_equal(a: Type, b: Type) -> bool:
    return a is b or a == b


def _refs(t: TypeLike) -> Iterable[str]:
    if isinstance(t, Ref):
        yield t.name
    elif isinstance(t, Product):
        for c in t.components:
            yield from _refs(c)
    elif isinstance(t, Record):
        for _, c in t.fields:
            yield from _refs(c)
    elif isinstance(t, Fn):
        for c in t.inputs + t.outputs:
            yield from _refs(c)


class TypeRegistry:
    """Names for interned types, plus pretty-printing by name."""

    def __init__(self) -> None:
        self._by_name: dict[str, Type] = {
            "nat": NAT,
            "bool": BOOL,
            "unit": UNIT,
            "text": TEXT,
        }
        self._names: dict[Type, str] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def lookup(self, name: str) -> Type:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownTypeError(f"unknown type {name!r}") from None

    def names(self) -> dict[str, Type]:
        return {k: v for k, v in self._by_name.items() if k not in PRIMITIVE_NAMES}

    def name_of(self, t: Type) -> str | None:
        if isinstance(t, Prim):
            return t.name
        return self._names.get(t)

    def resolve(self, t: TypeLike, _defining: str | None = None) -> Type:
        if isinstance(t, Ref):
            if t.name == _defining:
                raise RecursiveTypeError([t.name, t.name])
            return self.lookup(t.name)
        if isinstance(t, Product):
            return intern(Product(tuple(self.resolve(c, _defining) for c in t.components)))
        if isinstance(t, Record):
            return intern(Record(tuple((n, self.resolve(c, _defining)) for n, c in t.fields)))
        if isinstance(t, Fn):
            return intern(
                Fn(
                    tuple(self.resolve(c, _defining) for c in t.inputs),
                    tuple(self.resolve(c, _defining) for c in t.outputs),
                )
            )
        return intern(t)

    def define_type(self, definition: TypeLike, name: str | None = None) -> Type:
        """Intern ``definition`` and optionally bind it to ``name``.

        Names referenced through :class:`Ref` must already be bound.
        """
        if name is not None and name in self._by_name:
            raise TypeError_(f"type {name!r} already defined")
        t = self.resolve(definition, name)
        if name is not None:
            self._by_name[name] = t
            self._names.setdefault(t, name)
        return t

    def define_types(self, definitions: Mapping[str, TypeLike]) -> dict[str, Type]:
        """Define a group of named types that may refer to each other in any order."""
        order: list[str] = []
        state: dict[str, int] = {}

        def visit(name: str, path: list[str]) -> None:
            mark = state.get(name)
            if mark == 2:
                return
            if mark == 1:
                raise RecursiveTypeError(path[path.index(name):])
            state[name] = 1
            for dep in _refs(definitions[name]):
                if dep in definitions:
                    visit(dep, path + [dep])
            state[name] = 2
            order.append(name)

        for name in definitions:
            visit(name, [name])
        return {name: self.define_type(definitions[name], name) for name in order}

    def format(self, t: Type, compact: bool = False) -> str:
        return format_type(t, self, compact=compact)


class FunctionLike:
    """Anything that can sit in a function-typed payload slot."""

    signature: Fn


def check_payload(t: Type, payload: Any) -> bool:
    """True iff ``payload`` has the shape demanded by ``t``."""
    if isinstance(t, Prim):
        name = t.name
        if name == "nat":
            return type(payload) is int and payload >= 0
        if name == "bool":
            return type(payload) is bool
        if name == "text":
            return type(payload) is str
        return payload == ()
    if isinstance(t, Product):
        return (
            type(payload) is tuple
            and len(payload) == len(t.components)
            and all(check_payload(c, p) for c, p in zip(t.components, payload))
        )
    if isinstance(t, Record):
        return (
            type(payload) is tuple
            and len(payload) == len(t.fields)
            and all(check_payload(c, p) for (_, c), p in zip(t.fields, payload))
        )
    if isinstance(t, Fn):
        return isinstance(payload, FunctionLike) and type_equal(payload.signature, t)
    return False


def default_payload(t: Type) -> Any:
    if isinstance(t, Prim):
        return {"nat": 0, "bool": False, "text": "", "unit": ()}[t.name]
    if isinstance(t, Product):
        return tuple(default_payload(c) for c in t.components)
    if isinstance(t, Record):
        return tuple(default_payload(c) for _, c in t.fields)
    raise TypeError_(f"no default value for {format_type(t)}")


@dataclass(frozen=True)
class Value:
    type: Type
    payload: Any

    def __post_init__(self) -> None:
        if not check_payload(self.type, self.payload):
            raise TypeError_(
                f"payload {self.payload!r} does not match type {format_type(self.type)}"
            )

    def __str__(self) -> str:
        return format_payload(self.type, self.payload)


def conforms(value: Value, t: Type) -> bool:
    return type_equal(value.type, t) and check_payload(t, value.payload)


def format_type(t: Type, registry: TypeRegistry | None = None, compact: bool = False) -> str:
    """Render ``t`` in scenario-file syntax, preferring registered names."""
    if registry is not None:
        name = registry.name_of(t)
        if name is not None:
            return name
    sep = "," if compact else ", "
    semi = ";" if compact else "; "
    sub = lambda c: format_type(c, registry, compact)  # noqa: E731
    if isinstance(t, Prim):
        return t.name
    if isinstance(t, Product):
        return "(" + sep.join(sub(c) for c in t.components) + ")"
    if isinstance(t, Record):
        body = sep.join(f"{n}:{sub(c)}" if compact else f"{n}: {sub(c)}" for n, c in t.fields)
        return f"record{{{body}}}" if compact else f"record {{ {body} }}"
    if isinstance(t, Fn):
        ins = semi.join(sub(c) for c in t.inputs)
        outs = semi.join(sub(c) for c in t.outputs)
        arrow = "->" if compact else " -> "
        return f"fn({ins}){arrow}({outs})"
    return repr(t)


def format_payload(t: Type, payload: Any) -> str:
    """Literal text for a payload of type ``t`` as it appears in traces."""
    if isinstance(t, Prim):
        if t.name == "bool":
            return "true" if payload else "false"
        if t.name == "text":
            return json.dumps(payload, ensure_ascii=False)
        if t.name == "unit":
            return "()"
        return str(payload)
    if isinstance(t, Product):
        return "(" + ", ".join(format_payload(c, p) for c, p in zip(t.components, payload)) + ")"
    if isinstance(t, Record):
        return (
            "{"
            + ", ".join(f"{n}: {format_payload(c, p)}" for (n, c), p in zip(t.fields, payload))
            + "}"
        )
    if isinstance(t, Fn):
        return f"<fn {getattr(payload, 'name', '?')}>"
    return repr(payload)
