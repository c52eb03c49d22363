"""Syntax tree of scenario files.

Every node carries a source location that is ignored by equality, so
``parse(print(tree)) == tree`` is the round-trip law.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Union


@dataclass(frozen=True)
class Loc:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


NOWHERE = Loc(0, 0)


def _loc() -> Any:
    return field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Diagnostic:
    loc: Loc
    message: str
    file: str = "<scenario>"

    def __str__(self) -> str:
        return f"{self.file}:{self.loc.line}:{self.loc.col}: {self.message}"


class ScenarioError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


# -- types --------------------------------------------------------------


@dataclass(frozen=True)
class TName:
    name: str
    loc: Loc = _loc()


@dataclass(frozen=True)
class TProduct:
    items: tuple[TypeExpr, ...]
    loc: Loc = _loc()


@dataclass(frozen=True)
class TRecord:
    fields: tuple[tuple[str, TypeExpr], ...]
    loc: Loc = _loc()


@dataclass(frozen=True)
class TFn:
    inputs: tuple[TypeExpr, ...]
    outputs: tuple[TypeExpr, ...]
    loc: Loc = _loc()


TypeExpr = Union[TName, TProduct, TRecord, TFn]


# -- expressions --------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: Any  # int, bool, str or () for unit
    loc: Loc = _loc()


@dataclass(frozen=True)
class Var:
    name: str
    loc: Loc = _loc()


@dataclass(frozen=True)
class TupleE:
    items: tuple[Expr, ...]
    loc: Loc = _loc()


@dataclass(frozen=True)
class RecordE:
    type_name: str | None
    fields: tuple[tuple[str, Expr], ...]
    loc: Loc = _loc()


@dataclass(frozen=True)
class FieldE:
    target: Expr
    name: str
    loc: Loc = _loc()


@dataclass(frozen=True)
class IndexE:
    target: Expr
    index: int
    loc: Loc = _loc()


@dataclass(frozen=True)
class Unary:
    op: str
    operand: Expr
    loc: Loc = _loc()


@dataclass(frozen=True)
class Binary:
    op: str
    left: Expr
    right: Expr
    loc: Loc = _loc()


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple[Expr, ...]
    loc: Loc = _loc()


@dataclass(frozen=True)
class Cond:
    test: Expr
    then: Expr
    orelse: Expr
    loc: Loc = _loc()


Expr = Union[Lit, Var, TupleE, RecordE, FieldE, IndexE, Unary, Binary, Call, Cond]


# -- declarations -------------------------------------------------------


@dataclass(frozen=True)
class TypeDecl:
    name: str
    type: TypeExpr
    loc: Loc = _loc()


@dataclass(frozen=True)
class ProtocolDecl:
    """``sends``/``receives`` for a plain protocol, ``store`` for a store protocol."""

    name: str
    sends: TypeExpr | None = None
    receives: TypeExpr | None = None
    store: TypeExpr | None = None
    loc: Loc = _loc()


@dataclass(frozen=True)
class Param:
    name: str
    type: TypeExpr
    loc: Loc = _loc()


@dataclass(frozen=True)
class RelDecl:
    name: str
    params: tuple[Param, ...]
    body: Expr
    loc: Loc = _loc()


@dataclass(frozen=True)
class FnDecl:
    name: str
    params: tuple[Param, ...]
    outputs: tuple[TypeExpr, ...]
    bodies: tuple[Expr, ...]
    loc: Loc = _loc()


@dataclass(frozen=True)
class EndpointDecl:
    role: str  # socket | plug
    name: str
    protocol: str
    loc: Loc = _loc()


@dataclass(frozen=True)
class NodeDecl:
    id: str
    form: str  # in | out | call | if | copy | const
    target: str | None = None
    via: str | None = None
    type: TypeExpr | None = None
    expr: Expr | None = None
    loc: Loc = _loc()


@dataclass(frozen=True)
class LinkDecl:
    src: str
    src_port: int
    dst: str
    dst_port: int
    loc: Loc = _loc()


@dataclass(frozen=True)
class ServiceDecl:
    name: str
    gateway: bool
    endpoints: tuple[EndpointDecl, ...]
    nodes: tuple[NodeDecl, ...]
    links: tuple[LinkDecl, ...]
    loc: Loc = _loc()


@dataclass(frozen=True)
class StoreDecl:
    name: str
    protocol: str
    loc: Loc = _loc()


@dataclass(frozen=True)
class ClockDecl:
    name: str
    period: int
    loc: Loc = _loc()


@dataclass(frozen=True)
class EdgeDecl:
    name: str | None
    src: str
    plug: str
    dst: str
    socket: str
    latency: int | None = None
    loc: Loc = _loc()

    @property
    def edge_name(self) -> str:
        return self.name or f"{self.src}.{self.plug}->{self.dst}.{self.socket}"


@dataclass(frozen=True)
class SubscribeDecl:
    service: str
    plug: str
    loc: Loc = _loc()


@dataclass(frozen=True)
class ExclusionDecl:
    members: tuple[str, ...]
    member_locs: tuple[Loc, ...] = field(default=(), compare=False, repr=False)
    loc: Loc = _loc()


@dataclass(frozen=True)
class InputDecl:
    """``at T svc.sock = e`` when count is None, else a repeated injection binding ``i``."""

    time: int
    service: str
    socket: str
    expr: Expr
    count: int | None = None
    every: int | None = None
    loc: Loc = _loc()
    target_loc: Loc = _loc()


@dataclass(frozen=True)
class PolicyDecl:
    service: str
    settings: tuple[tuple[str, Any], ...]
    loc: Loc = _loc()


@dataclass(frozen=True)
class ScenarioFile:
    seed: int | None = None
    horizon: int | None = None
    latency: int | None = None
    types: tuple[TypeDecl, ...] = ()
    protocols: tuple[ProtocolDecl, ...] = ()
    relations: tuple[RelDecl, ...] = ()
    functions: tuple[FnDecl, ...] = ()
    services: tuple[ServiceDecl | StoreDecl | ClockDecl, ...] = ()
    edges: tuple[EdgeDecl, ...] = ()
    subscriptions: tuple[SubscribeDecl, ...] = ()
    exclusions: tuple[ExclusionDecl, ...] = ()
    inputs: tuple[InputDecl, ...] = ()
    policies: tuple[PolicyDecl, ...] = ()
    file: str = field(default="<scenario>", compare=False)
