"""Elaboration of a parsed scenario into runtime objects.

All semantic problems are collected and reported together, each with
the location of the declaration that causes it.
"""

from __future__ import annotations

from collections.abc import Callable
from pathlib import Path
from typing import Any

from ..backend import BackendStore, Clock, is_store_protocol, store_protocol
from ..calculus.functionals import copier, identity, pred, suc
from ..calculus.graph import (
    Adapter,
    Apply,
    Const,
    Exposed,
    FunctionValue,
    GraphError,
    Link,
    Primitive,
    Relation,
    Router,
    build_graph,
)
from ..mesh import Edge, MeshError, Policy, build_mesh
from ..microservice import CLOCK, DefinitionError, Endpoint, Microservice, Protocol, define_microservice
from ..simulator import Injection, Scenario
from ..types import (
    BOOL,
    NAT,
    Fn,
    Product,
    Record,
    Ref,
    Type,
    TypeError_,
    TypeRegistry,
    format_type,
    intern,
)
from .expr import Callee, ExprError, compile_expr
from .parser import parse
from .syntax import (
    ClockDecl,
    Diagnostic,
    EdgeDecl,
    FnDecl,
    Loc,
    NodeDecl,
    ScenarioError,
    ScenarioFile,
    ServiceDecl,
    StoreDecl,
    TName,
    TProduct,
    TRecord,
    TypeExpr,
)

__all__ = ["elaborate", "load_text", "load_file", "DEFAULT_HORIZON"]

DEFAULT_HORIZON = 100


class Loader:
    def __init__(self, tree: ScenarioFile):
        self.tree = tree
        self.file = tree.file
        self.diags: list[Diagnostic] = []
        self.reg = TypeRegistry()
        self.protocols: dict[str, Protocol] = {"Clock": CLOCK}
        self.relations: dict[str, Relation] = {}
        self.functions: dict[str, FunctionValue] = {"suc": suc, "pred": pred}
        self.callees: dict[str, Callee] = {}

    def err(self, loc: Loc, message: str) -> None:
        self.diags.append(Diagnostic(loc, message, self.file))

    # -- types ----------------------------------------------------------

    def _syntax_type(self, t: TypeExpr) -> Any:
        if isinstance(t, TName):
            return Ref(t.name)
        if isinstance(t, TProduct):
            return Product(tuple(self._syntax_type(c) for c in t.items))
        if isinstance(t, TRecord):
            return Record(tuple((n, self._syntax_type(c)) for n, c in t.fields))
        return Fn(tuple(self._syntax_type(c) for c in t.inputs), tuple(self._syntax_type(c) for c in t.outputs))

    def type_of(self, t: TypeExpr) -> Type | None:
        """Resolve a type expression, reporting at its own location."""
        try:
            return self.reg.resolve(self._syntax_type(t))
        except (TypeError_, ValueError) as exc:
            self.err(t.loc, _msg(exc))
            return None

    def load_types(self) -> None:
        defs: dict[str, Any] = {}
        locs: dict[str, Loc] = {}
        for d in self.tree.types:
            if d.name in defs or d.name in self.reg:
                self.err(d.loc, f"type {d.name} is already defined")
                continue
            defs[d.name] = self._syntax_type(d.type)
            locs[d.name] = d.loc
        # unknown references are reported per declaration before the group is defined
        for name, d in list(defs.items()):
            for ref in _refs(d):
                if ref not in defs and ref not in self.reg:
                    self.err(locs[name], f"type {name} refers to unknown type {ref!r}")
                    defs.pop(name)
                    break
        try:
            self.reg.define_types(defs)
        except TypeError_ as exc:
            cycle = getattr(exc, "cycle", None)
            loc = locs.get(cycle[0]) if cycle else None
            self.err(loc or Loc(1, 1), _msg(exc))

    def load_protocols(self) -> None:
        for p in self.tree.protocols:
            if p.name in self.protocols:
                self.err(p.loc, f"protocol {p.name} is already defined")
                continue
            if p.store is not None:
                v = self.type_of(p.store)
                if v is None:
                    continue
                proto = store_protocol(p.name, v)
                for suffix, t in (("Request", proto.client_sends), ("Reply", proto.client_receives)):
                    if p.name + suffix not in self.reg:
                        self.reg.define_type(t, p.name + suffix)
            else:
                sends, receives = self.type_of(p.sends), self.type_of(p.receives)
                if sends is None or receives is None:
                    continue
                proto = Protocol(p.name, sends, receives)
            self.protocols[p.name] = proto

    # -- repositories ---------------------------------------------------

    def _scope(self, params: tuple) -> dict[str, tuple[int, Type]] | None:
        scope: dict[str, tuple[int, Type]] = {}
        ok = True
        for k, p in enumerate(params):
            t = self.type_of(p.type)
            if p.name in scope:
                self.err(p.loc, f"duplicate parameter {p.name}")
                ok = False
            if t is None:
                ok = False
            else:
                scope[p.name] = (k, t)
        return scope if ok else None

    def load_relations(self) -> None:
        for r in self.tree.relations:
            if r.name in self.relations:
                self.err(r.loc, f"relation {r.name} is already defined")
                continue
            scope = self._scope(r.params)
            if scope is None:
                continue
            try:
                _, code = compile_expr(r.body, scope, self.reg, self.callees, BOOL)
            except ExprError as exc:
                self.err(exc.loc, f"relation {r.name}: {exc.message}")
                continue
            types = tuple(t for _, t in sorted(scope.values(), key=lambda v: v[0]))
            self.relations[r.name] = Relation(r.name, types, _splat(code))

    def load_functions(self) -> None:
        for f in self.tree.functions:
            if f.name in self.functions:
                self.err(f.loc, f"function {f.name} is already defined")
                continue
            fn = self._function(f)
            if fn is not None:
                self.functions[f.name] = fn

    def _function(self, f: FnDecl) -> Primitive | None:
        scope = self._scope(f.params)
        outs = [self.type_of(t) for t in f.outputs]
        if scope is None or any(t is None for t in outs):
            return None
        if not outs:
            self.err(f.loc, f"function {f.name} needs at least one output")
            return None
        if len(f.bodies) != len(outs):
            self.err(f.loc, f"function {f.name} declares {len(outs)} output(s) but defines {len(f.bodies)}")
            return None
        codes = []
        for body, t in zip(f.bodies, outs):
            try:
                codes.append(compile_expr(body, scope, self.reg, self.callees, t)[1])
            except ExprError as exc:
                self.err(exc.loc, f"function {f.name}: {exc.message}")
                return None
        ins = tuple(t for _, t in sorted(scope.values(), key=lambda v: v[0]))
        sig = intern(Fn(ins, tuple(outs)))
        if len(codes) == 1:
            impl = _splat(codes[0])
            self.callees[f.name] = Callee(ins, outs[0], impl)
        else:
            impl = _splat_many(codes)
        return Primitive(f.name, sig, impl)

    # -- services -------------------------------------------------------

    def load_service(self, d: ServiceDecl) -> Microservice | None:
        endpoints: dict[str, Endpoint] = {}
        sockets, plugs = [], []
        for ep in d.endpoints:
            proto = self.protocols.get(ep.protocol)
            if proto is None:
                self.err(ep.loc, f"unknown protocol {ep.protocol!r}")
                continue
            if ep.name in endpoints:
                self.err(ep.loc, f"endpoint {ep.name} is already declared")
                continue
            e = Endpoint(ep.name, proto, ep.role)
            endpoints[ep.name] = e
            (sockets if ep.role == "socket" else plugs).append(e)
        nodes, node_locs = [], {}
        ok = True
        for n in d.nodes:
            if n.id in node_locs:
                self.err(n.loc, f"node {n.id} is already declared")
                ok = False
                continue
            node_locs[n.id] = n.loc
            node = self._node(d, n, endpoints)
            if node is None:
                ok = False
            else:
                nodes.append(node)
        if not ok:
            return None
        link_locs = {}
        links = []
        for ln in d.links:
            link = Link(ln.src, ln.src_port, ln.dst, ln.dst_port)
            link_locs.setdefault(link, ln.loc)
            links.append(link)
        inputs = [(n.id, 0) for n in nodes if isinstance(n, Adapter) and n.direction == "in"]
        outputs = [Exposed(n.id, 0) for n in nodes if isinstance(n, Adapter) and n.direction == "out"]
        try:
            graph = build_graph(nodes, links, inputs, outputs)
        except GraphError as exc:
            for v in exc.violations:
                loc = link_locs.get(v.link) if v.link is not None else None
                if loc is None and v.port is not None:
                    loc = node_locs.get(v.port[0])
                if loc is None and v.witness:
                    loc = node_locs.get(v.witness[0])
                self.err(loc or d.loc, f"service {d.name}: {v.message}")
            return None
        try:
            return define_microservice(d.name, sockets, plugs, graph, gateway=d.gateway,
                                       relations=tuple(self.relations.values()))
        except DefinitionError as exc:
            for p in exc.problems:
                self.err(d.loc, f"service {d.name}: {p}")
            return None

    def _node(self, d: ServiceDecl, n: NodeDecl, endpoints: dict[str, Endpoint]) -> Any:
        if n.form in ("in", "out"):
            ep = endpoints.get(n.target)
            if ep is None:
                self.err(n.loc, f"node {n.id}: {d.name} has no endpoint {n.target!r}")
                return None
            if n.via is None:
                fn = identity(ep.receive_type if n.form == "in" else ep.send_type)
            else:
                fn = self.functions.get(n.via)
                if fn is None:
                    self.err(n.loc, f"node {n.id}: unknown function {n.via!r}")
                    return None
                want_t = ep.receive_type if n.form == "in" else ep.send_type
                sig = fn.signature
                ports = sig.inputs if n.form == "in" else sig.outputs
                if len(ports) != 1 or ports[0] != want_t:
                    side = "receives" if n.form == "in" else "sends"
                    self.err(
                        n.loc,
                        f"node {n.id}: {n.via} has type {format_type(sig, self.reg)}, "
                        f"but {ep.role} {ep.name} {side} {format_type(want_t, self.reg)}",
                    )
                    return None
            return Adapter(n.id, fn, n.target, n.form)
        if n.form == "call":
            fn = self.functions.get(n.target)
            if fn is None:
                self.err(n.loc, f"node {n.id}: unknown function {n.target!r}")
                return None
            return Apply(n.id, fn)
        t = self.type_of(n.type)
        if t is None:
            return None
        if n.form == "if":
            rel = self.relations.get(n.target)
            if rel is None:
                self.err(n.loc, f"node {n.id}: unknown relation {n.target!r}")
                return None
            return Router(n.id, rel, t)
        if n.form == "copy":
            return Apply(n.id, copier(t))
        try:
            _, code = compile_expr(n.expr, {}, self.reg, self.callees, t)
            return Const(n.id, t, code(()))
        except ExprError as exc:
            self.err(exc.loc, f"node {n.id}: {exc.message}")
        except (ArithmeticError, ValueError) as exc:
            self.err(n.loc, f"node {n.id}: {exc}")
        return None

    # -- whole file -----------------------------------------------------

    def load(self) -> Scenario:
        t = self.tree
        self.load_types()
        self.load_protocols()
        self.load_relations()
        self.load_functions()

        services: dict[str, Microservice] = {}
        stores: dict[str, Protocol] = {}
        clocks: dict[str, int] = {}
        vertices: dict[str, Any] = {}
        vlocs: dict[str, Loc] = {}
        broken: set[str] = set()
        for d in t.services:
            if d.name in vlocs:
                self.err(d.loc, f"{d.name} is already declared")
                continue
            vlocs[d.name] = d.loc
            if isinstance(d, StoreDecl):
                proto = self.protocols.get(d.protocol)
                if proto is None or not is_store_protocol(proto):
                    self.err(d.loc, f"store {d.name}: {d.protocol!r} is not a store protocol")
                    broken.add(d.name)
                    continue
                stores[d.name] = proto
                vertices[d.name] = BackendStore(d.name, proto)
            elif isinstance(d, ClockDecl):
                if d.period <= 0:
                    self.err(d.loc, f"clock {d.name}: period must be positive")
                    broken.add(d.name)
                    continue
                clocks[d.name] = d.period
                vertices[d.name] = Clock(d.name, d.period)
            else:
                svc = self.load_service(d)
                if svc is None:
                    broken.add(d.name)
                    continue
                services[d.name] = svc
                vertices[d.name] = svc

        edges = self._edges(vertices, vlocs, broken)
        exclusions = self._exclusions(edges)
        subs = []
        for s in t.subscriptions:
            e = next((e for e in edges.values() if e.src == s.service and e.plug == s.plug), None)
            if e is None:
                if s.service not in broken:
                    self.err(s.loc, f"subscribe: {s.service}.{s.plug} has no edge")
            elif e.dst not in stores:
                self.err(s.loc, f"subscribe: {s.service}.{s.plug} does not lead to a store")
            else:
                subs.append((s.service, s.plug))
        if not broken and not self.diags:
            try:
                build_mesh(vertices, list(edges.values()), exclusions, initial={svc for svc, _ in subs})
            except MeshError as exc:
                elocs = {d.edge_name: d.loc for d in t.edges}
                for v in exc.violations:
                    loc = elocs.get(v.edge) if v.edge else None
                    if loc is None and v.witness:
                        loc = _cycle_loc(t.edges, v.witness)
                    if loc is None:
                        loc = _vertex_loc(v.message, vlocs)
                    self.err(loc or Loc(1, 1), v.message)

        inputs = self._inputs(services)
        policies = self._policies(services)
        if self.diags:
            raise ScenarioError(sorted(self.diags, key=lambda d: (d.loc.line, d.loc.col)))
        return Scenario(
            services=services,
            stores=stores,
            clocks=clocks,
            edges=list(edges.values()),
            exclusions=exclusions,
            subscriptions=subs,
            inputs=inputs,
            policies=policies,
            seed=t.seed or 0,
            horizon=t.horizon if t.horizon is not None else DEFAULT_HORIZON,
            latency=t.latency or 1,
            registry=self.reg,
            name=Path(self.file).stem,
        )

    def _edges(self, vertices: dict[str, Any], vlocs: dict[str, Loc], broken: set[str]) -> dict[str, Edge]:
        edges: dict[str, Edge] = {}
        for d in self.tree.edges:
            name = d.edge_name
            if name in edges:
                self.err(d.loc, f"edge {name} is already declared")
                continue
            missing = [v for v in (d.src, d.dst) if v not in vlocs]
            if missing:
                self.err(d.loc, f"edge {name}: unknown service {missing[0]!r}")
                continue
            if d.src in broken or d.dst in broken:
                continue
            if d.latency is not None and d.latency < 1:
                self.err(d.loc, f"edge {name}: latency must be at least 1")
                continue
            latency = d.latency if d.latency is not None else (self.tree.latency or 1)
            edges[name] = Edge(d.src, d.plug, d.dst, d.socket, name=name, latency=latency)
        return edges

    def _exclusions(self, edges: dict[str, Edge]) -> list[tuple[str, ...]]:
        groups = []
        for x in self.tree.exclusions:
            ok = True
            locs = x.member_locs or (x.loc,) * len(x.members)
            for m, loc in zip(x.members, locs):
                if m not in edges and not any(m == d.edge_name for d in self.tree.edges):
                    self.err(loc, f"exclusion refers to unknown edge {m!r}")
                    ok = False
            if len(set(x.members)) < 2:
                self.err(x.loc, "an exclusion group needs at least two distinct edges")
                ok = False
            if ok and all(m in edges for m in x.members):
                groups.append(tuple(x.members))
        return groups

    def _inputs(self, services: dict[str, Microservice]) -> list[Injection]:
        out: list[Injection] = []
        for i in self.tree.inputs:
            svc = services.get(i.service)
            if svc is None:
                if not any(getattr(d, "name", None) == i.service for d in self.tree.services):
                    self.err(i.target_loc, f"input: unknown service {i.service!r}")
                continue
            if not svc.gateway:
                self.err(i.target_loc, f"input: {i.service} is not a gateway")
                continue
            ep = next((s for s in svc.sockets if s.name == i.socket), None)
            if ep is None:
                self.err(i.target_loc, f"input: {i.service} has no socket {i.socket!r}")
                continue
            scope = {} if i.count is None else {"i": (0, NAT)}
            try:
                _, code = compile_expr(i.expr, scope, self.reg, self.callees, ep.receive_type)
            except ExprError as exc:
                self.err(exc.loc, f"input: {exc.message}")
                continue
            try:
                if i.count is None:
                    out.append(Injection(i.time, i.service, i.socket, code(())))
                else:
                    if i.every is None or i.every < 0:
                        self.err(i.loc, "input: repeat interval must be a natural number")
                        continue
                    for k in range(i.count):
                        out.append(Injection(i.time + k * i.every, i.service, i.socket, code((k,))))
            except ArithmeticError as exc:
                self.err(i.loc, f"input: {exc}")
        return out

    def _policies(self, services: dict[str, Microservice]) -> dict[str, Policy]:
        out: dict[str, Policy] = {}
        for p in self.tree.policies:
            if p.service not in services:
                if not any(getattr(d, "name", None) == p.service for d in self.tree.services):
                    self.err(p.loc, f"policy: unknown service {p.service!r}")
                continue
            settings = dict(p.settings)
            try:
                out[p.service] = Policy(**settings)
            except (TypeError, ValueError) as exc:
                self.err(p.loc, f"policy {p.service}: {exc}")
        return out


def _msg(exc: Exception) -> str:
    s = str(exc)
    return s[1:-1] if len(s) > 1 and s[0] == s[-1] == "'" else s


def _refs(t: Any) -> list[str]:
    if isinstance(t, Ref):
        return [t.name]
    if isinstance(t, Product):
        return [r for c in t.components for r in _refs(c)]
    if isinstance(t, Record):
        return [r for _, c in t.fields for r in _refs(c)]
    if isinstance(t, Fn):
        return [r for c in t.inputs + t.outputs for r in _refs(c)]
    return []


def _cycle_loc(edges: tuple[EdgeDecl, ...], witness: tuple[str, ...]) -> Loc | None:
    pairs = list(zip(witness, witness[1:]))
    for d in reversed(edges):
        if (d.src, d.dst) in pairs:
            return d.loc
    return None


def _vertex_loc(message: str, vlocs: dict[str, Loc]) -> Loc | None:
    for word in message.replace(".", " ").split():
        if word in vlocs:
            return vlocs[word]
    return None


def _splat(code: Callable[[tuple], Any]) -> Callable[..., Any]:
    return lambda *args: code(args)


def _splat_many(codes: list[Callable[[tuple], Any]]) -> Callable[..., Any]:
    return lambda *args: tuple(c(args) for c in codes)


def elaborate(tree: ScenarioFile) -> Scenario:
    return Loader(tree).load()


def load_text(text: str, file: str = "<scenario>") -> Scenario:
    return elaborate(parse(text, file))


def load_file(path: str | Path) -> Scenario:
    path = Path(path)
    return load_text(path.read_text(encoding="utf-8"), str(path))
