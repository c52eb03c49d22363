"""Canonical text form of a parsed scenario."""

from __future__ import annotations

import json

from .parser import _BINARY
from .syntax import (
    Binary,
    Call,
    ClockDecl,
    Cond,
    Expr,
    FieldE,
    IndexE,
    Lit,
    RecordE,
    ScenarioFile,
    ServiceDecl,
    StoreDecl,
    TFn,
    TName,
    TProduct,
    TRecord,
    TupleE,
    TypeExpr,
    Unary,
    Var,
)

__all__ = ["print_scenario", "print_type", "print_expr"]


def print_type(t: TypeExpr) -> str:
    if isinstance(t, TName):
        return t.name
    if isinstance(t, TProduct):
        return "(" + ", ".join(print_type(c) for c in t.items) + ")"
    if isinstance(t, TRecord):
        return "record { " + ", ".join(f"{n}: {print_type(c)}" for n, c in t.fields) + " }"
    if isinstance(t, TFn):
        ins = "; ".join(print_type(c) for c in t.inputs)
        outs = "; ".join(print_type(c) for c in t.outputs)
        return f"fn({ins}) -> ({outs})"
    raise TypeError(f"not a type expression: {t!r}")


def _lit(v: object) -> str:
    if v == () and isinstance(v, tuple):
        return "()"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    return str(v)


def print_expr(e: Expr, prec: int = 0) -> str:
    """Render with just enough parentheses to parse back to the same tree."""
    if isinstance(e, Lit):
        return _lit(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, TupleE):
        return "(" + ", ".join(print_expr(x) for x in e.items) + ")"
    if isinstance(e, RecordE):
        body = ", ".join(f"{n}: {print_expr(x)}" for n, x in e.fields)
        head = f"{e.type_name} " if e.type_name else ""
        return f"{head}{{ {body} }}" if body else f"{head}{{}}"
    if isinstance(e, FieldE):
        return f"{print_expr(e.target, 99)}.{e.name}"
    if isinstance(e, IndexE):
        return f"{print_expr(e.target, 99)}.{e.index}"
    if isinstance(e, Call):
        return f"{e.name}(" + ", ".join(print_expr(a) for a in e.args) + ")"
    if isinstance(e, Unary):
        s = f"not {print_expr(e.operand, 6)}"
        return f"({s})" if prec > 6 else s
    if isinstance(e, Binary):
        p = _BINARY[e.op]
        s = f"{print_expr(e.left, p)} {e.op} {print_expr(e.right, p + 1)}"
        return f"({s})" if prec > p else s
    if isinstance(e, Cond):
        s = f"if {print_expr(e.test)} then {print_expr(e.then)} else {print_expr(e.orelse)}"
        return f"({s})" if prec > 0 else s
    raise TypeError(f"not an expression: {e!r}")


def _params(params: tuple) -> str:
    return "(" + ", ".join(f"{p.name}: {print_type(p.type)}" for p in params) + ")"


def _edge_ref(name: str) -> str:
    if "->" in name:
        a, b = name.split("->")
        return f"{a} -> {b}"
    return name


def print_scenario(s: ScenarioFile) -> str:
    out: list[str] = []
    for key in ("seed", "horizon", "latency"):
        v = getattr(s, key)
        if v is not None:
            out.append(f"{key} {v}")

    def section(name: str, lines: list[str]) -> None:
        if lines:
            out.append("")
            out.append(f"{name} {{")
            out.extend("  " + line if line else "" for line in lines)
            out.append("}")

    section("types", [f"type {d.name} = {print_type(d.type)}" for d in s.types])
    protos = []
    for p in s.protocols:
        if p.store is not None:
            protos.append(f"protocol {p.name} = store {print_type(p.store)}")
        else:
            protos.append(
                f"protocol {p.name} : client sends {print_type(p.sends)} receives {print_type(p.receives)}"
            )
    section("protocols", protos)
    section("relations", [f"rel {r.name}{_params(r.params)} = {print_expr(r.body)}" for r in s.relations])
    section(
        "functions",
        [
            f"fn {f.name}{_params(f.params)} -> ("
            + "; ".join(print_type(t) for t in f.outputs)
            + ") = "
            + "; ".join(print_expr(b) for b in f.bodies)
            for f in s.functions
        ],
    )
    svc_lines: list[str] = []
    for d in s.services:
        if isinstance(d, StoreDecl):
            svc_lines.append(f"store {d.name} : {d.protocol}")
        elif isinstance(d, ClockDecl):
            svc_lines.append(f"clock {d.name} period {d.period}")
        elif isinstance(d, ServiceDecl):
            svc_lines.append(f"service {d.name}{' gateway' if d.gateway else ''} {{")
            for ep in d.endpoints:
                svc_lines.append(f"  {ep.role} {ep.name} : {ep.protocol}")
            for n in d.nodes:
                svc_lines.append(f"  node {n.id} = {_node_body(n)}")
            for ln in d.links:
                svc_lines.append(f"  link {ln.src}.{ln.src_port} -> {ln.dst}.{ln.dst_port}")
            svc_lines.append("}")
    section("services", svc_lines)
    mesh = []
    for e in s.edges:
        head = f"{e.name} = " if e.name else ""
        tail = f" latency {e.latency}" if e.latency is not None else ""
        mesh.append(f"edge {head}{e.src}.{e.plug} -> {e.dst}.{e.socket}{tail}")
    mesh += [f"subscribe {x.service}.{x.plug}" for x in s.subscriptions]
    section("mesh", mesh)
    section("exclusions", ["exclusive " + ", ".join(_edge_ref(m) for m in x.members) for x in s.exclusions])
    inputs = []
    for i in s.inputs:
        target = f"{i.service}.{i.socket} = {print_expr(i.expr)}"
        if i.count is None:
            inputs.append(f"at {i.time} {target}")
        else:
            inputs.append(f"repeat {i.count} every {i.every} from {i.time} {target}")
    section("inputs", inputs)
    pols = []
    for p in s.policies:
        parts = []
        for k, v in p.settings:
            if isinstance(v, bool):
                v = "on" if v else "off"
            parts.append(f"{k} {v}")
        pols.append(f"policy {p.service} " + " ".join(parts))
    section("policies", pols)
    return "\n".join(out).lstrip("\n") + "\n"


def _node_body(n) -> str:
    if n.form in ("in", "out"):
        return f"{n.form} {n.target}" + (f" via {n.via}" if n.via else "")
    if n.form == "call":
        return f"call {n.target}"
    if n.form == "if":
        return f"if {n.target} : {print_type(n.type)}"
    if n.form == "copy":
        return f"copy {print_type(n.type)}"
    return f"const {print_expr(n.expr)} : {print_type(n.type)}"
