"""Type checking and compilation of scenario expressions.

An expression compiles to a closure over a tuple of argument payloads.
Checking is bidirectional only where it has to be: an anonymous record
literal ``{ f: e }`` takes its type from the expected type.
"""

from __future__ import annotations

import operator
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Any

from ..types import BOOL, NAT, TEXT, UNIT, Product, Record, Type, TypeRegistry, format_type, intern, type_equal
from .syntax import Binary, Call, Cond, Expr, FieldE, IndexE, Lit, Loc, RecordE, TupleE, Unary, Var

__all__ = ["ExprError", "Callee", "compile_expr", "BUILTINS"]

Code = Callable[[tuple], Any]


class ExprError(Exception):
    def __init__(self, loc: Loc, message: str):
        self.loc = loc
        self.message = message
        super().__init__(f"{loc}: {message}")


@dataclass(frozen=True)
class Callee:
    """A callable usable inside expressions: fixed parameter and result types."""

    params: tuple[Type, ...]
    result: Type
    impl: Callable[..., Any]


def _text(x: Any) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    return str(x)


BUILTINS: dict[str, list[Callee]] = {
    "text": [Callee((NAT,), TEXT, _text), Callee((BOOL,), TEXT, _text), Callee((TEXT,), TEXT, _text)],
    "len": [Callee((TEXT,), NAT, len)],
    "min": [Callee((NAT, NAT), NAT, min)],
    "max": [Callee((NAT, NAT), NAT, max)],
    "suc": [Callee((NAT,), NAT, lambda n: n + 1)],
    "pred": [Callee((NAT,), NAT, lambda n: n - 1 if n > 0 else 0)],
}

_ARITH: dict[str, Callable[[int, int], int]] = {
    "+": operator.add,
    "-": lambda a, b: a - b if a > b else 0,
    "*": operator.mul,
    "/": operator.floordiv,
    "%": operator.mod,
}
_CMP: dict[str, Callable[[Any, Any], bool]] = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


def _show(t: Type, reg: TypeRegistry | None) -> str:
    return format_type(t, reg)


def compile_expr(
    e: Expr,
    scope: Mapping[str, tuple[int, Type]],
    registry: TypeRegistry,
    functions: Mapping[str, Callee] | None = None,
    expected: Type | None = None,
) -> tuple[Type, Code]:
    """Type of ``e`` and a closure computing it from the argument tuple."""
    return _Compiler(scope, registry, functions or {}).run(e, expected)


class _Compiler:
    def __init__(self, scope: Mapping[str, tuple[int, Type]], registry: TypeRegistry, functions: Mapping[str, Callee]):
        self.scope = scope
        self.reg = registry
        self.functions = functions

    def run(self, e: Expr, expected: Type | None) -> tuple[Type, Code]:
        t, code = self.c(e, expected)
        if expected is not None and not type_equal(t, expected):
            raise ExprError(e.loc, f"expected {_show(expected, self.reg)}, found {_show(t, self.reg)}")
        return t, code

    def c(self, e: Expr, expected: Type | None = None) -> tuple[Type, Code]:
        method = getattr(self, "_" + type(e).__name__)
        return method(e, expected)

    def _Lit(self, e: Lit, expected: Type | None) -> tuple[Type, Code]:
        v = e.value
        if isinstance(v, bool):
            t = BOOL
        elif isinstance(v, int):
            t = NAT
        elif isinstance(v, str):
            t = TEXT
        else:
            t = UNIT
        return t, lambda _a: v

    def _Var(self, e: Var, expected: Type | None) -> tuple[Type, Code]:
        if e.name not in self.scope:
            raise ExprError(e.loc, f"unknown name {e.name!r}")
        k, t = self.scope[e.name]
        return t, lambda a: a[k]

    def _TupleE(self, e: TupleE, expected: Type | None) -> tuple[Type, Code]:
        hints: list[Type | None] = [None] * len(e.items)
        if isinstance(expected, Product) and len(expected.components) == len(e.items):
            hints = list(expected.components)
        parts = [self.c(x, h) for x, h in zip(e.items, hints)]
        t = intern(Product(tuple(p[0] for p in parts)))
        codes = [p[1] for p in parts]
        return t, lambda a: tuple(c(a) for c in codes)

    def _RecordE(self, e: RecordE, expected: Type | None) -> tuple[Type, Code]:
        if e.type_name is not None:
            if e.type_name not in self.reg:
                raise ExprError(e.loc, f"unknown type {e.type_name!r}")
            t = self.reg.lookup(e.type_name)
            if not isinstance(t, Record):
                raise ExprError(e.loc, f"{e.type_name} is not a record type")
        elif isinstance(expected, Record):
            t = expected
        else:
            raise ExprError(e.loc, "cannot infer the record type here; write TypeName { ... }")
        given = [n for n, _ in e.fields]
        if len(set(given)) != len(given):
            raise ExprError(e.loc, "duplicate field in record literal")
        want = [n for n, _ in t.fields]
        missing = [n for n in want if n not in given]
        extra = [n for n in given if n not in want]
        if missing or extra:
            msg = []
            if missing:
                msg.append("missing field(s) " + ", ".join(missing))
            if extra:
                msg.append("unknown field(s) " + ", ".join(extra))
            raise ExprError(e.loc, f"record {_show(t, self.reg)}: " + "; ".join(msg))
        by_name = dict(e.fields)
        codes = []
        for n, ft in t.fields:
            sub = by_name[n]
            st, code = self.c(sub, ft)
            if not type_equal(st, ft):
                raise ExprError(sub.loc, f"field {n} needs {_show(ft, self.reg)}, found {_show(st, self.reg)}")
            codes.append(code)
        return t, lambda a: tuple(c(a) for c in codes)

    def _FieldE(self, e: FieldE, expected: Type | None) -> tuple[Type, Code]:
        t, code = self.c(e.target)
        if not isinstance(t, Record):
            raise ExprError(e.loc, f"{_show(t, self.reg)} has no fields")
        try:
            k = t.index(e.name)
        except (KeyError, ValueError):
            raise ExprError(e.loc, f"{_show(t, self.reg)} has no field {e.name!r}") from None
        return t.fields[k][1], lambda a: code(a)[k]

    def _IndexE(self, e: IndexE, expected: Type | None) -> tuple[Type, Code]:
        t, code = self.c(e.target)
        if not isinstance(t, Product):
            raise ExprError(e.loc, f"{_show(t, self.reg)} is not a tuple")
        n = len(t.components)
        if not 1 <= e.index <= n:
            raise ExprError(e.loc, f"tuple index {e.index} out of range 1..{n}")
        k = e.index - 1
        return t.components[k], lambda a: code(a)[k]

    def _Unary(self, e: Unary, expected: Type | None) -> tuple[Type, Code]:
        t, code = self.c(e.operand)
        self._need(e.operand, t, BOOL, "not")
        return BOOL, lambda a: not code(a)

    def _need(self, e: Expr, t: Type, want: Type, op: str) -> None:
        if not type_equal(t, want):
            raise ExprError(e.loc, f"operator {op} needs {_show(want, self.reg)}, found {_show(t, self.reg)}")

    def _Binary(self, e: Binary, expected: Type | None) -> tuple[Type, Code]:
        op = e.op
        lt, lc = self.c(e.left)
        rt, rc = self.c(e.right, lt if isinstance(lt, Record) else None)
        if op in ("and", "or"):
            self._need(e.left, lt, BOOL, op)
            self._need(e.right, rt, BOOL, op)
            if op == "and":
                return BOOL, lambda a: lc(a) and rc(a)
            return BOOL, lambda a: lc(a) or rc(a)
        if op in ("==", "!="):
            if not type_equal(lt, rt):
                raise ExprError(
                    e.loc, f"cannot compare {_show(lt, self.reg)} with {_show(rt, self.reg)}"
                )
            if op == "==":
                return BOOL, lambda a: lc(a) == rc(a)
            return BOOL, lambda a: lc(a) != rc(a)
        if op in _CMP:
            if not (type_equal(lt, rt) and (lt is NAT or lt is TEXT)):
                raise ExprError(
                    e.loc, f"operator {op} needs two nat or two text operands, found "
                    f"{_show(lt, self.reg)} and {_show(rt, self.reg)}"
                )
            f = _CMP[op]
            return BOOL, lambda a: f(lc(a), rc(a))
        if op == "++":
            self._need(e.left, lt, TEXT, op)
            self._need(e.right, rt, TEXT, op)
            return TEXT, lambda a: lc(a) + rc(a)
        f = _ARITH[op]
        self._need(e.left, lt, NAT, op)
        self._need(e.right, rt, NAT, op)
        return NAT, lambda a: f(lc(a), rc(a))

    def _Call(self, e: Call, expected: Type | None) -> tuple[Type, Code]:
        if e.name in self.functions:
            candidates = [self.functions[e.name]]
        elif e.name in BUILTINS:
            candidates = BUILTINS[e.name]
        else:
            raise ExprError(e.loc, f"unknown function {e.name!r}")
        args = [self.c(x) for x in e.args]
        types = tuple(t for t, _ in args)
        for cand in candidates:
            if len(cand.params) == len(types) and all(type_equal(p, t) for p, t in zip(cand.params, types)):
                impl = cand.impl
                codes = [c for _, c in args]
                return cand.result, lambda a: impl(*(c(a) for c in codes))
        shown = ", ".join(_show(t, self.reg) for t in types)
        raise ExprError(e.loc, f"no version of {e.name} takes ({shown})")

    def _Cond(self, e: Cond, expected: Type | None) -> tuple[Type, Code]:
        tt, tc = self.c(e.test)
        self._need(e.test, tt, BOOL, "if")
        at, ac = self.c(e.then, expected)
        bt, bc = self.c(e.orelse, expected if expected is not None else at)
        if not type_equal(at, bt):
            raise ExprError(e.loc, f"branches differ: {_show(at, self.reg)} and {_show(bt, self.reg)}")
        return at, lambda a: ac(a) if tc(a) else bc(a)
