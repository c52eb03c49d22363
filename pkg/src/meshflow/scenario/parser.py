"""Lexer and recursive-descent parser for scenario files.

Layout is free: statements start with a keyword and sections are
``name { ... }`` blocks.  ``#`` starts a comment that runs to the end of
the line.  Expressions use precedence climbing.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .syntax import (
    Binary,
    Call,
    ClockDecl,
    Cond,
    Diagnostic,
    EdgeDecl,
    EndpointDecl,
    ExclusionDecl,
    Expr,
    FieldE,
    FnDecl,
    IndexE,
    InputDecl,
    LinkDecl,
    Lit,
    Loc,
    NodeDecl,
    Param,
    PolicyDecl,
    ProtocolDecl,
    RecordE,
    RelDecl,
    ScenarioError,
    ScenarioFile,
    ServiceDecl,
    StoreDecl,
    SubscribeDecl,
    TFn,
    TName,
    TProduct,
    TRecord,
    TupleE,
    TypeDecl,
    TypeExpr,
    Unary,
    Var,
)

__all__ = ["Token", "tokenize", "parse", "SECTIONS"]

SECTIONS = ("types", "protocols", "relations", "functions", "services", "mesh", "exclusions", "inputs", "policies")

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<int>\d+)
  | (?P<str>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|==|!=|<=|>=|\+\+|[{}()\[\],;:.=<>+\-*/%])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # int | str | ident | op | eof
    text: str
    loc: Loc


def tokenize(text: str, file: str = "<scenario>") -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        loc = Loc(line, pos - line_start + 1)
        if m is None:
            msg = "unterminated string" if text[pos] == '"' else f"unexpected character {text[pos]!r}"
            raise ScenarioError([Diagnostic(loc, msg, file)])
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(Token(kind, chunk, loc))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = m.start() + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", Loc(line, pos - line_start + 1)))
    return tokens


_BINARY = {
    "or": 1,
    "and": 2,
    "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "+": 4, "-": 4, "++": 4,
    "*": 5, "/": 5, "%": 5,
}


class Parser:
    def __init__(self, text: str, file: str = "<scenario>"):
        self.file = file
        self.toks = tokenize(text, file)
        self.i = 0

    # -- token helpers --------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, message: str, tok: Token | None = None) -> ScenarioError:
        return ScenarioError([Diagnostic((tok or self.tok).loc, message, self.file)])

    def _show(self, tok: Token) -> str:
        return "end of file" if tok.kind == "eof" else repr(tok.text)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "ident") and self.tok.text == text

    def accept(self, text: str) -> Token | None:
        if self.at(text):
            tok = self.tok
            self.i += 1
            return tok
        return None

    def expect(self, text: str) -> Token:
        tok = self.accept(text)
        if tok is None:
            raise self.error(f"expected {text!r}, found {self._show(self.tok)}")
        return tok

    def ident(self, what: str = "a name") -> Token:
        if self.tok.kind != "ident":
            raise self.error(f"expected {what}, found {self._show(self.tok)}")
        tok = self.tok
        self.i += 1
        return tok

    def integer(self, what: str = "a number") -> int:
        if self.tok.kind != "int":
            raise self.error(f"expected {what}, found {self._show(self.tok)}")
        tok = self.tok
        self.i += 1
        return int(tok.text)

    # -- file -----------------------------------------------------------

    def parse_file(self) -> ScenarioFile:
        out: dict[str, list] = {k: [] for k in SECTIONS}
        header: dict[str, int] = {}
        while self.tok.kind != "eof":
            tok = self.ident("a section name")
            if tok.text in ("seed", "horizon", "latency"):
                if tok.text in header:
                    raise self.error(f"{tok.text} given twice", tok)
                header[tok.text] = self.integer()
                continue
            if tok.text not in SECTIONS:
                raise self.error(f"unknown section {tok.text!r}", tok)
            self.expect("{")
            parse_item = getattr(self, f"_item_{tok.text}")
            while not self.accept("}"):
                if self.tok.kind == "eof":
                    raise self.error(f"unclosed section {tok.text!r}", tok)
                out[tok.text].append(parse_item())
        mesh = out.pop("mesh")
        return ScenarioFile(
            seed=header.get("seed"),
            horizon=header.get("horizon"),
            latency=header.get("latency"),
            types=tuple(out["types"]),
            protocols=tuple(out["protocols"]),
            relations=tuple(out["relations"]),
            functions=tuple(out["functions"]),
            services=tuple(out["services"]),
            edges=tuple(m for m in mesh if isinstance(m, EdgeDecl)),
            subscriptions=tuple(m for m in mesh if isinstance(m, SubscribeDecl)),
            exclusions=tuple(out["exclusions"]),
            inputs=tuple(out["inputs"]),
            policies=tuple(out["policies"]),
            file=self.file,
        )

    # -- types ----------------------------------------------------------

    def type_expr(self) -> TypeExpr:
        tok = self.tok
        if self.accept("("):
            items = [self.type_expr()]
            while self.accept(","):
                items.append(self.type_expr())
            self.expect(")")
            if len(items) == 1:
                return items[0]
            return TProduct(tuple(items), tok.loc)
        name = self.ident("a type")
        if name.text == "record":
            self.expect("{")
            fields = []
            while True:
                f = self.ident("a field name").text
                self.expect(":")
                fields.append((f, self.type_expr()))
                if not self.accept(","):
                    break
            self.expect("}")
            return TRecord(tuple(fields), name.loc)
        if name.text == "fn":
            ins = self._type_list()
            self.expect("->")
            outs = self._type_list()
            return TFn(ins, outs, name.loc)
        return TName(name.text, name.loc)

    def _type_list(self) -> tuple[TypeExpr, ...]:
        self.expect("(")
        items = []
        if not self.at(")"):
            items.append(self.type_expr())
            while self.accept(";"):
                items.append(self.type_expr())
        self.expect(")")
        return tuple(items)

    def _item_types(self) -> TypeDecl:
        kw = self.expect("type")
        name = self.ident("a type name").text
        self.expect("=")
        return TypeDecl(name, self.type_expr(), kw.loc)

    def _item_protocols(self) -> ProtocolDecl:
        kw = self.expect("protocol")
        name = self.ident("a protocol name").text
        if self.accept("="):
            self.expect("store")
            return ProtocolDecl(name, store=self.type_expr(), loc=kw.loc)
        self.expect(":")
        self.expect("client")
        self.expect("sends")
        sends = self.type_expr()
        self.expect("receives")
        return ProtocolDecl(name, sends, self.type_expr(), loc=kw.loc)

    def _params(self) -> tuple[Param, ...]:
        self.expect("(")
        params = []
        if not self.at(")"):
            while True:
                p = self.ident("a parameter name")
                self.expect(":")
                params.append(Param(p.text, self.type_expr(), p.loc))
                if not self.accept(","):
                    break
        self.expect(")")
        return tuple(params)

    def _item_relations(self) -> RelDecl:
        kw = self.expect("rel")
        name = self.ident("a relation name").text
        params = self._params()
        self.expect("=")
        return RelDecl(name, params, self.expr(), kw.loc)

    def _item_functions(self) -> FnDecl:
        kw = self.expect("fn")
        name = self.ident("a function name").text
        params = self._params()
        self.expect("->")
        outs = self._type_list()
        self.expect("=")
        bodies = [self.expr()]
        while self.accept(";"):
            bodies.append(self.expr())
        return FnDecl(name, params, outs, tuple(bodies), kw.loc)

    # -- services -------------------------------------------------------

    def _item_services(self) -> ServiceDecl | StoreDecl | ClockDecl:
        kw = self.ident("'service', 'store' or 'clock'")
        if kw.text == "store":
            name = self.ident("a store name").text
            self.expect(":")
            return StoreDecl(name, self.ident("a protocol name").text, kw.loc)
        if kw.text == "clock":
            name = self.ident("a clock name").text
            self.expect("period")
            return ClockDecl(name, self.integer("a period"), kw.loc)
        if kw.text != "service":
            raise self.error(f"expected 'service', 'store' or 'clock', found {kw.text!r}", kw)
        name = self.ident("a service name").text
        gateway = self.accept("gateway") is not None
        self.expect("{")
        endpoints, nodes, links = [], [], []
        while not self.accept("}"):
            tok = self.ident("'socket', 'plug', 'node' or 'link'")
            if tok.text in ("socket", "plug"):
                ep = self.ident("an endpoint name").text
                self.expect(":")
                endpoints.append(EndpointDecl(tok.text, ep, self.ident("a protocol name").text, tok.loc))
            elif tok.text == "node":
                nodes.append(self._node(tok))
            elif tok.text == "link":
                src = self.ident("a node id").text
                self.expect(".")
                sp = self.integer("a port number")
                self.expect("->")
                dst = self.ident("a node id").text
                self.expect(".")
                dp = self.integer("a port number")
                links.append(LinkDecl(src, sp, dst, dp, tok.loc))
            else:
                raise self.error(f"expected 'socket', 'plug', 'node' or 'link', found {tok.text!r}", tok)
        return ServiceDecl(name, gateway, tuple(endpoints), tuple(nodes), tuple(links), kw.loc)

    def _node(self, kw: Token) -> NodeDecl:
        nid = self.ident("a node id").text
        self.expect("=")
        form = self.ident("a node form")
        f = form.text
        if f in ("in", "out"):
            ep = self.ident("an endpoint name").text
            via = self.ident("a function name").text if self.accept("via") else None
            return NodeDecl(nid, f, target=ep, via=via, loc=kw.loc)
        if f == "call":
            return NodeDecl(nid, f, target=self.ident("a function name").text, loc=kw.loc)
        if f == "if":
            rel = self.ident("a relation name").text
            self.expect(":")
            return NodeDecl(nid, f, target=rel, type=self.type_expr(), loc=kw.loc)
        if f == "copy":
            return NodeDecl(nid, f, type=self.type_expr(), loc=kw.loc)
        if f == "const":
            e = self.expr()
            self.expect(":")
            return NodeDecl(nid, f, type=self.type_expr(), expr=e, loc=kw.loc)
        raise self.error(f"unknown node form {f!r}", form)

    # -- mesh, exclusions, inputs, policies ------------------------------

    def _item_mesh(self) -> EdgeDecl | SubscribeDecl:
        kw = self.ident("'edge' or 'subscribe'")
        if kw.text == "subscribe":
            svc = self.ident("a service name").text
            self.expect(".")
            return SubscribeDecl(svc, self.ident("a plug name").text, kw.loc)
        if kw.text != "edge":
            raise self.error(f"expected 'edge' or 'subscribe', found {kw.text!r}", kw)
        name = None
        if self.peek().text == "=":
            name = self.ident("an edge name").text
            self.expect("=")
        src = self.ident("a service name").text
        self.expect(".")
        plug = self.ident("a plug name").text
        self.expect("->")
        dst = self.ident("a service name").text
        self.expect(".")
        sock = self.ident("a socket name").text
        latency = self.integer("a latency") if self.accept("latency") else None
        return EdgeDecl(name, src, plug, dst, sock, latency, kw.loc)

    def _edge_ref(self) -> tuple[str, Loc]:
        first = self.ident("an edge")
        if not self.accept("."):
            return first.text, first.loc
        plug = self.ident("a plug name").text
        self.expect("->")
        dst = self.ident("a service name").text
        self.expect(".")
        sock = self.ident("a socket name").text
        return f"{first.text}.{plug}->{dst}.{sock}", first.loc

    def _item_exclusions(self) -> ExclusionDecl:
        kw = self.expect("exclusive")
        refs = [self._edge_ref()]
        while self.accept(","):
            refs.append(self._edge_ref())
        return ExclusionDecl(tuple(r for r, _ in refs), tuple(l for _, l in refs), kw.loc)

    def _item_inputs(self) -> InputDecl:
        kw = self.ident("'at' or 'repeat'")
        count = every = None
        if kw.text == "repeat":
            count = self.integer("a repeat count")
            self.expect("every")
            every = self.integer("an interval")
            self.expect("from")
            time = self.integer("a start time")
        elif kw.text == "at":
            time = self.integer("a time")
        else:
            raise self.error(f"expected 'at' or 'repeat', found {kw.text!r}", kw)
        svc_tok = self.ident("a gateway name")
        self.expect(".")
        sock = self.ident("a socket name").text
        self.expect("=")
        return InputDecl(time, svc_tok.text, sock, self.expr(), count, every, kw.loc, svc_tok.loc)

    _POLICY_KEYS = ("replicas", "max_replicas", "scale_up", "scale_down", "grace", "routing", "autoscale")

    def _item_policies(self) -> PolicyDecl:
        kw = self.expect("policy")
        svc = self.ident("a service name").text
        settings = []
        while self.tok.kind == "ident" and self.tok.text in self._POLICY_KEYS:
            key = self.ident().text
            if key == "routing":
                settings.append((key, self.ident("a routing policy").text))
            elif key == "autoscale":
                val = self.ident("'on' or 'off'")
                if val.text not in ("on", "off"):
                    raise self.error(f"expected 'on' or 'off', found {val.text!r}", val)
                settings.append((key, val.text == "on"))
            else:
                settings.append((key, self.integer()))
        if not settings:
            raise self.error(f"expected a policy setting, found {self._show(self.tok)}")
        return PolicyDecl(svc, tuple(settings), kw.loc)

    # -- expressions ----------------------------------------------------

    def expr(self, min_prec: int = 1) -> Expr:
        left = self.unary()
        while True:
            tok = self.tok
            prec = _BINARY.get(tok.text) if tok.kind in ("op", "ident") else None
            if prec is None or prec < min_prec:
                return left
            self.i += 1
            right = self.expr(prec + 1)
            left = Binary(tok.text, left, right, tok.loc)

    def unary(self) -> Expr:
        tok = self.tok
        if self.accept("not"):
            return Unary("not", self.unary(), tok.loc)
        return self.postfix(self.primary())

    def postfix(self, e: Expr) -> Expr:
        while self.at("."):
            self.i += 1
            at = self.tok.loc
            if self.tok.kind == "int":
                e = IndexE(e, self.integer(), at)
            else:
                e = FieldE(e, self.ident("a field name").text, at)
        return e

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "int":
            self.i += 1
            return Lit(int(tok.text), tok.loc)
        if tok.kind == "str":
            self.i += 1
            return Lit(json.loads(tok.text), tok.loc)
        if self.accept("("):
            if self.accept(")"):
                return Lit((), tok.loc)
            items = [self.expr()]
            while self.accept(","):
                items.append(self.expr())
            self.expect(")")
            return items[0] if len(items) == 1 else TupleE(tuple(items), tok.loc)
        if self.at("{"):
            return self._record(None, tok)
        if tok.kind == "ident":
            self.i += 1
            if tok.text in ("true", "false"):
                return Lit(tok.text == "true", tok.loc)
            if tok.text == "if":
                test = self.expr()
                self.expect("then")
                then = self.expr()
                self.expect("else")
                return Cond(test, then, self.expr(), tok.loc)
            if self.at("{"):
                return self._record(tok.text, tok)
            if self.accept("("):
                args = []
                if not self.at(")"):
                    args.append(self.expr())
                    while self.accept(","):
                        args.append(self.expr())
                self.expect(")")
                return Call(tok.text, tuple(args), tok.loc)
            return Var(tok.text, tok.loc)
        raise self.error(f"expected an expression, found {self._show(tok)}")

    def _record(self, name: str | None, start: Token) -> RecordE:
        self.expect("{")
        fields = []
        if not self.at("}"):
            while True:
                f = self.ident("a field name").text
                self.expect(":")
                fields.append((f, self.expr()))
                if not self.accept(","):
                    break
        self.expect("}")
        return RecordE(name, tuple(fields), start.loc)


def parse(text: str, file: str = "<scenario>") -> ScenarioFile:
    """Parse scenario text; raises :class:`ScenarioError` with a located diagnostic."""
    return Parser(text, file).parse_file()
