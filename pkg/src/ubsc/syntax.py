"""Surface syntax: lexer, recursive-descent parser, and program files.

Files are UTF-8 with ``--`` line comments.  A program is a sequence of named
protocol declarations, shared-channel declarations, and one network.  The
pretty-printer lives in :mod:`ubsc.render`; ``parse(render(x))`` is
alpha-equivalent to ``x``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import sestypes as st
from . import terms as t
from . import values as v
from .render import render_network, render_type


class UBSCSyntaxError(Exception):
    def __init__(self, msg, line=None, col=None, filename=None):
        self.line, self.col, self.filename = line, col, filename
        where = f"{filename or '<input>'}:{line}:{col}: " if line else ""
        super().__init__(where + msg)


KEYWORDS = {
    "type", "shared", "new", "req", "acc", "def", "in", "if", "then", "else",
    "rec", "end", "true", "false", "unit", "eps", "and", "or", "union", "df",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<recov>>r(?![A-Za-z0-9_]))
  | (?P<op>\|\||>>|<<|>=|<=|!=|[()\[\]{}<>~:,.|!?*+\-=#&])
  | (?P<int>\d+)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_']*)
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # op, int, string, name, kw, eof
    text: str
    line: int
    col: int


def lex(src: str, filename=None) -> list:
    toks = []
    i, line, col = 0, 1, 1
    while i < len(src):
        m = _TOKEN_RE.match(src, i)
        if not m:
            raise UBSCSyntaxError(f"unexpected character {src[i]!r}", line, col, filename)
        text = m.group(0)
        kind = m.lastgroup
        if kind != "ws":
            if kind == "recov":
                toks.append(Token("op", ">r", line, col))
            elif kind == "name":
                toks.append(Token("kw" if text in KEYWORDS else "name", text, line, col))
            else:
                toks.append(Token(kind, text, line, col))
        nl = text.count("\n")
        if nl:
            line += nl
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        i = m.end()
    toks.append(Token("eof", "", line, col))
    return toks


@dataclass
class SourceProgram:
    type_decls: dict  # name -> SessionType
    shared_decls: dict  # shared name -> type name
    network: t.Network

    def shared_types(self) -> dict:
        return {a: self.type_decls[tn] for a, tn in self.shared_decls.items()}


class _Parser:
    def __init__(self, toks, filename=None):
        self.toks = toks
        self.i = 0
        self.filename = filename
        self.type_decls: dict = {}

    # -- token helpers -------------------------------------------------
    def peek(self, ahead=0) -> Token:
        return self.toks[min(self.i + ahead, len(self.toks) - 1)]

    def next(self) -> Token:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def at(self, text, ahead=0) -> bool:
        tok = self.peek(ahead)
        return tok.text == text and tok.kind in ("op", "kw", "int")

    def expect(self, text) -> Token:
        tok = self.next()
        if tok.text != text:
            self.fail(f"expected {text!r}, found {tok.text!r}", tok)
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise UBSCSyntaxError(msg, tok.line, tok.col, self.filename)

    def name(self) -> str:
        tok = self.next()
        if tok.kind != "name":
            self.fail(f"expected a name, found {tok.text!r}", tok)
        return tok.text

    # -- program -------------------------------------------------------
    def program(self) -> SourceProgram:
        shared = {}
        while self.at("type"):
            self.next()
            n = self.name()
            self.expect("=")
            self.type_decls[n] = self.stype(frozenset())
        while self.at("shared"):
            self.next()
            a = self.name()
            self.expect(":")
            tn = self.name()
            if tn not in self.type_decls:
                self.fail(f"undeclared protocol type {tn}")
            shared[a] = tn
        net = self.network()
        if self.peek().kind != "eof":
            self.fail(f"trailing input {self.peek().text!r}")
        net = _resolve_call_args(net)
        return SourceProgram(self.type_decls, shared, net)

    # -- session types ---------------------------------------------------
    def stype(self, bound: frozenset) -> st.SessionType:
        tok = self.peek()
        if self.at("!") or self.at("?"):
            self.next()
            b = self.btype()
            self.expect(".")
            cont = self.stype(bound)
            return st.Out(b, cont) if tok.text == "!" else st.In(b, cont)
        if self.at("+") or self.at("&"):
            self.next()
            self.expect("{")
            arms = []
            while True:
                l = self.name()
                self.expect(":")
                arms.append((l, self.stype(bound)))
                if self.at(","):
                    self.next()
                    continue
                break
            self.expect("}")
            try:
                arms_t = st.mkarms(arms)
            except st.TypeSyntaxError as e:
                self.fail(str(e), tok)
            return st.SelT(arms_t) if tok.text == "+" else st.BraT(arms_t)
        if self.at("end"):
            self.next()
            return st.END
        if self.at("rec"):
            self.next()
            n = self.name()
            self.expect(".")
            body = self.stype(bound | {n})
            rec = st.Rec(n, body)
            if not st.contractive(rec):
                self.fail(f"non-contractive recursive type rec {n}", tok)
            return rec
        if tok.kind == "name":
            n = self.name()
            if n in bound:
                return st.TVar(n)
            if n in self.type_decls:
                return self.type_decls[n]
            self.fail(f"unknown type name {n}", tok)
        self.fail(f"expected a session type, found {tok.text!r}", tok)

    def btype(self) -> v.BaseType:
        tok = self.peek()
        simple = {"int": v.INT_T, "bool": v.BOOL_T, "str": v.STR_T, "any": v.ANY_T}
        if tok.kind == "name" and tok.text in simple:
            self.next()
            return simple[tok.text]
        if self.at("unit"):
            self.next()
            return v.UNIT_T
        if tok.kind == "name" and tok.text == "set":
            self.next()
            self.expect("(")
            e = self.btype()
            self.expect(")")
            return v.SetT(e)
        if self.at("("):
            self.next()
            a = self.btype()
            self.expect(",")
            b = self.btype()
            self.expect(")")
            return v.PairT(a, b)
        self.fail(f"expected a base type, found {tok.text!r}", tok)

    # -- networks --------------------------------------------------------
    def network(self) -> t.Network:
        left = self.atom_network()
        while self.at("||"):
            self.next()
            right = self.atom_network()
            left = t.Par(left, right)
        return left

    def atom_network(self) -> t.Network:
        if self.at("new"):
            self.next()
            n = self.name()
            self.expect(".")
            return t.Restrict(n, self.atom_network())
        if self.at("("):
            self.next()
            inner = self.network()
            self.expect(")")
            return inner
        return self.node()

    def node(self) -> t.NetworkNode:
        tok = self.expect("[")
        p = self.process(frozenset())
        bufs = []
        while self.at("|"):
            self.next()
            bufs.append(self.buffer())
        self.expect("]")
        return t.NetworkNode(p, tuple(bufs), pos=tok.line)

    def buffer(self) -> t.Buffer:
        aggr = False
        if self.at("*"):
            self.next()
            aggr = True
        sess = self.name()
        self.expect("~")
        tok = self.next()
        if tok.kind != "int":
            self.fail("expected a state counter", tok)
        state = int(tok.text)
        self.expect(":")
        self.expect("[")
        queue = []
        while not self.at("]"):
            queue.append(self.msg(aggr))
            if self.at(","):
                self.next()
            else:
                break
        self.expect("]")
        try:
            return t.Buffer(t.Endpoint(sess, aggr), state, tuple(queue))
        except ValueError as e:
            self.fail(str(e), tok)

    def msg(self, aggr: bool):
        tok = self.peek()
        if aggr:
            self.expect("(")
            ctok = self.next()
            if ctok.kind != "int":
                self.fail("expected a message tag", ctok)
            self.expect(",")
            e = self.expr(frozenset())
            self.expect(")")
            return t.TaggedMsg(int(ctok.text), self._closed_value(e, tok))
        if self.at("#"):
            self.next()
            return t.LabMsg(self.name())
        e = self.expr(frozenset())
        return t.ValMsg(self._closed_value(e, tok))

    def _closed_value(self, e: v.Expr, tok) -> v.Value:
        try:
            return v.eval_expr(e, {})
        except v.EvalError as exc:
            self.fail(f"buffer message must be a closed value ({exc})", tok)

    # -- processes ---------------------------------------------------------
    def process(self, chanvars: frozenset) -> t.Process:
        left = self.recov(chanvars)
        if self.at("+"):
            self.next()
            right = self.process(chanvars)  # sums right-associate
            return t.Sum(left, right)
        return left

    def recov(self, chanvars: frozenset) -> t.Process:
        left = self.prefixterm(chanvars)
        while self.at(">r"):
            self.next()
            handler = self.prefixterm(chanvars)
            left = t.Recover(left, handler)
        return left

    def prefixterm(self, chanvars: frozenset) -> t.Process:
        tok = self.peek()
        if self.at("0"):
            self.next()
            return t.Inact()
        if self.at("("):
            self.next()
            p = self.process(chanvars)
            self.expect(")")
            return p
        if self.at("req"):
            self.next()
            a = self.name()
            self.expect("(")
            self.expect("*")
            x = self.name()
            self.expect(")")
            self.expect(".")
            return t.Request(a, x, self.prefixterm(chanvars | {x}))
        if self.at("acc"):
            self.next()
            a = self.name()
            self.expect("(")
            x = self.name()
            self.expect(")")
            self.expect(".")
            return t.Accept(a, x, self.prefixterm(chanvars | {x}))
        if self.at("if"):
            self.next()
            g = self.expr(chanvars)
            self.expect("then")
            tp = self.prefixterm(chanvars)
            self.expect("else")
            ep = self.prefixterm(chanvars)
            return t.Cond(g, tp, ep)
        if self.at("def"):
            self.next()
            defs = []
            while True:
                dn = self.name()
                self.expect("(")
                params = []
                while not self.at(")"):
                    params.append(self.name())
                    if self.at(","):
                        self.next()
                self.expect(")")
                self.expect("=")
                body = self.process(chanvars | frozenset(params))
                defs.append((dn, tuple(params), body))
                if self.at(",") and self.peek(1).kind == "name" and self.at("(", 2):
                    self.next()
                    continue
                break
            self.expect("in")
            return t.Defs(tuple(defs), self.prefixterm(chanvars))
        # call or channel prefix
        if tok.kind == "name" and self.at("(", 1):
            self.next()
            self.expect("(")
            args = []
            while not self.at(")"):
                args.append(self.callarg(chanvars))
                if self.at(","):
                    self.next()
            self.expect(")")
            return t.Call(tok.text, tuple(args))
        ch = self.chanref(chanvars)
        return self.chantail(ch, chanvars)

    def chanref(self, chanvars: frozenset) -> t.Chan:
        aggr = False
        if self.at("*"):
            self.next()
            aggr = True
        tok = self.peek()
        n = self.name()
        if n in chanvars:
            return t.ChanVar(n, aggr)
        return t.Endpoint(n, aggr)

    def chantail(self, ch: t.Chan, chanvars: frozenset) -> t.Process:
        if self.at("!"):
            self.next()
            self.expect("<")
            e = self.addexpr(chanvars)
            self.expect(">")
            self.expect(".")
            return t.Send(ch, e, self.prefixterm(chanvars))
        if self.at("?"):
            self.next()
            self.expect("(")
            x = self.name()
            self.expect(")")
            default = v.Lit(v.UNIT)
            if self.at("def"):
                self.next()
                default = self.addexpr(chanvars)
            self.expect(".")
            return t.Recv(ch, x, default, self.prefixterm(chanvars))
        if self.at("<<"):
            self.next()
            l = self.name()
            self.expect(".")
            return t.Select(ch, l, self.prefixterm(chanvars))
        if self.at(">>"):
            self.next()
            self.expect("{")
            arms = []
            default_arm = t.Inact()
            saw_default = False
            while True:
                if self.at("df"):
                    self.next()
                    self.expect(":")
                    default_arm = self.process(chanvars)
                    saw_default = True
                else:
                    l = self.name()
                    self.expect(":")
                    arms.append((l, self.process(chanvars)))
                if self.at(","):
                    self.next()
                    continue
                break
            self.expect("}")
            labels = [l for l, _ in arms]
            if len(set(labels)) != len(labels):
                self.fail(f"duplicate branch labels {labels}")
            if not arms and not saw_default:
                self.fail("empty branch")
            return t.Branch(ch, tuple(arms), default_arm)
        self.fail(f"expected a session prefix after {render_chanref(ch)}")

    def callarg(self, chanvars: frozenset):
        if self.at("*"):
            self.next()
            n = self.name()
            return t.ChanVar(n, True) if n in chanvars else t.Endpoint(n, True)
        return self.expr(chanvars)

    # -- expressions -------------------------------------------------------
    def expr(self, chanvars: frozenset) -> v.Expr:
        left = self.andexpr(chanvars)
        while self.at("or"):
            self.next()
            left = v.BinOp("or", left, self.andexpr(chanvars))
        return left

    def andexpr(self, chanvars: frozenset) -> v.Expr:
        left = self.cmpexpr(chanvars)
        while self.at("and"):
            self.next()
            left = v.BinOp("and", left, self.cmpexpr(chanvars))
        return left

    def cmpexpr(self, chanvars: frozenset) -> v.Expr:
        left = self.addexpr(chanvars)
        for op in ("<=", ">=", "!=", "=", "<", ">"):
            if self.at(op):
                self.next()
                return v.BinOp(op, left, self.addexpr(chanvars))
        return left

    def addexpr(self, chanvars: frozenset) -> v.Expr:
        left = self.mulexpr(chanvars)
        while self.at("+") or self.at("-") or self.at("union"):
            op = self.next().text
            left = v.BinOp(op, left, self.mulexpr(chanvars))
        return left

    def mulexpr(self, chanvars: frozenset) -> v.Expr:
        left = self.atom(chanvars)
        while self.at("*"):
            self.next()
            left = v.BinOp("*", left, self.atom(chanvars))
        return left

    def atom(self, chanvars: frozenset) -> v.Expr:
        tok = self.peek()
        if tok.kind == "int":
            self.next()
            return v.Lit(v.IntV(int(tok.text)))
        if self.at("-") and self.peek(1).kind == "int":
            self.next()
            n = self.next()
            return v.Lit(v.IntV(-int(n.text)))
        if tok.kind == "string":
            self.next()
            body = tok.text[1:-1]
            body = body.replace('\\"', '"').replace("\\\\", "\\")
            return v.Lit(v.StrV(body))
        for kw, val in (("true", v.TRUE), ("false", v.FALSE), ("unit", v.UNIT),
                        ("eps", v.EPS)):
            if self.at(kw):
                self.next()
                return v.Lit(val)
        if self.at("("):
            self.next()
            e = self.expr(chanvars)
            if self.at(","):
                self.next()
                e2 = self.expr(chanvars)
                self.expect(")")
                return v.TupleE(e, e2)
            self.expect(")")
            return e
        if self.at("{"):
            self.next()
            items = []
            while not self.at("}"):
                items.append(self.expr(chanvars))
                if self.at(","):
                    self.next()
            self.expect("}")
            return v.SetE(tuple(items))
        if tok.kind == "name":
            self.next()
            if tok.text in v.BUILTINS:
                self.expect("(")
                args = []
                while not self.at(")"):
                    args.append(self.expr(chanvars))
                    if self.at(","):
                        self.next()
                self.expect(")")
                return v.Builtin(tok.text, tuple(args))
            return v.Var(tok.text)
        self.fail(f"expected an expression, found {tok.text!r}", tok)


def render_chanref(ch: t.Chan) -> str:
    name = ch.session if isinstance(ch, t.Endpoint) else ch.name
    return ("*" if ch.aggr else "") + name


# ------------------------------------------------------------------ call-arg
# A bare name in call-argument position parses as an expression variable; once
# all definitions are known, arguments in channel-parameter positions are
# rewritten to channel references.

def _collect_defs(p: t.Process, acc: dict):
    match p:
        case t.Defs(defs, body):
            for n, params, b in defs:
                acc[n] = (params, b)
                _collect_defs(b, acc)
            _collect_defs(body, acc)
        case t.Request(_, _, b) | t.Accept(_, _, b) | t.Send(_, _, b) | \
             t.Select(_, _, b):
            _collect_defs(b, acc)
        case t.Recv(_, _, _, b):
            _collect_defs(b, acc)
        case t.Branch(_, arms, df):
            for _, ap in arms:
                _collect_defs(ap, acc)
            _collect_defs(df, acc)
        case t.Sum(l, r) | t.Recover(l, r):
            _collect_defs(l, acc)
            _collect_defs(r, acc)
        case t.Cond(_, a, b):
            _collect_defs(a, acc)
            _collect_defs(b, acc)
        case _:
            pass


def _param_kinds(defs: dict) -> dict:
    """Fixpoint inference of which definition parameters are channels and
    their polarity marks."""
    kinds = {n: [None] * len(params) for n, (params, _) in defs.items()}

    def scan(name):
        params, body = defs[name]
        index = {p: i for i, p in enumerate(params)}
        changed = False

        def mark(i, aggr):
            nonlocal changed
            cur = kinds[name][i]
            new = ("chan", aggr)
            if cur != new:
                kinds[name][i] = new
                changed = True

        def walk(p):
            nonlocal changed
            match p:
                case t.Send(ch, _, b) | t.Select(ch, _, b):
                    if isinstance(ch, t.ChanVar) and ch.name in index:
                        mark(index[ch.name], ch.aggr)
                    walk(b)
                case t.Recv(ch, _, _, b):
                    if isinstance(ch, t.ChanVar) and ch.name in index:
                        mark(index[ch.name], ch.aggr)
                    walk(b)
                case t.Branch(ch, arms, df):
                    if isinstance(ch, t.ChanVar) and ch.name in index:
                        mark(index[ch.name], ch.aggr)
                    for _, ap in arms:
                        walk(ap)
                    walk(df)
                case t.Call(n, args):
                    if n in kinds:
                        for i, a in enumerate(args):
                            if i < len(kinds[n]) and kinds[n][i] and \
                                    isinstance(a, v.Var) and a.name in index:
                                mark(index[a.name], kinds[n][i][1])
                case t.Request(_, _, b) | t.Accept(_, _, b):
                    walk(b)
                case t.Sum(l, r) | t.Recover(l, r):
                    walk(l)
                    walk(r)
                case t.Cond(_, a, b):
                    walk(a)
                    walk(b)
                case t.Defs(_, b):
                    walk(b)
                case _:
                    pass

        walk(body)
        return changed

    for _ in range(len(defs) + 2):
        if not any(scan(n) for n in defs):
            break
    return kinds


def _resolve_call_args(net: t.Network) -> t.Network:
    defs: dict = {}

    def walk_net(n):
        match n:
            case t.NetworkNode(p, _):
                _collect_defs(p, defs)
            case t.Par(l, r):
                walk_net(l)
                walk_net(r)
            case t.Restrict(_, b):
                walk_net(b)

    walk_net(net)
    if not defs:
        return net
    kinds = _param_kinds(defs)

    def fix_process(p, bound):
        match p:
            case t.Call(n, args):
                if n not in kinds:
                    return p
                new_args = []
                for i, a in enumerate(args):
                    k = kinds[n][i] if i < len(kinds[n]) else None
                    if k and isinstance(a, v.Var):
                        if a.name in bound:
                            new_args.append(t.ChanVar(a.name, k[1]))
                        else:
                            new_args.append(t.Endpoint(a.name, k[1]))
                    else:
                        new_args.append(a)
                return t.Call(n, tuple(new_args))
            case t.Inact():
                return p
            case t.Request(a, x, b):
                return t.Request(a, x, fix_process(b, bound | {x}))
            case t.Accept(a, x, b):
                return t.Accept(a, x, fix_process(b, bound | {x}))
            case t.Send(ch, e, b):
                return t.Send(ch, e, fix_process(b, bound))
            case t.Recv(ch, x, d, b):
                return t.Recv(ch, x, d, fix_process(b, bound | {x}))
            case t.Select(ch, l, b):
                return t.Select(ch, l, fix_process(b, bound))
            case t.Branch(ch, arms, df):
                return t.Branch(ch, tuple((l, fix_process(ap, bound)) for l, ap in arms),
                                fix_process(df, bound))
            case t.Sum(l, r):
                return t.Sum(fix_process(l, bound), fix_process(r, bound))
            case t.Cond(g, a, b):
                return t.Cond(g, fix_process(a, bound), fix_process(b, bound))
            case t.Defs(ds, b):
                return t.Defs(
                    tuple((n, prms, fix_process(db, bound | set(prms))) for n, prms, db in ds),
                    fix_process(b, bound),
                )
            case t.Recover(b, h):
                return t.Recover(fix_process(b, bound), fix_process(h, bound))
        raise TypeError(f"not a process: {p!r}")

    def fix_net(n):
        match n:
            case t.NetworkNode(p, bufs):
                return t.NetworkNode(fix_process(p, set()), bufs, pos=n.pos)
            case t.Par(l, r):
                return t.Par(fix_net(l), fix_net(r))
            case t.Restrict(name, b):
                return t.Restrict(name, fix_net(b))

    return fix_net(net)


# ------------------------------------------------------------------ entry points

def parse(text: str, filename=None) -> SourceProgram:
    return _Parser(lex(text, filename), filename).program()


def parse_network(text: str, filename=None) -> t.Network:
    return parse(text, filename).network


def parse_process(text: str) -> t.Process:
    p = _Parser(lex(text))
    out = p.process(frozenset())
    if p.peek().kind != "eof":
        p.fail(f"trailing input {p.peek().text!r}")
    return _resolve_call_args(t.NetworkNode(out, ())).process


def parse_expr(text: str) -> v.Expr:
    p = _Parser(lex(text))
    out = p.expr(frozenset())
    if p.peek().kind != "eof":
        p.fail(f"trailing input {p.peek().text!r}")
    return out


def parse_value(text: str) -> v.Value:
    return v.eval_expr(parse_expr(text), {})


def parse_type(text: str, decls=None) -> st.SessionType:
    p = _Parser(lex(text))
    p.type_decls = dict(decls or {})
    out = p.stype(frozenset())
    if p.peek().kind != "eof":
        p.fail(f"trailing input {p.peek().text!r}")
    return out


def pretty_print(prog: SourceProgram) -> str:
    lines = []
    for n, ty in prog.type_decls.items():
        lines.append(f"type {n} = {render_type(ty)}")
    for a, tn in prog.shared_decls.items():
        lines.append(f"shared {a} : {tn}")
    if lines:
        lines.append("")
    lines.append(render_network(prog.network))
    return "\n".join(lines) + "\n"
