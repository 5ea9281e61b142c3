"""Term language: processes, buffers, network nodes and networks.

All terms are immutable trees.  Channel references are either concrete
endpoints (a session name plus a polarity: the unique aggregator side or the
shared plain side) or variables carrying the polarity mark they were written
with.  Structural equality of raw terms is name-sensitive; alpha-insensitive
comparison goes through :func:`canon_process` / the network canonicaliser in
the engine module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .values import Expr, Lit, Value, Var, fv_expr, subst_expr_var


class SubstError(Exception):
    pass


# ---------------------------------------------------------------- channels

@dataclass(frozen=True)
class Endpoint:
    session: str
    aggr: bool

    def __repr__(self):
        return ("*" if self.aggr else "") + self.session


@dataclass(frozen=True)
class ChanVar:
    name: str
    aggr: bool

    def __repr__(self):
        return ("*" if self.aggr else "") + self.name


Chan = Union[Endpoint, ChanVar]


# ---------------------------------------------------------------- processes

@dataclass(frozen=True)
class Inact:
    pass


@dataclass(frozen=True)
class Request:
    shared: str
    bind: str  # bound aggregator-polarity variable
    body: "Process"


@dataclass(frozen=True)
class Accept:
    shared: str
    bind: str  # bound plain-polarity variable
    body: "Process"


@dataclass(frozen=True)
class Send:
    chan: Chan
    expr: Expr
    body: "Process"


@dataclass(frozen=True)
class Recv:
    chan: Chan
    bind: str
    default: Expr
    body: "Process"


@dataclass(frozen=True)
class Select:
    chan: Chan
    label: str
    body: "Process"


@dataclass(frozen=True)
class Branch:
    chan: Chan
    arms: tuple  # ((label, Process), ...) labels pairwise distinct
    default_arm: "Process"

    def arm_labels(self):
        return [l for l, _ in self.arms]


@dataclass(frozen=True)
class Sum:
    left: "Process"
    right: "Process"


@dataclass(frozen=True)
class Cond:
    guard: Expr
    then_p: "Process"
    else_p: "Process"


@dataclass(frozen=True)
class Defs:
    defs: tuple  # ((name, (param, ...), Process), ...)
    body: "Process"

    def names(self):
        return [n for n, _, _ in self.defs]


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple  # Expr | Chan


@dataclass(frozen=True)
class Recover:
    body: "Process"
    handler: "Process"


Process = Union[
    Inact, Request, Accept, Send, Recv, Select, Branch, Sum, Cond, Defs, Call, Recover
]


# ---------------------------------------------------------------- buffers

@dataclass(frozen=True)
class ValMsg:
    value: Value


@dataclass(frozen=True)
class LabMsg:
    label: str


@dataclass(frozen=True)
class TaggedMsg:
    tag: int
    value: Value


@dataclass(frozen=True)
class Buffer:
    ep: Endpoint
    state: int
    queue: tuple  # ValMsg/LabMsg for plain endpoints, TaggedMsg for aggregators

    def __post_init__(self):
        for m in self.queue:
            if self.ep.aggr and not isinstance(m, TaggedMsg):
                raise ValueError(f"aggregator buffer holds untagged message {m!r}")
            if not self.ep.aggr and isinstance(m, TaggedMsg):
                raise ValueError(f"plain buffer holds tagged message {m!r}")
        if self.state < 0:
            raise ValueError("negative session state")


# ---------------------------------------------------------------- networks

@dataclass(frozen=True)
class NetworkNode:
    process: Process
    buffers: tuple = ()
    pos: Optional[int] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Par:
    left: "Network"
    right: "Network"


@dataclass(frozen=True)
class Restrict:
    name: str
    body: "Network"


Network = Union[NetworkNode, Par, Restrict]


# ---------------------------------------------------------------- free names

def _chan_free(ch: Chan, sessions: set, varnames: set):
    if isinstance(ch, Endpoint):
        sessions.add(ch.session)
    else:
        varnames.add(ch.name)


def _free_process(p: Process, sessions: set, shared: set, varnames: set, bound: set):
    """Accumulate free names of ``p``; ``bound`` holds variable and definition
    names currently in scope."""

    def expr_free(e: Expr):
        for x in fv_expr(e):
            if x not in bound:
                varnames.add(x)

    def chan_free(ch: Chan):
        if isinstance(ch, Endpoint):
            sessions.add(ch.session)
        elif ch.name not in bound:
            varnames.add(ch.name)

    match p:
        case Inact():
            return
        case Request(a, x, body) | Accept(a, x, body):
            shared.add(a)
            _free_process(body, sessions, shared, varnames, bound | {x})
        case Send(ch, e, body):
            chan_free(ch)
            expr_free(e)
            _free_process(body, sessions, shared, varnames, bound)
        case Recv(ch, x, d, body):
            chan_free(ch)
            expr_free(d)
            _free_process(body, sessions, shared, varnames, bound | {x})
        case Select(ch, _, body):
            chan_free(ch)
            _free_process(body, sessions, shared, varnames, bound)
        case Branch(ch, arms, default_arm):
            chan_free(ch)
            for _, ap in arms:
                _free_process(ap, sessions, shared, varnames, bound)
            _free_process(default_arm, sessions, shared, varnames, bound)
        case Sum(l, r):
            _free_process(l, sessions, shared, varnames, bound)
            _free_process(r, sessions, shared, varnames, bound)
        case Cond(g, t, e):
            expr_free(g)
            _free_process(t, sessions, shared, varnames, bound)
            _free_process(e, sessions, shared, varnames, bound)
        case Defs(defs, body):
            names = {n for n, _, _ in defs}
            for _, params, dbody in defs:
                _free_process(dbody, sessions, shared, varnames, bound | names | set(params))
            _free_process(body, sessions, shared, varnames, bound | names)
        case Call(name, args):
            if name not in bound:
                varnames.add(name)
            for a in args:
                if isinstance(a, (Endpoint, ChanVar)):
                    chan_free(a)
                else:
                    expr_free(a)
        case Recover(body, handler):
            _free_process(body, sessions, shared, varnames, bound)
            _free_process(handler, sessions, shared, varnames, bound)
        case _:
            raise TypeError(f"not a process: {p!r}")


def free_parts(term) -> tuple:
    """Free (sessions, shared names, variables) of a process, buffer, node or
    network.  Restriction binds both session and shared names."""
    sessions: set = set()
    shared: set = set()
    varnames: set = set()

    def go_net(n: Network, bound_names: frozenset):
        match n:
            case NetworkNode(p, buffers):
                s2: set = set()
                sh2: set = set()
                v2: set = set()
                _free_process(p, s2, sh2, v2, set())
                for b in buffers:
                    s2.add(b.ep.session)
                sessions.update(s2 - bound_names)
                shared.update(sh2 - bound_names)
                varnames.update(v2)
            case Par(l, r):
                go_net(l, bound_names)
                go_net(r, bound_names)
            case Restrict(name, body):
                go_net(body, bound_names | {name})
            case _:
                raise TypeError(f"not a network: {n!r}")

    if isinstance(term, (NetworkNode, Par, Restrict)):
        go_net(term, frozenset())
    elif isinstance(term, Buffer):
        sessions.add(term.ep.session)
    else:
        _free_process(term, sessions, shared, varnames, set())
    return sessions, shared, varnames


def free_names(term) -> set:
    s, sh, v = free_parts(term)
    return s | sh | v


def free_sessions(term) -> set:
    return free_parts(term)[0]


def free_chans(p: Process) -> set:
    """Free channel references (endpoints and channel variables) of a process.
    This is the ``fs`` function used by the drop side conditions."""
    out: set = set()

    def go(p: Process, bound: set):
        def chan(ch: Chan):
            if isinstance(ch, Endpoint) or ch.name not in bound:
                out.add(ch)

        match p:
            case Inact():
                pass
            case Request(_, x, body) | Accept(_, x, body):
                go(body, bound | {x})
            case Send(ch, _, body) | Select(ch, _, body):
                chan(ch)
                go(body, bound)
            case Recv(ch, x, _, body):
                chan(ch)
                go(body, bound | {x})
            case Branch(ch, arms, default_arm):
                chan(ch)
                for _, ap in arms:
                    go(ap, bound)
                go(default_arm, bound)
            case Sum(l, r):
                go(l, bound)
                go(r, bound)
            case Cond(_, t, e):
                go(t, bound)
                go(e, bound)
            case Defs(defs, body):
                names = {n for n, _, _ in defs}
                for _, params, dbody in defs:
                    go(dbody, bound | names | set(params))
                go(body, bound | names)
            case Call(_, args):
                for a in args:
                    if isinstance(a, (Endpoint, ChanVar)):
                        chan(a)
            case Recover(body, handler):
                go(body, bound)
                go(handler, bound)

    go(p, set())
    return out


def process_sessions(p: Process) -> set:
    return {c.session for c in free_chans(p) if isinstance(c, Endpoint)}


# ---------------------------------------------------------------- substitution

def _map_process(p: Process, on_chan, on_expr, bound: set):
    """Capture-aware structural map over channel references and expressions.
    ``on_chan``/``on_expr`` receive the current bound-variable set."""
    match p:
        case Inact():
            return p
        case Request(a, x, body):
            return Request(a, x, _map_process(body, on_chan, on_expr, bound | {x}))
        case Accept(a, x, body):
            return Accept(a, x, _map_process(body, on_chan, on_expr, bound | {x}))
        case Send(ch, e, body):
            return Send(on_chan(ch, bound), on_expr(e, bound),
                        _map_process(body, on_chan, on_expr, bound))
        case Recv(ch, x, d, body):
            return Recv(on_chan(ch, bound), x, on_expr(d, bound),
                        _map_process(body, on_chan, on_expr, bound | {x}))
        case Select(ch, l, body):
            return Select(on_chan(ch, bound), l, _map_process(body, on_chan, on_expr, bound))
        case Branch(ch, arms, default_arm):
            return Branch(
                on_chan(ch, bound),
                tuple((l, _map_process(ap, on_chan, on_expr, bound)) for l, ap in arms),
                _map_process(default_arm, on_chan, on_expr, bound),
            )
        case Sum(l, r):
            return Sum(_map_process(l, on_chan, on_expr, bound),
                       _map_process(r, on_chan, on_expr, bound))
        case Cond(g, t, e):
            return Cond(on_expr(g, bound),
                        _map_process(t, on_chan, on_expr, bound),
                        _map_process(e, on_chan, on_expr, bound))
        case Defs(defs, body):
            names = {n for n, _, _ in defs}
            new_defs = tuple(
                (n, params, _map_process(b, on_chan, on_expr, bound | names | set(params)))
                for n, params, b in defs
            )
            return Defs(new_defs, _map_process(body, on_chan, on_expr, bound | names))
        case Call(name, args):
            new_args = tuple(
                on_chan(a, bound) if isinstance(a, (Endpoint, ChanVar)) else on_expr(a, bound)
                for a in args
            )
            return Call(name, new_args)
        case Recover(body, handler):
            return Recover(_map_process(body, on_chan, on_expr, bound),
                           _map_process(handler, on_chan, on_expr, bound))
    raise TypeError(f"not a process: {p!r}")


def subst_channel(p: Process, name: str, ep: Endpoint) -> Process:
    """Replace free channel-variable occurrences of ``name`` with an endpoint
    of the session ``ep`` names.  The occurrence's polarity mark must match
    the endpoint's polarity."""

    def on_chan(ch: Chan, bound: set) -> Chan:
        if isinstance(ch, ChanVar) and ch.name == name and name not in bound:
            if ch.aggr != ep.aggr:
                raise SubstError(
                    f"polarity mismatch substituting {ep!r} for {ch!r}"
                )
            return ep
        return ch

    def on_expr(e: Expr, bound: set) -> Expr:
        if name not in bound and name in fv_expr(e):
            raise SubstError(f"channel variable {name} used as an expression")
        return e

    return _map_process(p, on_chan, on_expr, set())


def subst_value(p: Process, name: str, value: Value) -> Process:
    """Substitute a closed value for an expression variable."""
    repl = Lit(value)

    def on_expr(e: Expr, bound: set) -> Expr:
        if name in bound:
            return e
        return subst_expr_var(e, name, repl)

    def on_chan(ch: Chan, bound: set) -> Chan:
        if isinstance(ch, ChanVar) and ch.name == name and name not in bound:
            raise SubstError(f"value substituted for channel position {ch!r}")
        return ch

    return _map_process(p, on_chan, on_expr, set())


def subst_ident(p: Process, name: str, arg) -> Process:
    """Substitute a call argument for a definition parameter.  Variables
    rename both worlds; endpoints go to channel positions (keeping each
    occurrence's polarity mark); other expressions go to expression
    positions."""
    if isinstance(arg, ChanVar) or isinstance(arg, Var):
        new = arg.name

        def on_chan(ch: Chan, bound: set) -> Chan:
            if isinstance(ch, ChanVar) and ch.name == name and name not in bound:
                return ChanVar(new, ch.aggr)
            return ch

        def on_expr(e: Expr, bound: set) -> Expr:
            if name in bound:
                return e
            return subst_expr_var(e, name, Var(new))

        return _map_process(p, on_chan, on_expr, set())
    if isinstance(arg, Endpoint):
        def on_chan(ch: Chan, bound: set) -> Chan:
            if isinstance(ch, ChanVar) and ch.name == name and name not in bound:
                return Endpoint(arg.session, ch.aggr)
            return ch

        def on_expr(e: Expr, bound: set) -> Expr:
            if name not in bound and name in fv_expr(e):
                raise SubstError(f"endpoint argument used in expression position: {name}")
            return e

        return _map_process(p, on_chan, on_expr, set())
    # plain expression argument
    def on_chan(ch: Chan, bound: set) -> Chan:
        if isinstance(ch, ChanVar) and ch.name == name and name not in bound:
            raise SubstError(f"expression argument used in channel position: {name}")
        return ch

    def on_expr(e: Expr, bound: set) -> Expr:
        if name in bound:
            return e
        return subst_expr_var(e, name, arg)

    return _map_process(p, on_chan, on_expr, set())


def subst_procvar(p: Process, name: str, params: tuple, body: Process) -> Process:
    """Unfold one level of the named definition inside ``p``: every
    ``Call(name, args)`` becomes ``body`` with the arguments substituted for
    the parameters.  Other calls are untouched."""

    def go(p: Process, bound: set) -> Process:
        match p:
            case Call(n, args) if n == name and name not in bound:
                if len(args) != len(params):
                    raise SubstError(
                        f"{name} expects {len(params)} arguments, got {len(args)}"
                    )
                out = body
                for prm, a in zip(params, args):
                    out = subst_ident(out, prm, a)
                return out
            case Inact() | Call():
                return p
            case Request(a, x, b):
                return Request(a, x, go(b, bound))
            case Accept(a, x, b):
                return Accept(a, x, go(b, bound))
            case Send(ch, e, b):
                return Send(ch, e, go(b, bound))
            case Recv(ch, x, d, b):
                return Recv(ch, x, d, go(b, bound))
            case Select(ch, l, b):
                return Select(ch, l, go(b, bound))
            case Branch(ch, arms, df):
                return Branch(ch, tuple((l, go(ap, bound)) for l, ap in arms), go(df, bound))
            case Sum(l, r):
                return Sum(go(l, bound), go(r, bound))
            case Cond(g, t, e):
                return Cond(g, go(t, bound), go(e, bound))
            case Defs(defs, b):
                names = {n for n, _, _ in defs}
                if name in names:
                    return p  # rebound
                return Defs(
                    tuple((n, prms, go(db, bound | names)) for n, prms, db in defs),
                    go(b, bound | names),
                )
            case Recover(b, h):
                return Recover(go(b, bound), go(h, bound))
        raise TypeError(f"not a process: {p!r}")

    return go(p, set())


# ---------------------------------------------------------------- networks utils

def flatten_nodes(n: Network) -> tuple:
    """Hoist restrictions and flatten parallel composition, renaming
    restricted names that would clash.  Returns (restricted names, nodes)."""
    restricted: list = []
    nodes: list = []
    free_everywhere = free_names(n)
    used = set(free_everywhere)

    def fresh(base: str) -> str:
        c = 1
        cand = f"{base}#h{c}"
        while cand in used:
            c += 1
            cand = f"{base}#h{c}"
        used.add(cand)
        return cand

    def go(n: Network, ren: dict):
        match n:
            case NetworkNode(p, buffers):
                nodes.append(rename_node_sessions(NetworkNode(p, buffers, pos=n.pos), ren))
            case Par(l, r):
                go(l, ren)
                go(r, ren)
            case Restrict(name, body):
                if name in used or name in ren:
                    nn = fresh(name)
                    ren = dict(ren)
                    ren[name] = nn
                    restricted.append(nn)
                else:
                    used.add(name)
                    restricted.append(name)
                go(body, ren)
            case _:
                raise TypeError(f"not a network: {n!r}")

    go(n, {})
    return tuple(restricted), tuple(nodes)


def rename_node_sessions(node: NetworkNode, ren: dict) -> NetworkNode:
    if not ren:
        return node

    def on_chan(ch: Chan, bound: set) -> Chan:
        if isinstance(ch, Endpoint) and ch.session in ren:
            return Endpoint(ren[ch.session], ch.aggr)
        return ch

    def on_expr(e: Expr, bound: set) -> Expr:
        return e

    p = _rename_shared(_map_process(node.process, on_chan, on_expr, set()), ren)
    bufs = tuple(
        Buffer(Endpoint(ren.get(b.ep.session, b.ep.session), b.ep.aggr), b.state, b.queue)
        for b in node.buffers
    )
    return NetworkNode(p, bufs, pos=node.pos)


def _rename_shared(p: Process, ren: dict) -> Process:
    match p:
        case Request(a, x, b):
            return Request(ren.get(a, a), x, _rename_shared(b, ren))
        case Accept(a, x, b):
            return Accept(ren.get(a, a), x, _rename_shared(b, ren))
        case Inact() | Call():
            return p
        case Send(ch, e, b):
            return Send(ch, e, _rename_shared(b, ren))
        case Recv(ch, x, d, b):
            return Recv(ch, x, d, _rename_shared(b, ren))
        case Select(ch, l, b):
            return Select(ch, l, _rename_shared(b, ren))
        case Branch(ch, arms, df):
            return Branch(ch, tuple((l, _rename_shared(ap, ren)) for l, ap in arms),
                          _rename_shared(df, ren))
        case Sum(l, r):
            return Sum(_rename_shared(l, ren), _rename_shared(r, ren))
        case Cond(g, t, e):
            return Cond(g, _rename_shared(t, ren), _rename_shared(e, ren))
        case Defs(defs, b):
            return Defs(tuple((n, prms, _rename_shared(db, ren)) for n, prms, db in defs),
                        _rename_shared(b, ren))
        case Recover(b, h):
            return Recover(_rename_shared(b, ren), _rename_shared(h, ren))
    raise TypeError(f"not a process: {p!r}")


def par_all(nodes) -> Network:
    nodes = list(nodes)
    if not nodes:
        return NetworkNode(Inact(), ())
    out = nodes[0]
    for n in nodes[1:]:
        out = Par(out, n)
    return out


def restrict_all(names, body: Network) -> Network:
    out = body
    for n in reversed(list(names)):
        out = Restrict(n, out)
    return out


from .values import install_cached_hash as _install_cached_hash

_install_cached_hash(Endpoint, ChanVar, Inact, Request, Accept, Send, Recv,
                     Select, Branch, Sum, Cond, Defs, Call, Recover,
                     ValMsg, LabMsg, TaggedMsg, Buffer, NetworkNode, Par,
                     Restrict)
