"""Session types, buffer types, duality, type advancement and the
linear-context synchronisation relation.

Linear contexts at network level map concrete endpoints to (state, type)
pairs.  Advancement bounds every search by the counter difference, so all
relations here are decidable by bounded unfolding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .terms import Endpoint
from .values import BaseType, base_compatible, refine_base


class TypeSyntaxError(Exception):
    pass


# ---------------------------------------------------------------- syntax

@dataclass(frozen=True)
class Out:
    beta: BaseType
    cont: "SessionType"


@dataclass(frozen=True)
class In:
    beta: BaseType
    cont: "SessionType"


@dataclass(frozen=True)
class SelT:
    arms: tuple  # ((label, SessionType), ...) sorted by label


@dataclass(frozen=True)
class BraT:
    arms: tuple


@dataclass(frozen=True)
class End:
    def __repr__(self):
        return "end"


@dataclass(frozen=True)
class TVar:
    name: str


@dataclass(frozen=True)
class Rec:
    name: str
    body: "SessionType"


SessionType = Union[Out, In, SelT, BraT, End, TVar, Rec]

END = End()


def mkarms(pairs) -> tuple:
    pairs = sorted(pairs, key=lambda kv: kv[0])
    labels = [l for l, _ in pairs]
    if len(set(labels)) != len(labels):
        raise TypeSyntaxError(f"duplicate branch labels {labels}")
    if not labels:
        raise TypeSyntaxError("empty label set")
    return tuple(pairs)


def arms_dict(arms: tuple) -> dict:
    return dict(arms)


# ---------------------------------------------------------------- buffer types

@dataclass(frozen=True)
class OutItem:
    beta: BaseType


@dataclass(frozen=True)
class SelItem:
    label: str


@dataclass(frozen=True)
class PadItem:
    """A state the aggregator buffer folds through without any message: a
    vacuous broadcast or an empty gather, depending on the protocol's
    direction at that position."""


BufferType = tuple  # ordered sequence of OutItem | SelItem; () is the empty type


# ---------------------------------------------------------------- operations

def dual(t: SessionType) -> SessionType:
    match t:
        case End():
            return t
        case TVar():
            return t
        case Out(b, c):
            return In(b, dual(c))
        case In(b, c):
            return Out(b, dual(c))
        case SelT(arms):
            return BraT(tuple((l, dual(x)) for l, x in arms))
        case BraT(arms):
            return SelT(tuple((l, dual(x)) for l, x in arms))
        case Rec(n, b):
            return Rec(n, dual(b))
    raise TypeSyntaxError(f"not a session type: {t!r}")


def _subst_tvar(t: SessionType, name: str, repl: SessionType) -> SessionType:
    match t:
        case End():
            return t
        case TVar(n):
            return repl if n == name else t
        case Out(b, c):
            return Out(b, _subst_tvar(c, name, repl))
        case In(b, c):
            return In(b, _subst_tvar(c, name, repl))
        case SelT(arms):
            return SelT(tuple((l, _subst_tvar(x, name, repl)) for l, x in arms))
        case BraT(arms):
            return BraT(tuple((l, _subst_tvar(x, name, repl)) for l, x in arms))
        case Rec(n, b):
            return t if n == name else Rec(n, _subst_tvar(b, name, repl))
    raise TypeSyntaxError(f"not a session type: {t!r}")


def unfold(t: SessionType) -> SessionType:
    """Expose a non-Rec head (recursion bodies are contractive)."""
    seen = 0
    while isinstance(t, Rec):
        t = _subst_tvar(t.body, t.name, t)
        seen += 1
        if seen > 64:
            raise TypeSyntaxError("non-contractive recursive type")
    return t


def contractive(t: SessionType, bound=frozenset(), guarded=True) -> bool:
    match t:
        case End():
            return True
        case TVar(n):
            return guarded or n not in bound
        case Out(_, c) | In(_, c):
            return contractive(c, bound, True)
        case SelT(arms) | BraT(arms):
            return all(contractive(x, bound, True) for _, x in arms)
        case Rec(n, b):
            return contractive(b, bound | {n}, False)
    return False


def types_equal(a: SessionType, b: SessionType, assumed=None) -> bool:
    """Equality up to unfolding of recursion, with wildcard payload types
    matching anything."""
    if assumed is None:
        assumed = set()
    key = (a, b)
    if key in assumed:
        return True
    if isinstance(a, Rec) or isinstance(b, Rec):
        assumed = assumed | {key}
        return types_equal(unfold(a), unfold(b), assumed)
    match a, b:
        case (End(), End()):
            return True
        case (TVar(x), TVar(y)):
            return x == y
        case (Out(b1, c1), Out(b2, c2)) | (In(b1, c1), In(b2, c2)):
            return base_compatible(b1, b2) and types_equal(c1, c2, assumed)
        case (SelT(a1), SelT(a2)) | (BraT(a1), BraT(a2)):
            if [l for l, _ in a1] != [l for l, _ in a2]:
                return False
            return all(types_equal(x, y, assumed) for (_, x), (_, y) in zip(a1, a2))
    return False


def refine_session(a: SessionType, b: SessionType) -> Optional[SessionType]:
    """Merge two session types that are equal up to payload wildcards,
    preferring the more specific payload types.  None on shape mismatch."""
    if isinstance(a, Rec) or isinstance(b, Rec):
        return a if types_equal(a, b) else None
    match a, b:
        case (End(), End()):
            return a
        case (TVar(x), TVar(y)):
            return a if x == y else None
        case (Out(b1, c1), Out(b2, c2)):
            beta = refine_base(b1, b2)
            cont = refine_session(c1, c2)
            return Out(beta, cont) if beta is not None and cont is not None else None
        case (In(b1, c1), In(b2, c2)):
            beta = refine_base(b1, b2)
            cont = refine_session(c1, c2)
            return In(beta, cont) if beta is not None and cont is not None else None
        case (SelT(a1), SelT(a2)) | (BraT(a1), BraT(a2)):
            if [l for l, _ in a1] != [l for l, _ in a2]:
                return None
            arms = []
            for (l, x), (_, y) in zip(a1, a2):
                m = refine_session(x, y)
                if m is None:
                    return None
                arms.append((l, m))
            return SelT(tuple(arms)) if isinstance(a, SelT) else BraT(tuple(arms))
    return None


def combine(t: SessionType, m: BufferType) -> Optional[SessionType]:
    """Consume a buffer type against a session type; None when undefined.
    Pads cross one input or output position without constraining it."""
    for item in m:
        t = unfold(t)
        match item, t:
            case (OutItem(beta), In(b2, cont)):
                if not base_compatible(b2, beta):
                    return None
                t = cont
            case (SelItem(label), BraT(arms)):
                d = arms_dict(arms)
                if label not in d:
                    return None
                t = d[label]
            case (PadItem(), (In(_, cont) | Out(_, cont))):
                t = cont
            case _:
                return None
    return t


def advance(t: SessionType, n: int) -> set:
    """All types reachable by consuming exactly ``n`` prefixes; selection and
    branching may take any arm."""
    frontier = {t}
    for _ in range(n):
        nxt = set()
        for u in frontier:
            u = unfold(u)
            match u:
                case Out(_, c) | In(_, c):
                    nxt.add(c)
                case SelT(arms) | BraT(arms):
                    for _, c in arms:
                        nxt.add(c)
                case _:
                    pass
        frontier = nxt
        if not frontier:
            break
    return frontier


def output_advance(t: SessionType, n: int) -> set:
    """As :func:`advance` but only output prefixes may be consumed."""
    frontier = {t}
    for _ in range(n):
        nxt = set()
        for u in frontier:
            u = unfold(u)
            if isinstance(u, Out):
                nxt.add(u.cont)
        frontier = nxt
        if not frontier:
            break
    return frontier


def autonomous_advance(t: SessionType, n: int) -> set:
    """Advancement restricted to the steps a plain endpoint can take on its
    own: dropping an output (loss) or defaulting an input (receive
    recovery).  Branch positions cannot be crossed autonomously while
    keeping the endpoint."""
    frontier = {t}
    for _ in range(n):
        nxt = set()
        for u in frontier:
            u = unfold(u)
            if isinstance(u, (Out, In)):
                nxt.add(u.cont)
        frontier = nxt
        if not frontier:
            break
    return frontier


def entry_synchronizes(c_from: int, t_from: SessionType, c_to: int,
                       t_to: SessionType) -> bool:
    """One plain-endpoint entry of the synchronisation relation: either the
    type advances forward across the counter gap, or the target type
    reconstructs the entry by the autonomous steps recovery permits."""
    if c_from <= c_to:
        return any(types_equal(u, t_to) for u in advance(t_from, c_to - c_from))
    return any(types_equal(u, t_from)
               for u in autonomous_advance(t_to, c_from - c_to))


def synchronize(from_ctx: dict, to_ctx: dict) -> bool:
    """Linear context synchronisation over stated contexts
    (Endpoint -> (state, type)).  Only plain endpoints may move; aggregator
    entries and the domain must match exactly."""
    if set(from_ctx) != set(to_ctx):
        return False
    for ep, (cf, tf) in from_ctx.items():
        ct, tt = to_ctx[ep]
        if ep.aggr:
            if cf != ct or not types_equal(tf, tt):
                return False
        else:
            if not entry_synchronizes(cf, tf, ct, tt):
                return False
    return True


def well_formed(ctx: dict) -> bool:
    """Every aggregator entry is matched by a same-state dual plain entry, or
    the plain endpoint is absent."""
    for ep, (c, t) in ctx.items():
        if not ep.aggr:
            continue
        plain = Endpoint(ep.session, False)
        if plain in ctx:
            cp, tp = ctx[plain]
            if cp != c or not types_equal(tp, dual(t)):
                return False
    return True


# ---------------------------------------------------------------- context advancement

def _dual_steps(ctx: dict, session: str):
    """Successor contexts from one communication step on ``session``."""
    ag = Endpoint(session, True)
    pl = Endpoint(session, False)
    if ag not in ctx or pl not in ctx:
        return
    (ca, ta), (cp, tp) = ctx[ag], ctx[pl]
    if ca != cp:
        return
    ua, up = unfold(ta), unfold(tp)
    # broadcast: aggregator outputs, plain inputs
    if isinstance(ua, Out) and isinstance(up, In) and base_compatible(ua.beta, up.beta):
        yield {**ctx, ag: (ca + 1, ua.cont), pl: (cp + 1, up.cont)}
    # selection
    if isinstance(ua, SelT) and isinstance(up, BraT):
        da, dp = arms_dict(ua.arms), arms_dict(up.arms)
        for l in da:
            if l in dp:
                yield {**ctx, ag: (ca + 1, da[l]), pl: (cp + 1, dp[l])}
    # gather direction: plain outputs, aggregator inputs
    if isinstance(up, Out) and isinstance(ua, In) and base_compatible(ua.beta, up.beta):
        yield {**ctx, ag: (ca + 1, ua.cont), pl: (cp + 1, up.cont)}


def context_advance(ctx: dict) -> list:
    """One-step successors of a linear context: dual communication steps per
    session plus dropping any subset of plain entries (the empty drop gives
    reflexivity).  Exponential in the number of plain entries; intended for
    the small contexts of tests and harnesses."""
    out = []
    seen = set()

    def emit(d: dict):
        key = tuple(sorted(((ep, c, repr(t)) for ep, (c, t) in d.items()),
                           key=lambda x: (x[0].session, x[0].aggr)))
        if key not in seen:
            seen.add(key)
            out.append(d)

    sessions = {ep.session for ep in ctx}
    for s in sorted(sessions):
        for d in _dual_steps(ctx, s):
            emit(d)
        # an aggregator whose plain endpoints were all dropped steps alone
        ag, pl = Endpoint(s, True), Endpoint(s, False)
        if ag in ctx and pl not in ctx:
            ca, ta = ctx[ag]
            for cont in sorted(advance(ta, 1), key=repr):
                emit({**ctx, ag: (ca + 1, cont)})
    plains = sorted([ep for ep in ctx if not ep.aggr], key=lambda e: e.session)
    if len(plains) <= 12:
        for mask in range(len(plains) and (1 << len(plains)) or 1):
            dropped = {plains[i] for i in range(len(plains)) if mask & (1 << i)}
            emit({ep: v for ep, v in ctx.items() if ep not in dropped})
    else:
        emit(dict(ctx))
    return out


def contexts_equal(a: dict, b: dict) -> bool:
    if set(a) != set(b):
        return False
    return all(a[ep][0] == b[ep][0] and types_equal(a[ep][1], b[ep][1]) for ep in a)


def advances_to(before: dict, after: dict, allow_fresh=True) -> bool:
    """Decision procedure for single-step context advancement, extended (for
    the preservation harness) with session creation: ``after`` may add a
    fresh dual endpoint pair at state 0."""
    if allow_fresh:
        extra = set(after) - set(before)
        if extra:
            extra_sessions = {ep.session for ep in extra}
            if any(ep.session in extra_sessions for ep in before):
                return False
            for s in extra_sessions:
                ag, pl = Endpoint(s, True), Endpoint(s, False)
                members = {ep for ep in extra if ep.session == s}
                if members == {ag, pl}:
                    ca, ta = after[ag]
                    cp, tp = after[pl]
                    if not (ca == cp == 0 and types_equal(tp, dual(ta))):
                        return False
                elif members == {ag}:
                    if after[ag][0] != 0:
                        return False
                else:
                    return False
            trimmed = {ep: v for ep, v in after.items() if ep not in extra}
            return advances_to(before, trimmed, allow_fresh=False)
    if contexts_equal(before, after):
        return True
    # dropped plain entries only
    if set(after) < set(before):
        dropped = set(before) - set(after)
        if all(not ep.aggr for ep in dropped) and contexts_equal(
            {ep: v for ep, v in before.items() if ep not in dropped}, after
        ):
            return True
    # one dual communication step on a single session
    if set(after) == set(before):
        diff = [ep for ep in before if not (
            before[ep][0] == after[ep][0] and types_equal(before[ep][1], after[ep][1])
        )]
        sessions = {ep.session for ep in diff}
        if len(sessions) == 1:
            s = sessions.pop()
            for d in _dual_steps(before, s):
                if contexts_equal(d, after):
                    return True
            # an aggregator whose plain endpoints have all been dropped may
            # step alone; the residual context hides this under restriction
            ag, pl = Endpoint(s, True), Endpoint(s, False)
            if diff == [ag] and pl not in before and pl not in after:
                ca, ta = before[ag]
                cb, tb = after[ag]
                if cb == ca + 1 and any(types_equal(u, tb) for u in advance(ta, 1)):
                    return True
    return False


from .values import install_cached_hash as _install_cached_hash

_install_cached_hash(Out, In, SelT, BraT, End, TVar, Rec, OutItem, SelItem,
                     PadItem)
