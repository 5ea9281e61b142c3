"""Runtime values, base types, and the expression language.

Values are immutable; sets are frozensets with a total order on elements so
rendering is deterministic.  The aggregation operator is type-indexed (set
union, integer max, boolean or, string max, pointwise pairs) with the unit
value as identity for every instance.  The bottom element ``eps`` is an
integer-typed value ordered below every integer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union


class EvalError(Exception):
    """Raised on evaluation of an ill-formed expression (unbound variable,
    operand mismatch).  Well-typed programs never trigger it."""


def install_cached_hash(*classes):
    """Replace the generated dataclass hash with one memoised per instance.
    Terms are deep immutable trees shared across caches, so recomputing the
    structural hash on every lookup dominates runtime without this."""
    for cls in classes:
        base = cls.__hash__

        def __hash__(self, _base=base):
            try:
                return object.__getattribute__(self, "_hash")
            except AttributeError:
                h = _base(self)
                object.__setattr__(self, "_hash", h)
                return h

        cls.__hash__ = __hash__


class AggregationError(EvalError):
    """Aggregation of incompatible values."""


# ---------------------------------------------------------------- values

@dataclass(frozen=True)
class UnitV:
    def __repr__(self):
        return "unit"


@dataclass(frozen=True)
class EpsV:
    def __repr__(self):
        return "eps"


@dataclass(frozen=True)
class IntV:
    n: int


@dataclass(frozen=True)
class BoolV:
    b: bool


@dataclass(frozen=True)
class StrV:
    s: str


@dataclass(frozen=True)
class PairV:
    first: "Value"
    second: "Value"


@dataclass(frozen=True)
class SetV:
    items: frozenset

    def sorted_items(self):
        return sorted(self.items, key=value_key)


Value = Union[UnitV, EpsV, IntV, BoolV, StrV, PairV, SetV]

UNIT = UnitV()
EPS = EpsV()
TRUE = BoolV(True)
FALSE = BoolV(False)


def value_key(v: Value):
    """Total order over all values; used for set rendering and tie-breaks."""
    match v:
        case UnitV():
            return (0,)
        case EpsV():
            return (1,)
        case BoolV(b):
            return (2, b)
        case IntV(n):
            return (3, n)
        case StrV(s):
            return (4, s)
        case PairV(a, b):
            return (5, value_key(a), value_key(b))
        case SetV():
            return (6, tuple(value_key(x) for x in v.sorted_items()))
    raise EvalError(f"not a value: {v!r}")


def mkset(items) -> SetV:
    return SetV(frozenset(items))


# ---------------------------------------------------------------- base types

@dataclass(frozen=True)
class UnitT:
    def __repr__(self):
        return "unit"


@dataclass(frozen=True)
class IntT:
    def __repr__(self):
        return "int"


@dataclass(frozen=True)
class BoolT:
    def __repr__(self):
        return "bool"


@dataclass(frozen=True)
class StrT:
    def __repr__(self):
        return "str"


@dataclass(frozen=True)
class PairT:
    first: "BaseType"
    second: "BaseType"


@dataclass(frozen=True)
class SetT:
    elem: "BaseType"


@dataclass(frozen=True)
class AnyT:
    """Wildcard produced when a payload type is unconstrained (e.g. a receive
    binder that the continuation never inspects)."""

    def __repr__(self):
        return "any"


BaseType = Union[UnitT, IntT, BoolT, StrT, PairT, SetT, AnyT]

UNIT_T = UnitT()
INT_T = IntT()
BOOL_T = BoolT()
STR_T = StrT()
ANY_T = AnyT()


def type_of_value(v: Value) -> BaseType:
    match v:
        case UnitV():
            return UNIT_T
        case EpsV():
            return INT_T
        case IntV():
            return INT_T
        case BoolV():
            return BOOL_T
        case StrV():
            return STR_T
        case PairV(a, b):
            return PairT(type_of_value(a), type_of_value(b))
        case SetV():
            elems = [type_of_value(x) for x in v.sorted_items()]
            merged = ANY_T
            for t in elems:
                r = refine_base(merged, t)
                if r is None:
                    raise EvalError(f"mixed element types in set: {v!r}")
                merged = r
            return SetT(merged)
    raise EvalError(f"not a value: {v!r}")


def refine_base(a: BaseType, b: BaseType):
    """Most specific common instance of two base types, or None.

    The wildcard matches anything; the unit type inhabits every instance
    (the unit value is the aggregation identity at every type).
    """
    if isinstance(a, AnyT):
        return b
    if isinstance(b, AnyT):
        return a
    if isinstance(a, UnitT):
        return b
    if isinstance(b, UnitT):
        return a
    if type(a) is not type(b):
        return None
    match a, b:
        case (PairT(a1, a2), PairT(b1, b2)):
            f = refine_base(a1, b1)
            s = refine_base(a2, b2)
            return PairT(f, s) if f is not None and s is not None else None
        case (SetT(ae), SetT(be)):
            e = refine_base(ae, be)
            return SetT(e) if e is not None else None
    return a


def base_compatible(expected: BaseType, actual: BaseType) -> bool:
    return refine_base(expected, actual) is not None


# ---------------------------------------------------------------- expressions

@dataclass(frozen=True)
class Lit:
    value: Value


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * > < >= <= = != and or union
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class TupleE:
    first: "Expr"
    second: "Expr"


@dataclass(frozen=True)
class SetE:
    items: tuple


@dataclass(frozen=True)
class Builtin:
    name: str  # chooseVal size fst snd
    args: tuple


Expr = Union[Lit, Var, BinOp, TupleE, SetE, Builtin]

BIN_OPS = {"+", "-", "*", ">", "<", ">=", "<=", "=", "!=", "and", "or", "union"}
BUILTINS = {"chooseVal", "size", "fst", "snd"}


def fv_expr(e: Expr) -> set:
    match e:
        case Lit():
            return set()
        case Var(x):
            return {x}
        case BinOp(_, l, r):
            return fv_expr(l) | fv_expr(r)
        case TupleE(a, b):
            return fv_expr(a) | fv_expr(b)
        case SetE(items):
            out = set()
            for i in items:
                out |= fv_expr(i)
            return out
        case Builtin(_, args):
            out = set()
            for a in args:
                out |= fv_expr(a)
            return out
    raise EvalError(f"not an expression: {e!r}")


def subst_expr_var(e: Expr, name: str, repl: Expr) -> Expr:
    match e:
        case Lit():
            return e
        case Var(x):
            return repl if x == name else e
        case BinOp(op, l, r):
            return BinOp(op, subst_expr_var(l, name, repl), subst_expr_var(r, name, repl))
        case TupleE(a, b):
            return TupleE(subst_expr_var(a, name, repl), subst_expr_var(b, name, repl))
        case SetE(items):
            return SetE(tuple(subst_expr_var(i, name, repl) for i in items))
        case Builtin(f, args):
            return Builtin(f, tuple(subst_expr_var(a, name, repl) for a in args))
    raise EvalError(f"not an expression: {e!r}")


# ---------------------------------------------------------------- evaluation

def _as_int(v: Value, ctx: str) -> int:
    """Integer view used by arithmetic; the bottom element coerces to 0 so
    round counters may start from eps."""
    match v:
        case IntV(n):
            return n
        case EpsV():
            return 0
    raise EvalError(f"{ctx}: expected int, got {v!r}")


def compare_values(a: Value, b: Value) -> int:
    """Three-way comparison for the ordered operators; eps sits below every
    integer, strings compare lexicographically, pairs pointwise."""
    match a, b:
        case (EpsV(), EpsV()):
            return 0
        case (EpsV(), IntV()):
            return -1
        case (IntV(), EpsV()):
            return 1
        case (IntV(x), IntV(y)):
            return (x > y) - (x < y)
        case (StrV(x), StrV(y)):
            return (x > y) - (x < y)
        case (BoolV(x), BoolV(y)):
            return (x > y) - (x < y)
        case (PairV(a1, a2), PairV(b1, b2)):
            c = compare_values(a1, b1)
            return c if c != 0 else compare_values(a2, b2)
    raise EvalError(f"cannot order {a!r} and {b!r}")


def aggregate(a: Value, b: Value) -> Value:
    """The binary aggregation operator: associative, commutative, with the
    unit value as identity for every type instance."""
    if isinstance(a, UnitV):
        return b
    if isinstance(b, UnitV):
        return a
    match a, b:
        case (SetV(x), SetV(y)):
            return SetV(x | y)
        case (EpsV(), (IntV() | EpsV())):
            return b
        case (IntV(), EpsV()):
            return a
        case (IntV(x), IntV(y)):
            return IntV(max(x, y))
        case (BoolV(x), BoolV(y)):
            return BoolV(x or y)
        case (StrV(x), StrV(y)):
            return StrV(max(x, y))
        case (PairV(a1, a2), PairV(b1, b2)):
            return PairV(aggregate(a1, b1), aggregate(a2, b2))
    raise AggregationError(f"cannot aggregate {a!r} with {b!r}")


def size_val(v: Value) -> Value:
    match v:
        case SetV(items):
            return IntV(len(items))
        case UnitV():
            return IntV(0)
    raise EvalError(f"size: expected a set, got {v!r}")


def _choose_components(p: Value, ctx: str):
    """Split a promise element into (round, value).  Elements are pairs whose
    second component may itself carry metadata as a nested pair, in which case
    the value is its first component."""
    if not isinstance(p, PairV):
        raise EvalError(f"{ctx}: malformed element {p!r}")
    r = p.first
    v = p.second
    if isinstance(v, PairV):
        v = v.first
    return r, v


def choose_val(s: Value, default: Value) -> Value:
    """Value carried by a maximal non-bottom round in ``s``; ``default`` when
    the set is empty or every round is bottom.  Round ties break toward the
    larger value so the result is stable under set reordering."""
    if isinstance(s, UnitV):
        return default
    if not isinstance(s, SetV):
        raise EvalError(f"chooseVal: expected a set, got {s!r}")
    best = None
    for p in s.sorted_items():
        r, v = _choose_components(p, "chooseVal")
        if isinstance(r, EpsV):
            continue
        if not isinstance(r, IntV):
            raise EvalError(f"chooseVal: malformed round {r!r}")
        if best is None or (r.n, value_key(v)) > (best[0], value_key(best[1])):
            best = (r.n, v)
    return default if best is None else best[1]


def eval_expr(e: Expr, env: dict) -> Value:
    match e:
        case Lit(v):
            return v
        case Var(x):
            if x not in env:
                raise EvalError(f"unbound variable {x}")
            return env[x]
        case TupleE(a, b):
            return PairV(eval_expr(a, env), eval_expr(b, env))
        case SetE(items):
            return mkset(eval_expr(i, env) for i in items)
        case Builtin("size", (a,)):
            return size_val(eval_expr(a, env))
        case Builtin("chooseVal", (a, d)):
            return choose_val(eval_expr(a, env), eval_expr(d, env))
        case Builtin("fst", (a,)):
            v = eval_expr(a, env)
            if not isinstance(v, PairV):
                raise EvalError(f"fst: expected pair, got {v!r}")
            return v.first
        case Builtin("snd", (a,)):
            v = eval_expr(a, env)
            if not isinstance(v, PairV):
                raise EvalError(f"snd: expected pair, got {v!r}")
            return v.second
        case BinOp(op, le, re_):
            l = eval_expr(le, env)
            r = eval_expr(re_, env)
            if op == "+":
                return IntV(_as_int(l, "+") + _as_int(r, "+"))
            if op == "-":
                return IntV(_as_int(l, "-") - _as_int(r, "-"))
            if op == "*":
                return IntV(_as_int(l, "*") * _as_int(r, "*"))
            if op in (">", "<", ">=", "<="):
                c = compare_values(l, r)
                return BoolV({">": c > 0, "<": c < 0, ">=": c >= 0, "<=": c <= 0}[op])
            if op == "=":
                return BoolV(l == r)
            if op == "!=":
                return BoolV(l != r)
            if op == "and":
                return BoolV(_as_bool(l) and _as_bool(r))
            if op == "or":
                return BoolV(_as_bool(l) or _as_bool(r))
            if op == "union":
                return aggregate(_as_setlike(l), _as_setlike(r))
    raise EvalError(f"cannot evaluate {e!r}")


def _as_bool(v: Value) -> bool:
    if not isinstance(v, BoolV):
        raise EvalError(f"expected bool, got {v!r}")
    return v.b


def _as_setlike(v: Value) -> Value:
    if isinstance(v, (SetV, UnitV)):
        return v
    raise EvalError(f"union: expected a set, got {v!r}")


def truth(e: Expr, env: dict) -> bool:
    """The truth predicate over conditions."""
    v = eval_expr(e, env)
    if not isinstance(v, BoolV):
        raise EvalError(f"guard is not boolean: {v!r}")
    return v.b


# ---------------------------------------------------------------- expression typing

class ExprTypeError(Exception):
    pass


def type_expr(vars_ctx: dict, e: Expr) -> BaseType:
    """Principal base type of ``e`` under a variable context."""
    match e:
        case Lit(v):
            return type_of_value(v)
        case Var(x):
            if x not in vars_ctx:
                raise ExprTypeError(f"unbound variable {x}")
            return vars_ctx[x]
        case TupleE(a, b):
            return PairT(type_expr(vars_ctx, a), type_expr(vars_ctx, b))
        case SetE(items):
            merged = ANY_T
            for i in items:
                t = type_expr(vars_ctx, i)
                r = refine_base(merged, t)
                if r is None:
                    raise ExprTypeError(f"mixed set element types: {merged!r} vs {t!r}")
                merged = r
            return SetT(merged)
        case Builtin("size", (a,)):
            t = type_expr(vars_ctx, a)
            if not base_compatible(SetT(ANY_T), t):
                raise ExprTypeError(f"size over non-set {t!r}")
            return INT_T
        case Builtin("chooseVal", (a, d)):
            t = type_expr(vars_ctx, a)
            if not base_compatible(SetT(PairT(INT_T, ANY_T)), t):
                raise ExprTypeError(f"chooseVal over {t!r}")
            td = type_expr(vars_ctx, d)
            if not base_compatible(INT_T, td):
                raise ExprTypeError(f"chooseVal default must be int, got {td!r}")
            return INT_T
        case Builtin("fst", (a,)):
            t = type_expr(vars_ctx, a)
            r = refine_base(PairT(ANY_T, ANY_T), t)
            if r is None:
                raise ExprTypeError(f"fst over non-pair {t!r}")
            return r.first if isinstance(r, PairT) else ANY_T
        case Builtin("snd", (a,)):
            t = type_expr(vars_ctx, a)
            r = refine_base(PairT(ANY_T, ANY_T), t)
            if r is None:
                raise ExprTypeError(f"snd over non-pair {t!r}")
            return r.second if isinstance(r, PairT) else ANY_T
        case BinOp(op, l, r):
            tl = type_expr(vars_ctx, l)
            tr = type_expr(vars_ctx, r)
            if op in ("+", "-", "*"):
                if not (base_compatible(INT_T, tl) and base_compatible(INT_T, tr)):
                    raise ExprTypeError(f"arithmetic over {tl!r}, {tr!r}")
                return INT_T
            if op in (">", "<", ">=", "<="):
                if refine_base(tl, tr) is None:
                    raise ExprTypeError(f"ordering over {tl!r}, {tr!r}")
                return BOOL_T
            if op in ("=", "!="):
                # the recovery idiom compares any payload against the unit
                if refine_base(tl, tr) is None and not (
                    isinstance(tl, UnitT) or isinstance(tr, UnitT)
                ):
                    raise ExprTypeError(f"equality over {tl!r}, {tr!r}")
                return BOOL_T
            if op in ("and", "or"):
                if not (base_compatible(BOOL_T, tl) and base_compatible(BOOL_T, tr)):
                    raise ExprTypeError(f"boolean over {tl!r}, {tr!r}")
                return BOOL_T
            if op == "union":
                r1 = refine_base(SetT(ANY_T), tl)
                r2 = refine_base(SetT(ANY_T), tr)
                if r1 is None or r2 is None:
                    raise ExprTypeError(f"union over {tl!r}, {tr!r}")
                m = refine_base(r1, r2)
                if m is None:
                    raise ExprTypeError(f"union of mismatched sets {tl!r}, {tr!r}")
                return m
    raise ExprTypeError(f"cannot type {e!r}")


def check_expr(vars_ctx: dict, e: Expr, expected: BaseType) -> None:
    t = type_expr(vars_ctx, e)
    if not base_compatible(expected, t):
        raise ExprTypeError(f"expected {expected!r}, got {t!r}")


install_cached_hash(UnitV, EpsV, IntV, BoolV, StrV, PairV, SetV,
                    UnitT, IntT, BoolT, StrT, PairT, SetT, AnyT,
                    Lit, Var, BinOp, TupleE, SetE, Builtin)
