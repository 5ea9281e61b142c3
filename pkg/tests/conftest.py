"""Shared helpers: a seeded generator of well-typed source programs used by
the preservation/safety property suite."""

import random

from ubsc import values as v
from ubsc import sestypes as st
from ubsc.render import render_type

BASES = [("int", "1"), ("bool", "true"), ("str", '"m"')]


def random_protocol(rng: random.Random, depth: int) -> st.SessionType:
    """Plain-side protocol: inputs, outputs and branches (selection lives on
    the aggregator side only)."""
    if depth == 0:
        return st.END
    kind = rng.choice(["in", "out", "bra", "end"])
    if kind == "end":
        return st.END
    if kind == "in":
        beta, _ = rng.choice(BASES)
        return st.In(_base(beta), random_protocol(rng, depth - 1))
    if kind == "out":
        beta, _ = rng.choice(BASES)
        return st.Out(_base(beta), random_protocol(rng, depth - 1))
    arms = st.mkarms([("l1", random_protocol(rng, depth - 1)),
                      ("l2", random_protocol(rng, depth - 1))])
    return st.BraT(arms)


def _base(name):
    return {"int": v.INT_T, "bool": v.BOOL_T, "str": v.STR_T}[name]


def _lit(beta) -> str:
    return {v.INT_T: "1", v.BOOL_T: "true", v.STR_T: '"m"'}[beta]


def plain_body(rng, ty, chan) -> str:
    ty = st.unfold(ty)
    match ty:
        case st.End():
            return "0"
        case st.In(beta, cont):
            return f"{chan}?(x{rng.randrange(1000)}) def {_lit(beta)}. " \
                   + plain_body(rng, cont, chan)
        case st.Out(beta, cont):
            return f"{chan}!<{_lit(beta)}>. " + plain_body(rng, cont, chan)
        case st.BraT(arms):
            inner = ", ".join(f"{l}: {plain_body(rng, c, chan)}" for l, c in arms)
            return f"{chan}>>{{{inner}, df: 0}}"
    raise AssertionError(ty)


def aggr_body(rng, ty, chan) -> str:
    ty = st.unfold(ty)
    match ty:
        case st.End():
            return "0"
        case st.In(beta, cont):
            return f"{chan}?(z{rng.randrange(1000)}). " + aggr_body(rng, cont, chan)
        case st.Out(beta, cont):
            return f"{chan}!<{_lit(beta)}>. " + aggr_body(rng, cont, chan)
        case st.SelT(arms):
            label, cont = arms[rng.randrange(len(arms))]
            return f"{chan}<<{label}. " + aggr_body(rng, cont, chan)
    raise AssertionError(ty)


def generate_program(seed: int) -> str:
    rng = random.Random(seed)
    proto = random_protocol(rng, rng.randint(1, 3))
    if isinstance(proto, st.End):
        proto = st.In(v.INT_T, st.END)
    k = rng.randint(1, 3)
    req = "req a(*c). " + aggr_body(rng, st.dual(proto), "*c")
    accs = "\n|| ".join(
        "[ acc a(c). " + plain_body(rng, proto, "c") + " ]" for _ in range(k)
    )
    return (f"type G = {render_type(proto)}\nshared a : G\n\n"
            f"[ {req} ]\n|| {accs}\n")
