import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs

from ubsc import values as v


def ints():
    return hs.one_of(hs.just(v.EPS), hs.integers(-20, 20).map(v.IntV))


def strs():
    return hs.text(alphabet="abcxyz", max_size=4).map(v.StrV)


def sets_of_pairs():
    pair = hs.tuples(hs.integers(0, 9), hs.integers(0, 9)).map(
        lambda p: v.PairV(v.IntV(p[0]), v.IntV(p[1]))
    )
    return hs.frozensets(pair, max_size=5).map(v.SetV)


def value_of_instance(name):
    return {"int": ints(), "str": strs(),
            "bool": hs.booleans().map(v.BoolV), "set": sets_of_pairs()}[name]


@pytest.mark.parametrize("instance", ["int", "str", "bool", "set"])
def test_aggregate_unit_identity(instance):
    sample = {
        "int": v.IntV(7), "str": v.StrV("hbt"), "bool": v.FALSE,
        "set": v.mkset([v.PairV(v.IntV(1), v.IntV(2))]),
    }[instance]
    assert v.aggregate(sample, v.UNIT) == sample
    assert v.aggregate(v.UNIT, sample) == sample


@pytest.mark.parametrize("instance", ["int", "str", "bool", "set"])
@settings(max_examples=300)
@given(data=hs.data())
def test_aggregate_assoc_comm(instance, data):
    a = data.draw(value_of_instance(instance))
    b = data.draw(value_of_instance(instance))
    c = data.draw(value_of_instance(instance))
    assert v.aggregate(a, b) == v.aggregate(b, a)
    assert v.aggregate(v.aggregate(a, b), c) == v.aggregate(a, v.aggregate(b, c))


def test_aggregate_permutation_oracle():
    # folding in any order gives the same result
    vals = [v.StrV("hbt2"), v.StrV("hbt1"), v.StrV("aaa")]
    results = set()
    for perm in itertools.permutations(vals):
        out = v.UNIT
        for x in perm:
            out = v.aggregate(out, x)
        results.add(out)
    assert results == {v.StrV("hbt2")}


def test_aggregate_set_union():
    a = v.mkset([v.PairV(v.IntV(0), v.IntV(5))])
    b = v.mkset([v.PairV(v.IntV(1), v.IntV(9))])
    assert v.aggregate(a, b) == v.mkset(
        [v.PairV(v.IntV(0), v.IntV(5)), v.PairV(v.IntV(1), v.IntV(9))]
    )


def test_aggregate_mixed_types_rejected():
    with pytest.raises(v.AggregationError):
        v.aggregate(v.IntV(1), v.StrV("x"))


def test_eps_is_bottom():
    assert v.eval_expr(v.BinOp(">", v.Lit(v.IntV(3)), v.Lit(v.EPS)), {}) == v.TRUE
    assert v.eval_expr(v.BinOp(">", v.Lit(v.EPS), v.Lit(v.EPS)), {}) == v.FALSE
    assert v.aggregate(v.EPS, v.IntV(4)) == v.IntV(4)


def test_eval_examples():
    env = {"x": v.IntV(4)}
    assert v.eval_expr(v.BinOp("+", v.Var("x"), v.Lit(v.IntV(1))), env) == v.IntV(5)
    union = v.BinOp("union",
                    v.SetE((v.TupleE(v.Lit(v.IntV(1)), v.Lit(v.IntV(7))),)),
                    v.SetE((v.TupleE(v.Lit(v.IntV(2)), v.Lit(v.IntV(9))),)))
    assert v.eval_expr(union, {}) == v.mkset(
        [v.PairV(v.IntV(1), v.IntV(7)), v.PairV(v.IntV(2), v.IntV(9))]
    )
    with pytest.raises(v.EvalError):
        v.eval_expr(v.Var("zz"), {})


def test_truth():
    assert v.truth(v.BinOp(">", v.Var("id2"), v.Var("id1")),
                   {"id1": v.IntV(3), "id2": v.IntV(7)})
    assert v.truth(v.BinOp(">", v.Builtin("size", (v.Var("I"),)), v.Lit(v.IntV(2))),
                   {"I": v.mkset([v.IntV(1), v.IntV(2), v.IntV(3)])})
    assert v.truth(v.Lit(v.TRUE), {})
    with pytest.raises(v.EvalError):
        v.truth(v.Lit(v.IntV(1)), {})


def test_choose_val_examples():
    eps_pair = v.mkset([v.PairV(v.EPS, v.EPS)])
    assert v.choose_val(eps_pair, v.IntV(42)) == v.IntV(42)
    s = v.mkset([
        v.PairV(v.IntV(1), v.IntV(10)),
        v.PairV(v.IntV(3), v.IntV(20)),
        v.PairV(v.IntV(2), v.IntV(30)),
    ])
    assert v.choose_val(s, v.IntV(42)) == v.IntV(20)
    assert v.choose_val(v.mkset([]), v.IntV(7)) == v.IntV(7)


def test_choose_val_nested_metadata():
    s = v.mkset([
        v.PairV(v.IntV(1), v.PairV(v.IntV(10), v.IntV(101))),
        v.PairV(v.IntV(2), v.PairV(v.IntV(30), v.IntV(102))),
    ])
    assert v.choose_val(s, v.IntV(0)) == v.IntV(30)


@settings(max_examples=300)
@given(sets_of_pairs(), hs.integers(0, 9).map(v.IntV))
def test_choose_val_membership(s, default):
    out = v.choose_val(s, default)
    candidates = {p.second for p in s.items if not isinstance(p.first, v.EpsV)}
    assert out in candidates | {default}


def test_type_expr():
    assert v.type_expr({"hbt": v.STR_T}, v.Var("hbt")) == v.STR_T
    assert v.type_expr({}, v.BinOp("+", v.Lit(v.IntV(1)), v.Lit(v.IntV(2)))) == v.INT_T
    t = v.type_expr({}, v.SetE((v.TupleE(v.Lit(v.IntV(1)), v.Lit(v.IntV(2))),)))
    assert t == v.SetT(v.PairT(v.INT_T, v.INT_T))
    # the recovery idiom: payload compared against the unit
    assert v.type_expr({"w": v.INT_T},
                       v.BinOp("!=", v.Var("w"), v.Lit(v.UNIT))) == v.BOOL_T
    with pytest.raises(v.ExprTypeError):
        v.type_expr({}, v.BinOp("+", v.Lit(v.TRUE), v.Lit(v.IntV(1))))
