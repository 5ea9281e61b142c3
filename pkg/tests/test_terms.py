import pytest

from ubsc import engine as eng
from ubsc import terms as t
from ubsc import values as v
from ubsc.syntax import parse_network, parse_process


def test_free_names_request_binds():
    p = t.Request("a", "x", t.Send(t.ChanVar("x", True), v.Lit(v.IntV(1)), t.Inact()))
    assert t.free_names(p) == {"a"}


def test_free_names_node():
    n = parse_network("[ s?(x) def 1. 0 | s~0:[] ]")
    assert t.free_names(n) == {"s"}


def test_free_names_restriction_binds():
    n = parse_network("new s. [ s?(x). 0 | s~0:[] ]")
    assert t.free_names(n) == set()


def test_subst_channel():
    p = parse_process("x!<1>. 0")
    # x parses as an endpoint at top level; build the variable form directly
    p = t.Send(t.ChanVar("x", False), v.Lit(v.IntV(1)), t.Inact())
    out = t.subst_channel(p, "x", t.Endpoint("s", False))
    assert out == t.Send(t.Endpoint("s", False), v.Lit(v.IntV(1)), t.Inact())


def test_subst_channel_shadowed():
    p = t.Request("a", "x", t.Send(t.ChanVar("x", True), v.Lit(v.IntV(1)), t.Inact()))
    assert t.subst_channel(p, "x", t.Endpoint("s", True)) == p


def test_subst_channel_polarity_mismatch():
    p = t.Send(t.ChanVar("x", True), v.Lit(v.IntV(1)), t.Inact())
    with pytest.raises(t.SubstError):
        t.subst_channel(p, "x", t.Endpoint("s", False))


def test_subst_connection_shape():
    # the connection rule applies the aggregator substitution to the requester
    body = t.Send(t.ChanVar("y", True), v.Lit(v.StrV("hbt")), t.Inact())
    out = t.subst_channel(body, "y", t.Endpoint("s", True))
    assert out.chan == t.Endpoint("s", True)


def test_subst_procvar():
    body = t.Send(t.Endpoint("s", False), v.Var("x"), t.Inact())
    p = t.Call("D", (v.Lit(v.IntV(5)),))
    out = t.subst_procvar(p, "D", ("x",), body)
    assert out == t.Send(t.Endpoint("s", False), v.Lit(v.IntV(5)), t.Inact())


def test_subst_procvar_unrelated_untouched():
    p = t.Call("E", (v.Lit(v.IntV(1)),))
    assert t.subst_procvar(p, "D", ("x",), t.Inact()) == p


def test_subst_procvar_arity():
    with pytest.raises(t.SubstError):
        t.subst_procvar(t.Call("D", ()), "D", ("x",), t.Inact())


def test_alpha_equivalence():
    a = parse_process("req a(*x). *x!<1>. 0")
    b = parse_process("req a(*y). *y!<1>. 0")
    assert eng.canon_process(a) == eng.canon_process(b)
    c = parse_process("req a(*y). *y!<2>. 0")
    assert eng.canon_process(a) != eng.canon_process(c)


def test_alpha_is_equivalence_and_subst_commutes():
    a = parse_process("acc a(x). x?(w) def 1. 0")
    b = parse_process("acc a(z). z?(q) def 1. 0")
    assert eng.canon_process(a) == eng.canon_process(b)
    # substituting a free channel commutes with renaming of bound ones
    p1 = t.Send(t.ChanVar("u", False), v.Lit(v.IntV(1)),
                t.Recv(t.ChanVar("u", False), "w", v.Lit(v.UNIT), t.Inact()))
    s1 = t.subst_channel(p1, "u", t.Endpoint("s", False))
    assert eng.canon_process(s1) == eng.canon_process(
        parse_process("s!<1>. s?(w). 0"))


def test_free_names_after_subst():
    p = t.Send(t.ChanVar("x", False), v.Lit(v.IntV(1)), t.Inact())
    out = t.subst_channel(p, "x", t.Endpoint("s", False))
    assert t.free_names(p) == {"x"}
    assert t.free_names(out) == {"s"}


def test_buffer_polarity_enforced():
    with pytest.raises(ValueError):
        t.Buffer(t.Endpoint("s", False), 0, (t.TaggedMsg(0, v.IntV(1)),))
    with pytest.raises(ValueError):
        t.Buffer(t.Endpoint("s", True), 0, (t.ValMsg(v.IntV(1)),))


def test_free_names_substitution_law():
    # substituting a fresh endpoint removes the variable and adds the session
    cases = [
        t.Send(t.ChanVar("x", False), v.Lit(v.IntV(1)),
               t.Recv(t.ChanVar("x", False), "w", v.Lit(v.UNIT), t.Inact())),
        t.Cond(v.BinOp(">", v.Var("n"), v.Lit(v.IntV(0))),
               t.Send(t.ChanVar("x", False), v.Var("n"), t.Inact()),
               t.Inact()),
        t.Branch(t.ChanVar("x", False), (("l", t.Inact()),), t.Inact()),
    ]
    for p in cases:
        before = t.free_names(p)
        assert "x" in before
        after = t.free_names(t.subst_channel(p, "x", t.Endpoint("s", False)))
        assert after == (before - {"x"}) | {"s"}
