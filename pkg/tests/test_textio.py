import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chasekit.chase import chase_to
from chasekit.model import Atom, Constant, Instance, Skolem, Variable
from chasekit.textio import (
    ParseError,
    SourceSpan,
    parse_instance,
    parse_queries,
    parse_query,
    parse_rules,
    print_instance,
    print_query,
    print_rules,
    print_term,
)

from corpus import CORE1_TEXT, RC_TEXT, STICKY_TEXT, TA_TEXT, TWO_RULE_TEXT, phi_r, random_connected_query, ta

V = Variable


def test_linear_rule():
    (r,) = parse_rules("E(x,y) -> exists z. E(y,z).")
    assert r.is_linear and r.frontier == {V("y")} and r.existentials == {V("z")}


def test_detached_multi_head_rule():
    (r,) = parse_rules("true -> exists x. R(x,x), G(x,x).")
    assert r.body == () or not r.body
    assert r.is_detached and len(r.head) == 2


def test_unclosed_paren_reports_position():
    with pytest.raises(ParseError) as ei:
        parse_rules("E(x,y -> Q(x).")
    assert isinstance(ei.value.span, SourceSpan)
    assert (ei.value.span.line, ei.value.span.column) == (1, 7)


def test_domain_marker():
    (r,) = parse_rules("@dom(x) -> exists z. R(x,z).")
    assert r.uses_active_domain and r.domain_vars == {V("x")}


def test_instance_examples():
    assert parse_instance("Human(abel).") == Instance([Atom("Human", (Constant("abel"),))])
    assert len(parse_instance("E(a,b). E(a,b).")) == 1


def test_instances_reject_variables():
    with pytest.raises(ParseError):
        parse_instance("E(a,X).")


def test_query_phi_r1():
    q = parse_query("?(x,y) := R(x,u), R(y,v), G(u,v).")
    assert q.free_vars == (V("x"), V("y")) and q.size == 3
    from chasekit.homo import cq_equivalent

    assert cq_equivalent(q, phi_r(1))


def test_boolean_query_with_constant():
    q = parse_query("const abel. ?() := Mother(abel,y), Mother(y,z).")
    assert q.is_boolean
    assert any(Constant("abel") in a.args for a in q.body)


def test_free_variable_absent_from_body():
    with pytest.raises(ParseError):
        parse_query("?(x) := G(u,v).")


def test_comments_and_multiple_queries():
    qs = parse_queries("# two\n?(x) := G(x,y).\n?() := R(a,b).  # tail\n")
    assert len(qs) == 2


def test_term_printing_and_round_trip():
    assert print_term(Constant("abel")) == "abel"
    run = chase_to(ta(), parse_instance("Human(abel)."), 3)
    mum = next(t for t in run.last.active_domain if isinstance(t, Skolem) and t.depth == 1)
    assert print_term(mum) == "sk[Mother(f1,e1)/2](abel)"
    nested = next(t for t in run.last.active_domain if isinstance(t, Skolem) and t.depth == 2)
    assert print_term(nested) == "sk[Mother(f1,e1)/2](sk[Mother(f1,e1)/2](abel))"
    assert parse_instance(print_instance(run.last)) == run.last


@pytest.mark.parametrize("text", [TA_TEXT, CORE1_TEXT, STICKY_TEXT, RC_TEXT, TWO_RULE_TEXT,
                                  "true -> exists x. R(x,x), G(x,x).\n"
                                  "@dom(x) -> exists z,w. R(x,z), G(x,w).\n",
                                  "const abel. P(abel), E(abel,x) -> Q(x).\n"])
def test_rule_round_trip(text):
    rs = parse_rules(text)
    assert parse_rules(print_rules(rs)) == rs


def test_head_constants_rejected():
    with pytest.raises(ParseError):
        parse_rules("const abel. P(abel) -> Q(abel).")


def test_errors_carry_spans():
    for bad in ["E(x,y)", "E(x,y) -> .", "-> E(x).", "E(x,y) -> exists . F(x).", "E(x,,y) -> F(x)."]:
        with pytest.raises(ParseError) as ei:
            parse_rules(bad)
        assert ei.value.span.line >= 1 and ei.value.span.column >= 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_query_round_trip(seed):
    q = random_connected_query(random.Random(seed), 8)
    assert parse_query(print_query(q)) == q


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="EPxyz(),.->@ exists:=?#\n", max_size=40))
def test_parsers_never_crash(text):
    for parse in (parse_rules, parse_instance, parse_queries):
        try:
            parse(text)
        except ParseError as e:
            assert e.span.line >= 1
