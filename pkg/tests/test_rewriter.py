import itertools
import random

import pytest

from chasekit.chase import chase_to, entails, holds
from chasekit.homo import cq_contains, cq_equivalent
from chasekit.markedrw import rd_theory
from chasekit.model import Atom, Constant, Instance, RuleSet, canonical_key
from chasekit.rewriter import head_split, is_aux, minimize, one_step_rewrites, rewrite, unique_up_to_iso
from chasekit.textio import parse_query, parse_rules

from corpus import g_path_query, phi_r, tp, two_rule


def keys(qs):
    return {canonical_key(q) for q in qs}


def test_one_step_linear():
    out = one_step_rewrites(parse_query("?(y) := E(y,z)."), tp()[0])
    assert keys(out) == keys([parse_query("?(y) := E(x,y).")])


def test_one_step_blocked_by_free_variable():
    (grid_g,) = parse_rules("R(x,x1), G(x,u), G(u,u1) -> exists z. G(x1,z).")
    assert one_step_rewrites(parse_query("?(x,y) := G(x,y)."), grid_g) == set()


def test_one_step_datalog():
    out = one_step_rewrites(parse_query("?(y) := R(z,y)."), two_rule()[1])
    assert keys(out) == keys([parse_query("?(y) := E(x,y), P(z).")])
    run = chase_to(two_rule(), Instance([Atom("E", (Constant("a"), Constant("b"))),
                                         Atom("P", (Constant("c"),))]), 1)
    assert Atom("R", (Constant("c"), Constant("b"))) in run.store.facts


def test_one_step_needs_single_head():
    with pytest.raises(ValueError):
        one_step_rewrites(phi_r(1), rd_theory()[0])


def test_head_split_shapes():
    rules = head_split(rd_theory())
    assert all(len(r.head) == 1 for r in rules)
    assert sum(is_aux(r.head[0].relation) for r in rules) == 3


def test_linear_rewriting_is_complete():
    res = rewrite(tp(), parse_query("?(y) := E(y,z)."), 3)
    assert res.complete
    assert keys(res) == keys([parse_query("?(y) := E(y,z)."), parse_query("?(y) := E(x,y).")])


def test_empty_theory_returns_query():
    q = parse_query("?(x) := E(x,y), F(y,x).")
    res = rewrite(RuleSet([]), q, 1)
    assert res.complete and keys(res) == keys([q])


def test_rd_phi_r1_rewriting_contains_green_path():
    res = rewrite(rd_theory(), phi_r(1), 8)
    assert res.complete
    assert any(cq_equivalent(q, g_path_query(2)) for q in res)


def test_fuel_must_be_positive():
    with pytest.raises(ValueError):
        rewrite(tp(), parse_query("?(y) := E(y,z)."), 0)


def test_uniqueness_examples():
    q = parse_query("?(y) := E(y,z).")
    a = rewrite(tp(), q, 3)
    b = rewrite(RuleSet(list(reversed(two_rule().rules)) + list(tp().rules)), q, 5)
    c = rewrite(RuleSet(list(tp().rules) + list(two_rule().rules)), q, 5)
    assert unique_up_to_iso(a, a)
    assert unique_up_to_iso(b, c)
    assert not unique_up_to_iso(a, rewrite(RuleSet([]), q, 1))


def test_minimize_drops_contained_queries():
    qs = [parse_query("?(x) := E(x,y)."), parse_query("?(x) := E(x,y), E(y,z)."),
          parse_query("?(x) := E(x,w).")]
    out = minimize(qs)
    assert len(out) == 1
    for a, b in itertools.permutations(out, 2):
        assert not cq_contains(a, b)


def test_completeness_on_small_instances():
    q = parse_query("?(y) := E(y,z).")
    res = rewrite(tp(), q, 3)
    consts = [Constant(c) for c in "abcd"]
    atoms = [Atom("E", p) for p in itertools.product(consts, repeat=2)]
    rng = random.Random(7)
    for _ in range(150):
        F = Instance(rng.sample(atoms, rng.randint(1, 4)))
        run = chase_to(tp(), F, 6)
        for c in sorted(F.active_domain, key=lambda t: t.sort_key()):
            want = entails(tp(), F, q, (c,), 6, run=run).found
            got = any(holds(m, F.store(), (c,)) for m in res)
            assert want == got


def test_linear_theory_rewritings_stay_small():
    # E(x,y) -> exists z. E(y,z) is local with l = 1
    for text in ("?(y) := E(y,z).", "?(x,y) := E(x,y).", "?(x) := E(x,y), E(y,z)."):
        q = parse_query(text)
        res = rewrite(tp(), q, 6)
        assert res.complete and res.rs_value <= q.size
