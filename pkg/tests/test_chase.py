import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chasekit.chase import (
    ChaseBudgetExceeded,
    apply,
    birth_atom,
    chase_step,
    chase_to,
    entails,
    hom_matches,
    holds,
    subchase_equal,
)
from chasekit.markedrw import rd_theory
from chasekit.model import Atom, Constant, Instance, RuleSet, Skolem, Variable
from chasekit.rewriter import head_split, one_step_rewrites
from chasekit.textio import parse_instance, parse_query, parse_rules

from corpus import green_path, phi_r, random_instance, random_theory, ta, tp

V, C = Variable, Constant
ABEL = C("abel")
D_A = parse_instance("Human(abel).")


def mum(t):
    return Skolem("Mother(f1,e1)", 2, (t,))


def test_single_match():
    (r,) = tp()
    assert hom_matches(r, parse_instance("E(a,b).")) == [{V("x"): C("a"), V("y"): C("b")}]


def test_no_match_on_empty_instance():
    (r,) = tp()
    assert hom_matches(r, Instance()) == []


def test_grid_matches_against_brute_force():
    T = rd_theory()
    grid = T[2]
    inst = chase_to(T, green_path(8), 2).last
    dom = sorted(inst.active_domain, key=lambda t: t.sort_key())
    facts = inst.facts
    expected = set()
    # index first, then join; the full cube is too large
    for x, x1 in [a.args for a in facts if a.relation == "R"]:
        for u in dom:
            if Atom("G", (x, u)) not in facts:
                continue
            for u1 in dom:
                if Atom("G", (u, u1)) in facts:
                    expected.add((x, x1, u, u1))
    got = {(m[V("x")], m[V("x1")], m[V("u")], m[V("u1")]) for m in hom_matches(grid, inst)}
    assert got == expected and got


def test_apply_examples():
    (r,) = tp()
    (atom,) = apply(r, {V("x"): C("a"), V("y"): C("b")})
    assert atom.args[0] == C("b") and isinstance(atom.args[1], Skolem)
    assert apply(ta()[0], {V("y"): ABEL}) == [Atom("Mother", (ABEL, mum(ABEL)))]


def test_identical_heads_give_identical_atoms():
    r1, r2 = parse_rules("P(x) -> exists z. E(x,z).\nQ(x), F(x,w) -> exists z. E(x,z).")
    assert apply(r1, {V("x"): C("a")}) == apply(r2, {V("x"): C("a"), V("w"): C("b")})


def test_abel_stages():
    run = chase_to(ta(), D_A, 3)
    assert run.deltas[1] == {Atom("Mother", (ABEL, mum(ABEL)))}
    assert [len(s) for s in run.stages] == [1, 2, 3, 4]
    assert Atom("Mother", (mum(ABEL), mum(mum(ABEL)))) in run.deltas[3]


def test_semi_oblivious_fires_on_satisfied_match():
    out = chase_step(tp(), parse_instance("E(a,a)."))
    assert len(out) == 2
    assert any(isinstance(a.args[1], Skolem) for a in out.facts)


def test_empty_theory_saturates_at_zero():
    run = chase_to(RuleSet([]), parse_instance("E(a,b)."), 5)
    assert run.saturated and run.depth == 0


def test_cap_raises():
    with pytest.raises(ChaseBudgetExceeded):
        chase_to(tp(), parse_instance("E(a,b)."), 50, cap=10)


def test_rd_on_green_path_entails_phi_r():
    # least stages measured for n = 1, 2, 3
    for n, depth in ((1, 2), (2, 4), (3, 7)):
        m = 2 ** n
        e = entails(rd_theory(), green_path(m), phi_r(n), (C("a0"), C(f"a{m}")), 7)
        assert e.found and e.at_depth == depth


def test_entailment_examples():
    q = parse_query("const abel. ?() := Mother(abel,y), Mother(y,z).")
    e = entails(ta(), D_A, q, (), 5)
    assert e.found and e.at_depth == 3
    q0 = parse_query("?() := Human(abel).")
    assert entails(ta(), D_A, q0, (), 0).at_depth == 0
    e = entails(rd_theory(), green_path(2), phi_r(1), (C("a0"), C("a2")), 3)
    assert e.found and e.at_depth <= 3


def test_birth_atoms():
    run = chase_to(ta(), D_A, 2)
    rec = birth_atom(run, mum(ABEL))
    assert rec.birth_atom == Atom("Mother", (ABEL, mum(ABEL))) and rec.frontier_terms == {ABEL}
    with pytest.raises(ValueError):
        birth_atom(run, ABEL)


def test_loop_term_birth_atom_is_flagged_ambiguous():
    run = chase_to(rd_theory(), green_path(1), 1)
    t = next(t for t in run.last.active_domain if isinstance(t, Skolem) and not t.args)
    rec = birth_atom(run, t)
    assert rec.ambiguous and rec.birth_atom in (Atom("G", (t, t)), Atom("R", (t, t)))


def test_subchase_equal_examples():
    F = chase_to(ta(), D_A, 2).last
    for d in range(2, 6):
        assert subchase_equal(ta(), D_A, F, d)
    assert subchase_equal(ta(), D_A, D_A, 3)


# ----------------------------------------------------------------------
# properties


def _rd_instance(rng):
    return random_instance(rng, max_atoms=4, max_consts=4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**9))
def test_stages_monotone_and_deterministic(seed):
    rng = random.Random(seed)
    T = random_theory(rng)
    D = random_instance(rng, rels=(("E", 2), ("P", 1), ("F", 2)), max_atoms=4, max_consts=4)
    a, b = chase_to(T, D, 4), chase_to(T, D, 4)
    assert a.stages == b.stages
    for s, t in zip(a.stages, a.stages[1:]):
        assert s.facts <= t.facts


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**9))
def test_rd_chase_shape(seed):
    D = _rd_instance(random.Random(seed))
    run = chase_to(rd_theory(), D, 4)
    dom = D.active_domain
    facts = run.store.facts
    succ = {}
    for a in facts:
        s, t = a.args
        # an edge into an original term starts at an original term
        if t in dom:
            assert s in dom
        succ.setdefault(s, set()).add(t)
    # cycles stay inside D, apart from the loop term
    loop = {t for a in facts for t in a.args if isinstance(t, Skolem) and not t.args}
    for a in facts:
        s, t = a.args
        if s in dom or s in loop:
            continue
        stack, seen = [t], set()
        while stack:
            u = stack.pop()
            assert u != s, "cycle through an invented term"
            if u in seen or u in dom or u in loop:
                continue
            seen.add(u)
            stack.extend(succ.get(u, ()))
    # same-relation in-degree two with one original source: both original
    into = {}
    for a in facts:
        into.setdefault((a.relation, a.args[1]), set()).add(a.args[0])
    for (rel, t), srcs in into.items():
        if len(srcs) >= 2 and srcs & dom:
            assert srcs <= dom


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9))
def test_one_step_rewrites_are_sound(seed):
    rng = random.Random(seed)
    T = random_theory(rng, max_rules=2)
    q = parse_query(rng.choice(["?(x) := E(x,y).", "?() := E(x,y), P(y).",
                                "?(x,y) := F(x,y).", "?(x) := P(x), E(x,x)."]))
    F = random_instance(rng, rels=(("E", 2), ("P", 1), ("F", 2)), max_atoms=5, max_consts=3)
    run = chase_to(T, F, 5)
    dom = sorted(F.active_domain, key=lambda t: t.sort_key())
    for r in head_split(T):
        if any(a.relation.startswith("Aux__") for a in r.head + r.body):
            continue
        for q2 in one_step_rewrites(q, r, dict(T.signature)):
            for args in itertools.product(dom, repeat=len(q2.free_vars)):
                if holds(q2, F.store(), args):
                    assert entails(T, F, q, args, 5, run=run).found
