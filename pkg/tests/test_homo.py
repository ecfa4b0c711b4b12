import itertools
import random

from hypothesis import given, settings
from hypothesis import strategies as st

from chasekit.chase import chase_to
from chasekit.homo import (
    check_hom,
    core_idempotent_check,
    core_retract,
    cq_contains,
    find_hom,
    is_model,
    isomorphic,
)
from chasekit.model import Atom, Constant, Instance, Variable
from chasekit.textio import parse_instance, parse_query

from corpus import core1, random_connected_query, random_instance, tp

C, V = Constant, Variable


def test_identity_hom():
    inst = parse_instance("E(a,b). E(b,c).")
    fixed = {t: t for t in inst.active_domain}
    h = find_hom(inst, inst, fixed)
    assert h is not None and all(h(t) == t for t in inst.active_domain)


def test_collapse_to_loop():
    src = Instance([Atom("E", (V("x"), V("y")))])
    h = find_hom(src, parse_instance("E(a,a)."))
    assert h(V("x")) == C("a") and h(V("y")) == C("a")


def test_chase_retracts_onto_core():
    run = chase_to(core1(), parse_instance("E(a,b)."), 3)
    dst = parse_instance("E(a,b). E(b,b).")
    assert find_hom(run.last, dst, {C("a"): C("a"), C("b"): C("b")}) is not None


def test_containment_examples():
    g2 = parse_query("?(x,y) := G(x,z), G(z,y).")
    loose = parse_query("?(x,y) := G(x,u), G(v,y).")
    assert cq_contains(g2, g2)
    assert cq_contains(loose, g2)
    assert not cq_contains(g2, loose)


def test_model_checks():
    assert is_model(parse_instance("E(a,b). E(b,b)."), core1())
    assert not is_model(parse_instance("E(a,b)."), tp())
    assert is_model(Instance(), core1())


def test_core_of_single_edge():
    res = core_retract(core1(), parse_instance("E(a,b)."), 4)
    assert res.core == parse_instance("E(a,b). E(b,b).")
    assert res.c_value == 2
    assert check_hom(res.retraction, chase_to(core1(), parse_instance("E(a,b)."), res.stage + 2).last,
                     res.core)


def test_model_is_its_own_core():
    D = parse_instance("E(a,b). E(b,b).")
    res = core_retract(core1(), D, 3)
    assert res.core == D and res.c_value == 0


def test_linear_chain_has_no_core():
    for depth in (2, 4, 6):
        assert core_retract(tp(), parse_instance("E(a,b)."), depth) is None


def test_core_idempotence_examples():
    assert core_idempotent_check(core1(), parse_instance("E(a,b)."), 4)
    assert core_idempotent_check(core1(), parse_instance("E(a,b). E(b,b)."), 3)


def test_isomorphic():
    a = Instance([Atom("E", (V("x"), V("y")))])
    b = Instance([Atom("E", (V("p"), V("q")))])
    assert isomorphic(a, b)
    assert not isomorphic(a, Instance([Atom("E", (V("p"), V("p")))]))


# ----------------------------------------------------------------------
# properties


def _brute_force_hom_exists(src, dst):
    sv = sorted(src.active_domain, key=lambda t: t.sort_key())
    dv = sorted(dst.active_domain, key=lambda t: t.sort_key())
    for img in itertools.product(dv, repeat=len(sv)):
        m = dict(zip(sv, img))
        if all(Atom(a.relation, tuple(m[t] for t in a.args)) in dst.facts for a in src.facts):
            return True
    return False


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9))
def test_find_hom_matches_brute_force(seed):
    rng = random.Random(seed)
    q = random_connected_query(rng, 4, rels=("E",), max_free=0)
    src = Instance(q.body)
    dst = random_instance(rng, rels=(("E", 2),), max_atoms=4, max_consts=3)
    h = find_hom(src, dst)
    assert (h is not None) == _brute_force_hom_exists(src, dst)
    if h is not None:
        assert check_hom(h, src, dst)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_containment_is_a_preorder(seed):
    rng = random.Random(seed)
    qs = [random_connected_query(rng, 6, rels=("E",), max_free=0) for _ in range(3)]
    for q in qs:
        assert cq_contains(q, q)
    for a, b, c in itertools.permutations(qs):
        if cq_contains(a, b) and cq_contains(b, c):
            assert cq_contains(a, c)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**9))
def test_cores_are_models_and_idempotent(seed):
    D = random_instance(random.Random(seed), rels=(("E", 2),), max_atoms=4, max_consts=4)
    res = core_retract(core1(), D, 4)
    assert res is not None
    run = chase_to(core1(), D, res.stage)
    assert res.core.facts <= run.store.facts
    assert is_model(res.core, core1())
    assert core_idempotent_check(core1(), D, 4)
