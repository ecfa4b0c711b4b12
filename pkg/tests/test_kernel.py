import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chasekit import _pykernel, kernel


def _store(facts):
    rels, index = {}, {}
    for rel, args in facts:
        rels.setdefault(rel, []).append(args)
        for pos, t in enumerate(args):
            index.setdefault((rel, pos, t), []).append(args)
    return rels, index


def _brute(patterns, facts, nslots, binding):
    # enumerate every assignment of slots to terms
    import itertools

    terms = sorted({t for _, args in facts for t in args})
    free = [i for i in range(nslots) if binding[i] is None]
    out = set()
    for img in itertools.product(terms, repeat=len(free)):
        b = list(binding)
        for i, v in zip(free, img):
            b[i] = v
        if all((rel, tuple(b[a] if type(a) is int else a for a in args)) in facts
               for rel, args in patterns):
            out.add(tuple(b))
    return out


def test_backend_reported():
    assert kernel.BACKEND in {"cython", "python"}


def test_ground_pattern():
    rels, index = _store({("E", ("a", "b"))})
    assert _pykernel.match([("E", ("a", "b"))], rels, index, []) == [()]
    assert _pykernel.match([("E", ("b", "a"))], rels, index, []) == []


def test_checks_restrict_slots():
    rels, index = _store({("E", ("a", "b")), ("E", ("a", "c"))})
    got = _pykernel.match([("E", ("a", 0))], rels, index, [None], [(True, {"c"})])
    assert got == [("c",)]
    got = _pykernel.match([("E", ("a", 0))], rels, index, [None], [(False, {"c"})])
    assert got == [("b",)]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_kernels_agree_with_brute_force(seed):
    rng = random.Random(seed)
    terms = "abcd"[: rng.randint(1, 4)]
    facts = {("E", (rng.choice(terms), rng.choice(terms))) for _ in range(rng.randint(1, 6))}
    facts |= {("P", (rng.choice(terms),)) for _ in range(rng.randint(0, 2))}
    nslots = rng.randint(1, 3)
    pats = []
    for _ in range(rng.randint(1, 3)):
        if rng.random() < 0.7:
            pats.append(("E", (rng.randrange(nslots), rng.randrange(nslots))))
        else:
            pats.append(("P", (rng.randrange(nslots),)))
    used = {a for _, args in pats for a in args}
    nslots = max(used) + 1
    rels, index = _store(facts)
    binding = [None] * nslots
    want = _brute(pats, facts, nslots, binding)
    # slots never mentioned stay unbound
    want = {b for b in want if all(b[i] is not None for i in used)} if want else want
    py = set(_pykernel.match(pats, rels, index, binding))
    py_used = {tuple(v for i, v in enumerate(b) if i in used) for b in py}
    assert py_used == {tuple(v for i, v in enumerate(b) if i in used) for b in want}
    assert sorted(map(repr, kernel.match(pats, rels, index, binding))) == sorted(map(repr, py))


@pytest.mark.skipif(kernel.BACKEND != "cython", reason="compiled kernel not built")
def test_limit_respected():
    rels, index = _store({("E", (t, t)) for t in "abcdef"})
    assert len(kernel.match([("E", (0, 0))], rels, index, [None], None, 2)) == 2
