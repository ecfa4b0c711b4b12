"""Fuel-bounded UCQ rewriting by piece unification.

Multi-head existential rules are split through an auxiliary predicate
holding the frontier and existential variables, plus one projection rule
per head atom.  Queries still mentioning an auxiliary predicate are kept
during the closure but never returned.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .homo import cq_contains
from .model import (
    Atom,
    ConjunctiveQuery,
    Constant,
    Rule,
    RuleSet,
    Variable,
    canonical_key,
    canonicalize,
    fresh_variable_factory,
)

AUX_PREFIX = "Aux__"
DEFAULT_FUEL = 8


class IncompleteRewriting(RuntimeError):
    """Raised by callers that require a complete rewriting."""


@dataclass(frozen=True)
class RewriteSet:
    queries: tuple
    complete: bool
    fuel_used: int

    @property
    def rs_value(self) -> int:
        return max((q.size for q in self.queries), default=0)

    def __iter__(self):
        return iter(self.queries)

    def __len__(self):
        return len(self.queries)

    def keys(self) -> set:
        return {canonical_key(q) for q in self.queries}


def head_split(theory: RuleSet) -> list:
    """Single-head rules equivalent to ``theory`` for rewriting purposes."""
    taken = set(theory.signature)
    out = []
    for i, r in enumerate(theory.rules):
        if len(r.head) == 1:
            out.append(r)
        elif r.is_datalog:
            out.extend(Rule(r.body, [h], r.domain_vars & h.variables(), label=r.label)
                       for h in r.head)
        else:
            name = f"{AUX_PREFIX}{i}"
            while name in taken:
                name += "_"
            taken.add(name)
            keep = sorted(r.frontier, key=lambda v: v.name) + sorted(r.existentials, key=lambda v: v.name)
            aux = Atom(name, keep)
            out.append(Rule(r.body, [aux], r.domain_vars, label=r.label))
            out.extend(Rule([aux], [h]) for h in r.head)
    return out


def is_aux(rel: str) -> bool:
    return rel.startswith(AUX_PREFIX)


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        p = self.parent.setdefault(x, x)
        if p is x or p == x:
            return x
        r = self.find(p)
        self.parent[x] = r
        return r

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb

    def classes(self) -> dict:
        out: dict = {}
        for x in list(self.parent):
            out.setdefault(self.find(x), []).append(x)
        return out


def _rename_apart(rule: Rule, q: ConjunctiveQuery) -> Rule:
    fresh = fresh_variable_factory(q.variables, prefix="r")
    sub = {v: fresh() for v in sorted(rule.body_vars | rule.frontier | rule.existentials
                                       | rule.domain_vars, key=lambda v: v.name)}
    return Rule([a.substitute(sub) for a in rule.body], [a.substitute(sub) for a in rule.head],
                [sub[v] for v in rule.domain_vars], label=rule.label)


def one_step_rewrites(q: ConjunctiveQuery, rule: Rule, signature: dict | None = None) -> set:
    """All one-step piece rewritings of ``q`` with a single-head ``rule``."""
    if len(rule.head) != 1:
        raise ValueError("one_step_rewrites needs a single-head rule; use head_split")
    rule = _rename_apart(rule, q)
    head = rule.head[0]
    frontier, existentials = rule.frontier, rule.existentials
    free = set(q.free_vars)
    atoms = sorted(q.body, key=Atom.sort_key)
    cands = [a for a in atoms if a.relation == head.relation and a.arity == head.arity]
    out = set()
    for size in range(1, len(cands) + 1):
        for piece in combinations(cands, size):
            res = _rewrite_piece(q, atoms, piece, rule, head, frontier, existentials, free,
                                 signature)
            out.update(res)
    return out


def _rewrite_piece(q, atoms, piece, rule, head, frontier, existentials, free, signature):
    uf = _UnionFind()
    for a in piece:
        for s, t in zip(a.args, head.args):
            uf.union(s, t)
    rest = [a for a in atoms if a not in piece]
    rest_vars = {t for a in rest for t in a.args}
    classes = uf.classes()
    rep: dict = {}
    for members in classes.values():
        consts = {m for m in members if isinstance(m, Constant)}
        if len(consts) > 1:
            return ()
        ex = [m for m in members if m in existentials]
        if len(ex) > 1:
            return ()
        if ex:
            if consts or any(m in free or m in frontier or m in rest_vars for m in members):
                return ()
        frees = [v for v in q.free_vars if v in members]
        if frees and consts:
            # would bind an answer variable to a constant; not expressible
            return ()
        if consts:
            r = next(iter(consts))
        elif frees:
            r = frees[0]
        else:
            qvars = sorted((m for m in members if m in q.variables), key=lambda v: v.name)
            r = qvars[0] if qvars else min(members, key=lambda v: v.name)
        for m in members:
            rep[m] = r
    new_atoms = {a.substitute(rep) for a in rest}
    new_atoms.update(a.substitute(rep) for a in rule.body)
    free_vars = tuple(rep.get(v, v) for v in q.free_vars)
    dom = [rep.get(v, v) for v in sorted(rule.domain_vars, key=lambda v: v.name)]
    missing = []
    for v in dom:
        if isinstance(v, Variable) and not any(v in a.args for a in new_atoms) and v not in missing:
            missing.append(v)
    if not missing:
        return (canonicalize(ConjunctiveQuery(free_vars, new_atoms)),)
    options = _domain_options(signature or {}, rule, q)
    results = [new_atoms]
    taken = {t for a in new_atoms for t in a.args} | set(q.variables)
    fresh = fresh_variable_factory([t for t in taken if isinstance(t, Variable)], prefix="d")
    for v in missing:
        grown = []
        for base in results:
            for rel, arity, pos in options:
                args = [v if i == pos else fresh() for i in range(arity)]
                grown.append(base | {Atom(rel, args)})
        results = grown
    return tuple(canonicalize(ConjunctiveQuery(free_vars, r)) for r in results)


def _domain_options(signature: dict, rule: Rule, q: ConjunctiveQuery) -> list:
    sig = dict(signature)
    for a in list(q.body) + list(rule.body) + list(rule.head):
        sig.setdefault(a.relation, a.arity)
    return [(rel, ar, pos) for rel, ar in sorted(sig.items()) if not is_aux(rel)
            for pos in range(ar)]


def minimize(queries) -> list:
    """Drop every query contained in another; ties keep the smaller
    (then canonically least) representative."""
    uniq = {}
    for q in queries:
        uniq.setdefault(canonical_key(q), q)
    order = sorted(uniq.items(), key=lambda kv: (kv[1].size, kv[0]))
    kept: list = []
    for key, q in order:
        if any(cq_contains(k, q) for _, k in kept):
            continue
        kept = [(kk, k) for kk, k in kept if not cq_contains(q, k)]
        kept.append((key, q))
    kept.sort(key=lambda kv: (kv[1].size, kv[0]))
    return [q for _, q in kept]


def rewrite(theory: RuleSet, q: ConjunctiveQuery, fuel: int = DEFAULT_FUEL) -> RewriteSet:
    if fuel < 1:
        raise ValueError("fuel must be at least 1")
    rules = head_split(theory)
    signature = dict(theory.signature)
    current = minimize([canonicalize(q)])
    known = {canonical_key(x) for x in current}
    frontier = list(current)
    complete = False
    used = 0
    for rnd in range(1, fuel + 1):
        used = rnd
        produced = []
        for x in frontier:
            for r in rules:
                produced.extend(one_step_rewrites(x, r, signature))
        fresh = [p for p in produced if canonical_key(p) not in known]
        merged = minimize(current + fresh)
        merged_keys = {canonical_key(x) for x in merged}
        frontier = [x for x in merged if canonical_key(x) not in known]
        known |= merged_keys | {canonical_key(p) for p in fresh}
        current = merged
        if not frontier:
            complete = True
            break
    final = [x for x in current if not any(is_aux(a.relation) for a in x.body)]
    return RewriteSet(tuple(final), complete, used)


def unique_up_to_iso(a: RewriteSet, b: RewriteSet) -> bool:
    if not (a.complete and b.complete):
        raise ValueError("both rewritings must be complete")

    def covered(xs, ys):
        return all(any(cq_contains(x, y) and cq_contains(y, x) for y in ys) for x in xs)

    return covered(a.queries, b.queries) and covered(b.queries, a.queries)
