"""Normalization of binary theories and existential-skeleton probes.

The pipeline rewrites the bodies of existential rules, splits off the
parts of a body that are disconnected from the frontier into nullary
``M`` predicates, and proves those predicates with rewritten Datalog
rules.  Probes compare existential skeletons of the chase before and after
normalization and count the instance atoms each skeleton tree depends on.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .chase import DEFAULT_CAP, ChaseRun, chase_to
from .model import (
    Atom,
    ConjunctiveQuery,
    Instance,
    Rule,
    RuleSet,
    Skolem,
    atom_components,
    canonical_key,
    canonicalize,
    fresh_variable_factory,
    rule_shape_key,
    sorted_atoms,
)
from .rewriter import DEFAULT_FUEL, IncompleteRewriting, rewrite

M_PREFIX = "M__"
M_EMPTY = M_PREFIX + "empty"


@dataclass(frozen=True)
class Taxonomy:
    datalog: RuleSet
    existential: RuleSet
    detached: tuple
    sensible: tuple


def _check_binary(theory: RuleSet):
    for rel, ar in theory.signature.items():
        if ar > 2:
            raise ValueError(f"relation {rel} has arity {ar}; a binary signature is required")


def split_taxonomy(theory: RuleSet) -> Taxonomy:
    _check_binary(theory)
    dl = [r for r in theory if r.is_datalog]
    ex = [r for r in theory if r.is_existential]
    return Taxonomy(RuleSet(dl), RuleSet(ex), tuple(r for r in ex if r.is_detached),
                    tuple(r for r in ex if r.is_sensible))


def _frontier_order(rule: Rule) -> tuple:
    return tuple(sorted(rule.frontier, key=lambda v: v.name))


def body_rewriting(rule: Rule, theory: RuleSet, fuel: int = DEFAULT_FUEL) -> list:
    """Rew(rule): one rule per disjunct of the rewriting of the body with the
    frontier variables free; the head is kept."""
    if rule.domain_vars:
        raise ValueError("rules with active-domain variables are not normalized")
    if fuel < 1:
        raise ValueError("fuel must be at least 1")
    fr = tuple(v for v in _frontier_order(rule) if v in rule.body_vars)
    q = ConjunctiveQuery(fr, rule.body)
    rs = rewrite(theory, q, fuel)
    if not rs.complete:
        raise IncompleteRewriting(f"rewriting of the body of {rule} did not close within fuel {fuel}")
    head_vars = {v for a in rule.head for v in a.args}
    out = []
    for r in rs.queries:
        fresh = fresh_variable_factory(head_vars | r.variables, prefix="b")
        sub = {}
        for old, new in zip(fr, r.free_vars):
            sub[old] = new
        for v in sorted(r.bound_vars, key=lambda v: v.name):
            if v in head_vars:
                sub[v] = fresh()
        body = [a.substitute(sub) for a in r.body]
        head = [a.substitute(sub) for a in rule.head]
        out.append(Rule(body, head, label=rule.label))
    return out


def _nullary(a: Atom) -> bool:
    return a.arity == 0


class MTable:
    """Nullary predicates keyed by the canonical form of a Boolean CQ."""

    def __init__(self):
        self.by_key: dict = {}
        self.queries: dict = {}

    def name_for(self, atoms) -> str:
        atoms = list(atoms)
        if not atoms:
            return M_EMPTY
        q = ConjunctiveQuery((), atoms)
        key = canonical_key(q)
        name = self.by_key.get(key)
        if name is None:
            name = f"{M_PREFIX}{len(self.by_key) + 1}"
            self.by_key[key] = name
            self.queries[name] = canonicalize(q)
        return name


def body_separation(rule: Rule, table: MTable | None = None) -> tuple:
    """(sep_cc, sep_M): the frontier component of the body keeps the head,
    the remainder is encapsulated in a nullary predicate."""
    table = table if table is not None else MTable()
    if not rule.is_existential:
        raise ValueError("body separation applies to existential rules only")
    if any(_nullary(a) for a in rule.body):
        raise ValueError("bodies must not contain nullary atoms")
    comps = atom_components(rule.body)
    fr = rule.frontier
    with_frontier = [c for c in comps if any(v in fr for a in c for v in a.args)]
    if len(with_frontier) > 1:
        raise ValueError(f"frontier of {rule} spans {len(with_frontier)} body components")
    beta = list(with_frontier[0]) if with_frontier else []
    phi = [a for c in comps if c not in with_frontier for a in c]
    if not beta and not fr:
        # detached rule: the whole body becomes the nullary condition
        phi = list(rule.body)
    name = table.name_for(phi)
    m = Atom(name, ())
    sep_cc = Rule(beta + [m], rule.head, label=rule.label)
    sep_m = Rule(phi, [m], label=f"sep:{name}")
    return sep_cc, sep_m


@dataclass(frozen=True)
class NormalizedTheory:
    t_nf: RuleSet
    t_ii: RuleSet
    t_iii: RuleSet
    m_predicates: dict
    t_i: RuleSet = field(default=None, compare=False)

    def m_query(self, name: str) -> ConjunctiveQuery | None:
        return self.m_predicates.get(name)


def normalize(theory: RuleSet, fuel: int = DEFAULT_FUEL) -> NormalizedTheory:
    _check_binary(theory)
    tax = split_taxonomy(theory)
    t_i = []
    for r in tax.existential:
        t_i.extend(body_rewriting(r, theory, fuel))
    table = MTable()
    t_ii, seps = [], []
    for r in t_i:
        cc, sm = body_separation(r, table)
        t_ii.append(cc)
        seps.append(sm)
    t_iii: dict = {}
    for sm in seps:
        for r in _rewrite_nullary(sm, theory, fuel):
            t_iii.setdefault(_rule_key(r), r)
    t_ii_d: dict = {}
    for r in t_ii:
        t_ii_d.setdefault(_rule_key(r), r)
    rii = RuleSet(t_ii_d.values())
    riii = RuleSet(t_iii[k] for k in sorted(t_iii))
    preds = dict(table.queries)
    if any(M_EMPTY in {a.relation for a in r.body} for r in rii):
        preds[M_EMPTY] = ConjunctiveQuery((), ())
    return NormalizedTheory(RuleSet(list(rii) + list(riii)), rii, riii, preds, RuleSet(t_i))


def _rewrite_nullary(sep_m: Rule, theory: RuleSet, fuel: int) -> list:
    if not sep_m.body:
        return [sep_m]
    q = ConjunctiveQuery((), sep_m.body)
    rs = rewrite(theory, q, fuel)
    if not rs.complete:
        raise IncompleteRewriting(f"rewriting of {sep_m} did not close within fuel {fuel}")
    return [Rule(r.body, sep_m.head, label=sep_m.label) for r in rs.queries]


def _rule_key(r: Rule) -> str:
    return rule_shape_key(r)


# ----------------------------------------------------------------------
# Existential skeleton


def existential_atoms(run: ChaseRun) -> set:
    """Atoms (outside the start instance) produced by an existential rule."""
    if run.producers is None:
        raise ValueError("the run must be recorded")
    ex = {i for i, r in enumerate(run.theory.rules) if r.is_existential}
    return {a for a, ps in run.producers.items()
            if ps & ex and a not in run.start.facts and a.arity > 0}


def skeleton(run: ChaseRun) -> Instance:
    return Instance(existential_atoms(run) | set(run.start.facts))


@dataclass(frozen=True)
class Forest:
    roots: frozenset
    parent: dict
    children: dict
    root_of: dict
    max_out_degree: int

    def tree_atoms(self, atoms, root) -> list:
        return sorted_atoms(a for a in atoms
                            if a.args and all(self.root_of.get(t) == root for t in a.args))


def existential_skeleton(run: ChaseRun) -> tuple:
    """(Ch^∃, forest) for a recorded run over a binary theory.

    Every invented term hangs under the unique frontier term of the
    application that created it; terms invented by detached rules, and
    the constants of the start instance, are roots.
    """
    _check_binary(run.theory)
    skel = skeleton(run)
    dom = run.start.active_domain
    parent: dict = {}
    roots = set(dom)
    for t in skel.active_domain:
        if t in dom:
            continue
        if not isinstance(t, Skolem):
            raise AssertionError(f"unexpected term {t} in the skeleton")
        if not t.args:
            roots.add(t)
        elif len(set(t.args)) == 1:
            parent[t] = t.args[0]
        else:
            raise AssertionError(f"term {t} has more than one frontier term")
    n_ex = sum(1 for r in run.theory if r.is_existential)
    children: dict = {}
    for c, p in parent.items():
        children.setdefault(p, set()).add(c)
    out_deg = 0
    for p, cs in children.items():
        apps = {c.tag for c in cs}
        out_deg = max(out_deg, len(apps))
    if out_deg > n_ex:
        raise AssertionError("forest out-degree exceeds the number of existential rules")
    root_of: dict = {}
    for t in skel.active_domain:
        r, seen = t, set()
        while r in parent:
            if r in seen:
                raise AssertionError("cycle in the skeleton forest")
            seen.add(r)
            r = parent[r]
        if r not in roots:
            raise AssertionError(f"term {t} does not reach a root")
        root_of[t] = r
    for a in existential_atoms(run):
        if len({root_of[t] for t in a.args}) > 1:
            raise AssertionError(f"sensible atom {a} joins two trees")
    return skel, Forest(frozenset(roots), parent, children, root_of, out_deg)


# ----------------------------------------------------------------------
# Ancestors


@dataclass
class AncestorTrace:
    parent: dict
    start: frozenset
    _anc: dict = field(default_factory=dict, repr=False)
    _canc: dict = field(default_factory=dict, repr=False)

    def ancestors(self, a: Atom) -> frozenset:
        return self._walk(a, self._anc, connected=False)

    def connected_ancestors(self, a: Atom) -> frozenset:
        return self._walk(a, self._canc, connected=True)

    def _walk(self, a, memo, connected):
        if a in memo:
            return memo[a]
        order, stack, seen = [], [a], set()
        while stack:
            x = stack.pop()
            if x in seen or x in memo:
                continue
            seen.add(x)
            order.append(x)
            if x not in self.start:
                stack.extend(p for p in self.parent[x] if not (connected and _nullary(p)))
        for x in reversed(order):
            if x in memo:
                continue
            if x in self.start:
                memo[x] = frozenset([x])
                continue
            acc = set()
            for p in self.parent[x]:
                if connected and _nullary(p):
                    continue
                acc |= memo[p] if p in memo else self._walk(p, memo, connected)
            memo[x] = frozenset(acc)
        return memo[a]


def ancestor_trace(run: ChaseRun, rng: random.Random | None = None) -> AncestorTrace:
    """Parents from the first-creation applications: the canonically first
    one, or a random one when ``rng`` is given."""
    if run.parents is None:
        raise ValueError("the run must be recorded")
    par = {}
    for a, apps in run.parents.items():
        _, body = apps[0] if rng is None else apps[rng.randrange(len(apps))]
        par[a] = frozenset(body)
    return AncestorTrace(par, frozenset(run.start.facts))


@dataclass(frozen=True)
class AncestorConstants:
    k: int
    h: int
    n: int
    N: int
    M: int

    @classmethod
    def of(cls, theory: RuleSet) -> "AncestorConstants":
        k = len({a.relation for r in theory for a in list(r.body) + list(r.head) if _nullary(a)})
        h = max((len(r.body) for r in theory), default=0)
        n = len(theory)
        N = sum(n ** d for d in range(h + 1))
        return cls(k, h, n, N, N * h + k * h)


@dataclass(frozen=True)
class AncestorReport:
    counts: dict
    bound: int
    within_bound: bool
    samples: int


def root_ancestor_counts(run: ChaseRun, trace: AncestorTrace) -> dict:
    skel, forest = existential_skeleton(run)
    ex = existential_atoms(run)
    out = {}
    for root in sorted(forest.roots, key=lambda t: t.sort_key()):
        acc = set()
        for a in forest.tree_atoms(ex, root):
            acc |= trace.ancestors(a)
        out[root] = len(acc)
    return out


def ancestor_probe(run: ChaseRun, consts: AncestorConstants, samples: int = 10,
                   seed: int = 0) -> AncestorReport:
    """Max over parent choices of |∪_{α∈S(t)} anc(α)| per root t."""
    rng = random.Random(seed)
    counts = root_ancestor_counts(run, ancestor_trace(run))
    for _ in range(samples):
        for t, c in root_ancestor_counts(run, ancestor_trace(run, rng)).items():
            counts[t] = max(counts.get(t, 0), c)
    ok = all(c <= consts.M for c in counts.values())
    return AncestorReport(counts, consts.M, ok, samples)


# ----------------------------------------------------------------------
# Bounded-depth stage checks


def skeleton_equivalence(theory: RuleSet, nf: NormalizedTheory, D: Instance, depth: int,
                         slack: int = 2, converse_factor: int = 3,
                         cap: int = DEFAULT_CAP) -> tuple:
    """(forward, converse): Ch^∃_i(T) ⊆ Ch^∃_{i+slack}(T_NF) for i ≤ depth,
    and Ch^∃_depth(T_NF) ⊆ Ch^∃_{converse_factor·depth}(T)."""
    big = max(depth + slack, converse_factor * depth)
    rt = chase_to(theory, D, big, cap=cap, record=True)
    rn = chase_to(nf.t_nf, D, big, cap=cap, record=True)
    ex_t = existential_atoms(rt)
    ex_n = existential_atoms(rn)
    forward = all(
        {a for a in ex_t if rt.stage_of[a] <= i} <= {a for a in ex_n if rn.stage_of[a] <= i + slack}
        for i in range(depth + 1))
    converse = {a for a in ex_n if rn.stage_of[a] <= depth} <= ex_t
    return forward, converse


def nullary_one_step(nf: NormalizedTheory, D: Instance, depth: int,
                     cap: int = DEFAULT_CAP) -> bool:
    run = chase_to(nf.t_nf, D, depth, cap=cap)
    return all(run.stage_of[a] <= 1 for a in run.store.facts if _nullary(a))


def detached_two_step(nf: NormalizedTheory, D: Instance, depth: int,
                      cap: int = DEFAULT_CAP) -> bool:
    run = chase_to(nf.t_nf, D, depth, cap=cap)
    for a in run.store.facts:
        if any(isinstance(t, Skolem) and not t.args for t in a.args):
            if all(isinstance(t, Skolem) and not t.args for t in a.args) and run.stage_of[a] > 2:
                return False
    return True


def datalog_over_skeleton(theory: RuleSet, nf: NormalizedTheory, D: Instance, depth: int,
                          factor: int = 3, cap: int = DEFAULT_CAP) -> bool:
    """Ch(T_DL, Ch^∃(T_NF,D) ∪ D) = Ch(T,D), both restricted to the terms of
    Ch_depth(T,D); the chases run to ``factor·depth`` so that late facts
    about those terms have arrived."""
    tax = split_taxonomy(theory)
    big = factor * max(depth, 1)
    terms = chase_to(theory, D, depth, cap=cap).last.active_domain
    rn = chase_to(nf.t_nf, D, big, cap=cap, record=True)
    base = Instance(existential_atoms(rn) | set(D.facts))
    left = chase_to(tax.datalog, base, 10 ** 6, cap=cap).last.restrict(terms)
    right = chase_to(theory, D, big, cap=cap).last.restrict(terms)
    left = Instance(a for a in left if a.arity > 0)
    right = Instance(a for a in right if a.arity > 0)
    return left == right


def estimate_n_at(run: ChaseRun) -> int:
    """Largest delay between the birth of an atom's newest term and the atom."""
    out = 0
    for a, s in run.stage_of.items():
        born = max((run.term_stage[t] for t in a.args), default=0)
        out = max(out, s - born)
    return out


def datalog_ancestor_bound(theory: RuleSet, D: Instance, depth: int,
                           cap: int = DEFAULT_CAP) -> tuple:
    """(ok, n_at, largest ancestor set): every atom of Ch(T_DL, D) has at
    most h^{n_at} ancestors, with n_at measured on Ch_depth(T, D)."""
    tax = split_taxonomy(theory)
    n_at = estimate_n_at(chase_to(theory, D, depth, cap=cap))
    h = max((len(r.body) + len(r.head) for r in theory), default=1)
    run = chase_to(tax.datalog, D, depth, cap=cap, record=True)
    trace = ancestor_trace(run)
    worst = max((len(trace.ancestors(a)) for a in run.store.facts), default=0)
    return worst <= h ** n_at, n_at, worst
