"""Complete rewriting calculus for the grid theories R_d and R_d^K.

A marked query pairs a CQ with a set V of variables that must be mapped to
terms of the original instance; every other variable must be mapped to an
invented term.  Levels are listed top-down: for R_d they are ``("R", "G")``
and for R_d^K they are ``("I<K>", ..., "I1")``.  Level ``i`` (for
``i = K .. 2``) ranks the ``I_{i-1}`` atoms by the cheapest hike over
``I_i``-paths.
"""
from __future__ import annotations

import heapq
import logging
from collections import Counter
from dataclasses import dataclass, field
from itertools import count

from . import kernel
from .chase import DEFAULT_CAP, ChaseRun, chase_to, compile_query
from .model import (
    Atom,
    ConjunctiveQuery,
    Instance,
    Rule,
    RuleSet,
    Variable,
    atom_components,
    canonical_labelling,
    sorted_atoms,
)
from .rewriter import RewriteSet, minimize

log = logging.getLogger(__name__)

LEVELS_RD = ("R", "G")
DEFAULT_STEP_BUDGET = 200_000

RD_TEXT = """\
true -> exists x. R(x,x), G(x,x).
@dom(x) -> exists z,w. R(x,z), G(x,w).
R(x,x1), G(x,u), G(u,u1) -> exists z. R(u1,z), G(x1,z).
"""


class InertQuery(ValueError):
    """Some atom of the query is reached by no hike."""


class OrphanedFreeVariable(ValueError):
    """A cut would leave a free variable without atoms."""


class RankViolation(AssertionError):
    """A process step failed to decrease the rank; an internal invariant breach."""


def levels_K(K: int) -> tuple:
    return tuple(f"I{k}" for k in range(K, 0, -1))


def rd_theory() -> RuleSet:
    from .textio import parse_rules

    labels = ("loop", "pins", "grid")
    return RuleSet(Rule(r.body, r.head, r.domain_vars, label=labels[i])
                   for i, r in enumerate(parse_rules(RD_TEXT).rules))


def gen_theory_K(K: int) -> RuleSet:
    """(loop), (pin_k) for k = 1..K and (grid_i) for i = 1..K-1."""
    if K < 2:
        raise ValueError("K must be at least 2")
    x, z, x1, u, u1 = (Variable(n) for n in ("x", "z", "x1", "u", "u1"))
    rules = [Rule([], [Atom(f"I{k}", (x, x)) for k in range(K, 0, -1)], label="loop")]
    for k in range(K, 0, -1):
        rules.append(Rule([], [Atom(f"I{k}", (x, z))], [x], label=f"pin_{k}"))
    for i in range(1, K):
        hi, lo = f"I{i + 1}", f"I{i}"
        rules.append(Rule(
            [Atom(hi, (x, x1)), Atom(lo, (x, u)), Atom(lo, (u, u1))],
            [Atom(hi, (u1, z)), Atom(lo, (x1, z))],
            label=f"grid_{i}"))
    return RuleSet(rules)


# ----------------------------------------------------------------------
# Marked queries


@dataclass(frozen=True)
class MarkedQuery:
    query: ConjunctiveQuery
    marked: frozenset
    levels: tuple = LEVELS_RD

    def __post_init__(self):
        qv = self.query.variables
        if not set(self.query.free_vars) <= self.marked:
            raise ValueError("free variables must be marked")
        if not self.marked <= qv:
            raise ValueError("marked variables must occur in the query")

    @property
    def atoms(self) -> list:
        return sorted_atoms(self.query.body)

    @property
    def variables(self) -> frozenset:
        return self.query.variables

    @property
    def properly_marked(self) -> bool:
        return not properness_violations(self)

    @property
    def totally_marked(self) -> bool:
        return self.marked == self.query.variables

    @property
    def live(self) -> bool:
        return self.properly_marked and not self.totally_marked

    def key(self) -> str:
        fv = ",".join(f"${self.query.free_vars.index(v)}" for v in self.query.free_vars)
        return f"({fv})" + canonical_labelling(self.query.body, self.query.free_vars,
                                               self.marked)[0]

    def canonical(self) -> "MarkedQuery":
        _, renaming = canonical_labelling(self.query.body, self.query.free_vars, self.marked)
        sub = {v: Variable(f"_{i}") for v, i in renaming.items()}
        q = ConjunctiveQuery(self.query.free_vars, (a.substitute(sub) for a in self.query.body))
        return MarkedQuery(q, frozenset(sub.get(v, v) for v in self.marked), self.levels)

    def __repr__(self):
        from .textio import query_text

        marks = ",".join(sorted(v.name for v in self.marked - set(self.query.free_vars)))
        return f"{query_text(self.query)} [V+={marks}]"


def _check_signature(q: ConjunctiveQuery, levels: tuple):
    for a in q.body:
        if a.relation not in levels or a.arity != 2:
            raise ValueError(f"atom {a} is outside the signature {levels}")
        if any(not isinstance(t, Variable) for t in a.args):
            raise ValueError("marked queries must be constant-free")


def _reaches_self(v, succ) -> bool:
    stack = list(succ.get(v, ()))
    seen = set()
    while stack:
        u = stack.pop()
        if u == v:
            return True
        if u in seen:
            continue
        seen.add(u)
        stack.extend(succ.get(u, ()))
    return False


def properness_violations(Q: MarkedQuery) -> list:
    """Reasons why ``Q`` is not properly marked (empty when it is).

    (i) an edge into a marked variable starts at a marked variable; (ii)
    variables on directed cycles are marked; (iii) two same-relation edges
    into one variable start both marked or both unmarked; (iv) the
    in-edges of an unmarked variable use one relation or two adjacent
    levels.
    """
    V = Q.marked
    out = []
    succ: dict = {}
    into: dict = {}
    for a in Q.query.body:
        s, t = a.args
        succ.setdefault(s, set()).add(t)
        into.setdefault(t, []).append((a.relation, s))
        if t in V and s not in V:
            out.append(("i", a))
    for v in Q.variables - V:
        if _reaches_self(v, succ):
            out.append(("ii", v))
    for t, edges in into.items():
        by_rel: dict = {}
        for rel, s in edges:
            by_rel.setdefault(rel, set()).add(s in V)
        for rel, flags in by_rel.items():
            if len(flags) > 1:
                out.append(("iii", t))
        if t not in V and len(by_rel) > 1:
            idx = sorted(Q.levels.index(r) for r in by_rel)
            if len(idx) != 2 or idx[1] != idx[0] + 1:
                out.append(("iv", t))
    return out


def initial_markings(q: ConjunctiveQuery, levels: tuple = LEVELS_RD) -> list:
    """All properly marked markings of ``q`` (free variables always marked)."""
    if q.is_boolean:
        raise ValueError("Boolean queries are handled upstream")
    if not q.is_connected:
        raise ValueError("query must be connected")
    _check_signature(q, levels)
    bound = sorted(q.bound_vars, key=lambda v: v.name)
    free = frozenset(q.free_vars)
    out = {}
    for mask in range(1 << len(bound)):
        V = free | {v for j, v in enumerate(bound) if mask >> j & 1}
        Q = MarkedQuery(q, frozenset(V), levels)
        if Q.properly_marked:
            c = Q.canonical()
            out.setdefault(c.key(), c)
    return [out[k] for k in sorted(out)]


# ----------------------------------------------------------------------
# Maximal variables and the operations


@dataclass(frozen=True)
class MaximalCase:
    variable: Variable
    kind: str  # single_edge | red_green_pair | duplicate_targets | inert
    relation: str = ""
    sources: tuple = ()
    level: int = 0  # for red_green_pair: i with in-edges I_{i+1}, I_i


def _var_order(v: Variable):
    n = v.name
    if n.startswith("_") and n[1:].isdigit():
        return (0, int(n[1:]), "")
    return (1, 0, n)


def maximal_variables(Q: MarkedQuery) -> list:
    has_out = {a.args[0] for a in Q.query.body}
    return sorted((v for v in Q.variables - Q.marked if v not in has_out), key=_var_order)


def classify(Q: MarkedQuery, x: Variable) -> MaximalCase:
    edges = [(a.relation, a.args[0]) for a in Q.atoms if a.args[1] == x]
    by_rel: dict = {}
    for rel, s in edges:
        by_rel.setdefault(rel, []).append(s)
    for rel in Q.levels:
        srcs = sorted(set(by_rel.get(rel, ())), key=_var_order)
        if len(srcs) >= 2:
            return MaximalCase(x, "duplicate_targets", rel, (srcs[0], srcs[1]))
    if len(edges) == 1:
        return MaximalCase(x, "single_edge", edges[0][0], (edges[0][1],))
    if len(edges) == 2:
        (r1, s1), (r2, s2) = edges
        i1, i2 = Q.levels.index(r1), Q.levels.index(r2)
        if abs(i1 - i2) == 1:
            hi, lo = ((r1, s1), (r2, s2)) if i1 < i2 else ((r2, s2), (r1, s1))
            level = len(Q.levels) - Q.levels.index(lo[0])
            return MaximalCase(x, "red_green_pair", hi[0], (hi[1], lo[1]), level)
    return MaximalCase(x, "inert", "", tuple(s for _, s in edges))


def classify_maximal(Q: MarkedQuery) -> list:
    if not Q.live:
        raise ValueError("classify_maximal needs a live query")
    cases = [classify(Q, x) for x in maximal_variables(Q)]
    if not any(c.kind != "inert" for c in cases):
        raise AssertionError("live query without an applicable operation")
    return cases


def cut(Q: MarkedQuery, x: Variable, relation: str) -> MarkedQuery:
    c = classify(Q, x)
    if x not in maximal_variables(Q) or c.kind != "single_edge" or c.relation != relation:
        raise ValueError("cut precondition violated")
    atom = Atom(relation, (c.sources[0], x))
    body = Q.query.body - {atom}
    left = {t for a in body for t in a.args}
    if any(v not in left for v in Q.query.free_vars):
        raise OrphanedFreeVariable(f"cutting {atom} orphans a free variable")
    # a marked variable left without atoms only asks for a nonempty dom(D)
    q = ConjunctiveQuery(Q.query.free_vars, body)
    return MarkedQuery(q, Q.marked & left, Q.levels)


def fuse(Q: MarkedQuery, x: Variable, z: Variable, z2: Variable, relation: str) -> MarkedQuery:
    if x not in maximal_variables(Q):
        raise ValueError("fuse precondition violated")
    if Atom(relation, (z, x)) not in Q.query.body or Atom(relation, (z2, x)) not in Q.query.body \
            or z == z2:
        raise ValueError("fuse precondition violated")
    free = Q.query.free_vars
    if z2 in free and z not in free:
        z, z2 = z2, z
    sub = {z2: z}
    q = ConjunctiveQuery(tuple(sub.get(v, v) for v in free),
                         (a.substitute(sub) for a in Q.query.body))
    return MarkedQuery(q, frozenset(sub.get(v, v) for v in Q.marked), Q.levels)


def fuse_renaming(Q: MarkedQuery, z: Variable, z2: Variable) -> dict:
    free = Q.query.free_vars
    if z2 in free and z not in free:
        z, z2 = z2, z
    return {z2: z}


def reduce(Q: MarkedQuery, x: Variable) -> list:
    """Replace I_{i+1}(x_r,x), I_i(x_g,x) by I_i(x',x''), I_i(x'',x_r),
    I_{i+1}(x',x_g) under the four markings; keep the properly marked ones."""
    c = classify(Q, x)
    if x not in maximal_variables(Q) or c.kind != "red_green_pair":
        raise ValueError("reduce precondition violated")
    hi = c.relation
    lo = Q.levels[Q.levels.index(hi) + 1]
    xr, xg = c.sources
    names = {v.name for v in Q.variables}
    k = 0
    while f"n{k}" in names or f"n{k + 1}" in names:
        k += 1
    x1, x2 = Variable(f"n{k}"), Variable(f"n{k + 1}")
    body = (Q.query.body - {Atom(hi, (xr, x)), Atom(lo, (xg, x))}) | {
        Atom(lo, (x1, x2)), Atom(lo, (x2, xr)), Atom(hi, (x1, xg))}
    q = ConjunctiveQuery(Q.query.free_vars, body)
    out = []
    for extra in ((), (x1,), (x1, x2), (x2,)):
        R = MarkedQuery(q, Q.marked | frozenset(extra), Q.levels)
        if R.properly_marked:
            out.append(R)
    return out


def reduce_new_vars(Q: MarkedQuery, R: MarkedQuery) -> tuple:
    new = sorted(R.variables - Q.variables, key=lambda v: v.name)
    return tuple(new)


# ----------------------------------------------------------------------
# Ranks


def _level_rels(levels: tuple, i: int) -> tuple:
    """(I_i, I_{i-1}) relation names for level i."""
    K = len(levels)
    return levels[K - i], levels[K - i + 1]


def _hike_search(Q: MarkedQuery, i: int, want_pred: bool = False):
    top, low = _level_rels(Q.levels, i)
    atoms = Q.atoms
    tops = [a for a in atoms if a.relation == top]
    tindex = {a: j for j, a in enumerate(tops)}
    n_top = len(tops)
    inc: dict = {}
    for a in atoms:
        s, t = a.args
        inc.setdefault(s, []).append((a, t, 1))
        inc.setdefault(t, []).append((a, s, 2))
    start_used = (0,) * n_top
    dist: dict = {}
    pred: dict = {}
    heap = []
    tie = count()
    for v in sorted(Q.marked, key=_var_order):
        st = (v, start_used, 0)
        dist[st] = 0
        heapq.heappush(heap, (0, next(tie), st))
    while heap:
        d, _, st = heapq.heappop(heap)
        if dist.get(st, None) != d:
            continue
        v, used, exp = st
        for a, w, direction in inc.get(v, ()):
            if a.relation == top:
                j = tindex[a]
                if used[j]:
                    continue
                nu = used[:j] + (direction,) + used[j + 1:]
                nst = (w, nu, exp + (1 if direction == 1 else -1))
                nd = d
            elif a.relation == low:
                nst = (w, used, exp)
                nd = d + 3 ** (n_top + exp)
            else:
                nst = (w, used, exp)
                nd = d
            if nd < dist.get(nst, nd + 1):
                dist[nst] = nd
                if want_pred:
                    pred[nst] = (st, a, direction)
                heapq.heappush(heap, (nd, next(tie), nst))
    return dist, pred, n_top, low


def level_erks(Q: MarkedQuery, i: int) -> dict:
    """erk_i of every I_{i-1} atom: least hike cost over I_i-paths."""
    if not Q.marked:
        raise ValueError("ranks need a nonempty marked set")
    dist, _, n_top, low = _hike_search(Q, i)
    best: dict = {}
    ends: dict = {}
    for a in Q.atoms:
        if a.relation == low:
            ends.setdefault(a.args[0], []).append(a)
            if a.args[1] != a.args[0]:
                ends.setdefault(a.args[1], []).append(a)
    for (v, used, exp), d in dist.items():
        for a in ends.get(v, ()):
            c = d + 3 ** (n_top + exp)
            if c < best.get(a, c + 1):
                best[a] = c
    return best


def erk(Q: MarkedQuery, alpha: Atom, level: int | None = None) -> int:
    if level is None:
        level = 2
    ranks = level_erks(Q, level)
    if alpha not in ranks:
        raise ValueError(f"no hike reaches {alpha}")
    return ranks[alpha]


def erk_witness(Q: MarkedQuery, alpha: Atom, level: int = 2) -> list:
    """A cheapest alpha-hike as a list of (atom, direction) steps;
    direction 1 is forward, 2 is inverse."""
    dist, pred, n_top, low = _hike_search(Q, level, want_pred=True)
    best = None
    for st, d in dist.items():
        v, used, exp = st
        for direction, endpoint in ((1, alpha.args[0]), (2, alpha.args[1])):
            if v == endpoint:
                c = d + 3 ** (n_top + exp)
                if best is None or c < best[0]:
                    best = (c, st, direction)
    if best is None:
        raise ValueError(f"no hike reaches {alpha}")
    _, st, direction = best
    steps = [(alpha, direction)]
    while st in pred:
        st, a, dirn = pred[st]
        steps.append((a, dirn))
    steps.reverse()
    return steps


def multiset_less(a, b, less=None) -> bool:
    """Dershowitz-Manna order: ``a <_m b``."""
    less = less or (lambda x, y: x < y)
    ca, cb = Counter(a), Counter(b)
    if ca == cb:
        return False
    up = ca - cb
    down = cb - ca
    return all(any(less(x, y) for y in down) for x in up)


@dataclass(frozen=True)
class RankValue:
    """⟨|Q_K|, qrk_K, ..., |Q_2|, qrk_2⟩; multisets as descending tuples."""

    parts: tuple

    @property
    def red_count(self) -> int:
        return self.parts[0][0]

    @property
    def green_ranks(self) -> tuple:
        return self.parts[0][1]

    def __repr__(self):
        return "⟨" + "; ".join(f"{c}, {{{','.join(map(str, m))}}}" for c, m in self.parts) + "⟩"


def rank_less(a: RankValue, b: RankValue) -> bool:
    for (ca, ma), (cb, mb) in zip(a.parts, b.parts):
        if ca != cb:
            return ca < cb
        if Counter(ma) != Counter(mb):
            return multiset_less(ma, mb)
    return False


def qrk(Q: MarkedQuery) -> RankValue:
    K = len(Q.levels)
    parts = []
    for i in range(K, 1, -1):
        top, low = _level_rels(Q.levels, i)
        n_top = sum(1 for a in Q.query.body if a.relation == top)
        ranks = level_erks(Q, i)
        lows = [a for a in Q.query.body if a.relation == low]
        if len(ranks) != len(lows):
            raise InertQuery("unreachable atom: query is inert")
        parts.append((n_top, tuple(sorted(ranks.values(), reverse=True))))
    return RankValue(tuple(parts))


def srk(S) -> list:
    return sorted((qrk(Q) for Q in S), key=lambda r: r.parts)


def srk_less(a, b) -> bool:
    return multiset_less(a, b, rank_less)


# ----------------------------------------------------------------------
# Clause checks for one application (R_d levels)


def clause_violations(Q: MarkedQuery, case: MaximalCase, results: list) -> list:
    """Check the per-operation rank clauses; returns messages for failures."""
    out = []
    K = len(Q.levels)
    top, low = _level_rels(Q.levels, K)
    before = qrk(Q)
    erk_q = level_erks(Q, K)
    for R in results:
        try:
            after = qrk(R)
        except InertQuery:
            continue
        if not rank_less(after, before):
            out.append(f"rank did not decrease: {before} -> {after}")
        if K != 2:
            continue
        erk_r = level_erks(R, K)
        if case.kind == "single_edge" and case.relation == top:
            if not after.red_count < before.red_count:
                out.append("cut-red kept the red count")
        elif case.kind == "single_edge":
            if after.red_count != before.red_count:
                out.append("cut-green changed the red count")
            removed = Atom(low, (case.sources[0], case.variable))
            for a, e in erk_q.items():
                if a != removed and erk_r.get(a, e + 1) > e:
                    out.append(f"cut-green increased erk of {a}")
        elif case.kind == "duplicate_targets" and case.relation == top:
            if not after.red_count < before.red_count:
                out.append("fuse-red kept the red count")
        elif case.kind == "duplicate_targets":
            sub = fuse_renaming(Q, *case.sources)
            if after.red_count > before.red_count:
                out.append("fuse-green increased the red count")
            elif after.red_count == before.red_count:
                for a, e in erk_q.items():
                    b = a.substitute(sub)
                    if erk_r.get(b, e + 1) > e:
                        out.append(f"fuse-green increased erk of {a}")
        elif case.kind == "red_green_pair":
            if after.red_count != before.red_count:
                out.append("reduce changed the red count")
            xr, xg = case.sources
            removed = Atom(low, (xg, case.variable))
            x1, x2 = reduce_new_vars(Q, R)
            for new in (Atom(low, (x1, x2)), Atom(low, (x2, xr))):
                if not erk_r[new] < erk_q[removed]:
                    out.append(f"reduce: new atom {new} not below the removed one")
            for a, e in erk_q.items():
                if a != removed and erk_r.get(a, e + 1) > e:
                    out.append(f"reduce increased erk of {a}")
    return out


# ----------------------------------------------------------------------
# The process


@dataclass(frozen=True)
class TraceStep:
    index: int
    operation: str
    query: str
    variable: str
    results: tuple
    rank_before: RankValue
    rank_afters: tuple
    domain_step: bool = False


@dataclass
class ProcessResult:
    rewriting: RewriteSet
    trace: list = field(default_factory=list)
    steps: int = 0
    final: list = field(default_factory=list)


def op_name(case: MaximalCase, levels: tuple) -> str:
    if levels == LEVELS_RD:
        color = {"R": "red", "G": "green"}.get(case.relation, case.relation)
        return {"single_edge": f"cut-{color}", "duplicate_targets": f"fuse-{color}",
                "red_green_pair": "reduce"}[case.kind]
    return {"single_edge": f"cut[{case.relation}]",
            "duplicate_targets": f"fuse[{case.relation}]",
            "red_green_pair": f"reduce[{case.level}]"}[case.kind]


def apply_case(Q: MarkedQuery, case: MaximalCase) -> list:
    if case.kind == "single_edge":
        return [cut(Q, case.variable, case.relation)]
    if case.kind == "duplicate_targets":
        return [fuse(Q, case.variable, case.sources[0], case.sources[1], case.relation)]
    if case.kind == "red_green_pair":
        return reduce(Q, case.variable)
    raise ValueError("no operation for an inert variable")


def domain_queries(Q: MarkedQuery, v: Variable) -> list:
    """Totally marked single-edge queries saying that the free variable
    ``v`` lies in dom(D); used when a cut would leave ``v`` without atoms."""
    w = Variable("w" if v.name != "w" else "w1")
    out = []
    for rel in Q.levels:
        for args in ((v, w), (w, v)):
            q = ConjunctiveQuery(Q.query.free_vars, [Atom(rel, args)])
            out.append(MarkedQuery(q, frozenset({v, w}), Q.levels))
    return out


def select_case(Q: MarkedQuery) -> MaximalCase:
    cases = classify_maximal(Q)
    for c in cases:
        if c.kind != "inert":
            return c
    raise AssertionError("unreachable")


def _run(q: ConjunctiveQuery, levels: tuple, check_clauses: bool, step_budget: int,
         keep_trace: bool) -> ProcessResult:
    S: dict = {}
    for Q in initial_markings(q, levels):
        S[Q.key()] = Q
    ranks: dict = {}

    def rank_of(key, Q):
        r = ranks.get(key)
        if r is None:
            r = ranks[key] = qrk(Q)
        return r

    trace = []
    steps = 0
    live = {k for k, Q in S.items() if Q.live}
    while live:
        steps += 1
        if steps > step_budget:
            raise RuntimeError(f"process exceeded {step_budget} steps")
        key = min(live)
        Q = S[key]
        case = select_case(Q)
        orphan = False
        try:
            raw = [R for R in apply_case(Q, case) if R.properly_marked]
        except OrphanedFreeVariable:
            raw, orphan = domain_queries(Q, case.sources[0]), True
        before = rank_of(key, Q)
        if check_clauses and not orphan:
            problems = clause_violations(Q, case, raw)
            if problems:
                raise RankViolation(f"step {steps} on {Q}: {problems}")
        results = []
        for R in raw:
            c = R.canonical()
            results.append((c.key(), c))
        afters = []
        removed = [before]
        added = []
        del S[key]
        live.discard(key)
        for k, R in results:
            try:
                r = rank_of(k, R)
            except InertQuery:
                log.info("discarding inert query %s", R)
                continue
            afters.append(r)
            if not orphan and not rank_less(r, before):
                raise RankViolation(f"step {steps}: {r} not below {before}")
            if k not in S:
                S[k] = R
                added.append(r)
                if R.live:
                    live.add(k)
        # domain queries are totally marked, so that step ends a branch
        if not orphan and not srk_less(added, removed):
            raise RankViolation(f"step {steps}: srk did not decrease")
        if keep_trace:
            trace.append(TraceStep(steps, op_name(case, levels), key, case.variable.name,
                                   tuple(k for k, _ in results), before, tuple(afters),
                                   orphan))
    final = [S[k] for k in sorted(S)]
    queries = minimize(Q.query for Q in final)
    return ProcessResult(RewriteSet(tuple(queries), True, steps), trace, steps, final)


def run_process(q: ConjunctiveQuery, check_clauses: bool = True,
                step_budget: int = DEFAULT_STEP_BUDGET, keep_trace: bool = True) -> ProcessResult:
    """Rewrite ``q`` under R_d with the marked-query calculus."""
    _check_signature(q, LEVELS_RD)
    return _run(q, LEVELS_RD, check_clauses, step_budget, keep_trace)


def run_process_K(K: int, q: ConjunctiveQuery, check_clauses: bool = True,
                  step_budget: int = DEFAULT_STEP_BUDGET,
                  keep_trace: bool = True) -> ProcessResult:
    """Rewrite ``q`` under R_d^K (relations I1..IK)."""
    levels = levels_K(K)
    _check_signature(q, levels)
    return _run(q, levels, check_clauses, step_budget, keep_trace)


# ----------------------------------------------------------------------
# Marked satisfaction


def marked_checks(Q: MarkedQuery, slots: dict, dom) -> list:
    dom = frozenset(dom)
    checks = [None] * len(slots)
    for v, s in slots.items():
        checks[s] = (v in Q.marked, dom)
    return checks


def satisfies_marked(theory: RuleSet, D: Instance, Q: MarkedQuery, args=(), depth: int = 0,
                     run: ChaseRun | None = None, cap: int = DEFAULT_CAP) -> bool:
    """Whether some match of ``Q`` into Ch_depth(D) sends marked variables
    into dom(D), unmarked ones outside it, and free variables to ``args``."""
    if run is None:
        run = chase_to(theory, D, depth, cap=cap)
    store = run.store if run.depth <= depth else run.stage_store(depth)
    dom = D.active_domain
    patterns, slots = compile_query(Q.query)
    b = [None] * len(slots)
    for v, t in zip(Q.query.free_vars, args):
        if t not in dom:
            return False
        s = slots[v]
        if b[s] is not None and b[s] != t:
            return False
        b[s] = t
    return bool(kernel.match(patterns, store.rels, store.index, b,
                             marked_checks(Q, slots, dom), 1))


def marked_answers(Q: MarkedQuery, store, dom) -> set:
    patterns, slots = compile_query(Q.query)
    res = kernel.match(patterns, store.rels, store.index, [None] * len(slots),
                       marked_checks(Q, slots, dom))
    fs = [slots[v] for v in Q.query.free_vars]
    return {tuple(m[s] for s in fs) for m in res}


def connected_components(q: ConjunctiveQuery) -> list:
    return atom_components(q.body)
