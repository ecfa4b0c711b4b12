"""Homomorphisms, CQ containment, model checking and chase cores."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from . import kernel
from .chase import DEFAULT_CAP, ChaseRun, CompiledRule, all_matches, chase_to
from .model import (
    Atom,
    ConjunctiveQuery,
    FactStore,
    Instance,
    RuleSet,
    Term,
    Variable,
    format_term,
    sorted_atoms,
)


@dataclass(frozen=True)
class Hom:
    mapping: dict
    fixed: frozenset = frozenset()

    def __call__(self, t: Term) -> Term:
        return self.mapping.get(t, t)

    def image(self, inst: Instance) -> Instance:
        return Instance(Atom(a.relation, tuple(self(t) for t in a.args)) for a in inst.facts)

    def __repr__(self):
        pairs = ", ".join(f"{format_term(k)}->{format_term(v)}"
                          for k, v in sorted(self.mapping.items(), key=lambda kv: kv[0].sort_key()))
        return f"Hom({pairs})"


class CoreBudgetExceeded(RuntimeError):
    """Raised when the retract search exceeds its subset budget."""


def _key(t):
    return t.sort_key()


def find_hom(src: Instance, dst: Instance, fixed: dict | None = None,
             injective: bool = False) -> Hom | None:
    """Lexicographically least homomorphism from ``src`` to ``dst`` extending
    ``fixed`` (terms ordered canonically, values tried in canonical order)."""
    fixed = dict(fixed or {})
    store = dst.store()
    src_atoms = sorted_atoms(src.facts)
    for a in src_atoms:
        if a.relation not in store.rels:
            return None
    order = sorted((t for t in src.active_domain if t not in fixed), key=_key)
    occ: dict = {t: [] for t in src.active_domain}
    for a in src_atoms:
        for i, t in enumerate(a.args):
            occ[t].append((a, i))
    values = sorted(dst.active_domain, key=_key)
    domains = {}
    for t in order:
        dom = []
        for v in values:
            if all((a.relation, i, v) in store.index for a, i in occ[t]):
                dom.append(v)
        if not dom:
            return None
        domains[t] = dom
    h = dict(fixed)
    used = set(fixed.values()) if injective else None

    def consistent(t) -> bool:
        for a, _ in occ[t]:
            best = None
            bound = []
            for i, s in enumerate(a.args):
                v = h.get(s)
                if v is not None:
                    bound.append((i, v))
                    lst = store.index.get((a.relation, i, v))
                    if lst is None:
                        return False
                    if best is None or len(lst) < len(best):
                        best = lst
            if best is not None and not any(all(f[i] == v for i, v in bound) for f in best):
                return False
        return True

    for t in fixed:
        if t in occ and not consistent(t):
            return None

    def search(k: int) -> bool:
        if k == len(order):
            return True
        t = order[k]
        for v in domains[t]:
            if injective and v in used:
                continue
            h[t] = v
            if injective:
                used.add(v)
            if consistent(t) and search(k + 1):
                return True
            if injective:
                used.discard(v)
            del h[t]
        return False

    if not search(0):
        return None
    return Hom({t: h[t] for t in src.active_domain if t in h}, frozenset(fixed))


def check_hom(hom: Hom, src: Instance, dst: Instance) -> bool:
    return all(Atom(a.relation, tuple(hom(t) for t in a.args)) in dst.facts for a in src.facts)


def isomorphic(a: Instance, b: Instance, fixed: dict | None = None) -> bool:
    if len(a) != len(b) or len(a.active_domain) != len(b.active_domain):
        return False
    h = find_hom(a, b, fixed, injective=True)
    return h is not None and h.image(a) == b


def cq_contains(phi: ConjunctiveQuery, psi: ConjunctiveQuery) -> bool:
    """True iff there is a homomorphism from ``phi`` to ``psi`` mapping the
    i-th free variable of ``phi`` to the i-th free variable of ``psi``."""
    if len(phi.free_vars) != len(psi.free_vars):
        raise ValueError("queries have different numbers of free variables")
    store = FactStore(psi.body)
    slots: dict = {}
    for v in phi.free_vars:
        slots.setdefault(v, len(slots))
    for a in phi.body:
        for t in a.args:
            if isinstance(t, Variable) and t not in slots:
                slots[t] = len(slots)
    b = [None] * len(slots)
    for v, w in zip(phi.free_vars, psi.free_vars):
        s = slots[v]
        if b[s] is not None and b[s] != w:
            return False
        b[s] = w
    patterns = [
        (a.relation, tuple(slots[t] if isinstance(t, Variable) else t for t in a.args))
        for a in phi.body
    ]
    return bool(kernel.match(patterns, store.rels, store.index, b, None, 1))


def cq_equivalent(phi: ConjunctiveQuery, psi: ConjunctiveQuery) -> bool:
    return cq_contains(phi, psi) and cq_contains(psi, phi)


def _head_check(cr: CompiledRule):
    """Patterns for the head with frontier slots kept and existentials fresh."""
    slots = dict(cr.slots)
    for a in cr.rule.head:
        for t in a.args:
            if t not in slots:
                slots[t] = len(slots)
    patterns = [(a.relation, tuple(slots[t] for t in a.args)) for a in cr.rule.head]
    return patterns, len(slots)


def violations(inst: Instance, theory: RuleSet, limit: int = 1) -> list:
    """Up to ``limit`` (rule index, match) pairs with no head witness."""
    store = inst.store()
    out = []
    for i, rule in enumerate(theory.rules):
        cr = CompiledRule(rule, i)
        patterns, n = _head_check(cr)
        fslots = cr.frontier_slots
        seen = set()
        for m in all_matches(cr, store, inst.active_domain):
            key = tuple(m[s] for s in fslots)
            if key in seen:
                continue
            seen.add(key)
            b = list(m) + [None] * (n - len(m))
            if not kernel.match(patterns, store.rels, store.index, b, None, 1):
                out.append((i, m))
                if len(out) >= limit:
                    return out
    return out


def is_model(inst: Instance, theory: RuleSet) -> bool:
    return not violations(inst, theory)


@dataclass(frozen=True)
class CoreResult:
    core: Instance
    retraction: Hom
    c_value: int
    stage: int = 0
    slack: int = 2
    examined: int = field(default=0, compare=False)


def core_retract(theory: RuleSet, start: Instance, depth: int, slack: int = 2,
                 cap: int = DEFAULT_CAP, budget: int = 200_000,
                 run: ChaseRun | None = None) -> CoreResult | None:
    """Minimum-cardinality model image of a retraction of Ch_{n+slack} into
    Ch_n fixing dom(start), searched over n <= depth.

    Candidate images are enumerated as subsets of Ch_n containing ``start``
    by increasing size; the first size admitting a model that receives a
    homomorphism from Ch_{n+slack} wins.  ``budget`` bounds the number of
    subsets examined overall.
    """
    if run is None:
        run = chase_to(theory, start, depth + slack, cap=cap)
    elif run.depth < depth + slack and not run.saturated:
        run.extend(depth + slack, cap=cap)
    fixed = {t: t for t in start.active_domain}
    base = set(start.facts)
    best = None
    examined = 0
    for n in range(depth + 1):
        if run.saturated and n > run.depth:
            break
        target = [a for d in run.deltas[: n + 1] for a in d]
        source = run.stage(n + slack)
        extra = sorted_atoms(a for a in target if a not in base)
        limit = len(extra) if best is None else len(best.core) - len(base) - 1
        found = None
        for size in range(0, limit + 1):
            for combo in combinations(extra, size):
                examined += 1
                if examined > budget:
                    raise CoreBudgetExceeded(f"retract search exceeded {budget} candidate images")
                cand = Instance(base.union(combo))
                if not is_model(cand, theory):
                    continue
                h = find_hom(source, cand, fixed)
                if h is not None:
                    found = (cand, h)
                    break
            if found:
                break
        if found:
            cand, h = found
            c = max((run.stage_of[a] for a in cand.facts), default=0)
            best = CoreResult(cand, h, c, stage=n, slack=slack, examined=examined)
            if len(cand) == len(base):
                break
    return best


def core_idempotent_check(theory: RuleSet, start: Instance, depth: int, slack: int = 2,
                          cap: int = DEFAULT_CAP) -> bool:
    first = core_retract(theory, start, depth, slack=slack, cap=cap)
    if first is None:
        raise ValueError("no core found within depth")
    second = core_retract(theory, first.core, depth, slack=slack, cap=cap)
    if second is None:
        return False
    return isomorphic(first.core, second.core, {t: t for t in start.active_domain})
