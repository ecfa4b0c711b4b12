"""Semi-oblivious Skolem chase with parallel stages.

Stage ``i+1`` adds ``appl(rule, sigma)`` for every rule and every match
``sigma`` into stage ``i``.  Matches are found semi-naively: a match is new
at a stage only if it uses an atom (or, for active-domain variables, a term)
that appeared at the previous stage, so each match is enumerated once.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

from . import kernel
from .model import (
    Atom,
    ConjunctiveQuery,
    FactStore,
    Instance,
    Rule,
    RuleSet,
    Skolem,
    Term,
    Variable,
    format_term,
    skolem_plan,
    sorted_atoms,
)

DEFAULT_CAP = 500_000


class ChaseBudgetExceeded(RuntimeError):
    """Raised when a chase grows past its atom-count cap."""


class CompiledRule:
    """A rule translated to kernel patterns and a head construction plan."""

    __slots__ = ("rule", "index", "slots", "nslots", "patterns", "rest", "dom_slots",
                 "head_plan", "skolems", "body_vars", "frontier_slots")

    def __init__(self, rule: Rule, index: int = 0):
        self.rule = rule
        self.index = index
        slots: dict = {}
        for a in rule.body:
            for t in a.args:
                if isinstance(t, Variable) and t not in slots:
                    slots[t] = len(slots)
        self.body_vars = list(slots)
        for v in sorted(rule.domain_vars, key=lambda v: v.name):
            slots[v] = len(slots)
        self.slots = slots
        self.nslots = len(slots)
        self.dom_slots = [slots[v] for v in sorted(rule.domain_vars, key=lambda v: v.name)]
        self.patterns = [
            (a.relation, tuple(slots[t] if isinstance(t, Variable) else t for t in a.args))
            for a in rule.body
        ]
        self.rest = [self.patterns[:j] + self.patterns[j + 1:] for j in range(len(self.patterns))]
        self.skolems = []
        sk_index: dict = {}
        if rule.existentials:
            tag, f_order, first_pos = skolem_plan(rule)
            fslots = tuple(slots[v] for v in f_order)
            for w in sorted(rule.existentials, key=lambda v: first_pos[v]):
                sk_index[w] = len(self.skolems)
                self.skolems.append((tag, first_pos[w], fslots))
        self.frontier_slots = sorted(slots[v] for v in rule.frontier)
        self.head_plan = [
            (a.relation, tuple((0, slots[t]) if t in slots else (1, sk_index[t]) for t in a.args))
            for a in rule.head
        ]

    def apply(self, b) -> list:
        fresh = [Skolem(tag, pos, tuple(b[s] for s in fs)) for tag, pos, fs in self.skolems]
        return [
            Atom(rel, tuple(b[x] if kind == 0 else fresh[x] for kind, x in spec))
            for rel, spec in self.head_plan
        ]


def _unify_fact(pattern_args, fact, b) -> bool:
    for a, val in zip(pattern_args, fact):
        if type(a) is int:
            cur = b[a]
            if cur is None:
                b[a] = val
            elif cur != val:
                return False
        elif a != val:
            return False
    return True


def all_matches(cr: CompiledRule, store: FactStore, adom) -> list:
    """Every match of the rule into the store, as slot tuples."""
    base = kernel.match(cr.patterns, store.rels, store.index, [None] * cr.nslots)
    if not cr.dom_slots:
        return base
    out = []
    terms = sorted(adom, key=lambda t: t.sort_key())
    for m in base:
        for choice in product(terms, repeat=len(cr.dom_slots)):
            b = list(m)
            for s, t in zip(cr.dom_slots, choice):
                b[s] = t
            out.append(tuple(b))
    return out


def new_matches(cr: CompiledRule, store: FactStore, delta: FactStore, adom, new_terms,
                first: bool) -> set:
    """Matches into ``store`` that use a delta atom or a new domain term."""
    found: set = set()
    n = cr.nslots
    if not cr.patterns:
        empty = (None,) * n
        body_new = [empty] if first else []
        body_all = [empty]
    else:
        body_new = []
        for j, (rel, args) in enumerate(cr.patterns):
            for fact in delta.rels.get(rel, ()):
                b = [None] * n
                if _unify_fact(args, fact, b):
                    body_new.extend(kernel.match(cr.rest[j], store.rels, store.index, b))
        body_all = None
    if not cr.dom_slots:
        found.update(body_new)
        return found
    terms = sorted(adom, key=lambda t: t.sort_key())
    k = len(cr.dom_slots)
    for m in set(body_new):
        for choice in product(terms, repeat=k):
            b = list(m)
            for s, t in zip(cr.dom_slots, choice):
                b[s] = t
            found.add(tuple(b))
    if new_terms:
        if body_all is None:
            body_all = kernel.match(cr.patterns, store.rels, store.index, [None] * n)
        for m in body_all:
            for choice in product(terms, repeat=k):
                if not any(t in new_terms for t in choice):
                    continue
                b = list(m)
                for s, t in zip(cr.dom_slots, choice):
                    b[s] = t
                found.add(tuple(b))
    return found


@dataclass(frozen=True)
class BirthRecord:
    term: Term
    birth_atom: Atom
    frontier_terms: frozenset
    ambiguous: bool = False


class ChaseRun:
    """The stages Ch_0 .. Ch_n of one chase.

    ``deltas[i]`` holds the atoms first appearing at stage ``i`` and
    ``stage_of`` maps each atom to that stage.  ``stages`` materializes the
    cumulative instances lazily.
    """

    def __init__(self, theory: RuleSet, start: Instance):
        self.theory = theory
        self.start = start
        self.compiled = [CompiledRule(r, i) for i, r in enumerate(theory.rules)]
        self.store = FactStore(start.facts)
        self.deltas: list = [frozenset(start.facts)]
        self.stage_of: dict = {a: 0 for a in start.facts}
        self.term_stage: dict = {t: 0 for t in start.active_domain}
        self.saturated = False
        self.parents = None
        self.producers = None
        self._stages: dict = {}

    @property
    def depth(self) -> int:
        return len(self.deltas) - 1

    def stage(self, i: int) -> Instance:
        i = min(i, self.depth)
        inst = self._stages.get(i)
        if inst is None:
            if i == self.depth:
                inst = Instance(self.store.facts)
            else:
                inst = Instance(a for d in self.deltas[: i + 1] for a in d)
            self._stages[i] = inst
        return inst

    @property
    def stages(self) -> list:
        return [self.stage(i) for i in range(self.depth + 1)]

    @property
    def last(self) -> Instance:
        return self.stage(self.depth)

    def stage_store(self, i: int) -> FactStore:
        if i >= self.depth:
            return self.store
        return FactStore(a for d in self.deltas[: i + 1] for a in d)

    def extend(self, depth: int, cap: int = DEFAULT_CAP, record: bool = False) -> "ChaseRun":
        """Advance to ``depth`` stages (or saturation)."""
        if record and self.parents is None:
            if self.depth > 0:
                raise ValueError("recording must start at stage 0")
            self.parents = {}
            self.producers = {}
        store = self.store
        while self.depth < depth and not self.saturated:
            step = self.depth
            delta_atoms = self.deltas[-1]
            delta = FactStore(delta_atoms)
            new_terms = {t for t, s in self.term_stage.items() if s == step}
            adom = self.term_stage.keys()
            produced: dict = {}
            for cr in self.compiled:
                matches = new_matches(cr, store, delta, adom, new_terms, step == 0)
                for m in sorted(matches, key=_match_key) if self.parents is not None else matches:
                    for atom in cr.apply(m):
                        if self.parents is not None:
                            self.producers.setdefault(atom, set()).add(cr.index)
                        if atom in store.facts:
                            continue
                        if self.parents is not None:
                            body = tuple(
                                Atom(rel, tuple(m[x] if type(x) is int else x for x in args))
                                for rel, args in cr.patterns)
                            produced.setdefault(atom, []).append((cr.index, body))
                        else:
                            produced[atom] = None
            if not produced:
                self.saturated = True
                break
            if len(store) + len(produced) > cap:
                raise ChaseBudgetExceeded(
                    f"chase exceeded {cap} atoms at stage {step + 1}")
            stage = step + 1
            for atom in produced:
                store.add(atom)
                self.stage_of[atom] = stage
                for t in atom.args:
                    if t not in self.term_stage:
                        self.term_stage[t] = stage
            if self.parents is not None:
                self.parents.update(produced)
            self.deltas.append(frozenset(produced))
            self._stages.pop(step, None)
        return self


def _match_key(m):
    return tuple(t.sort_key() if t is not None else () for t in m)


def chase_to(theory: RuleSet, inst: Instance, depth: int, cap: int = DEFAULT_CAP,
             record: bool = False) -> ChaseRun:
    """Run ``depth`` chase steps or until saturation.

    With ``record`` the run keeps, per atom, every application creating it
    at its birth stage (``parents``) and every rule producing it at any
    stage (``producers``).
    """
    return ChaseRun(theory, inst).extend(depth, cap=cap, record=record)


def chase_step(theory: RuleSet, inst: Instance) -> Instance:
    return ChaseRun(theory, inst).extend(1).last


def _rule_for(rule) -> CompiledRule:
    return rule if isinstance(rule, CompiledRule) else CompiledRule(rule)


def hom_matches(rule: Rule, inst: Instance) -> list:
    """All matches of ``rule`` into ``inst`` as variable-to-term dicts, in
    canonical order."""
    cr = _rule_for(rule)
    store = inst.store()
    matches = sorted(set(all_matches(cr, store, inst.active_domain)), key=_match_key)
    names = sorted(cr.slots.items(), key=lambda kv: kv[1])
    return [{v: m[s] for v, s in names} for m in matches]


def apply(rule: Rule, sigma: dict) -> list:
    cr = _rule_for(rule)
    b = [None] * cr.nslots
    for v, s in cr.slots.items():
        if v not in sigma:
            raise ValueError(f"substitution misses variable {v.name}")
        b[s] = sigma[v]
    return sorted_atoms(cr.apply(b))


# ----------------------------------------------------------------------
# Query answering over chase stages


def compile_query(q: ConjunctiveQuery, order=None):
    slots: dict = {}
    for v in q.free_vars:
        slots.setdefault(v, len(slots))
    for a in sorted_atoms(q.body):
        for t in a.args:
            if isinstance(t, Variable) and t not in slots:
                slots[t] = len(slots)
    patterns = [
        (a.relation, tuple(slots[t] if isinstance(t, Variable) else t for t in a.args))
        for a in sorted_atoms(q.body)
    ]
    return patterns, slots


def _seed(q: ConjunctiveQuery, slots: dict, args) -> list | None:
    b = [None] * len(slots)
    for v, t in zip(q.free_vars, args):
        s = slots[v]
        if b[s] is not None and b[s] != t:
            return None
        b[s] = t
    return b


def holds(q: ConjunctiveQuery, store: FactStore, args=(), checks=None) -> bool:
    patterns, slots = compile_query(q)
    b = _seed(q, slots, args)
    if b is None:
        return False
    return bool(kernel.match(patterns, store.rels, store.index, b, checks, 1))


def answers(q: ConjunctiveQuery, store: FactStore, checks=None) -> set:
    patterns, slots = compile_query(q)
    res = kernel.match(patterns, store.rels, store.index, [None] * len(slots), checks)
    fs = [slots[v] for v in q.free_vars]
    return {tuple(m[s] for s in fs) for m in res}


@dataclass(frozen=True)
class Entailment:
    found: bool
    at_depth: int | None = None

    def __bool__(self):
        return self.found


def entails(theory: RuleSet, inst: Instance, q: ConjunctiveQuery, args=(), depth: int = 0,
            run: ChaseRun | None = None, cap: int = DEFAULT_CAP) -> Entailment:
    """``Entailment(True, d)`` for the least stage ``d <= depth`` satisfying
    ``q(args)``, otherwise ``Entailment(False)`` (unknown within depth)."""
    args = tuple(args)
    if len(args) != len(q.free_vars):
        raise ValueError("argument tuple length differs from the query's free variables")
    if run is None:
        run = chase_to(theory, inst, depth, cap=cap)
    elif run.depth < depth and not run.saturated:
        run.extend(depth, cap=cap)
    if not holds(q, run.store, args):
        return Entailment(False)
    patterns, slots = compile_query(q)
    seed = _seed(q, slots, args)
    store = FactStore()
    for d, delta in enumerate(run.deltas[: depth + 1]):
        for a in delta:
            store.add(a)
        if kernel.match(patterns, store.rels, store.index, list(seed), None, 1):
            return Entailment(True, d)
    return Entailment(False)


# ----------------------------------------------------------------------
# Birth atoms and literal sub-chase equality


def head_from_tag(tag: str) -> list:
    """Parse a canonical head string ``R(f1,e1);G(f1,e2)`` into
    (relation, [token, ...]) pairs."""
    out = []
    for part in tag.split(";"):
        rel, _, rest = part.partition("(")
        toks = rest[:-1].split(",") if rest[:-1] else []
        out.append((rel, toks))
    return out


def creation_atoms(t: Skolem) -> list:
    """The atoms of the application that invented ``t``."""
    head = head_from_tag(t.tag)
    pos = 0
    first: dict = {}
    for rel, toks in head:
        for tok in toks:
            pos += 1
            if tok.startswith("e"):
                first.setdefault(tok, pos)
    def term(tok):
        if tok.startswith("f"):
            return t.args[int(tok[1:]) - 1]
        return Skolem(t.tag, first[tok], t.args)
    return [Atom(rel, tuple(term(tok) for tok in toks)) for rel, toks in head]


def birth_atom(run: ChaseRun, t: Term) -> BirthRecord:
    if not isinstance(t, Skolem):
        raise ValueError(f"{format_term(t)} is not a Skolem term")
    if t not in run.term_stage:
        raise ValueError(f"{format_term(t)} does not occur in the run")
    frontier = frozenset(t.args)
    cands = sorted_atoms(a for a in creation_atoms(t) if t in a.args and a in run.store.facts)
    if not cands:
        raise ValueError(f"no birth atom for {format_term(t)}")
    return BirthRecord(t, cands[0], frontier, ambiguous=len(cands) > 1)


def subchase_equal(theory: RuleSet, D: Instance, F: Instance, depth: int,
                   cap: int = DEFAULT_CAP) -> bool:
    """Literal equality check of Ch(D) and Ch(F) for D ⊆ F ⊆ Ch_depth(D),
    compared at bounded depth with the stage offset of F inside Ch(D)."""
    base = chase_to(theory, D, depth, cap=cap)
    if not D.facts <= F.facts or not F.facts <= base.store.facts:
        raise ValueError("precondition D ⊆ F ⊆ Ch_depth(D) violated")
    offset = max((base.stage_of[a] for a in F.facts), default=0)
    base.extend(depth + offset, cap=cap)
    from_f = chase_to(theory, F, depth, cap=cap)
    if not from_f.store.facts <= base.store.facts:
        return False
    at_depth = base.stage_store(depth).facts if base.depth > depth else base.store.facts
    return at_depth <= from_f.store.facts
