"""Terms, atoms, instances, rules and conjunctive queries.

Everything here is an immutable value.  Skolem terms cache their hash and
sort key so that deep chase terms stay cheap to compare and to index.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import permutations
from typing import Iterable, Mapping, Sequence


class Term:
    __slots__ = ()

    def sort_key(self) -> tuple:
        raise NotImplementedError


class Constant(Term):
    __slots__ = ("name", "_hash")

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "_hash", hash(("c", name)))

    def __setattr__(self, key, value):
        raise AttributeError("terms are immutable")

    def __eq__(self, other):
        return self is other or (type(other) is Constant and other.name == self.name)

    def __hash__(self):
        return self._hash

    def sort_key(self):
        return (0, self.name)

    def __repr__(self):
        return self.name

    def __reduce__(self):
        return (Constant, (self.name,))


class Variable(Term):
    __slots__ = ("name", "_hash")

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "_hash", hash(("v", name)))

    def __setattr__(self, key, value):
        raise AttributeError("terms are immutable")

    def __eq__(self, other):
        return self is other or (type(other) is Variable and other.name == self.name)

    def __hash__(self):
        return self._hash

    def sort_key(self):
        return (2, self.name)

    def __repr__(self):
        return self.name

    def __reduce__(self):
        return (Variable, (self.name,))


class Skolem(Term):
    """The term ``sk[tag/position](args)``.

    ``tag`` is the canonical string of the isomorphism type of the head that
    invents the term and ``position`` the earliest head position of the
    existential variable it replaces.
    """

    __slots__ = ("tag", "position", "args", "_hash", "_key")

    def __init__(self, tag: str, position: int, args: tuple):
        object.__setattr__(self, "tag", tag)
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "args", args)
        object.__setattr__(self, "_hash", hash((tag, position, args)))
        object.__setattr__(self, "_key", None)

    def __setattr__(self, key, value):
        raise AttributeError("terms are immutable")

    def __eq__(self, other):
        if self is other:
            return True
        return (
            type(other) is Skolem
            and self._hash == other._hash
            and self.position == other.position
            and self.tag == other.tag
            and self.args == other.args
        )

    def __hash__(self):
        return self._hash

    def sort_key(self):
        key = self._key
        if key is None:
            key = (1, self.tag, self.position, tuple(a.sort_key() for a in self.args))
            object.__setattr__(self, "_key", key)
        return key

    @property
    def depth(self) -> int:
        return 1 + max((a.depth if isinstance(a, Skolem) else 0 for a in self.args), default=0)

    def __repr__(self):
        return format_term(self)

    def __reduce__(self):
        return (Skolem, (self.tag, self.position, self.args))


def format_term(t: Term) -> str:
    if isinstance(t, Skolem):
        inner = ",".join(format_term(a) for a in t.args)
        return f"sk[{t.tag}/{t.position}]({inner})"
    return t.name


def is_ground(t: Term) -> bool:
    if isinstance(t, Variable):
        return False
    if isinstance(t, Skolem):
        return all(is_ground(a) for a in t.args)
    return True


class Atom:
    __slots__ = ("relation", "args", "_hash")

    def __init__(self, relation: str, args: Sequence[Term] = ()):
        args = tuple(args)
        object.__setattr__(self, "relation", relation)
        object.__setattr__(self, "args", args)
        object.__setattr__(self, "_hash", hash((relation, args)))

    def __setattr__(self, key, value):
        raise AttributeError("atoms are immutable")

    @property
    def arity(self) -> int:
        return len(self.args)

    def __eq__(self, other):
        return self is other or (
            type(other) is Atom
            and self._hash == other._hash
            and self.relation == other.relation
            and self.args == other.args
        )

    def __hash__(self):
        return self._hash

    def sort_key(self):
        return (self.relation, tuple(a.sort_key() for a in self.args))

    def terms(self) -> set:
        return set(self.args)

    def variables(self) -> set:
        return {a for a in self.args if isinstance(a, Variable)}

    def substitute(self, mapping: Mapping[Term, Term]) -> "Atom":
        return Atom(self.relation, tuple(substitute_term(a, mapping) for a in self.args))

    def __repr__(self):
        return format_atom(self)

    def __reduce__(self):
        return (Atom, (self.relation, self.args))


def substitute_term(t: Term, mapping: Mapping[Term, Term]) -> Term:
    if isinstance(t, Skolem):
        return Skolem(t.tag, t.position, tuple(substitute_term(a, mapping) for a in t.args))
    return mapping.get(t, t)


def format_atom(a: Atom) -> str:
    return f"{a.relation}({','.join(format_term(t) for t in a.args)})"


def sorted_atoms(atoms: Iterable[Atom]) -> list:
    return sorted(atoms, key=Atom.sort_key)


class FactStore:
    """Mutable fact index used by matching: relation lists plus a
    (relation, position, term) index over argument tuples."""

    __slots__ = ("facts", "rels", "index")

    def __init__(self, atoms: Iterable[Atom] = ()):
        self.facts: set = set()
        self.rels: dict = {}
        self.index: dict = {}
        for a in atoms:
            self.add(a)

    def add(self, atom: Atom) -> bool:
        if atom in self.facts:
            return False
        self.facts.add(atom)
        rel, args = atom.relation, atom.args
        self.rels.setdefault(rel, []).append(args)
        index = self.index
        for pos, t in enumerate(args):
            key = (rel, pos, t)
            lst = index.get(key)
            if lst is None:
                index[key] = [args]
            else:
                lst.append(args)
        return True

    def __contains__(self, atom):
        return atom in self.facts

    def __len__(self):
        return len(self.facts)


class Instance:
    """A finite, duplicate-free set of facts."""

    __slots__ = ("facts", "_adom", "_store")

    def __init__(self, facts: Iterable[Atom] = ()):
        object.__setattr__(self, "facts", frozenset(facts))
        object.__setattr__(self, "_adom", None)
        object.__setattr__(self, "_store", None)

    def __setattr__(self, key, value):
        raise AttributeError("instances are immutable")

    @property
    def active_domain(self) -> frozenset:
        adom = self._adom
        if adom is None:
            adom = frozenset(t for a in self.facts for t in a.args)
            object.__setattr__(self, "_adom", adom)
        return adom

    def store(self) -> FactStore:
        st = self._store
        if st is None:
            st = FactStore(self.facts)
            object.__setattr__(self, "_store", st)
        return st

    def __iter__(self):
        return iter(sorted_atoms(self.facts))

    def __len__(self):
        return len(self.facts)

    def __contains__(self, atom):
        return atom in self.facts

    def __eq__(self, other):
        return isinstance(other, Instance) and self.facts == other.facts

    def __hash__(self):
        return hash(self.facts)

    def __le__(self, other):
        return self.facts <= other.facts

    def __or__(self, other):
        return Instance(self.facts | other.facts)

    def relations(self) -> dict:
        out: dict = {}
        for a in self.facts:
            out.setdefault(a.relation, a.arity)
        return out

    def restrict(self, terms) -> "Instance":
        """Induced substructure on ``terms``."""
        terms = set(terms)
        return Instance(a for a in self.facts if all(t in terms for t in a.args))

    def __repr__(self):
        return "{" + ", ".join(format_atom(a) for a in self) + "}"


def gaifman_neighbours(facts: Iterable[Atom]) -> dict:
    adj: dict = {}
    for a in facts:
        ts = set(a.args)
        for t in ts:
            adj.setdefault(t, set()).update(ts - {t})
    return adj


def gaifman_distance(inst: Instance, s: Term, t: Term) -> float:
    """Shortest Gaifman-graph path length; ``math.inf`` when unreachable."""
    adom = inst.active_domain
    for x in (s, t):
        if x not in adom:
            raise ValueError(f"term {format_term(x)} is not in the active domain")
    return bfs_distances(gaifman_neighbours(inst.facts), s).get(t, float("inf"))


def bfs_distances(adj: Mapping, source) -> dict:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def atom_components(atoms: Iterable[Atom], linking=lambda t: isinstance(t, Variable)) -> list:
    """Split atoms into connected components via shared linking terms.

    Atoms with no linking term form singleton components.
    """
    atoms = sorted_atoms(set(atoms))
    parent = list(range(len(atoms)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict = {}
    for i, a in enumerate(atoms):
        for t in a.args:
            if linking(t):
                j = owner.setdefault(t, i)
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict = {}
    for i, a in enumerate(atoms):
        groups.setdefault(find(i), []).append(a)
    return [groups[k] for k in sorted(groups)]


# ----------------------------------------------------------------------
# Isomorphism types and skolemization


@dataclass(frozen=True)
class TauId:
    canonical_string: str

    def __str__(self):
        return self.canonical_string


def _head_serializations(head: Sequence[Atom], frontier: frozenset):
    """Yield (string, frontier_order, positions) for every atom ordering."""
    atoms = sorted_atoms(set(head))
    for perm in permutations(atoms):
        names: dict = {}
        nf = ne = 0
        parts = []
        pos = 0
        first_pos: dict = {}
        f_order = []
        for a in perm:
            rendered = []
            for t in a.args:
                pos += 1
                if isinstance(t, Variable):
                    if t not in names:
                        if t in frontier:
                            nf += 1
                            names[t] = f"f{nf}"
                            f_order.append(t)
                        else:
                            ne += 1
                            names[t] = f"e{ne}"
                            first_pos[t] = pos
                    rendered.append(names[t])
                else:
                    raise ValueError("rule heads must be constant-free")
            parts.append(f"{a.relation}({','.join(rendered)})")
        yield ";".join(parts), tuple(f_order), first_pos


def _head_canonical(head: Sequence[Atom], frontier: frozenset):
    best = None
    for item in _head_serializations(head, frontier):
        if best is None or item[0] < best[0]:
            best = item
    return best


def iso_type(head: Iterable[Atom], frontier: Iterable[Variable]) -> TauId:
    head = list(head)
    if not head:
        raise ValueError("empty head")
    return TauId(_head_canonical(head, frozenset(frontier))[0])


# ----------------------------------------------------------------------
# Rules


def _vars(atoms: Iterable[Atom]) -> set:
    return {t for a in atoms for t in a.args if isinstance(t, Variable)}


@dataclass(frozen=True)
class Rule:
    body: tuple
    head: tuple
    domain_vars: frozenset = frozenset()
    label: str = field(default="", compare=False)

    def __init__(self, body: Iterable[Atom], head: Iterable[Atom],
                 domain_vars: Iterable[Variable] = (), label: str = ""):
        body_t = tuple(sorted_atoms(set(body)))
        head_t = tuple(sorted_atoms(set(head)))
        dv = frozenset(domain_vars)
        if not head_t:
            raise ValueError("rule head must be nonempty")
        bvars, hvars = _vars(body_t), _vars(head_t)
        for a in head_t:
            if any(not isinstance(t, Variable) for t in a.args):
                raise ValueError("rule heads must be constant-free")
        for a in body_t:
            if any(isinstance(t, Skolem) for t in a.args):
                raise ValueError("rule bodies may not contain Skolem terms")
        if dv & bvars:
            raise ValueError("active-domain variables may not occur in the body")
        if not dv <= hvars:
            raise ValueError("active-domain variables must occur in the head")
        object.__setattr__(self, "body", body_t)
        object.__setattr__(self, "head", head_t)
        object.__setattr__(self, "domain_vars", dv)
        object.__setattr__(self, "label", label)

    @property
    def body_vars(self) -> frozenset:
        return frozenset(_vars(self.body))

    @property
    def frontier(self) -> frozenset:
        return frozenset(_vars(self.head) & (_vars(self.body) | self.domain_vars))

    @property
    def existentials(self) -> frozenset:
        return frozenset(_vars(self.head)) - self.frontier

    @property
    def uses_active_domain(self) -> bool:
        return bool(self.domain_vars)

    @property
    def is_datalog(self) -> bool:
        return not self.existentials

    @property
    def is_existential(self) -> bool:
        return bool(self.existentials)

    @property
    def is_detached(self) -> bool:
        return self.is_existential and not self.frontier

    @property
    def is_sensible(self) -> bool:
        return self.is_existential and bool(self.frontier)

    @property
    def is_linear(self) -> bool:
        return len(self.body) == 1

    @property
    def is_connected(self) -> bool:
        return len(atom_components(self.body)) <= 1

    def tau(self) -> TauId:
        return iso_type(self.head, self.frontier)

    def __repr__(self):
        from .textio import print_rule

        return print_rule(self)


def skolemize_head(rule: Rule) -> tuple:
    """Head atoms with every existential replaced by its Skolem template.

    Templates are Skolem terms whose arguments are the frontier variables in
    canonical order; substituting a match into them gives ``appl``.
    """
    if not rule.existentials:
        return rule.head
    tag, f_order, first_pos = _head_canonical(rule.head, rule.frontier)
    sub = {w: Skolem(tag, first_pos[w], f_order) for w in rule.existentials}
    return tuple(a.substitute(sub) for a in rule.head)


def skolem_plan(rule: Rule):
    """(tag, frontier_order, {existential: position}) of the canonical head."""
    tag, f_order, first_pos = _head_canonical(rule.head, rule.frontier)
    return tag, f_order, first_pos


class RuleSet:
    """An ordered, finite list of rules with a derived signature."""

    __slots__ = ("rules", "signature")

    def __init__(self, rules: Iterable[Rule] = ()):
        rules = tuple(rules)
        sig: dict = {}
        for r in rules:
            for a in r.body + r.head:
                if sig.setdefault(a.relation, a.arity) != a.arity:
                    raise ValueError(f"relation {a.relation} used with two arities")
        object.__setattr__(self, "rules", rules)
        object.__setattr__(self, "signature", sig)

    def __setattr__(self, key, value):
        raise AttributeError("rule sets are immutable")

    def __iter__(self):
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)

    def __getitem__(self, i):
        return self.rules[i]

    def __eq__(self, other):
        return isinstance(other, RuleSet) and self.rules == other.rules

    def __hash__(self):
        return hash(self.rules)

    def classification(self) -> list:
        return [
            {
                "datalog": r.is_datalog,
                "existential": r.is_existential,
                "detached": r.is_detached,
                "sensible": r.is_sensible,
                "linear": r.is_linear,
                "connected": r.is_connected,
            }
            for r in self.rules
        ]

    def __repr__(self):
        from .textio import print_rules

        return print_rules(self)


# ----------------------------------------------------------------------
# Conjunctive queries


@dataclass(frozen=True)
class ConjunctiveQuery:
    free_vars: tuple
    body: frozenset

    def __init__(self, free_vars: Iterable[Variable], body: Iterable[Atom]):
        fv = tuple(free_vars)
        bd = frozenset(body)
        for v in fv:
            if not isinstance(v, Variable):
                raise ValueError("free positions must hold variables")
        missing = set(fv) - _vars(bd)
        if missing:
            names = ", ".join(sorted(v.name for v in missing))
            raise ValueError(f"free variable(s) {names} absent from body")
        for a in bd:
            if any(isinstance(t, Skolem) for t in a.args):
                raise ValueError("queries may not contain Skolem terms")
        object.__setattr__(self, "free_vars", fv)
        object.__setattr__(self, "body", bd)

    @property
    def size(self) -> int:
        return len(self.body)

    @property
    def variables(self) -> frozenset:
        return frozenset(_vars(self.body))

    @property
    def bound_vars(self) -> frozenset:
        return self.variables - set(self.free_vars)

    @property
    def is_boolean(self) -> bool:
        return not self.free_vars

    @property
    def is_connected(self) -> bool:
        return len(atom_components(self.body)) <= 1

    def atoms(self) -> list:
        return sorted_atoms(self.body)

    def __repr__(self):
        from .textio import print_query

        return print_query(self)


# ----------------------------------------------------------------------
# Canonical labelling


def _term_token(t: Term) -> str:
    return "'" + format_term(t) if not isinstance(t, Variable) else t.name


def canonical_labelling(atoms: Iterable[Atom], free_vars: Sequence[Variable] = (),
                        marked: Iterable[Variable] = ()) -> tuple:
    """Canonical (key, renaming) for an atom set with fixed free positions.

    ``key`` is a string equal for two inputs iff they are isomorphic by a
    bijection of bound variables that preserves free positions and marks.
    ``renaming`` maps bound variables to their canonical index.
    """
    atoms = list(set(atoms))
    free_vars = tuple(free_vars)
    free_pos: dict = {}
    for i, v in enumerate(free_vars):
        free_pos.setdefault(v, i)
    marked = frozenset(marked)
    bound = sorted(_vars(atoms) - set(free_pos), key=lambda v: v.name)
    if not bound:
        return _serialize(atoms, free_pos, {}, marked), {}

    occ: dict = {v: [] for v in bound}
    for a in atoms:
        for i, t in enumerate(a.args):
            if t in occ:
                occ[t].append((a, i))

    def fixed_token(t):
        if t in free_pos:
            return ("$", free_pos[t])
        return ("'", format_term(t))

    init = {v: (1 if v in marked else 0,) for v in bound}
    colors = _refine(init, occ, fixed_token)
    best: list = [None, None]
    _individualize(colors, occ, fixed_token, atoms, free_pos, marked, best)
    return best[0], best[1]


def _relabel(sig: dict) -> dict:
    ranks = {s: i for i, s in enumerate(sorted(set(sig.values())))}
    return {v: ranks[s] for v, s in sig.items()}


def _refine(colors: dict, occ: dict, fixed_token) -> dict:
    colors = _relabel(colors)
    while True:
        sig = {}
        for v, uses in occ.items():
            parts = []
            for a, i in uses:
                parts.append((a.relation, i, tuple(
                    ("#", colors[t]) if t in colors else fixed_token(t) for t in a.args)))
            parts.sort()
            sig[v] = (colors[v], tuple(parts))
        new = _relabel(sig)
        if len(set(new.values())) == len(set(colors.values())):
            return new
        colors = new


def _are_twins(v, w, atoms_set) -> bool:
    swap = {v: w, w: v}
    return all(a.substitute(swap) in atoms_set for a in atoms_set)


def _individualize(colors, occ, fixed_token, atoms, free_pos, marked, best):
    cells: dict = {}
    for v, c in colors.items():
        cells.setdefault(c, []).append(v)
    target = None
    for c in sorted(cells):
        if len(cells[c]) > 1:
            target = c
            break
    if target is None:
        order = sorted(colors, key=colors.get)
        renaming = {v: i for i, v in enumerate(order)}
        key = _serialize(atoms, free_pos, renaming, marked)
        if best[0] is None or key < best[0]:
            best[0], best[1] = key, renaming
        return
    cell = sorted(cells[target], key=lambda v: v.name)
    atoms_set = frozenset(atoms)
    tried: list = []
    for v in cell:
        if any(_are_twins(v, w, atoms_set) for w in tried):
            continue
        tried.append(v)
        split = {u: (c, 1) for u, c in colors.items()}
        split[v] = (target, 0)
        _individualize(_refine(split, occ, fixed_token), occ, fixed_token,
                       atoms, free_pos, marked, best)


def _serialize(atoms, free_pos, renaming, marked) -> str:
    def tok(t):
        if t in free_pos:
            return f"${free_pos[t]}"
        if t in renaming:
            return f"_{renaming[t]}" + ("*" if t in marked else "")
        return _term_token(t)

    body = sorted(f"{a.relation}({','.join(tok(t) for t in a.args)})" for a in atoms)
    return ";".join(body)


def canonical_key(q: ConjunctiveQuery) -> str:
    fv = ",".join(f"${q.free_vars.index(v)}" for v in q.free_vars)
    return f"({fv})" + canonical_labelling(q.body, q.free_vars)[0]


def canonicalize(q: ConjunctiveQuery) -> ConjunctiveQuery:
    """Rename bound variables to ``_0, _1, ...`` in canonical order."""
    _, renaming = canonical_labelling(q.body, q.free_vars)
    sub = {v: Variable(f"_{i}") for v, i in renaming.items()}
    return ConjunctiveQuery(q.free_vars, (a.substitute(sub) for a in q.body))


def fresh_variable_factory(taken: Iterable[Variable], prefix: str = "w"):
    names = {v.name for v in taken}
    counter = [0]

    def fresh():
        while True:
            counter[0] += 1
            name = f"{prefix}{counter[0]}"
            if name not in names:
                names.add(name)
                return Variable(name)

    return fresh


def rule_shape_key(rule: Rule) -> str:
    """Isomorphism key of a rule: equal iff equal up to variable renaming."""
    atoms = list(rule.body) + [Atom("=>" + a.relation, a.args) for a in rule.head]
    atoms += [Atom("@dom", (v,)) for v in rule.domain_vars]
    return canonical_labelling(atoms, (), rule.existentials)[0]
