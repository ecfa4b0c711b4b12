"""Finite-depth probes for locality, distancing, Enough and UBDD bounds,
and the island constructions C_D and M_F.

Every statement about an infinite chase is checked at an explicit depth.
Refutations are sound; everything else is reported as inconclusive.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from math import comb, inf

from .chase import DEFAULT_CAP, chase_to, entails
from .homo import core_retract, is_model
from .model import (
    Atom,
    Constant,
    Instance,
    Rule,
    RuleSet,
    Variable,
    bfs_distances,
    format_atom,
    format_term,
    gaifman_neighbours,
    sorted_atoms,
)

REFUTED = "refuted"
INCONCLUSIVE = "not-refuted-within-budget"
DEFAULT_ISLAND_CAP = 100_000


class IslandCapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class LocalityParams:
    l: int
    degree_bound: int | None = None
    probe_depth: int = 3

    def __post_init__(self):
        if self.l < 1:
            raise ValueError("l must be at least 1")
        if self.probe_depth < 1:
            raise ValueError("probe_depth must be at least 1")
        if self.degree_bound is not None and self.degree_bound < 0:
            raise ValueError("degree_bound must be non-negative")


@dataclass
class ProbeReport:
    verdict: str
    witness: dict | None = None
    constants_estimated: dict = field(default_factory=dict)
    table: list = field(default_factory=list)

    @property
    def refuted(self) -> bool:
        return self.verdict == REFUTED

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "witness": self.witness,
                "constants_estimated": self.constants_estimated, "table": self.table}


def islands(D: Instance, l: int, cap: int = DEFAULT_ISLAND_CAP) -> list:
    """All subsets of ``D`` with at most ``l`` atoms, the empty one included."""
    facts = sorted_atoms(D.facts)
    top = min(l, len(facts))
    total = sum(comb(len(facts), k) for k in range(top + 1))
    if total > cap:
        raise IslandCapExceeded(f"{total} islands exceed the cap of {cap}")
    return [Instance(c) for k in range(top + 1) for c in combinations(facts, k)]


def degree(D: Instance) -> int:
    """Largest number of atoms sharing one term."""
    counts: dict = {}
    for a in D.facts:
        for t in set(a.args):
            counts[t] = counts.get(t, 0) + 1
    return max(counts.values(), default=0)


def island_union(theory: RuleSet, D: Instance, l: int, depth: int, cap: int = DEFAULT_CAP,
                 island_cap: int = DEFAULT_ISLAND_CAP) -> set:
    out: set = set()
    for F in islands(D, l, island_cap):
        out |= chase_to(theory, F, depth, cap=cap).store.facts
    return out


def verify_locality_witness(theory: RuleSet, D: Instance, l: int, depth: int, atom: Atom,
                            cap: int = DEFAULT_CAP) -> bool:
    """Recompute: ``atom`` is in Ch_depth(D) and in no island chase."""
    if atom not in chase_to(theory, D, depth, cap=cap).store.facts:
        return False
    return all(atom not in chase_to(theory, F, depth, cap=cap).store.facts
               for F in islands(D, l))


def locality_refute(theory: RuleSet, params: LocalityParams, D: Instance,
                    cap: int = DEFAULT_CAP, island_cap: int = DEFAULT_ISLAND_CAP) -> ProbeReport:
    if params.degree_bound is not None and degree(D) > params.degree_bound:
        raise ValueError(f"instance degree {degree(D)} exceeds the bound {params.degree_bound}")
    depth = params.probe_depth
    full = chase_to(theory, D, depth, cap=cap)
    union = island_union(theory, D, params.l, depth, cap, island_cap)
    if not union <= full.store.facts:
        raise AssertionError("an island chase left the chase of the whole instance")
    missing = sorted_atoms(full.store.facts - union)
    consts = {"l": params.l, "probe_depth": depth, "degree": degree(D),
              "chase_atoms": len(full.store), "union_atoms": len(union),
              "missing_atoms": len(missing)}
    if not missing:
        return ProbeReport(INCONCLUSIVE, None, consts)
    atom = missing[0]
    if not verify_locality_witness(theory, D, params.l, depth, atom, cap):
        raise AssertionError("locality witness failed re-verification")
    witness = {"instance": [format_atom(a) for a in sorted_atoms(D.facts)],
               "atom": format_atom(atom), "stage": full.stage_of[atom],
               "islands_checked": len(islands(D, params.l, island_cap)),
               "largest_island": min(params.l, len(D))}
    return ProbeReport(REFUTED, witness, consts)


def _distances(facts, s, t) -> float:
    return bfs_distances(gaifman_neighbours(facts), s).get(t, inf)


def distancing_probe(theory: RuleSet, D: Instance, pairs, depth: int,
                     cap: int = DEFAULT_CAP) -> ProbeReport:
    """Tabulate instance distance against chase distance per pair.

    ``dist_ch`` is measured in the Gaifman graph of all of Ch_depth(D), so
    it never exceeds ``dist_d``; ``dist_derived`` only uses atoms invented
    by the chase and exposes the shortcuts the theory creates.  The ratio
    dist_d / dist_derived is the lower bound on the distancing constant.
    """
    dom = D.active_domain
    for s, t in pairs:
        if s not in dom or t not in dom:
            raise ValueError("pairs must range over dom(D)")
    run = chase_to(theory, D, depth, cap=cap)
    derived = run.store.facts - D.facts
    rows = []
    best = None
    for s, t in pairs:
        dd = _distances(D.facts, s, t)
        dc = _distances(run.store.facts, s, t)
        dv = _distances(derived, s, t) if s in {x for a in derived for x in a.args} else inf
        if s == t:
            dv = 0
        if dd in (0, inf) or dv in (0, inf):
            ratio = None
        else:
            ratio = Fraction(int(dd), int(dv))
        rows.append({"s": format_term(s), "t": format_term(t), "dist_d": _num(dd),
                     "dist_ch": _num(dc), "dist_derived": _num(dv),
                     "ratio": None if ratio is None else str(ratio)})
        if ratio is not None and (best is None or ratio > best):
            best = ratio
    consts = {"depth": run.depth, "d_R_lower_bound": None if best is None else str(best)}
    return ProbeReport(INCONCLUSIVE, None, consts, rows)


def _num(x):
    return None if x == inf else int(x)


def check_enough(theory: RuleSet, D: Instance, n: int, queries, depth: int,
                 cap: int = DEFAULT_CAP) -> list:
    """Per (query, args): True when entailed by stage ``n``, False when
    only entailed later (but by ``depth``), None when undecided."""
    if depth < n:
        raise ValueError("depth must be at least n")
    run = chase_to(theory, D, depth, cap=cap)
    out = []
    for q, args in queries:
        e = entails(theory, D, q, args, depth, run=run)
        out.append(None if not e.found else e.at_depth <= n)
    return out


@dataclass(frozen=True)
class IslandCores:
    instance: Instance
    k: int
    cores: tuple
    c_values: tuple


def compute_C_D(theory: RuleSet, D: Instance, l: int, depth: int, slack: int = 2,
                cap: int = DEFAULT_CAP) -> IslandCores:
    """Union of the cores of all islands, with the least k such that the
    union sits inside Ch_k(D)."""
    cores, cvals = [], []
    union: set = set()
    for F in islands(D, l):
        if not F.facts:
            continue
        res = core_retract(theory, F, depth, slack=slack, cap=cap)
        if res is None:
            raise ValueError(f"island {F} has no core within depth {depth}")
        cores.append(res.core)
        cvals.append(res.c_value)
        union |= res.core.facts
    run = chase_to(theory, D, max(cvals, default=0), cap=cap)
    if not union <= run.store.facts:
        raise AssertionError("island cores escape the chase of D")
    k = max((run.stage_of[a] for a in union), default=0)
    if k > max(cvals, default=0):
        raise AssertionError("k exceeds the largest island c-value")
    return IslandCores(Instance(union), k, tuple(cores), tuple(cvals))


@dataclass(frozen=True)
class BannedRestriction:
    structure: Instance
    banned: frozenset
    is_model: bool
    depth: int


def banned_restrict(theory: RuleSet, D: Instance, F: Instance, depth: int, slack: int = 2,
                    cap: int = DEFAULT_CAP) -> BannedRestriction:
    """M_F: Ch_depth(D) restricted to terms outside dom(Ch(F)) \\ dom(Core(F))."""
    if not F.facts <= D.facts:
        raise ValueError("F must be a subset of D")
    full = chase_to(theory, D, depth, cap=cap).last
    if not F.facts:
        return BannedRestriction(full, frozenset(), is_model(full, theory), depth)
    res = core_retract(theory, F, depth, slack=slack, cap=cap)
    if res is None:
        raise ValueError("F has no core within depth")
    chF = chase_to(theory, F, depth, cap=cap).last
    banned = frozenset(chF.active_domain - res.core.active_domain)
    M = full.restrict(full.active_domain - banned)
    return BannedRestriction(M, banned, is_model(M, theory), depth)


def ubdd_probe(theory: RuleSet, instances, depth: int, slack: int = 2,
               cap: int = DEFAULT_CAP) -> ProbeReport:
    rows = []
    for D in instances:
        res = core_retract(theory, D, depth, slack=slack, cap=cap)
        if res is None:
            raise ValueError(f"no core for {D} within depth {depth}")
        rows.append({"instance": [format_atom(a) for a in sorted_atoms(D.facts)],
                     "c": res.c_value, "core_size": len(res.core)})
    c_max = max((r["c"] for r in rows), default=0)
    return ProbeReport(INCONCLUSIVE, None, {"c_T_candidate": c_max, "depth": depth}, rows)


# ----------------------------------------------------------------------
# Connectivity transforms


def connect_theory(theory: RuleSet, name: str = "w0") -> RuleSet:
    """Prepend one shared fresh variable to every atom of every rule."""
    taken = {v.name for r in theory for a in list(r.body) + list(r.head)
             for v in a.args if isinstance(v, Variable)}
    taken |= {v.name for r in theory for v in r.domain_vars}
    while name in taken:
        name += "_"
    w = Variable(name)

    def lift(a):
        return Atom(a.relation, (w,) + a.args)

    out = []
    for r in theory:
        body = [lift(a) for a in r.body]
        dom = set(r.domain_vars)
        if not body:
            dom.add(w)
        out.append(Rule(body, [lift(a) for a in r.head], dom, label=r.label))
    return RuleSet(out)


def connect_instance(D: Instance, name: str = "hub") -> Instance:
    taken = {t.name for t in D.active_domain if isinstance(t, Constant)}
    while name in taken:
        name += "_"
    c = Constant(name)
    return Instance(Atom(a.relation, (c,) + a.args) for a in D.facts)
