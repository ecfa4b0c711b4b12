"""Pure-Python conjunctive matching kernel.

A pattern is a list of ``(relation, args)`` where an ``int`` argument is a
variable slot and anything else is a ground term.  ``rels`` maps a relation
to its list of argument tuples and ``index`` maps ``(relation, position,
term)`` to the argument tuples holding ``term`` there.  ``checks`` is either
``None`` or a per-slot list of ``None`` / ``(inside, termset)``: a slot with
``(True, S)`` must take a value in ``S``, with ``(False, S)`` a value outside.
"""


def match(patterns, rels, index, binding, checks=None, limit=0):
    out = []
    b = list(binding)
    _search(patterns, [False] * len(patterns), len(patterns), rels, index, b, checks, out, limit)
    return out


def _candidates(rel, args, b, rels, index):
    best = None
    for pos, a in enumerate(args):
        val = b[a] if type(a) is int else a
        if val is not None:
            lst = index.get((rel, pos, val))
            if lst is None:
                return ()
            if best is None or len(lst) < len(best):
                best = lst
    if best is None:
        return rels.get(rel, ())
    return best


def _search(patterns, used, remaining, rels, index, b, checks, out, limit):
    if remaining == 0:
        out.append(tuple(b))
        return limit and len(out) >= limit
    pick = -1
    cands = None
    for i, (rel, args) in enumerate(patterns):
        if used[i]:
            continue
        c = _candidates(rel, args, b, rels, index)
        if cands is None or len(c) < len(cands):
            pick, cands = i, c
            if not c:
                return False
    args = patterns[pick][1]
    used[pick] = True
    for fact in cands:
        bound = []
        ok = True
        for pos, a in enumerate(args):
            val = fact[pos]
            if type(a) is int:
                cur = b[a]
                if cur is None:
                    if checks is not None:
                        chk = checks[a]
                        if chk is not None and (val in chk[1]) != chk[0]:
                            ok = False
                            break
                    b[a] = val
                    bound.append(a)
                elif cur != val:
                    ok = False
                    break
            elif a != val:
                ok = False
                break
        if ok and _search(patterns, used, remaining - 1, rels, index, b, checks, out, limit):
            for s in bound:
                b[s] = None
            used[pick] = False
            return True
        for s in bound:
            b[s] = None
    used[pick] = False
    return False
