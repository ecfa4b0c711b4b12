# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled conjunctive matching kernel; same contract as _pykernel.match."""


def match(list patterns, dict rels, dict index, binding, checks=None, limit=0):
    cdef list out = []
    cdef list b = list(binding)
    cdef int n = len(patterns)
    cdef list used = [False] * n
    cdef list pats = [(p[0], tuple(p[1])) for p in patterns]
    _search(pats, used, n, rels, index, b, checks, out, limit)
    return out


cdef object _candidates(object rel, tuple args, list b, dict rels, dict index):
    cdef object best = None
    cdef Py_ssize_t pos, n = len(args)
    cdef object a, val, lst
    for pos in range(n):
        a = args[pos]
        if type(a) is int:
            val = b[<Py_ssize_t>a]
        else:
            val = a
        if val is not None:
            lst = index.get((rel, pos, val))
            if lst is None:
                return ()
            if best is None or len(lst) < len(best):
                best = lst
    if best is None:
        return rels.get(rel, ())
    return best


cdef bint _search(list patterns, list used, int remaining, dict rels, dict index,
                  list b, object checks, list out, Py_ssize_t limit) except -1:
    cdef Py_ssize_t i, pick = -1, pos, nargs, k, slot
    cdef object cands = None, c, fact, val, cur, a, chk
    cdef tuple args, p
    cdef list bound
    cdef bint ok
    if remaining == 0:
        out.append(tuple(b))
        return limit > 0 and len(out) >= limit
    for i in range(len(patterns)):
        if used[i]:
            continue
        p = <tuple>patterns[i]
        c = _candidates(p[0], <tuple>p[1], b, rels, index)
        if cands is None or len(c) < len(cands):
            pick = i
            cands = c
            if len(c) == 0:
                return False
    args = <tuple>(<tuple>patterns[pick])[1]
    nargs = len(args)
    used[pick] = True
    for fact in cands:
        bound = []
        ok = True
        for pos in range(nargs):
            val = fact[pos]
            a = args[pos]
            if type(a) is int:
                slot = <Py_ssize_t>a
                cur = b[slot]
                if cur is None:
                    if checks is not None:
                        chk = checks[slot]
                        if chk is not None and (val in chk[1]) != chk[0]:
                            ok = False
                            break
                    b[slot] = val
                    bound.append(slot)
                elif not (cur is val or cur == val):
                    ok = False
                    break
            elif not (a is val or a == val):
                ok = False
                break
        if ok and _search(patterns, used, remaining - 1, rels, index, b, checks, out, limit):
            for k in range(len(bound)):
                b[<Py_ssize_t>bound[k]] = None
            used[pick] = False
            return True
        for k in range(len(bound)):
            b[<Py_ssize_t>bound[k]] = None
    used[pick] = False
    return False
