"""Command-line entry point.

Exit codes: 0 success, 1 negative verdict of a check, 2 usage or input
error, 3 budget exhausted.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .analysis import (
    IslandCapExceeded,
    LocalityParams,
    check_enough,
    compute_C_D,
    distancing_probe,
    locality_refute,
    ubdd_probe,
)
from .chase import ChaseBudgetExceeded, chase_to
from .homo import CoreBudgetExceeded, core_retract
from .markedrw import run_process, run_process_K
from .model import Constant, format_atom, sorted_atoms
from .normalizer import AncestorConstants, ancestor_probe, normalize
from .rewriter import IncompleteRewriting, rewrite
from .textio import (
    ParseError,
    parse_instance,
    parse_queries,
    parse_query,
    parse_rules,
    print_instance,
    print_queries,
    print_rules,
    print_term,
)

SCHEMA = 1

log = logging.getLogger("chasekit")


class UsageError(Exception):
    pass


class BudgetError(Exception):
    pass


def write_atomic(path: str, text: str):
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(path: str | None, command: str, payload: dict):
    if not path:
        return
    doc = {"schema": SCHEMA, "command": command, **payload}
    write_atomic(path, json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _rules(path):
    return parse_rules(_read(path))


def _data(path):
    return parse_instance(_read(path))


def _positive(name):
    def conv(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be positive")
        return v
    return conv


def _natural(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a non-negative integer") from None
    if v < 0:
        raise argparse.ArgumentTypeError("expected a non-negative integer")
    return v


# ----------------------------------------------------------------------
# Subcommands


def cmd_chase(a) -> int:
    theory, inst = _rules(a.rules), _data(a.data)
    try:
        run = chase_to(theory, inst, a.depth, cap=a.cap)
    except ChaseBudgetExceeded as exc:
        raise BudgetError(str(exc)) from None
    lines = []
    for i, delta in enumerate(run.deltas):
        lines.append(f"# stage {i}")
        lines.extend(format_atom(x) + "." for x in sorted_atoms(delta))
    text = "\n".join(lines) + "\n"
    if a.out:
        write_atomic(a.out, text)
    else:
        sys.stdout.write(text)
    write_report(a.report, "chase", {
        "depth": run.depth, "saturated": run.saturated, "atoms": len(run.store),
        "stage_sizes": [len(d) for d in run.deltas]})
    return 0


def cmd_rewrite(a) -> int:
    theory, q = _rules(a.rules), parse_query(_read(a.query))
    rs = rewrite(theory, q, a.fuel)
    header = f"# complete={str(rs.complete).lower()} rounds={rs.fuel_used}"
    text = print_queries(rs.queries, header)
    if a.out:
        write_atomic(a.out, text)
    else:
        sys.stdout.write(text)
    write_report(a.report, "rewrite", {"complete": rs.complete, "rounds": rs.fuel_used,
                                      "size": len(rs), "rs": rs.rs_value})
    if not rs.complete:
        raise BudgetError(f"rewriting incomplete after fuel {a.fuel}")
    return 0


def cmd_markedrw(a) -> int:
    q = parse_query(_read(a.query))
    try:
        if a.K and a.K != 2:
            res = run_process_K(a.K, q, step_budget=a.steps)
        else:
            res = run_process(q, step_budget=a.steps)
    except RuntimeError as exc:
        raise BudgetError(str(exc)) from None
    if a.trace:
        lines = []
        for st in res.trace:
            lines.append(
                f"{st.index}\t{st.operation}{'/domain' if st.domain_step else ''}\tvar={st.variable}\tquery={st.query}\t"
                f"results={' | '.join(st.results) or '-'}\t"
                f"srk_removed={st.rank_before!r}\tsrk_added={list(st.rank_afters)!r}")
        write_atomic(a.trace, "\n".join(lines) + ("\n" if lines else ""))
    text = print_queries(res.rewriting.queries, f"# steps={res.steps}")
    if a.emit_ucq:
        write_atomic(a.emit_ucq, text)
    else:
        sys.stdout.write(text)
    write_report(a.report, "markedrw", {"steps": res.steps, "size": len(res.rewriting)})
    return 0


def cmd_core(a) -> int:
    theory, inst = _rules(a.rules), _data(a.data)
    try:
        res = core_retract(theory, inst, a.depth, slack=a.slack, cap=a.cap, budget=a.budget)
    except (ChaseBudgetExceeded, CoreBudgetExceeded) as exc:
        raise BudgetError(str(exc)) from None
    if res is None:
        write_report(a.report, "core", {"found": False, "depth": a.depth})
        print(f"no core found within depth {a.depth}", file=sys.stderr)
        return 1
    text = print_instance(res.core)
    if a.out:
        write_atomic(a.out, text)
    else:
        sys.stdout.write(text)
    write_report(a.report, "core", {"found": True, "c": res.c_value, "stage": res.stage,
                                   "slack": res.slack, "size": len(res.core)})
    return 0


def _parse_pair(s):
    left, sep, right = s.partition(":")
    if not sep or not left or not right:
        raise argparse.ArgumentTypeError("pairs are written s:t")
    return Constant(left), Constant(right)


def cmd_analyze(a) -> int:
    theory = _rules(a.rules)
    datas = [_data(p) for p in a.data]
    D = datas[0]
    try:
        if a.probe == "locality":
            rep = locality_refute(theory, LocalityParams(a.l, a.degree, a.depth), D, cap=a.cap)
            write_report(a.report, "analyze locality", rep.to_json())
            print(rep.verdict)
            if rep.refuted:
                print(f"witness: {rep.witness['atom']}")
                return 1
            return 0
        if a.probe == "distancing":
            pairs = a.pair or []
            if not pairs:
                dom = sorted(D.active_domain, key=lambda t: t.sort_key())
                pairs = [(s, t) for i, s in enumerate(dom) for t in dom[i + 1:]]
            rep = distancing_probe(theory, D, pairs, a.depth, cap=a.cap)
            write_report(a.report, "analyze distancing", rep.to_json())
            for row in rep.table:
                print(f"{row['s']} {row['t']} dist_d={row['dist_d']} dist_ch={row['dist_ch']} "
                      f"dist_derived={row['dist_derived']} ratio={row['ratio']}")
            return 0
        if a.probe == "enough":
            if a.queries is None:
                raise UsageError("analyze enough needs --queries")
            qs = parse_queries(_read(a.queries))
            args = [tuple(Constant(x) for x in s.split(",") if x) for s in (a.args or [])]
            if len(args) < len(qs):
                args += [()] * (len(qs) - len(args))
            verdicts = check_enough(theory, D, a.n, list(zip(qs, args)), a.depth, cap=a.cap)
            write_report(a.report, "analyze enough", {"n": a.n, "depth": a.depth,
                                                      "verdicts": verdicts})
            for v in verdicts:
                print({True: "true", False: "false", None: "unknown"}[v])
            return 1 if any(v is False for v in verdicts) else 0
        if a.probe == "cd":
            res = compute_C_D(theory, D, a.l, a.depth, cap=a.cap)
            text = print_instance(res.instance)
            if a.out:
                write_atomic(a.out, text)
            else:
                sys.stdout.write(text)
            write_report(a.report, "analyze cd", {"k": res.k, "c_values": list(res.c_values),
                                                 "atoms": [format_atom(x) for x in
                                                           sorted_atoms(res.instance.facts)]})
            return 0
        if a.probe == "ubdd":
            rep = ubdd_probe(theory, datas, a.depth, cap=a.cap)
            write_report(a.report, "analyze ubdd", rep.to_json())
            print(f"c_T candidate: {rep.constants_estimated['c_T_candidate']}")
            return 0
    except (ChaseBudgetExceeded, CoreBudgetExceeded, IslandCapExceeded) as exc:
        raise BudgetError(str(exc)) from None
    raise UsageError(f"unknown probe {a.probe}")


def cmd_normalize(a) -> int:
    theory = _rules(a.rules)
    try:
        nf = normalize(theory, a.fuel)
    except IncompleteRewriting as exc:
        raise BudgetError(str(exc)) from None
    text = print_rules(nf.t_nf)
    if a.out:
        write_atomic(a.out, text)
    else:
        sys.stdout.write(text)
    write_report(a.report, "normalize", {
        "t_ii": len(nf.t_ii), "t_iii": len(nf.t_iii),
        "m_predicates": {k: print_queries([q]).strip() for k, q in sorted(nf.m_predicates.items())}})
    return 0


def cmd_ancestors(a) -> int:
    theory, inst = _rules(a.rules), _data(a.data)
    try:
        run = chase_to(theory, inst, a.depth, cap=a.cap, record=True)
    except ChaseBudgetExceeded as exc:
        raise BudgetError(str(exc)) from None
    consts = AncestorConstants.of(theory)
    rep = ancestor_probe(run, consts, samples=a.samples, seed=a.seed)
    counts = {print_term(t): c for t, c in rep.counts.items()}
    write_report(a.report, "ancestors", {
        "constants": {"k": consts.k, "h": consts.h, "n": consts.n, "N": consts.N, "M": consts.M},
        "counts": counts, "within_bound": rep.within_bound, "samples": rep.samples,
        "seed": a.seed, "depth": run.depth})
    for t, c in counts.items():
        print(f"{t}\t{c}")
    print(f"M = {consts.M}; within bound: {str(rep.within_bound).lower()}")
    return 0 if rep.within_bound else 1


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chasekit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"chasekit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--rules", required=True)
        if data:
            sp.add_argument("--data", required=True)
        sp.add_argument("--cap", type=_positive("cap"), default=500_000)
        sp.add_argument("--report")

    sp = sub.add_parser("chase", help="run the Skolem chase stage by stage")
    common(sp)
    sp.add_argument("--depth", type=_natural, required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_chase)

    sp = sub.add_parser("rewrite", help="piece-unification UCQ rewriting")
    common(sp, data=False)
    sp.add_argument("--query", required=True)
    sp.add_argument("--fuel", type=_positive("fuel"), default=8)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_rewrite)

    sp = sub.add_parser("markedrw", help="marked-query rewriting for the grid theories")
    sp.add_argument("--query", required=True)
    sp.add_argument("--K", type=_positive("K"), default=2)
    sp.add_argument("--trace")
    sp.add_argument("--emit-ucq", dest="emit_ucq")
    sp.add_argument("--steps", type=_positive("steps"), default=200_000)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_markedrw)

    sp = sub.add_parser("core", help="chase core by retraction search")
    common(sp)
    sp.add_argument("--depth", type=_natural, required=True)
    sp.add_argument("--slack", type=_natural, default=2)
    sp.add_argument("--budget", type=_positive("budget"), default=200_000)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_core)

    sp = sub.add_parser("analyze", help="locality, distancing, Enough, C_D and UBDD probes")
    sp.add_argument("probe", choices=["locality", "distancing", "enough", "cd", "ubdd"])
    sp.add_argument("--rules", required=True)
    sp.add_argument("--data", required=True, action="append")
    sp.add_argument("--l", type=_positive("l"), default=1)
    sp.add_argument("--degree", type=_natural)
    sp.add_argument("--depth", type=_positive("depth"), default=3)
    sp.add_argument("--n", type=_natural, default=0)
    sp.add_argument("--queries")
    sp.add_argument("--args", action="append", help="comma-separated constants, one per query")
    sp.add_argument("--pair", action="append", type=_parse_pair, help="s:t")
    sp.add_argument("--cap", type=_positive("cap"), default=500_000)
    sp.add_argument("--out")
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("normalize", help="normalize a binary theory")
    sp.add_argument("--rules", required=True)
    sp.add_argument("--fuel", type=_positive("fuel"), default=8)
    sp.add_argument("--out")
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_normalize)

    sp = sub.add_parser("ancestors", help="ancestor counts per skeleton tree")
    common(sp)
    sp.add_argument("--depth", type=_natural, required=True)
    sp.add_argument("--samples", type=_natural, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_ancestors)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return a.func(a)
    except (UsageError, ParseError, ValueError) as exc:
        print(f"chasekit {a.command}: error: {exc}", file=sys.stderr)
        return 2
    except BudgetError as exc:
        print(f"chasekit {a.command}: budget exhausted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
