import json

import pytest

from chasekit import __version__
from chasekit.cli import main
from chasekit.homo import cq_equivalent
from chasekit.textio import parse_queries

from corpus import RC_TEXT, TA_TEXT, TP_TEXT, g_path_query, phi_r


@pytest.fixture
def files(tmp_path):
    def put(name, text):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return put


def test_chase_prints_stages(files, capsys, tmp_path):
    rules, data = files("t.rules", TA_TEXT), files("d.facts", "Human(abel).")
    report = str(tmp_path / "r.json")
    assert main(["chase", "--rules", rules, "--data", data, "--depth", "3", "--report", report]) == 0
    out = capsys.readouterr().out
    assert "# stage 3" in out and "Mother(sk[Mother(f1,e1)/2](abel),sk[" in out
    doc = json.loads(open(report).read())
    assert doc["schema"] == 1 and doc["stage_sizes"] == [1, 1, 1, 1]


def test_markedrw_emits_green_path(files, tmp_path):
    from chasekit.textio import print_queries

    q = files("q.cq", print_queries([phi_r(3)]))
    out, trace = str(tmp_path / "ucq.txt"), str(tmp_path / "trace.tsv")
    assert main(["markedrw", "--query", q, "--emit-ucq", out, "--trace", trace]) == 0
    ucq = parse_queries(open(out).read())
    assert any(cq_equivalent(p, g_path_query(8)) for p in ucq)
    first = open(trace).readline().split("\t")
    assert first[0] == "1" and first[1] in {"cut-red", "cut-green", "fuse-red", "fuse-green",
                                            "reduce"}


def test_locality_refutation_exit_code(files, capsys):
    rules = files("rc.rules", RC_TEXT)
    data = files("c4.facts", "E(a,b). E(b,c). E(c,d). E(d,a).")
    code = main(["analyze", "locality", "--rules", rules, "--data", data, "--l", "3",
                 "--degree", "2", "--depth", "4"])
    out = capsys.readouterr().out
    assert code == 1 and out.startswith("refuted") and "witness:" in out


def test_rewrite_and_normalize(files, capsys):
    rules, q = files("tp.rules", TP_TEXT), files("q.cq", "?(y) := E(y,z).")
    assert main(["rewrite", "--rules", rules, "--query", q, "--fuel", "3"]) == 0
    assert "complete=true" in capsys.readouterr().out
    assert main(["normalize", "--rules", rules]) == 0
    assert "M__empty" in capsys.readouterr().out


def test_core_found_and_missing(files, capsys):
    data = files("d.facts", "E(a,b).")
    core = files("c.rules", "E(x,y) -> exists z. E(y,z).\nE(x,x1), E(x1,x2) -> E(x1,x1).")
    assert main(["core", "--rules", core, "--data", data, "--depth", "4"]) == 0
    assert "E(b,b)." in capsys.readouterr().out
    assert main(["core", "--rules", files("tp.rules", TP_TEXT), "--data", data,
                 "--depth", "3"]) == 1


def test_error_exit_codes(files, capsys):
    data = files("d.facts", "Human(abel).")
    assert main(["chase", "--rules", "/nonexistent.rules", "--data", data, "--depth", "1"]) == 2
    assert main(["chase", "--rules", files("bad.rules", "Human(x -> P(x)."), "--data", data,
                 "--depth", "1"]) == 2
    assert main(["chase", "--rules", files("ta.rules", TA_TEXT), "--data", data,
                 "--depth", "9", "--cap", "3"]) == 3
    # fuel runs out before the rewriting saturates
    q = files("q.cq", "?(y) := E(y,z).")
    assert main(["rewrite", "--rules", files("tp.rules", TP_TEXT), "--query", q,
                 "--fuel", "1"]) == 3
    assert main(["chase", "--depth", "-1", "--rules", q, "--data", data]) == 2
    capsys.readouterr()


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out
