import json
from collections import defaultdict
from importlib import resources

import pytest

from spmodel import new_pattern, parse_grammar
from spmodel.alignment import Appearance, MultipleAlignment, parse_rendering, score
from spmodel.cli import run

DATA = resources.files("spmodel").joinpath("data")
FORTUNE_SENTENCE = "f o r t u n e f a v o u r s t h e b r a v e"


def grammar(name):
    return str(DATA.joinpath(f"{name}.sp"))


def call(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def read_record(line, store):
    """Rebuild an alignment from one structured output record."""
    rec = json.loads(line)
    assert list(rec) == ["rank", "score", "rows", "columns"]
    rows = rec["rows"]
    patterns = [new_pattern(rows[0]["tokens"])] + [store[r["pid"]] for r in rows[1:]]
    seen = defaultdict(int)
    appearances = [Appearance(-1)]
    for r in rows[1:]:
        appearances.append(Appearance(r["pid"], seen[r["pid"]]))
        seen[r["pid"]] += 1
    links = [tuple(tuple(c) for c in col) for col in rec["columns"] if len(col) == 2]
    ma = MultipleAlignment(patterns, appearances, links)
    ma.score = score(ma, store)
    return rec, ma


def test_align_fortune_text(capsys):
    code, out, _ = call(capsys, "align", "--grammar", grammar("fortune"), "--new", FORTUNE_SENTENCE,
                        "--top-k", "1")
    assert code == 0
    header, *body = out.splitlines()
    assert header.startswith("# alignment 1: cd=")
    labels, rows = parse_rendering("\n".join(body) + "\n")
    assert labels[0] == "NEW" and len(labels) == 10
    assert " ".join(tok for _, tok in rows[0]) == FORTUNE_SENTENCE


def test_align_top_k(capsys):
    code, out, _ = call(capsys, "align", "--grammar", grammar("creatures"), "--new",
                        "eats furry purrs white-bib", "--top-k", "3")
    assert code == 0
    assert [ln.split(":")[0] for ln in out.splitlines() if ln.startswith("#")] == \
        ["# alignment 1", "# alignment 2", "# alignment 3"]


def test_structured_records_round_trip(capsys):
    store = parse_grammar(DATA.joinpath("fortune.sp").read_text())
    code, out, _ = call(capsys, "align", "--grammar", grammar("fortune"), "--new", FORTUNE_SENTENCE,
                        "--format", "structured", "--top-k", "2")
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 2
    for k, line in enumerate(lines, 1):
        rec, ma = read_record(line, store)
        assert rec["rank"] == k
        assert [[list(c) for c in col.cells] for col in ma.columns] == rec["columns"]
        assert round(ma.score.cd, 6) == rec["score"]["cd"]
        assert set(rec["score"]) == {"cd", "b_new", "b_enc", "coverage"}


def test_align_empty_grammar(capsys):
    code, out, _ = call(capsys, "align", "--new", "a b c")
    assert code == 0
    assert "cd=0.000" in out.splitlines()[0]


def test_encode_fortune(capsys):
    code, out, _ = call(capsys, "encode", "--grammar", grammar("fortune"), "--new", FORTUNE_SENTENCE)
    assert (code, out) == (0, "S 0 2 4 3 7 6 1 8 5 #S\n")


def test_decode_fortune(capsys):
    code, out, _ = call(capsys, "decode", "--grammar", grammar("fortune"), "--code",
                        "S 0 2 4 3 7 6 1 8 5 #S")
    assert (code, out) == (0, FORTUNE_SENTENCE + "\n")


def test_decode_structured(capsys):
    code, out, _ = call(capsys, "decode", "--grammar", grammar("fortune"), "--code",
                        "S 0 2 4 3 7 6 1 8 5 #S", "--format", "structured")
    assert code == 0 and json.loads(out) == {"surface": FORTUNE_SENTENCE.split()}


def test_decode_failure_is_data_error(capsys):
    code, _, err = call(capsys, "decode", "--grammar", grammar("fortune"), "--code", "Q")
    assert code == 2 and "Q" in err


def test_input_file(capsys, tmp_path):
    src = tmp_path / "new.txt"
    src.write_text(FORTUNE_SENTENCE + "\n")
    code, out, _ = call(capsys, "encode", "--grammar", grammar("fortune"), "--input", str(src))
    assert (code, out) == (0, "S 0 2 4 3 7 6 1 8 5 #S\n")


def test_learn_writes_grammar(capsys, tmp_path):
    out_path = tmp_path / "learned.sp"
    code, out, _ = call(capsys, "learn", "--corpus", str(DATA.joinpath("mini_corpus.txt")),
                        "--out", str(out_path), "--epochs", "2", "--sift-interval", "8")
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 16
    assert lines[0].startswith("0: stored")
    assert all(ln.split()[1] == "recognized" for ln in lines[8:])
    store = parse_grammar(out_path.read_text())
    store.check()
    assert len(store) > 0


def test_learn_prints_grammar_without_out(capsys, tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("t h e b i g h o u s e\nt h e s m a l l h o u s e\n")
    code, out, _ = call(capsys, "learn", "--corpus", str(corpus))
    assert code == 0
    lines = out.splitlines()
    assert lines[:2] == ["0: stored 0", "1: segmented 1 2 3 4 5"]
    assert len(parse_grammar("\n".join(lines[2:]))) == 6


def test_simulate_creatures(capsys):
    code, out, _ = call(capsys, "simulate", "--grammar", grammar("creatures"), "--new",
                        "eats furry purrs white-bib")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "stage 1: 0=0 1=0 2=0 3=0 4=0 5=0"
    assert any(ln.startswith("# alignment 1:") for ln in lines)


def test_simulate_structured(capsys):
    store = parse_grammar(DATA.joinpath("intensifier.sp").read_text())
    code, out, _ = call(capsys, "simulate", "--grammar", grammar("intensifier"), "--new",
                        "the very very fast car", "--format", "structured")
    assert code == 0
    *stages, last = out.splitlines()
    assert json.loads(stages[0])["stage"] == 1
    _, ma = read_record(last, store)
    assert sum(store[p].class_token == "ri" for p in ma.pids()) == 2


def test_simulate_unknown_input_is_data_error(capsys):
    code, out, _ = call(capsys, "simulate", "--grammar", grammar("creatures"), "--new", "zzz")
    assert code == 2 and out.startswith("stage 1:")


def test_deterministic_output(capsys):
    argv = ["align", "--grammar", grammar("intensifier"), "--new", "the very very fast car"]
    assert call(capsys, *argv) == call(capsys, *argv)


@pytest.mark.parametrize("argv", [
    ["align"],
    ["align", "--new", "a", "--input", "x.txt"],
    ["align", "--new", "   "],
    ["align", "--new", "a", "--beam-width", "0"],
    ["align", "--new", "a", "--bogus"],
    ["align", "--grammar", "/nonexistent/g.sp", "--new", "a"],
    ["frobnicate"],
    ["learn"],
])
def test_usage_errors(capsys, argv):
    assert call(capsys, *argv)[0] == 1


def test_malformed_grammar_is_data_error(capsys, tmp_path):
    bad = tmp_path / "bad.sp"
    bad.write_text("a b\nX | y\n")
    code, _, err = call(capsys, "align", "--grammar", str(bad), "--new", "a")
    assert code == 2 and "line 2" in err
