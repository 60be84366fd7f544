from collections import Counter

import pytest

from spmodel import Klass, Store, example_grammar, new_pattern, parse_grammar
from spmodel.alignment import build_alignments, check_alignment
from spmodel.neural import (RECEPTOR, RecognitionFailure, SimConfig, compile, extract_nama,
                            format_trace, inhibit_select, simulate, step_stages)

CASES = [
    ("fortune", "f o r t u n e f a v o u r s t h e b r a v e"),
    ("creatures", "eats furry purrs white-bib"),
    ("intensifier", "the very very very fast car"),
]


def matched_tokens(ma):
    return Counter(col.token for col in ma.columns if len(col.cells) == 2)


def pid_of(store, cls):
    (p,) = [p for p in store if p.class_token == cls]
    return p.pid


def test_compile_fortune():
    store = example_grammar("fortune")
    net = compile(store)
    assert len(net.assemblies) == 9
    vr, v = pid_of(store, "Vr"), pid_of(store, "V")
    into_v = {(c.source.token, c.target.index) for c in net.connections
              if c.source.assembly == vr and c.target.assembly == v}
    assert into_v == {("Vr", 2), ("#Vr", 3)}


def test_assemblies_mirror_patterns():
    store = example_grammar("fortune")
    net = compile(store)
    for p in store:
        asm = net.assemblies[p.pid]
        assert [(s.token, s.klass) for s in asm.symbols] == [(s.token, s.klass) for s in p.symbols]
        assert [s.index for s in asm.symbols] == list(range(len(p)))
        assert asm.lateral == [(i, i + 1) for i in range(len(p) - 1)]


def test_compile_empty_store():
    net = compile(Store())
    assert not net.assemblies and not net.connections and not net.receptors


def test_compile_creatures_class_chain():
    store = example_grammar("creatures")
    net = compile(store)
    links = {(store[c.source.assembly].class_token, store[c.target.assembly].class_token)
             for c in net.connections if c.source.assembly != RECEPTOR}
    assert {("C", "T"), ("M", "C"), ("A", "M")} <= links
    assert ("R", "T") not in links


def test_connections_join_equal_tokens_once():
    net = compile(example_grammar("creatures"))
    pairs = [(c.source, c.target) for c in net.connections]
    assert len(pairs) == len(set(pairs))
    assert all(c.source.token == c.target.token and c.weight == 1.0 for c in net.connections)
    assert all(c.target.klass is Klass.CONTENTS for c in net.connections)


def test_receptors_exclude_id_tokens():
    net = compile(example_grammar("intensifier"))
    assert "ri" not in net.receptors
    assert {"the", "very", "fast", "car"} <= set(net.receptors)


def test_creatures_winners_and_reptile_suppressed():
    store = example_grammar("creatures")
    trace, ma = simulate(store, "eats furry purrs white-bib")
    assert {store[p].class_token for p in ma.pids()} == {"T", "C", "M", "A"}
    final = trace.states[-1].assembly
    assert final[pid_of(store, "R")] < final[pid_of(store, "M")]
    assert trace.converged


def test_no_known_tokens_fixpoint_at_stage_one():
    net = compile(example_grammar("creatures"))
    trace = step_stages(net, "zzz qq")
    assert trace.converged and len(trace.states) == 1
    assert all(v == 0 for v in trace.states[0].assembly.values())
    with pytest.raises(RecognitionFailure):
        extract_nama(trace, net)


@pytest.mark.parametrize("name, sentence", CASES)
def test_nama_equals_engine(name, sentence):
    store = example_grammar(name)
    _, nama = simulate(store, sentence)
    best = build_alignments(new_pattern(sentence), store)[0]
    assert Counter(nama.pids()) == Counter(best.pids())
    assert matched_tokens(nama) == matched_tokens(best)


def test_deterministic_trace():
    store = example_grammar("fortune")
    a, _ = simulate(store, CASES[0][1])
    b, _ = simulate(store, CASES[0][1])
    assert a.export() == b.export()


def test_trace_format():
    store = parse_grammar("A 1 | x y | #A\n")
    trace, _ = simulate(store, "x y")
    text = format_trace(trace)
    assert text.splitlines()[0] == "stage 1: 0=0"
    assert text.splitlines()[1] == "stage 2: 0=2"


def test_max_stages_reported():
    store = example_grammar("fortune")
    trace = step_stages(compile(store), CASES[0][1], SimConfig(max_stages=2))
    assert not trace.converged and len(trace.states) == 2


def test_inhibit_select():
    exc = {1: 10.0, 2: 8.0, 3: 7.9, 4: 1.0}
    out = inhibit_select(exc, [[1, 2, 3], [4]], retain_ratio=0.8)
    assert out == {1: 10.0, 2: 8.0, 3: 0.0, 4: 1.0}


def test_inhibit_keeps_ties():
    assert inhibit_select({1: 3.0, 2: 3.0}, [[1, 2]], 1.0) == {1: 3.0, 2: 3.0}


@pytest.mark.parametrize("kw", [{"retain_ratio": 0.0}, {"retain_ratio": 1.5},
                                {"max_stages": 0}, {"max_appearances": 0}])
def test_bad_config(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        step_stages(compile(example_grammar("creatures")), [])


@pytest.mark.parametrize("k", [1, 2, 4])
def test_recursion_depth(k):
    store = example_grammar("intensifier")
    _, ma = simulate(store, " ".join(["the"] + ["very"] * k + ["fast", "car"]))
    assert sum(store[p].class_token == "ri" for p in ma.pids()) == k


@pytest.mark.parametrize("name, sentence", CASES)
def test_excitation_bounded_by_assembly_size(name, sentence):
    store = example_grammar(name)
    trace, _ = simulate(store, sentence)
    for state in trace.states:
        assert all(v <= len(store[pid]) for pid, v in state.assembly.items())
        assert all(v >= 0 for v in state.assembly.values())


@pytest.mark.parametrize("name, sentence", CASES)
def test_nama_is_order_consistent(name, sentence):
    _, ma = simulate(example_grammar(name), sentence)
    check_alignment(ma)
