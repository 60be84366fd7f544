"""A discrete-time simulator of pattern assemblies.

``compile`` turns a store into a network: one assembly per pattern, one
receptor per input token, and fixed connections that run by token equality
from ID symbols (and receptors) to contents symbols.  ``step_stages`` then
propagates excitation bottom-up in stages.  At each stage every assembly
looks for order-consistent matches of its contents against the signals
currently available; each distinct match is an instance clone.  Clones that
draw on the same source inhibit one another, and the survivors send their
own ID signal onwards.  ``extract_nama`` reads the winning structure back
out as a multiple alignment.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .alignment import (Appearance, InvalidAlignment, MultipleAlignment, score)
from .patterns import Klass, Pattern, Store, new_pattern

log = logging.getLogger(__name__)


class RecognitionFailure(ValueError):
    """No winning assembly is connected to the input."""


@dataclass(frozen=True)
class NeuralSymbol:
    token: str
    klass: Klass
    assembly: int
    index: int


@dataclass(frozen=True)
class PatternAssembly:
    pid: int
    symbols: tuple[NeuralSymbol, ...]

    @property
    def lateral(self) -> list[tuple[int, int]]:
        return [(i, i + 1) for i in range(len(self.symbols) - 1)]


RECEPTOR = -1


@dataclass(frozen=True)
class Connection:
    source: NeuralSymbol  # an ID symbol, or a receptor (assembly == RECEPTOR)
    target: NeuralSymbol  # a contents symbol with the same token
    weight: float = 1.0


@dataclass
class Network:
    store: Store
    assemblies: dict[int, PatternAssembly]
    receptors: dict[str, NeuralSymbol]
    connections: list[Connection]

    def incoming(self, target: NeuralSymbol) -> list[Connection]:
        return [c for c in self.connections if c.target == target]


@dataclass
class SimConfig:
    retain_ratio: float = 0.8
    max_stages: int = 16
    max_appearances: int = 10

    def __post_init__(self):
        if not 0.0 < self.retain_ratio <= 1.0:
            raise ValueError("retain_ratio must be in (0, 1]")
        if self.max_stages < 1 or self.max_appearances < 1:
            raise ValueError("max_stages and max_appearances must be positive")


def compile(store: Store) -> Network:
    assemblies = {}
    for p in store:
        syms = tuple(NeuralSymbol(s.token, s.klass, p.pid, i) for i, s in enumerate(p.symbols))
        assemblies[p.pid] = PatternAssembly(p.pid, syms)
    id_tokens = {s.token for a in assemblies.values() for s in a.symbols if s.klass is Klass.ID}
    receptors = {}
    for a in assemblies.values():
        for s in a.symbols:
            if s.klass is Klass.CONTENTS and s.token not in id_tokens and s.token not in receptors:
                receptors[s.token] = NeuralSymbol(s.token, Klass.CONTENTS, RECEPTOR, len(receptors))
    by_token: dict[str, list[NeuralSymbol]] = defaultdict(list)
    for a in assemblies.values():
        for s in a.symbols:
            if s.klass is Klass.CONTENTS:
                by_token[s.token].append(s)
    connections = []
    sources = [s for a in assemblies.values() for s in a.symbols if s.klass is Klass.ID]
    sources += list(receptors.values())
    for src in sources:
        for dst in by_token.get(src.token, ()):
            connections.append(Connection(src, dst))
    return Network(store, assemblies, receptors, connections)


# simulation


@dataclass(frozen=True)
class Unit:
    """A signal available to assemblies: an input token at one position, or
    the exported (class, close) pair of a winning clone."""

    uid: int
    key: tuple[str, ...]
    start: int
    end: int  # inclusive
    clone: Optional[int] = None


@dataclass(frozen=True)
class Clone:
    cid: int
    pid: int
    matches: tuple[tuple[int, int], ...]  # (first symbol index, unit uid)
    excitation: float
    start: int
    end: int


@dataclass
class ExcitationState:
    stage: int
    assembly: dict[int, float]
    activation: dict[tuple[int, int], float]
    winners: list[int]


@dataclass
class SimTrace:
    tokens: list[str]
    states: list[ExcitationState] = field(default_factory=list)
    units: dict[int, Unit] = field(default_factory=dict)
    clones: dict[int, Clone] = field(default_factory=dict)
    converged: bool = False

    @property
    def winners(self) -> list[Clone]:
        if not self.states:
            return []
        return [self.clones[c] for c in self.states[-1].winners]

    def export(self) -> str:
        return format_trace(self)


def _elements(pat: Pattern) -> list[tuple[int, tuple[str, ...]]]:
    """Matchable pieces of an assembly's contents: single tokens, and
    adjacent token pairs that could carry a reference."""
    out = []
    body = [i for i, s in enumerate(pat.symbols) if s.klass is Klass.CONTENTS]
    for i in body:
        out.append((i, (pat.symbols[i].token,)))
        if i + 1 in body:
            out.append((i, (pat.symbols[i].token, pat.symbols[i + 1].token)))
    return out


def _matches(pat: Pattern, by_start: dict[int, list[Unit]]) -> list[tuple[tuple[int, int], ...]]:
    """All maximal contiguous, order-consistent matches of ``pat``."""
    elems = _elements(pat)
    if not elems:
        return []
    found = []

    def grow(chain: list[tuple[int, Unit]], next_sym: int):
        end = chain[-1][1].end
        extended = False
        for i, key in elems:
            if i < next_sym:
                continue
            for u in by_start.get(end + 1, ()):
                if u.key == key:
                    extended = True
                    chain.append((i, u))
                    grow(chain, i + len(key))
                    chain.pop()
        if not extended:
            found.append(tuple((i, u.uid) for i, u in chain))

    ends: dict[int, list[Unit]] = defaultdict(list)
    for units in by_start.values():
        for u in units:
            ends[u.end].append(u)
    for i, key in elems:
        for start in sorted(by_start):
            for u in by_start[start]:
                if u.key != key:
                    continue
                # Left-maximal only: skip starts that an earlier element could precede.
                if any(v.key == k2 and j + len(k2) <= i
                       for v in ends.get(u.start - 1, ()) for j, k2 in elems):
                    continue
                grow([(i, u)], i + len(key))
    return found


def inhibit_select(excitation: dict[int, float], groups: Sequence[Sequence[int]],
                   retain_ratio: float = 0.8) -> dict[int, float]:
    """Zero every member of a group that falls below the group's best times
    ``retain_ratio``.  Ties with the best are always kept."""
    out = dict(excitation)
    for group in groups:
        if len(group) < 2:
            continue
        top = max(excitation[g] for g in group)
        for g in group:
            if excitation[g] < top * retain_ratio:
                out[g] = 0.0
    return out


def step_stages(net: Network, tokens: Sequence[str] | str,
                cfg: Optional[SimConfig] = None) -> SimTrace:
    cfg = cfg or SimConfig()
    if isinstance(tokens, str):
        tokens = tokens.split()
    tokens = list(tokens)
    if not tokens:
        raise ValueError("empty input")
    trace = SimTrace(tokens)
    # Stage 1: receptors turn input tokens into position-tagged signals.
    for p, tok in enumerate(tokens):
        if tok in net.receptors:
            uid = len(trace.units)
            trace.units[uid] = Unit(uid, (tok,), p, p)
    seen: dict[tuple, int] = {}
    exported: set[int] = set()
    stage = 1
    trace.states.append(ExcitationState(1, {pid: 0.0 for pid in net.assemblies}, {}, []))
    if not trace.units:
        trace.converged = True
        return trace
    while True:
        if stage >= cfg.max_stages:
            log.warning("no fixpoint after %d stages", stage)
            break
        stage += 1
        by_start: dict[int, list[Unit]] = defaultdict(list)
        for u in trace.units.values():
            by_start[u.start].append(u)
        candidates = []
        for pid, asm in net.assemblies.items():
            pat = net.store[pid]
            for m in _matches(pat, by_start):
                key = (pid, m)
                if key not in seen:
                    units = [trace.units[uid] for _, uid in m]
                    exc = float(sum(len(u.key) for u in units))
                    cid = len(trace.clones)
                    trace.clones[cid] = Clone(cid, pid, m, exc, units[0].start, units[-1].end)
                    seen[key] = cid
                candidates.append(seen[key])
        by_source: dict[int, list[int]] = defaultdict(list)
        for cid in candidates:
            for _, uid in trace.clones[cid].matches:
                by_source[uid].append(cid)
        kept = inhibit_select({c: trace.clones[c].excitation for c in candidates},
                              list(by_source.values()), cfg.retain_ratio)
        winners = sorted(c for c, e in kept.items() if e > 0)
        level = {pid: 0.0 for pid in net.assemblies}
        activation: dict[tuple[int, int], float] = {}
        for cid in winners:
            cl = trace.clones[cid]
            level[cl.pid] = max(level[cl.pid], cl.excitation)
            for i, uid in cl.matches:
                for k in range(len(trace.units[uid].key)):
                    activation[(cl.pid, i + k)] = 1.0
        trace.states.append(ExcitationState(stage, level, activation, winners))
        fresh = 0
        for cid in winners:
            cl = trace.clones[cid]
            pat = net.store[cl.pid]
            if cid in exported or not pat.prefix_len or not pat.suffix_len:
                continue
            exported.add(cid)
            uid = len(trace.units)
            trace.units[uid] = Unit(uid, (pat.class_token, pat.close_token), cl.start, cl.end, cid)
            fresh += 1
        if not fresh and trace.states[-2].winners == winners:
            trace.converged = True
            break
    return trace


def format_trace(trace: SimTrace) -> str:
    lines = []
    for st in trace.states:
        parts = [f"{pid}={_num(v)}" for pid, v in sorted(st.assembly.items())]
        lines.append(f"stage {st.stage}: " + " ".join(parts))
    return "\n".join(lines) + "\n"


def _num(v: float) -> str:
    return str(int(v)) if v == int(v) else f"{v:.3f}"


# reading the result back out


def _tree(trace: SimTrace, cid: int) -> list[int]:
    out = [cid]
    for _, uid in trace.clones[cid].matches:
        sub = trace.units[uid].clone
        if sub is not None:
            out.extend(_tree(trace, sub))
    return out


def _dangling(net: Network, trace: SimTrace, tree: list[int]) -> int:
    id_tokens = net.store.id_tokens()
    count = 0
    for cid in tree:
        cl = trace.clones[cid]
        pat = net.store[cl.pid]
        used = set()
        for i, uid in cl.matches:
            used.update(range(i, i + len(trace.units[uid].key)))
        count += sum(1 for i, s in enumerate(pat.symbols)
                     if s.klass is Klass.CONTENTS and i not in used and s.token in id_tokens)
    return count


def extract_nama(trace: SimTrace, net: Network, cfg: Optional[SimConfig] = None
                 ) -> MultipleAlignment:
    """The winning clone with the widest input coverage (then fewest
    unfilled references, then most rows), with the clones beneath it."""
    cfg = cfg or SimConfig()
    best = None
    for cl in trace.winners:
        tree = _tree(trace, cl.cid)
        per_pid = defaultdict(int)
        for cid in tree:
            per_pid[trace.clones[cid].pid] += 1
        if max(per_pid.values()) > cfg.max_appearances:
            continue
        cover = cl.end - cl.start + 1
        key = (-cover, _dangling(net, trace, tree), -len(tree), cl.cid)
        if best is None or key < best[0]:
            best = (key, tree)
    if best is None:
        raise RecognitionFailure("no winning assembly is connected to the input")
    tree = best[1]
    rows = {cid: r + 1 for r, cid in enumerate(tree)}
    patterns = [new_pattern(trace.tokens)] + [net.store[trace.clones[c].pid] for c in tree]
    count: dict[int, int] = defaultdict(int)
    appearances = [Appearance(patterns[0].pid)]
    for c in tree:
        pid = trace.clones[c].pid
        appearances.append(Appearance(pid, count[pid]))
        count[pid] += 1
    links = []
    for cid in tree:
        r = rows[cid]
        for i, uid in trace.clones[cid].matches:
            u = trace.units[uid]
            if u.clone is None:
                links.append(((0, u.start), (r, i)))
            else:
                sub = net.store[trace.clones[u.clone].pid]
                s = rows[u.clone]
                links.append(((s, 0), (r, i)))
                links.append(((s, len(sub) - sub.suffix_len), (r, i + 1)))
    try:
        ma = MultipleAlignment(patterns, appearances, links)
    except InvalidAlignment as exc:
        raise RecognitionFailure(f"winning structure is not order-consistent: {exc}") from None
    ma.score = score(ma, net.store)
    return ma


def simulate(store: Store, tokens: Sequence[str] | str, cfg: Optional[SimConfig] = None
             ) -> tuple[SimTrace, MultipleAlignment]:
    net = compile(store)
    trace = step_stages(net, tokens, cfg)
    return trace, extract_nama(trace, net, cfg)
