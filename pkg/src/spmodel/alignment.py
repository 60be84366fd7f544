"""Multiple alignment of one New pattern against the store.

An alignment is a set of rows (row 0 is the New pattern, every other row is
an appearance of a stored pattern) plus links that unify pairs of symbols
with equal tokens.  Linked symbols share a column.  Each row fixes the order
of its own columns, so the columns form a partial order; an alignment is
valid only if that order has no cycle.  ``columns`` holds one deterministic
linearisation of it.

Alignments are grown by a staged beam search.  Each stage adds one pattern
appearance, matched against every still-unmatched symbol of the alignment.
"""

from __future__ import annotations

import heapq
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .patterns import Klass, Pattern, Store, Symbol

Cell = tuple[int, int]  # (row, position in that row's pattern)


@dataclass(frozen=True)
class Appearance:
    pid: int
    instance: int = 0


@dataclass(frozen=True)
class Column:
    cells: tuple[Cell, ...]
    token: str


@dataclass(frozen=True)
class CompressionScore:
    b_new: float = 0.0
    b_enc: float = 0.0
    cd: float = 0.0
    coverage: float = 0.0
    unresolved: int = 0
    idle: int = 0
    gaps: int = 0


@dataclass
class SearchConfig:
    beam_width: int = 50
    max_rows: int = 20
    max_appearances: int = 10
    top_k: int = 5
    patience: int = 6

    def __post_init__(self):
        for name in ("beam_width", "max_rows", "max_appearances", "top_k", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


class InvalidAlignment(ValueError):
    pass


class MultipleAlignment:
    """Rows, links and the derived column order of one alignment."""

    def __init__(self, patterns: Sequence[Pattern], appearances: Sequence[Appearance],
                 links: Iterable[tuple[Cell, Cell]]):
        self.patterns = tuple(patterns)
        self.appearances = tuple(appearances)
        partner: dict[Cell, Cell] = {}
        for a, b in links:
            if a[0] == b[0]:
                raise InvalidAlignment("a row cannot be linked to itself")
            if a in partner or b in partner:
                raise InvalidAlignment(f"symbol linked twice: {a} {b}")
            if self.symbol(a).token != self.symbol(b).token:
                raise InvalidAlignment(f"token mismatch at {a} {b}")
            partner[a] = b
            partner[b] = a
        self.partner = partner
        self.columns = self._linearise()
        self.score = CompressionScore()
        self._reach = None
        self._index = None

    @classmethod
    def trivial(cls, new: Pattern) -> "MultipleAlignment":
        return cls([new], [Appearance(new.pid)], [])

    # structure

    @property
    def rows(self) -> tuple[Appearance, ...]:
        return self.appearances

    @property
    def new(self) -> Pattern:
        return self.patterns[0]

    def symbol(self, cell: Cell) -> Symbol:
        return self.patterns[cell[0]].symbols[cell[1]]

    def links(self) -> list[tuple[Cell, Cell]]:
        return sorted((a, b) for a, b in self.partner.items() if a < b)

    def column_of(self, cell: Cell) -> Cell:
        other = self.partner.get(cell)
        return cell if other is None or cell < other else other

    def _linearise(self) -> tuple[Column, ...]:
        # Cells are numbered row by row; a column is named by its smallest cell.
        base = [0]
        for pat in self.patterns:
            base.append(base[-1] + len(pat))
        n = base[-1]
        rep = list(range(n))
        for (r, i), (s, j) in self.partner.items():
            a, b = base[r] + i, base[s] + j
            if b < a:
                rep[a] = b
        succ: list[list[int]] = [[] for _ in range(n)]
        indeg = [0] * n
        for r in range(len(self.patterns)):
            for x in range(base[r], base[r + 1] - 1):
                a, b = rep[x], rep[x + 1]
                succ[a].append(b)
                indeg[b] += 1
        ready = [x for x in range(n) if rep[x] == x and indeg[x] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            x = heapq.heappop(ready)
            order.append(x)
            for y in succ[x]:
                indeg[y] -= 1
                if indeg[y] == 0:
                    heapq.heappush(ready, y)
        n_cols = sum(1 for x in range(n) if rep[x] == x)
        if len(order) != n_cols:
            raise InvalidAlignment("symbol order is inconsistent across rows")
        row_of = []
        for r, pat in enumerate(self.patterns):
            row_of.extend((r, i) for i in range(len(pat)))
        members: dict[int, list[Cell]] = defaultdict(list)
        for x in range(n):
            members[rep[x]].append(row_of[x])
        position = {x: k for k, x in enumerate(order)}
        self._succ_idx = [sorted({position[y] for y in succ[x]}) for x in order]
        cols = []
        for x in order:
            cells = tuple(members[x])
            cols.append(Column(cells, self.symbol(cells[0]).token))
        return tuple(cols)

    def column_index(self) -> dict[Cell, int]:
        if self._index is None:
            self._index = {cell: k for k, col in enumerate(self.columns) for cell in col.cells}
        return self._index

    def reach(self) -> list[int]:
        """Bitset per column index of the columns that must follow it."""
        if self._reach is None:
            reach = [0] * len(self.columns)
            for k in range(len(self.columns) - 1, -1, -1):
                acc = 0
                for j in self._succ_idx[k]:
                    acc |= (1 << j) | reach[j]
                reach[k] = acc
            self._reach = reach
        return self._reach

    def unmatched(self) -> list[Cell]:
        """Single-cell columns, in column order."""
        return [col.cells[0] for col in self.columns if len(col.cells) == 1]

    def row_positions(self, row: int) -> list[int]:
        index = self.column_index()
        return [index[(row, i)] for i in range(len(self.patterns[row]))]

    def pids(self) -> list[int]:
        return [a.pid for a in self.appearances[1:]]

    def key(self) -> tuple:
        """Canonical identity, independent of row order and instance labels."""
        labels = ["NEW"] + [str(a.pid) for a in self.appearances[1:]]
        for _ in range(3):
            nxt = []
            for r, pat in enumerate(self.patterns):
                if r == 0:
                    nxt.append("NEW")
                    continue
                desc = []
                for i in range(len(pat)):
                    o = self.partner.get((r, i))
                    if o is not None:
                        tag = f"N{o[1]}" if o[0] == 0 else labels[o[0]]
                        desc.append((i, tag, o[1]))
                nxt.append(str(hash((self.appearances[r].pid, tuple(desc)))))
            labels = nxt
        return tuple(sorted(labels[1:]))

    def __len__(self) -> int:
        return len(self.patterns)

    def __repr__(self) -> str:
        return f"MultipleAlignment(rows={self.pids()}, cd={self.score.cd:.3f})"


# scoring


class Costs:
    """Information costs in bits, derived from one store state.

    ``symbol`` is the Shannon cost of a token given its frequency in the store.
    ``code`` is the cost of an unmatched ID symbol in the code pattern: a class
    symbol picks a class among all stored patterns, the first member symbol
    picks a pattern within its class, and closing symbols are implied.
    """

    def __init__(self, store: Store):
        self.store = store
        self.mass = max(store.total_mass, 1)
        self.freq = store.symbol_freq
        self.class_freq = store.class_frequencies()
        self.pattern_mass = max(store.pattern_mass(), 1)
        self.id_tokens = store.id_tokens()
        self._sym: dict[str, float] = {}

    def symbol(self, token: str) -> float:
        c = self._sym.get(token)
        if c is None:
            f = self.freq.get(token, 0) or 1
            c = max(math.log2(max(self.mass, f) / f), 0.0)
            self._sym[token] = c
        return c

    def code(self, pat: Pattern, pos: int, new_row: bool = False) -> float:
        if new_row or pat.pid not in self.store.patterns:
            return self.symbol(pat.symbols[pos].token)
        role = pat.role(pos)
        if role == "class":
            return math.log2(self.pattern_mass / self.class_freq[pat.class_token])
        if role == "member" and pos == 1:
            own = self.store.patterns[pat.pid].frequency
            return math.log2(self.class_freq[pat.class_token] / own)
        return 0.0


def code_cells(ma: MultipleAlignment) -> list[Cell]:
    return [c for c in ma.unmatched() if ma.symbol(c).is_id]


def score(ma: MultipleAlignment, store: Store, costs: Optional[Costs] = None) -> CompressionScore:
    costs = costs or Costs(store)
    new = ma.new
    matched = [i for i in range(len(new)) if (0, i) in ma.partner]
    b_new = sum(costs.symbol(new.symbols[i].token) for i in matched)
    b_enc = sum(costs.code(ma.patterns[r], i, r == 0) for r, i in code_cells(ma))
    unresolved = sum(
        1 for r, i in ma.unmatched()
        if r > 0 and not ma.symbol((r, i)).is_id and ma.symbol((r, i)).token in costs.id_tokens)
    idle, gaps = structure(ma)
    return CompressionScore(b_new, b_enc, b_new - b_enc, len(matched) / len(new),
                            unresolved, idle, gaps)


def structure(ma: MultipleAlignment) -> tuple[int, int]:
    """(idle, gaps).  A row is idle when neither it nor any constituent it
    references matches a New symbol.  Gaps counts New symbols enclosed by an
    Old row but not covered by that row's own constituents, over all rows."""
    index = ma.column_index()
    reach = ma.reach()
    n_rows = len(ma.patterns)
    direct: list[set[int]] = [set() for _ in range(n_rows)]
    children: list[set[int]] = [set() for _ in range(n_rows)]
    for (r, i), (s, j) in ma.partner.items():
        if r == 0:
            continue
        if s == 0:
            direct[r].add(j)
        elif not ma.symbol((r, i)).is_id and ma.symbol((s, j)).is_id:
            children[r].add(s)
    covered: dict[int, set[int]] = {}

    def cover(r: int, trail: frozenset) -> set[int]:
        if r in covered:
            return covered[r]
        acc = set(direct[r])
        for s in children[r]:
            if s not in trail:
                acc |= cover(s, trail | {s})
        covered[r] = acc
        return acc

    new_cols = [index[(0, p)] for p in range(len(ma.new))]
    total = idle = 0
    for r in range(1, n_rows):
        first, last = index[(r, 0)], index[(r, len(ma.patterns[r]) - 1)]
        own = cover(r, frozenset([r]))
        idle += not own
        for p, k in enumerate(new_cols):
            if p in own:
                continue
            if (reach[first] >> k) & 1 and (reach[k] >> last) & 1:
                total += 1
    return idle, total


def rank_key(ma: MultipleAlignment) -> tuple:
    """Best first: more compression, fewer dangling references, fewer rows
    unsupported by New, fewer gaps, then the more complete interpretation."""
    s = ma.score
    return (-round(s.cd, 9), s.unresolved, s.idle, s.gaps, -len(ma.patterns), ma.pids())


def shape(ma: MultipleAlignment) -> tuple:
    """Coarse signature used to keep the beam diverse."""
    s = ma.score
    matched = tuple(i for i in range(len(ma.new)) if (0, i) in ma.partner)
    return (tuple(sorted(ma.pids())), matched, round(s.cd, 6), s.unresolved, s.gaps)


# pairwise matching

MatchSet = tuple[tuple[int, int], ...]


def align_pair(base: Sequence[str], candidate: Sequence[str],
               weight: Optional[Callable[[str], float]] = None, limit: int = 50,
               before: Optional[Callable[[int, int], bool]] = None,
               compatible: Optional[Callable[[int, int], bool]] = None) -> list[MatchSet]:
    """Best order-preserving match sets between two token sequences.

    Each result is a tuple of (base position, candidate position) pairs with
    equal tokens, strictly increasing in the candidate and compatible with
    ``before`` in the base (by default: strictly increasing).  Only maximal
    sets are returned, best total weight first, at most ``limit`` of them.
    ``before(a, b)`` says whether base item ``a`` may precede ``b``;
    ``compatible(v, j)`` may veto individual token-equal pairs.
    """
    weight = weight or (lambda t: 1.0)
    before = before or (lambda a, b: a < b)
    where: dict[str, list[int]] = defaultdict(list)
    for v, tok in enumerate(base):
        where[tok].append(v)
    pairs = [(v, j) for j, tok in enumerate(candidate) for v in where.get(tok, ())
             if compatible is None or compatible(v, j)]
    if not pairs:
        return []
    w = [weight(candidate[j]) for _, j in pairs]
    best: list[list[tuple[float, MatchSet]]] = []
    for s, (v, j) in enumerate(pairs):
        options = [(w[s], ((v, j),))]
        for p in range(s):
            pv, pj = pairs[p]
            if pj < j and pv != v and before(pv, v):
                options.extend((pw + w[s], ch + ((v, j),)) for pw, ch in best[p])
        best.append(heapq.nsmallest(limit, options, key=lambda o: (-o[0], o[1])))
    pool = heapq.nsmallest(4 * limit, (o for lst in best for o in lst),
                           key=lambda o: (-o[0], o[1]))

    def valid(chain: MatchSet) -> bool:
        vs = [v for v, _ in chain]
        if len(set(vs)) != len(vs):
            return False
        return all(before(vs[a], vs[b]) for a in range(len(vs)) for b in range(a + 1, len(vs)))

    out: list[MatchSet] = []
    seen = set()
    for total, chain in pool:
        if chain in seen or not valid(chain):
            continue
        seen.add(chain)
        used_v = {v for v, _ in chain}
        used_j = {j for _, j in chain}
        extendable = False
        for v, j in pairs:
            if v in used_v or j in used_j:
                continue
            trial = tuple(sorted(chain + ((v, j),), key=lambda p: p[1]))
            if valid(trial):
                extendable = True
                break
        if not extendable:
            out.append(chain)
            if len(out) >= limit:
                break
    return out


# search


@dataclass
class _Proto:
    """A child alignment that has been scored but not yet built."""

    parent: MultipleAlignment
    pat: Pattern
    links: list
    cd: float
    unresolved: int
    order: int

    def sort_key(self) -> tuple:
        return (-round(self.cd, 9), self.unresolved, self.order)

    def build(self) -> Optional[MultipleAlignment]:
        ma = self.parent
        instance = sum(1 for a in ma.appearances[1:] if a.pid == self.pat.pid)
        try:
            return MultipleAlignment(ma.patterns + (self.pat,),
                                     ma.appearances + (Appearance(self.pat.pid, instance),),
                                     ma.links() + self.links)
        except InvalidAlignment:
            return None


def _protos(ma: MultipleAlignment, pat: Pattern, costs: Costs, limit: int,
            counter: list[int]) -> list[_Proto]:
    view = ma.unmatched()
    index = ma.column_index()
    reach = ma.reach()
    cols = [index[c] for c in view]

    def before(a: int, b: int) -> bool:
        return not (reach[cols[b]] >> cols[a]) & 1

    tokens = [ma.symbol(c).token for c in view]
    klasses = [None if c[0] == 0 else ma.symbol(c).klass for c in view]

    def compatible(v: int, j: int) -> bool:
        # Old rows only link a reference to the ID symbol it names.
        return klasses[v] is None or klasses[v] is not pat.symbols[j].klass

    def dangling(token: str) -> bool:
        return token in costs.id_tokens

    row = len(ma.patterns)
    out = []
    for chain in align_pair(tokens, pat.tokens, costs.symbol, limit, before, compatible):
        gain = 0.0
        unresolved = ma.score.unresolved
        for v, j in chain:
            r, i = view[v]
            if r == 0:
                gain += costs.symbol(tokens[v])
            elif klasses[v] is Klass.ID:
                gain += costs.code(ma.patterns[r], i)
            elif dangling(tokens[v]):
                unresolved -= 1
        used = {j for _, j in chain}
        for j, sym in enumerate(pat.symbols):
            if j in used:
                continue
            if sym.is_id:
                gain -= costs.code(pat, j)
            elif dangling(sym.token):
                unresolved += 1
        counter[0] += 1
        out.append(_Proto(ma, pat, [(view[v], (row, j)) for v, j in chain],
                          ma.score.cd + gain, unresolved, counter[0]))
    return out


def extend(ma: MultipleAlignment, pat: Pattern, costs: Costs, limit: int) -> list[MultipleAlignment]:
    """All children of ``ma`` that add one appearance of ``pat``."""
    children = []
    for proto in _protos(ma, pat, costs, limit, [0]):
        child = proto.build()
        if child is not None:
            child.score = score(child, costs.store, costs)
            children.append(child)
    return children


def build_alignments(new: Pattern, store: Store, cfg: Optional[SearchConfig] = None
                     ) -> list[MultipleAlignment]:
    """Ranked alignments of ``new`` against ``store``, best first."""
    cfg = cfg or SearchConfig()
    if not len(new):
        raise ValueError("empty New pattern")
    costs = Costs(store)
    trivial = MultipleAlignment.trivial(new)
    trivial.score = score(trivial, store, costs)
    pool = {trivial.key(): trivial}
    beam = [trivial]
    best = rank_key(trivial)
    stall = 0
    candidates = list(store)
    budget = 4 * cfg.beam_width
    while beam:
        protos: list[_Proto] = []
        counter = [0]
        for ma in beam:
            if len(ma.patterns) >= cfg.max_rows:
                continue
            used = Counter(ma.pids())
            for pat in candidates:
                if used[pat.pid] < cfg.max_appearances:
                    protos.extend(_protos(ma, pat, costs, cfg.beam_width, counter))
        protos.sort(key=_Proto.sort_key)
        # Build in score order; finish the tie group that reaches the budget.
        children: dict[tuple, MultipleAlignment] = {}
        built = 0
        cutoff = None
        for proto in protos:
            head = proto.sort_key()[:2]
            if cutoff is not None and head != cutoff:
                break
            child = proto.build()
            if child is None:
                continue
            k = child.key()
            if k in pool or k in children:
                continue
            child.score = score(child, store, costs)
            children[k] = child
            built += 1
            if built >= budget and cutoff is None:
                cutoff = head
        if not children:
            break
        beam = []
        shapes = set()
        for child in sorted(children.values(), key=rank_key):
            sig = shape(child)
            if sig not in shapes:
                shapes.add(sig)
                beam.append(child)
                if len(beam) >= cfg.beam_width:
                    break
        for ma in beam:
            pool[ma.key()] = ma
        top = rank_key(beam[0])
        if top < best:
            best, stall = top, 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    finalists = sorted(pool.values(), key=rank_key)[:2 * cfg.top_k]
    for ma in finalists:
        better = prune(ma, costs)
        pool.setdefault(better.key(), better)
    return sorted(pool.values(), key=rank_key)[:cfg.top_k]


def without_row(ma: MultipleAlignment, row: int) -> MultipleAlignment:
    def shift(c: Cell) -> Cell:
        return (c[0] - 1, c[1]) if c[0] > row else c

    links = [(shift(a), shift(b)) for a, b in ma.links() if row not in (a[0], b[0])]
    apps = ma.appearances[:row] + ma.appearances[row + 1:]
    return MultipleAlignment(ma.patterns[:row] + ma.patterns[row + 1:], apps, links)


def prune(ma: MultipleAlignment, costs: Costs) -> MultipleAlignment:
    """Drop Old rows one at a time while that improves the ranking."""
    improved = True
    while improved and len(ma.patterns) > 1:
        improved = False
        for row in range(len(ma.patterns) - 1, 0, -1):
            trial = without_row(ma, row)
            trial.score = score(trial, costs.store, costs)
            if rank_key(trial) < rank_key(ma):
                ma, improved = trial, True
                break
    return ma


def best_alignment(new: Pattern, store: Store, cfg: Optional[SearchConfig] = None
                   ) -> MultipleAlignment:
    return build_alignments(new, store, cfg)[0]


def check_alignment(ma: MultipleAlignment) -> None:
    """Assert the structural invariants (monotone rows, homogeneous columns)."""
    seen = set()
    for col in ma.columns:
        assert len({ma.symbol(c).token for c in col.cells}) == 1
        assert len({r for r, _ in col.cells}) == len(col.cells)
        seen.update(col.cells)
    assert seen == {(r, i) for r, p in enumerate(ma.patterns) for i in range(len(p))}
    for r in range(len(ma.patterns)):
        pos = ma.row_positions(r)
        assert pos == sorted(pos) and len(set(pos)) == len(pos)


# text rendering

LABEL_WIDTH = 10


def render(ma: MultipleAlignment) -> str:
    """Rows as text lines, each column at its own horizontal offset.

    Each row line starts with a label (row index and pattern id, ``NEW`` for
    row 0).  Between consecutive row lines a connector line carries ``|``
    under every column whose cells lie on both sides of the gap.
    """
    offsets = []
    x = 0
    for col in ma.columns:
        offsets.append(x)
        x += len(col.token) + 1
    index = ma.column_index()
    spans = [(min(r for r, _ in col.cells), max(r for r, _ in col.cells)) for col in ma.columns]
    lines = []
    for r, pat in enumerate(ma.patterns):
        if r:
            bar = [" "] * x
            for k, (lo, hi) in enumerate(spans):
                if lo < r <= hi:
                    bar[offsets[k]] = "|"
            lines.append(" " * LABEL_WIDTH + "".join(bar).rstrip())
        text = [" "] * x
        for i, sym in enumerate(pat.symbols):
            at = offsets[index[(r, i)]]
            text[at:at + len(sym.token)] = sym.token
        label = "NEW" if r == 0 else str(ma.appearances[r].pid)
        lines.append(f"{r:>3} {label:<5} " + "".join(text).rstrip())
    return "\n".join(lines) + "\n"


def parse_rendering(text: str) -> tuple[list[str], list[list[tuple[int, str]]]]:
    """Inverse of ``render``: (row labels, per-row (column, token) lists).

    Column numbers are ranks of the horizontal offsets, so two renderings of
    the same alignment parse to the same structure.
    """
    labels, rows = [], []
    for line in text.splitlines():
        head, body = line[:LABEL_WIDTH], line[LABEL_WIDTH:]
        if not head.strip():
            continue
        labels.append(head.split()[1])
        cells = []
        for m in re.finditer(r"\S+", body):
            cells.append((m.start(), m.group()))
        rows.append(cells)
    xs = sorted({x for row in rows for x, _ in row})
    rank = {x: k for k, x in enumerate(xs)}
    return labels, [[(rank[x], tok) for x, tok in row] for row in rows]
