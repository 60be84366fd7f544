"""Unsupervised learning: intake, segmentation, frequency updates, sifting."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

from .alignment import MultipleAlignment, SearchConfig, build_alignments
from .encoding import derive_code_pattern
from .patterns import Pattern, Provenance, Store, Symbol, contents, new_pattern

log = logging.getLogger(__name__)


class Outcome(Enum):
    RECOGNIZED = "recognized"
    SEGMENTED = "segmented"
    STORED = "stored"


@dataclass
class SegmentationResult:
    matched_patterns: list[Pattern]
    unmatched_patterns: list[Pattern]
    abstract_pattern: Pattern


@dataclass
class IngestOutcome:
    outcome: Outcome
    alignment: Optional[MultipleAlignment]
    pids: list[int] = field(default_factory=list)
    segmentation: Optional[SegmentationResult] = None


@dataclass
class UtilityLedger:
    """Per-pattern record of how useful each pattern has been for encoding."""

    contribution: dict[int, float] = field(default_factory=dict)
    uses: Counter = field(default_factory=Counter)
    window_uses: Counter = field(default_factory=Counter)
    window: int = 0

    def record(self, ma: Optional[MultipleAlignment]) -> None:
        """Credit the rows of a best alignment with equal shares of its cd."""
        self.window += 1
        if ma is None or len(ma.patterns) < 2:
            return
        pids = ma.pids()
        share = ma.score.cd / len(pids)
        for pid in pids:
            self.contribution[pid] = self.contribution.get(pid, 0.0) + share
            self.uses[pid] += 1
            self.window_uses[pid] += 1

    def utility(self, pid: int) -> float:
        return self.contribution.get(pid, 0.0) / max(1, self.uses[pid])

    def reset_window(self) -> None:
        self.window = 0
        self.window_uses.clear()

    def forget(self, pid: int) -> None:
        self.contribution.pop(pid, None)
        self.uses.pop(pid, None)
        self.window_uses.pop(pid, None)


def is_recognition(ma: MultipleAlignment) -> bool:
    """Every New symbol matched and every Old contents symbol accounted for."""
    if len(ma.patterns) < 2 or ma.score.coverage < 1.0:
        return False
    return all(ma.symbol(c).is_id for c in ma.unmatched() if c[0] > 0)


def ingest(new: Pattern, store: Store, cfg: Optional[SearchConfig] = None,
           ledger: Optional[UtilityLedger] = None, min_coverage: float = 0.5) -> IngestOutcome:
    """Learn from one New pattern, mutating ``store``."""
    if not len(new):
        raise ValueError("empty New pattern")
    if any(s.is_id for s in new.symbols):
        raise ValueError("New patterns hold contents symbols only")
    best = None
    if len(store):
        best = build_alignments(new, store, cfg)[0]
        if len(best.patterns) < 2 or best.score.cd <= 0:
            best = None
    if ledger is not None:
        ledger.record(best)
    if best is not None and is_recognition(best):
        for pid in best.pids():
            store.increment_frequency(pid)
        return IngestOutcome(Outcome.RECOGNIZED, best, best.pids())
    pair = best
    if best is not None and len(best.patterns) > 2:
        # Segmentation works on one Old pattern at a time.
        pair = build_alignments(new, store, replace(cfg or SearchConfig(), max_rows=2))[0]
        if len(pair.patterns) < 2 or pair.score.cd <= 0:
            pair = None
    if pair is not None and pair.score.coverage >= min_coverage:
        try:
            seg = segment(pair, store)
        except ValueError:
            seg = None
        if seg is not None:
            pids = [p.pid for p in seg.matched_patterns + seg.unmatched_patterns]
            pids.append(seg.abstract_pattern.pid)
            return IngestOutcome(Outcome.SEGMENTED, pair, pids, seg)
    pat = store_verbatim(new, store)
    return IngestOutcome(Outcome.STORED, best, [pat.pid])


def store_verbatim(new: Pattern, store: Store, provenance: Provenance = Provenance.INTAKE) -> Pattern:
    cls, member, close = store.fresh_ids()
    pat = Pattern(-1, (cls, member) + tuple(new.symbols) + (close,), 1, provenance, 2, 1)
    return store.insert(pat)


def _runs(ma: MultipleAlignment) -> list[tuple[str, list[str], list[str]]]:
    """Split a two-row alignment into ('match', toks, toks) and
    ('gap', new_toks, old_toks) segments, left to right."""
    new, old = ma.patterns[0], ma.patterns[1]
    lo, hi = old.prefix_len, len(old) - old.suffix_len
    pairs = sorted((i, j) for (r, i), (_, j) in ma.partner.items() if r == 0)
    if not pairs:
        raise ValueError("no matched symbols")
    for _, j in pairs:
        if not lo <= j < hi:
            raise ValueError("match outside the Old pattern's body")
    out: list[tuple[str, list[str], list[str]]] = []
    ni, oj = 0, lo
    k = 0
    while k < len(pairs):
        i, j = pairs[k]
        if ni < i or oj < j:
            out.append(("gap", list(new.tokens[ni:i]), list(old.tokens[oj:j])))
        run = [new.tokens[i]]
        while k + 1 < len(pairs) and pairs[k + 1] == (pairs[k][0] + 1, pairs[k][1] + 1):
            k += 1
            run.append(new.tokens[pairs[k][0]])
        out.append(("match", run, run))
        ni, oj = pairs[k][0] + 1, pairs[k][1] + 1
        k += 1
    if ni < len(new) or oj < hi:
        out.append(("gap", list(new.tokens[ni:]), list(old.tokens[oj:hi])))
    return out


def _find_body(store: Store, body: Sequence[str]) -> Optional[Pattern]:
    want = contents(body)
    for p in store:
        if p.body == want and p.prefix_len >= 1 and p.suffix_len >= 1:
            return p
    return None


def _wrap(ids_: tuple[Symbol, Symbol, Symbol], body: Sequence[str], freq: int,
          provenance: Provenance) -> Pattern:
    cls, member, close = ids_
    return Pattern(-1, (cls, member) + contents(body) + (close,), freq, provenance, 2, 1)


def segment(ma: MultipleAlignment, store: Store) -> SegmentationResult:
    """Turn a two-row partial match into component and abstract patterns."""
    if len(ma.patterns) != 2:
        raise ValueError("segmentation needs a two-row alignment")
    runs = _runs(ma)
    if not any(kind == "gap" for kind, _, _ in runs):
        raise ValueError("nothing unmatched: this is a recognition, not a segmentation")
    matched: list[Pattern] = []
    unmatched: list[Pattern] = []
    refs: list[Pattern] = []
    # Matched runs first, then slots, so classes are numbered in that order.
    made: dict[int, Pattern] = {}
    for k, (kind, a, _) in enumerate(runs):
        if kind != "match":
            continue
        pat = _find_body(store, a)
        if pat is not None:
            store.increment_frequency(pat.pid)
        else:
            pat = store.insert(_wrap(store.fresh_ids(), a, 2, Provenance.SEGMENTED))
        matched.append(pat)
        made[k] = pat
    for k, (kind, a, b) in enumerate(runs):
        if kind != "gap":
            continue
        first = store.insert(_wrap(store.fresh_ids(), a, 1, Provenance.SEGMENTED))
        number = int(first.class_token[1:])
        second = store.insert(_wrap(store.fresh_ids(reuse_class=number), b, 1,
                                    Provenance.SEGMENTED))
        unmatched.extend([first, second])
        made[k] = first
    for k in range(len(runs)):
        refs.append(made[k])
    body: list[str] = []
    for p in refs:
        body.extend([p.class_token, p.close_token])
    abstract = store.insert(_wrap(store.fresh_ids(), body, 1, Provenance.ABSTRACT))
    return SegmentationResult(matched, unmatched, abstract)


def sift(store: Store, ledger: UtilityLedger, keep_threshold: float = 0.0) -> list[int]:
    """Destroy learned patterns that earned too little and went unused this
    window.  Returns the removed pids."""
    doomed = [p.pid for p in store
              if p.provenance is not Provenance.SUPPLIED
              and ledger.utility(p.pid) < keep_threshold
              and ledger.window_uses[p.pid] == 0]
    for pid in doomed:
        store.patterns.pop(pid)
        ledger.forget(pid)
    if doomed:
        store.rebuild_frequencies()
        log.debug("sift removed %s", doomed)
    ledger.reset_window()
    return doomed


@dataclass
class LearnConfig:
    epochs: int = 1
    sift_interval: int = 0
    keep_threshold: float = 0.0
    min_coverage: float = 0.5
    feed_codes: bool = False


def learn(corpus: Iterable[Sequence[str] | str], store: Optional[Store] = None,
          cfg: Optional[SearchConfig] = None, lcfg: Optional[LearnConfig] = None,
          ledger: Optional[UtilityLedger] = None) -> tuple[Store, list[IngestOutcome]]:
    """Ingest every line of ``corpus`` for the configured number of epochs.

    With ``sift_interval`` > 0, sift runs whenever that many patterns have
    been ingested since the last sift.  ``feed_codes`` (experimental) also
    ingests the code pattern of each best alignment, as if it were data.
    """
    store = store if store is not None else Store()
    lcfg = lcfg or LearnConfig()
    ledger = ledger if ledger is not None else UtilityLedger()
    lines = [new_pattern(line) for line in corpus]
    outcomes = []
    for _ in range(lcfg.epochs):
        for new in lines:
            res = ingest(new, store, cfg, ledger, lcfg.min_coverage)
            outcomes.append(res)
            if lcfg.feed_codes and res.alignment is not None:
                code = derive_code_pattern(res.alignment)
                if len(code):
                    ingest(new_pattern(code.tokens), store, cfg, None, lcfg.min_coverage)
            if lcfg.sift_interval and ledger.window >= lcfg.sift_interval:
                sift(store, ledger, lcfg.keep_threshold)
    return store, outcomes
