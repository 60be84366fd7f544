"""Symbols, patterns and the pattern store.

A pattern is a flat sequence of atomic symbols.  Symbols are flagged either
``ID`` (service symbols naming a class, a member of the class, or closing the
class) or ``CONTENTS``.  Matching only ever compares tokens; the flag matters
for encoding.

Grammar text format, one pattern per line::

    [freq=<n>] <id-prefix tokens> | <body tokens> | <id-suffix tokens>

A line without ``|`` is an all-contents pattern.  Lines starting with ``;``
are comments.
"""

from __future__ import annotations

import copy
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence


class Klass(Enum):
    ID = "id"
    CONTENTS = "contents"


class Provenance(Enum):
    SUPPLIED = "supplied"
    INTAKE = "intake"
    SEGMENTED = "segmented"
    ABSTRACT = "abstract"


class GrammarError(ValueError):
    """Malformed grammar text.  ``lineno`` is 1-based, or None."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def check_token(token: str) -> None:
    if not token or any(ch.isspace() for ch in token):
        raise GrammarError(f"bad token {token!r}")
    if "|" in token or token.startswith(";"):
        raise GrammarError(f"bad token {token!r}")


@dataclass(frozen=True)
class Symbol:
    token: str
    klass: Klass = Klass.CONTENTS

    @property
    def is_id(self) -> bool:
        return self.klass is Klass.ID


def contents(tokens: Iterable[str] | str) -> tuple[Symbol, ...]:
    if isinstance(tokens, str):
        tokens = tokens.split()
    return tuple(Symbol(t, Klass.CONTENTS) for t in tokens)


def ids(tokens: Iterable[str] | str) -> tuple[Symbol, ...]:
    if isinstance(tokens, str):
        tokens = tokens.split()
    return tuple(Symbol(t, Klass.ID) for t in tokens)


@dataclass(eq=False)
class Pattern:
    """One stored (or New) pattern.

    ``prefix_len`` and ``suffix_len`` record how many leading and trailing
    symbols are ID symbols; everything between is the body.  The first
    prefix symbol is the class symbol, the remaining prefix symbols are
    member symbols, and the suffix symbols close the class.
    """

    pid: int
    symbols: tuple[Symbol, ...]
    frequency: int = 1
    provenance: Provenance = Provenance.SUPPLIED
    prefix_len: int = 0
    suffix_len: int = 0

    def __post_init__(self):
        self.symbols = tuple(self.symbols)
        if not self.symbols:
            raise ValueError("a pattern needs at least one symbol")
        if self.frequency < 1:
            raise ValueError("frequency must be positive")
        if self.prefix_len + self.suffix_len > len(self.symbols):
            raise ValueError("ID fields overlap")
        for sym in self.symbols:
            check_token(sym.token)

    @classmethod
    def from_fields(cls, pid: int, prefix: Sequence[str], body: Sequence[str],
                    suffix: Sequence[str], frequency: int = 1,
                    provenance: Provenance = Provenance.SUPPLIED) -> "Pattern":
        return cls(pid, ids(prefix) + contents(body) + ids(suffix), frequency,
                   provenance, len(prefix), len(suffix))

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(s.token for s in self.symbols)

    @property
    def prefix(self) -> tuple[Symbol, ...]:
        return self.symbols[:self.prefix_len]

    @property
    def body(self) -> tuple[Symbol, ...]:
        return self.symbols[self.prefix_len:len(self.symbols) - self.suffix_len]

    @property
    def suffix(self) -> tuple[Symbol, ...]:
        return self.symbols[len(self.symbols) - self.suffix_len:]

    @property
    def class_token(self) -> Optional[str]:
        return self.symbols[0].token if self.prefix_len else None

    @property
    def close_token(self) -> Optional[str]:
        return self.symbols[-self.suffix_len].token if self.suffix_len else None

    def role(self, pos: int) -> str:
        """'class', 'member', 'close' or 'contents' for the symbol at pos."""
        if pos < self.prefix_len:
            return "class" if pos == 0 else "member"
        if pos >= len(self.symbols) - self.suffix_len:
            return "close"
        return "contents"

    def key(self) -> tuple:
        return (self.symbols, self.prefix_len)

    def __len__(self) -> int:
        return len(self.symbols)

    def __repr__(self) -> str:
        return f"Pattern({self.pid}, {format_pattern(self)!r}, freq={self.frequency})"


def format_pattern(p: Pattern, with_freq: bool = False) -> str:
    head = f"freq={p.frequency} " if with_freq and p.frequency != 1 else ""
    body = " ".join(s.token for s in p.body)
    if not p.prefix_len and not p.suffix_len:
        return head + body
    fields = [" ".join(s.token for s in p.prefix), body,
              " ".join(s.token for s in p.suffix)]
    return head + " | ".join(fields).strip().replace("  ", " ")


class Store:
    """The repository of Old patterns plus symbol frequency bookkeeping."""

    def __init__(self):
        self.patterns: dict[int, Pattern] = {}
        self.symbol_freq: Counter[str] = Counter()
        self.total_mass = 0
        self.next_class = 0
        self._next_pid = 0
        self._members: dict[str, int] = {}
        self._issued: set[tuple[str, str]] = set()

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self) -> Iterator[Pattern]:
        return iter(sorted(self.patterns.values(), key=lambda p: p.pid))

    def __contains__(self, pid: int) -> bool:
        return pid in self.patterns

    def __getitem__(self, pid: int) -> Pattern:
        return self.patterns[pid]

    def copy(self) -> "Store":
        return copy.deepcopy(self)

    def find(self, symbols: Sequence[Symbol], prefix_len: int) -> Optional[Pattern]:
        key = (tuple(symbols), prefix_len)
        for p in self.patterns.values():
            if p.key() == key:
                return p
        return None

    def add(self, prefix: Sequence[str], body: Sequence[str], suffix: Sequence[str] = (),
            frequency: int = 1, provenance: Provenance = Provenance.SUPPLIED) -> Pattern:
        """Insert a pattern, merging into an identical one if present."""
        pat = Pattern.from_fields(self._next_pid, prefix, body, suffix, frequency, provenance)
        return self.insert(pat)

    def insert(self, pat: Pattern) -> Pattern:
        existing = self.find(pat.symbols, pat.prefix_len)
        if existing is not None:
            self._bump(existing, pat.frequency)
            return existing
        pat.pid = self._next_pid
        self._next_pid += 1
        self.patterns[pat.pid] = pat
        self._account(pat, pat.frequency)
        for sym in pat.symbols:
            if sym.is_id and sym.token.startswith("%"):
                self._note_class(sym.token)
        return pat

    def remove(self, pid: int) -> Pattern:
        pat = self.patterns.pop(pid)
        self.rebuild_frequencies()
        return pat

    def increment_frequency(self, pid: int, by: int = 1) -> Pattern:
        if pid not in self.patterns:
            raise KeyError(f"unknown pattern {pid}")
        pat = self.patterns[pid]
        self._bump(pat, by)
        return pat

    def _bump(self, pat: Pattern, by: int) -> None:
        if by < 1:
            raise ValueError("frequencies only grow")
        pat.frequency += by
        self._account(pat, by)

    def _account(self, pat: Pattern, weight: int) -> None:
        for sym in pat.symbols:
            self.symbol_freq[sym.token] += weight
        self.total_mass += weight * len(pat.symbols)

    def rebuild_frequencies(self) -> None:
        self.symbol_freq = self.recount()
        self.total_mass = sum(self.symbol_freq.values())

    def recount(self) -> Counter:
        counts: Counter[str] = Counter()
        for p in self.patterns.values():
            for sym in p.symbols:
                counts[sym.token] += p.frequency
        return counts

    def check(self) -> None:
        """Raise AssertionError if bookkeeping has drifted."""
        assert +self.symbol_freq == self.recount()
        assert self.total_mass == sum(self.symbol_freq.values())
        keys = [p.key() for p in self.patterns.values()]
        assert len(keys) == len(set(keys)), "duplicate patterns"

    # ID generation

    def _note_class(self, token: str) -> None:
        m = re.fullmatch(r"#?%(\d+)", token)
        if m:
            self.next_class = max(self.next_class, int(m.group(1)))

    def _used_tokens(self) -> set[str]:
        return {s.token for p in self.patterns.values() for s in p.symbols}

    def fresh_ids(self, reuse_class: Optional[int] = None) -> tuple[Symbol, Symbol, Symbol]:
        """Return a never-issued (class, member, close) ID triple.

        With ``reuse_class=k`` the next member of class ``%k`` is issued
        instead of opening a new class.
        """
        if reuse_class is None:
            used = self._used_tokens()
            k = self.next_class + 1
            while f"%{k}" in used or f"#%{k}" in used:
                k += 1
            self.next_class = k
            cls = f"%{k}"
        else:
            cls = f"%{reuse_class}"
            self.next_class = max(self.next_class, reuse_class)
        member = self._members.get(cls, 0) + 1
        while (cls, str(member)) in self._issued:
            member += 1
        self._members[cls] = member
        self._issued.add((cls, str(member)))
        return Symbol(cls, Klass.ID), Symbol(str(member), Klass.ID), Symbol("#" + cls, Klass.ID)

    # derived tables used by the scorer

    def class_frequencies(self) -> Counter:
        out: Counter[str] = Counter()
        for p in self.patterns.values():
            if p.class_token is not None:
                out[p.class_token] += p.frequency
        return out

    def pattern_mass(self) -> int:
        return sum(p.frequency for p in self.patterns.values())

    def id_tokens(self) -> set[str]:
        return {s.token for p in self.patterns.values() for s in p.symbols if s.is_id}


_FREQ = re.compile(r"freq=(\S*)")


def parse_pattern_line(line: str, lineno: Optional[int] = None):
    """Parse one grammar line into (prefix, body, suffix, freq)."""
    text = line.replace("|", " | ")
    parts = text.split()
    freq = 1
    if parts and parts[0].startswith("freq="):
        raw = _FREQ.fullmatch(parts[0]).group(1)
        if not raw.isdigit() or int(raw) < 1:
            raise GrammarError(f"bad frequency {parts[0]!r}", lineno)
        freq = int(raw)
        parts = parts[1:]
    bars = parts.count("|")
    if bars == 0:
        prefix, body, suffix = [], parts, []
    elif bars == 2:
        i = parts.index("|")
        j = parts.index("|", i + 1)
        prefix, body, suffix = parts[:i], parts[i + 1:j], parts[j + 1:]
    else:
        raise GrammarError(f"expected 0 or 2 '|' separators, found {bars}", lineno)
    if not (prefix or body or suffix):
        raise GrammarError("empty pattern", lineno)
    for tok in prefix + body + suffix:
        try:
            check_token(tok)
        except GrammarError as exc:
            raise GrammarError(str(exc), lineno) from None
    return prefix, body, suffix, freq


def parse_grammar(text: str, provenance: Provenance = Provenance.SUPPLIED) -> Store:
    store = Store()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith(";"):
            continue
        prefix, body, suffix, freq = parse_pattern_line(stripped, lineno)
        store.add(prefix, body, suffix, freq, provenance)
    return store


def serialize_grammar(store: Store) -> str:
    return "".join(format_pattern(p, with_freq=True) + "\n" for p in store)


def new_pattern(tokens: Iterable[str] | str, pid: int = -1) -> Pattern:
    """A New pattern: all contents, not part of any store."""
    syms = contents(tokens)
    if not syms:
        raise ValueError("empty New pattern")
    return Pattern(pid, syms, provenance=Provenance.INTAKE)
