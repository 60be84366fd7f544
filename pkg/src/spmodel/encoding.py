"""Code patterns: encoding an alignment, and regenerating data from a code.

The code for an alignment is the sequence of its unmatched ID symbols, read
in column order.  Decoding feeds that code back in as a New pattern; the best
alignment then carries all the contents needed to rebuild the original.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .alignment import Costs, MultipleAlignment, SearchConfig, build_alignments, code_cells
from .patterns import Klass, Pattern, Store, Symbol, new_pattern


class RegenerationError(ValueError):
    """The store cannot account for every symbol of a code pattern."""


@dataclass(frozen=True)
class CodePattern:
    symbols: tuple[Symbol, ...] = ()

    def __post_init__(self):
        if any(s.klass is not Klass.ID for s in self.symbols):
            raise ValueError("code patterns hold ID symbols only")

    @classmethod
    def from_tokens(cls, tokens: Iterable[str] | str) -> "CodePattern":
        if isinstance(tokens, str):
            tokens = tokens.split()
        return cls(tuple(Symbol(t, Klass.ID) for t in tokens))

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(s.token for s in self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __str__(self) -> str:
        return " ".join(self.tokens)


def derive_code_pattern(ma: MultipleAlignment) -> CodePattern:
    return CodePattern(tuple(ma.symbol(c) for c in code_cells(ma)))


def extract_surface(ma: MultipleAlignment, id_tokens: Iterable[str] = (),
                    code_row: bool = False) -> list[str]:
    """Contents tokens in column order.

    A column counts as surface when none of its cells is an ID symbol.  A
    lone contents symbol that names an ID token (of the alignment, or of
    ``id_tokens``) is an unfilled reference, e.g. the tail of a recursion,
    and is skipped too.  With ``code_row`` the New row holds a code, so no
    column touching it is surface.
    """
    id_tokens = set(id_tokens) | {s.token for p in ma.patterns for s in p.symbols if s.is_id}
    out = []
    for col in ma.columns:
        if any(ma.symbol(c).is_id for c in col.cells):
            continue
        if code_row and any(r == 0 for r, _ in col.cells):
            continue
        if len(col.cells) == 1 and col.cells[0][0] > 0 and col.token in id_tokens:
            continue
        out.append(col.token)
    return out


def regenerate(code: CodePattern | Sequence[str] | str, store: Store,
               cfg: Optional[SearchConfig] = None) -> list[str]:
    """Rebuild the surface sequence encoded by ``code``."""
    if not isinstance(code, CodePattern):
        code = CodePattern.from_tokens(code)
    if not len(code):
        raise RegenerationError("empty code pattern")
    ma = decode_alignment(code, store, cfg)
    return extract_surface(ma, store.id_tokens(), code_row=True)


def decode_alignment(code: CodePattern, store: Store,
                     cfg: Optional[SearchConfig] = None) -> MultipleAlignment:
    new = new_pattern(code.tokens)
    for ma in build_alignments(new, store, cfg):
        if ma.score.coverage == 1.0:
            return ma
    raise RegenerationError(f"no alignment accounts for the whole code {str(code)!r}")


def encoding_cost(new: Pattern, store: Store, cfg: Optional[SearchConfig] = None) -> float:
    """Bits to transmit ``new`` given ``store``: the code of the best
    alignment plus the raw cost of any New symbols it leaves unmatched."""
    costs = Costs(store)
    raw = sum(costs.symbol(s.token) for s in new.symbols)
    if not len(store):
        return raw
    ma = build_alignments(new, store, cfg)[0]
    return raw - ma.score.cd
