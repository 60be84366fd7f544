"""Pattern store, multiple alignment, encoding, learning and a neural simulator
built around information compression by matching and unifying patterns."""

from importlib import resources

from .patterns import (GrammarError, Klass, Pattern, Provenance, Store, Symbol,
                       new_pattern, parse_grammar, serialize_grammar)

__all__ = [
    "GrammarError", "Klass", "Pattern", "Provenance", "Store", "Symbol",
    "new_pattern", "parse_grammar", "serialize_grammar", "example_grammar",
]


def example_grammar(name: str) -> Store:
    """Load a bundled grammar: ``house``, ``fortune``, ``triangle``, ``creatures``
    or ``intensifier``."""
    text = resources.files(__package__).joinpath("data", f"{name}.sp").read_text()
    return parse_grammar(text)
