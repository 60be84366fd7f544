"""Command-line front end: ``spmodel align|encode|decode|learn|simulate``.

Exit status: 0 on success, 1 on a usage error, 2 on a data error.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import click

from .alignment import MultipleAlignment, SearchConfig, build_alignments, render
from .encoding import RegenerationError, derive_code_pattern, regenerate
from .learning import LearnConfig, learn
from .neural import RecognitionFailure, SimConfig, compile, extract_nama, step_stages
from .patterns import GrammarError, Store, new_pattern, parse_grammar, serialize_grammar


class DataError(click.ClickException):
    exit_code = 2


def _load_grammar(path: Optional[str]) -> Store:
    if path is None:
        return Store()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise click.UsageError(f"cannot read grammar {path}: {exc.strerror}") from None
    try:
        return parse_grammar(text)
    except GrammarError as exc:
        raise DataError(f"{path}: {exc}") from None


def _read_input(inline: Optional[str], path: Optional[str], what: str = "--new") -> list[str]:
    if (inline is None) == (path is None):
        raise click.UsageError(f"give exactly one of {what} or --input")
    if path is not None:
        try:
            inline = Path(path).read_text()
        except OSError as exc:
            raise click.UsageError(f"cannot read {path}: {exc.strerror}") from None
    tokens = inline.split()
    if not tokens:
        raise click.UsageError("input is empty")
    return tokens


def _score_fields(ma: MultipleAlignment) -> dict:
    s = ma.score
    return {"cd": round(s.cd, 6), "b_new": round(s.b_new, 6), "b_enc": round(s.b_enc, 6),
            "coverage": round(s.coverage, 6)}


def alignment_record(ma: MultipleAlignment, rank: int) -> dict:
    """Structured form, field order: rank, score, rows, columns."""
    rows = [{"row": r, "pid": a.pid, "tokens": list(p.tokens)}
            for r, (a, p) in enumerate(zip(ma.appearances, ma.patterns))]
    columns = [[list(c) for c in col.cells] for col in ma.columns]
    return {"rank": rank, "score": _score_fields(ma), "rows": rows, "columns": columns}


def _emit_alignment(ma: MultipleAlignment, rank: int, fmt: str) -> None:
    if fmt == "structured":
        click.echo(json.dumps(alignment_record(ma, rank)))
        return
    s = _score_fields(ma)
    click.echo(f"# alignment {rank}: cd={s['cd']:.3f} b_new={s['b_new']:.3f} "
               f"b_enc={s['b_enc']:.3f} coverage={s['coverage']:.3f}")
    click.echo(render(ma), nl=False)


def search_options(f):
    opts = [
        click.option("--grammar", "grammar", type=str, default=None, help="Grammar file."),
        click.option("--beam-width", type=click.IntRange(min=1), default=50, show_default=True),
        click.option("--max-rows", type=click.IntRange(min=1), default=20, show_default=True),
        click.option("--max-appearances", type=click.IntRange(min=1), default=10, show_default=True),
        click.option("--top-k", type=click.IntRange(min=1), default=5, show_default=True),
        click.option("--patience", type=click.IntRange(min=1), default=6, show_default=True),
        click.option("--format", "fmt", type=click.Choice(["text", "structured"]),
                     default="text", show_default=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _cfg(beam_width, max_rows, max_appearances, top_k, patience) -> SearchConfig:
    return SearchConfig(beam_width, max_rows, max_appearances, top_k, patience)


@click.group()
def cli():
    """Alignment, encoding, learning and simulation over SP-style grammars."""


@cli.command()
@search_options
@click.option("--new", "new", type=str, default=None, help="New pattern, whitespace-separated.")
@click.option("--input", "input_path", type=str, default=None, help="File holding the New pattern.")
def align(grammar, beam_width, max_rows, max_appearances, top_k, patience, fmt, new, input_path):
    """Print the best alignments of a New pattern against a grammar."""
    store = _load_grammar(grammar)
    tokens = _read_input(new, input_path)
    cfg = _cfg(beam_width, max_rows, max_appearances, top_k, patience)
    for rank, ma in enumerate(build_alignments(new_pattern(tokens), store, cfg), 1):
        _emit_alignment(ma, rank, fmt)


@cli.command()
@search_options
@click.option("--new", "new", type=str, default=None)
@click.option("--input", "input_path", type=str, default=None)
def encode(grammar, beam_width, max_rows, max_appearances, top_k, patience, fmt, new, input_path):
    """Print the code pattern of the best alignment."""
    store = _load_grammar(grammar)
    tokens = _read_input(new, input_path)
    cfg = _cfg(beam_width, max_rows, max_appearances, top_k, patience)
    ma = build_alignments(new_pattern(tokens), store, cfg)[0]
    code = derive_code_pattern(ma)
    if fmt == "structured":
        click.echo(json.dumps({"code": list(code.tokens), "score": _score_fields(ma)}))
    else:
        click.echo(str(code))


@cli.command()
@search_options
@click.option("--code", "code", type=str, default=None, help="Code pattern, whitespace-separated.")
@click.option("--input", "input_path", type=str, default=None)
def decode(grammar, beam_width, max_rows, max_appearances, top_k, patience, fmt, code, input_path):
    """Regenerate the surface sequence for a code pattern."""
    store = _load_grammar(grammar)
    tokens = _read_input(code, input_path, "--code")
    cfg = _cfg(beam_width, max_rows, max_appearances, top_k, patience)
    try:
        surface = regenerate(tokens, store, cfg)
    except RegenerationError as exc:
        raise DataError(str(exc)) from None
    if fmt == "structured":
        click.echo(json.dumps({"surface": surface}))
    else:
        click.echo(" ".join(surface))


@cli.command()
@search_options
@click.option("--corpus", "corpus", type=str, required=True, help="One New pattern per line.")
@click.option("--out", "out", type=str, default=None, help="Where to write the learned grammar.")
@click.option("--epochs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--sift-interval", type=click.IntRange(min=0), default=0, show_default=True,
              help="Sift after this many inputs (0: never).")
@click.option("--keep-threshold", type=float, default=0.0, show_default=True)
@click.option("--min-coverage", type=click.FloatRange(0.0, 1.0), default=0.5, show_default=True)
@click.option("--feed-codes", is_flag=True, help="Experimental: also learn from code patterns.")
def learn_cmd(grammar, beam_width, max_rows, max_appearances, top_k, patience, fmt, corpus,
              out, epochs, sift_interval, keep_threshold, min_coverage, feed_codes):
    """Learn a grammar from a corpus."""
    store = _load_grammar(grammar)
    try:
        lines = [ln for ln in Path(corpus).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise click.UsageError(f"cannot read corpus {corpus}: {exc.strerror}") from None
    cfg = _cfg(beam_width, max_rows, max_appearances, top_k, patience)
    lcfg = LearnConfig(epochs, sift_interval, keep_threshold, min_coverage, feed_codes)
    store, outcomes = learn(lines, store, cfg, lcfg)
    text = serialize_grammar(store)
    if out is not None:
        Path(out).write_text(text)
    if fmt == "structured":
        for k, res in enumerate(outcomes):
            click.echo(json.dumps({"index": k, "outcome": res.outcome.value, "pids": res.pids}))
    else:
        for k, res in enumerate(outcomes):
            click.echo(f"{k}: {res.outcome.value} {' '.join(map(str, res.pids))}")
        if out is None:
            click.echo(text, nl=False)


learn_cmd.name = "learn"
cli.add_command(learn_cmd, "learn")


@cli.command()
@click.option("--grammar", "grammar", type=str, default=None)
@click.option("--new", "new", type=str, default=None)
@click.option("--input", "input_path", type=str, default=None)
@click.option("--retain-ratio", type=click.FloatRange(0.0, 1.0, min_open=True), default=0.8,
              show_default=True)
@click.option("--max-stages", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--max-appearances", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["text", "structured"]), default="text",
              show_default=True)
def simulate(grammar, new, input_path, retain_ratio, max_stages, max_appearances, fmt):
    """Run the assembly simulator and print its trace and winning structure."""
    store = _load_grammar(grammar)
    tokens = _read_input(new, input_path)
    scfg = SimConfig(retain_ratio, max_stages, max_appearances)
    net = compile(store)
    trace = step_stages(net, tokens, scfg)
    try:
        ma = extract_nama(trace, net, scfg)
    except RecognitionFailure as exc:
        click.echo(trace.export(), nl=False)
        raise DataError(str(exc)) from None
    if fmt == "structured":
        for st in trace.states:
            click.echo(json.dumps({"stage": st.stage,
                                   "excitation": {str(k): v for k, v in sorted(st.assembly.items())}}))
        click.echo(json.dumps(alignment_record(ma, 1)))
    else:
        click.echo(trace.export(), nl=False)
        if not trace.converged:
            click.echo(f"# no fixpoint within {max_stages} stages")
        _emit_alignment(ma, 1, fmt)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit status instead of exiting."""
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name="spmodel",
                 standalone_mode=False)
    except DataError as exc:
        exc.show()
        return 2
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    return 0


def main() -> None:
    sys.exit(run())
