"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or format error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import build_report
from .augment import back_translate, combine, select_subset, write_synthetic
from .data import (
    DEFAULT_MAX_LEN,
    ParallelCorpus,
    clean,
    load_parallel,
    read_lines,
    tag_multilingual,
    tokenize,
    write_parallel,
)
from .decoding import BeamConfig, translate_corpus
from .errors import SimtransError
from .evaluation import corpus_bleu
from .model import TransformerConfig
from .subword import BpeModel, Vocab, apply_bpe, build_vocab, learn_bpe
from .training import TrainConfig, load_checkpoint, model_config_from, train

log = logging.getLogger("simtrans")

DEFAULT_MERGES = 200


class UsageError(Exception):
    def __init__(self, message: str, reported: bool = False):
        super().__init__(message)
        self.reported = reported


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message, reported=True)


def default_seed() -> int:
    return int(os.environ.get("SIMTRANS_SEED", "1"))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _write_lines(path, lines) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _tokenized(path) -> list[list[str]]:
    return [tokenize(line) for line in read_lines(path)]


def _split(path) -> list[list[str]]:
    return [line.split() for line in read_lines(path)]


def _load_bpe(path) -> BpeModel | None:
    return BpeModel.load(path) if path else None


def _segment(sentences, bpe: BpeModel | None):
    return [apply_bpe(s, bpe) if bpe else list(s) for s in sentences]


def read_config(path) -> configparser.ConfigParser:
    """Flat ``key = value`` file with [data], [model] and [train] sections."""
    if not Path(path).is_file():
        raise SimtransError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise SimtransError(f"{path}: {exc}") from None
    return cp


def _coerce(cls, values: dict) -> dict:
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in values.items():
        if key not in types:
            raise SimtransError(f"unknown {cls.__name__} key '{key}'")
        t = str(types[key])
        if "bool" in t:
            out[key] = str(raw).lower() in ("1", "true", "yes", "on")
        elif "int" in t:
            out[key] = int(raw)
        elif "float" in t:
            out[key] = float(raw)
        else:
            out[key] = raw
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_learn_bpe(args) -> None:
    corpus = [toks for path in args.input for toks in _tokenized(path)]
    model = learn_bpe(corpus, args.merges)
    model.save(args.output)
    print(f"learned {len(model.merges)} merges -> {args.output}")


def cmd_apply_bpe(args) -> None:
    bpe = BpeModel.load(args.codes)
    _write_lines(args.output, (" ".join(apply_bpe(toks, bpe)) for toks in _tokenized(args.input)))


def cmd_build_vocab(args) -> None:
    vocab = build_vocab([_split(p) for p in args.input], args.tag or [])
    vocab.save(args.output)
    print(f"vocabulary of {len(vocab)} entries -> {args.output}")


def _load_sets(pairs, tags, src_lang, tgt_lang, max_len) -> list[ParallelCorpus]:
    if tags and len(tags) != len(pairs):
        raise UsageError("give one --tag per --train/--dev pair, or none")
    out = []
    for i, (src, tgt) in enumerate(pairs):
        corpus = clean(load_parallel(src, tgt, src_lang, tgt_lang), max_len)
        if tags:
            corpus = tag_multilingual(corpus, tags[i])
        out.append(corpus)
    return out


def _concat(corpora: list[ParallelCorpus], src_lang, tgt_lang) -> ParallelCorpus:
    return ParallelCorpus([p for c in corpora for p in c.pairs], src_lang, tgt_lang)


def cmd_preprocess(args) -> None:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_sets = _load_sets(args.train, args.tag, args.src_lang, args.tgt_lang, args.max_len)
    dev_sets = _load_sets(args.dev or [], args.tag if args.dev else None,
                          args.src_lang, args.tgt_lang, args.max_len)
    train_c = _concat(train_sets, args.src_lang, args.tgt_lang)
    dev_c = _concat(dev_sets, args.src_lang, args.tgt_lang)

    tags = set(args.tag or [])
    if args.codes:
        bpe = BpeModel.load(args.codes)
    else:
        # tags are atomic and must not take part in merges
        text = [[t for t in s if t not in tags] for s in train_c.sources] + train_c.targets
        bpe = learn_bpe(text, args.merges)
        bpe.save(out / "bpe.codes")

    def seg(tokens):
        if tokens and tokens[0] in tags:
            return [tokens[0], *apply_bpe(tokens[1:], bpe)]
        return apply_bpe(tokens, bpe)

    train_bpe = ParallelCorpus([(seg(s), seg(t)) for s, t in train_c.pairs], args.src_lang, args.tgt_lang)
    dev_bpe = ParallelCorpus([(seg(s), seg(t)) for s, t in dev_c.pairs], args.src_lang, args.tgt_lang)
    write_parallel(train_bpe, out / "train.src", out / "train.tgt")
    write_parallel(dev_bpe, out / "dev.src", out / "dev.tgt")
    vocab = build_vocab([train_bpe.sources, train_bpe.targets], sorted(tags))
    vocab.save(out / "vocab.txt")
    print(f"{len(train_bpe)} train / {len(dev_bpe)} dev pairs, vocab {len(vocab)} -> {out}")


def cmd_train(args) -> None:
    cp = read_config(args.config) if args.config else configparser.ConfigParser()
    data_dir = args.data_dir or cp.get("data", "data_dir", fallback=None)
    output_dir = args.output_dir or cp.get("data", "output_dir", fallback=None)
    if not data_dir or not output_dir:
        raise UsageError("train needs a data directory and an output directory")
    data = Path(data_dir)

    model_values = dict(cp.items("model")) if cp.has_section("model") else {}
    train_values = dict(cp.items("train")) if cp.has_section("train") else {}
    for key in ("num_layers", "num_heads", "d_model", "d_ff", "max_positions"):
        if getattr(args, key) is not None:
            model_values[key] = getattr(args, key)
    for key in ("max_steps", "validate_every", "lr", "warmup", "dropout", "label_smoothing",
                "weight_decay", "clip_norm", "max_tokens", "seed", "valid_beam", "threads"):
        if getattr(args, key) is not None:
            train_values[key] = getattr(args, key)
    if args.float32:
        train_values["float32"] = True
    train_values.setdefault("seed", default_seed())

    vocab = Vocab.load(data / "vocab.txt")
    train_c = load_parallel(data / "train.src", data / "train.tgt", "src", "tgt", pretokenized=True)
    dev_c = load_parallel(data / "dev.src", data / "dev.tgt", "src", "tgt", pretokenized=True)
    model_cfg = TransformerConfig(vocab_size=len(vocab), **_coerce(TransformerConfig, model_values))
    train_cfg = TrainConfig(**_coerce(TrainConfig, train_values))
    best = train(train_c, dev_c, vocab, model_cfg, train_cfg, output_dir)
    print(f"best checkpoint: step {best.step}, dev BLEU {best.dev_bleu:.2f} -> {best.path}")


def _prepare_sources(path, bpe, tag):
    sents = _segment(_tokenized(path), bpe)
    return [[tag, *s] for s in sents] if tag else sents


def cmd_translate(args) -> None:
    params, _, cfg = load_checkpoint(args.checkpoint)
    vocab = Vocab.load(args.vocab)
    sources = _prepare_sources(args.input, _load_bpe(args.codes), args.tag)
    beam = BeamConfig(args.beam, args.max_len, args.length_penalty)
    outputs = translate_corpus(params, model_config_from(cfg), sources, vocab, beam, args.threads)
    _write_lines(args.output, outputs)


def cmd_backtranslate(args) -> None:
    params, _, cfg = load_checkpoint(args.checkpoint)
    vocab = Vocab.load(args.vocab)
    mono = select_subset(_tokenized(args.mono), args.subset, args.seed)
    bpe = _load_bpe(args.codes)
    inputs = _segment(mono, bpe)
    if args.tag:
        inputs = [[args.tag, *s] for s in inputs]
    synth = back_translate(params, model_config_from(cfg), inputs, vocab,
                           BeamConfig(args.beam), args.src_lang, args.tgt_lang, args.threads)
    # targets are written as the original tokenized sentences, not their BPE form
    synth.pairs = [(s, mono[i]) for (s, _), i in zip(synth.pairs, synth.origin)]
    corpus = synth
    if args.gold_src and args.gold_tgt:
        gold = load_parallel(args.gold_src, args.gold_tgt, args.src_lang, args.tgt_lang)
        corpus = combine(gold, synth)
    paths = write_synthetic(corpus, args.output_prefix)
    print(f"{len(synth)} synthetic pairs ({synth.failures} dropped) -> {paths[0].parent}")


def cmd_score(args) -> None:
    read = _tokenized if args.tokenize else _split
    hyps, refs = read(args.hyp), read(args.ref)
    report = corpus_bleu(hyps, refs, args.max_n, args.smooth)
    print(report.to_json() if args.json else report.format())


def cmd_analyze(args) -> None:
    report = build_report(args.results, args.corpora, args.output,
                          "spearman" if args.spearman else "pearson")
    for fam, r in sorted(report.correlations.items()):
        print(f"{fam},{r:.6f}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simtrans", description="Desk-scale NMT toolkit for similar-language translation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("learn-bpe", help="learn joint BPE merges from raw text files")
    s.add_argument("--input", nargs="+", required=True, help="raw text files (all sides, jointly)")
    s.add_argument("--merges", type=int, default=DEFAULT_MERGES, help="number of merge operations")
    s.add_argument("--output", required=True, help="BPE codes file to write")
    s.set_defaults(func=cmd_learn_bpe)

    s = sub.add_parser("apply-bpe", help="tokenize and BPE-segment a raw text file")
    s.add_argument("--codes", required=True, help="BPE codes file")
    s.add_argument("--input", required=True, help="raw text file")
    s.add_argument("--output", required=True, help="segmented output file")
    s.set_defaults(func=cmd_apply_bpe)

    s = sub.add_parser("build-vocab", help="build the shared vocabulary from segmented files")
    s.add_argument("--input", nargs="+", required=True, help="segmented text files")
    s.add_argument("--tag", action="append", help="language tag to reserve, e.g. <2ca> (repeatable)")
    s.add_argument("--output", required=True, help="vocabulary file to write")
    s.set_defaults(func=cmd_build_vocab)

    s = sub.add_parser("preprocess", help="tokenize, clean, tag, BPE-segment and build the vocabulary")
    s.add_argument("--train", nargs=2, action="append", required=True, metavar=("SRC", "TGT"),
                   help="parallel training files (repeatable for multilingual data)")
    s.add_argument("--dev", nargs=2, action="append", metavar=("SRC", "TGT"),
                   help="parallel dev files, one per --train")
    s.add_argument("--tag", action="append",
                   help="target-language tag per --train pair, e.g. <2ca> (multilingual mode)")
    s.add_argument("--src-lang", default="src", help="source language code")
    s.add_argument("--tgt-lang", default="tgt", help="target language code")
    s.add_argument("--codes", help="existing BPE codes; learned jointly when omitted")
    s.add_argument("--merges", type=int, default=DEFAULT_MERGES, help="merges to learn without --codes")
    s.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN, help="drop pairs longer than this")
    s.add_argument("--output-dir", required=True, help="directory for train/dev/vocab files")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a model and keep the best dev-BLEU checkpoint")
    s.add_argument("--config", help="key = value config file with [data]/[model]/[train] sections")
    s.add_argument("--data-dir", help="output directory of `preprocess`")
    s.add_argument("--output-dir", help="checkpoint and log directory")
    s.add_argument("--num-layers", type=int, help="layers per stack")
    s.add_argument("--num-heads", type=int, help="attention heads")
    s.add_argument("--d-model", type=int, help="embedding dimension")
    s.add_argument("--d-ff", type=int, help="feed-forward dimension (default 4 * d_model)")
    s.add_argument("--max-positions", type=int, help="longest sequence the model accepts")
    s.add_argument("--max-steps", type=int, help="optimizer steps")
    s.add_argument("--validate-every", type=int, help="steps between dev evaluations")
    s.add_argument("--lr", type=float, help="peak learning rate")
    s.add_argument("--warmup", type=int, help="linear warmup steps")
    s.add_argument("--dropout", type=float, help="dropout rate")
    s.add_argument("--label-smoothing", type=float, help="label smoothing epsilon")
    s.add_argument("--weight-decay", type=float, help="decoupled weight decay")
    s.add_argument("--clip-norm", type=float, help="gradient clip norm (0 disables)")
    s.add_argument("--max-tokens", type=int, help="target tokens per batch")
    s.add_argument("--seed", type=int, help="run seed (default $SIMTRANS_SEED or 1)")
    s.add_argument("--valid-beam", type=int, help="beam size for dev decoding")
    s.add_argument("--threads", type=int, help="decoding threads for validation")
    s.add_argument("--float32", action="store_true", help="train in single precision")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("translate", help="beam-decode a raw text file")
    s.add_argument("--checkpoint", required=True, help="checkpoint file")
    s.add_argument("--vocab", required=True, help="vocabulary file")
    s.add_argument("--codes", help="BPE codes applied to the input")
    s.add_argument("--input", required=True, help="raw source text")
    s.add_argument("--output", required=True, help="translations, one per line")
    s.add_argument("--tag", help="target-language tag to prepend (multilingual models)")
    s.add_argument("--beam", type=int, default=5, help="beam size")
    s.add_argument("--max-len", type=int, help="decoding cap (default 2 * source length + 10)")
    s.add_argument("--length-penalty", type=float, default=0.0, help="length normalization exponent")
    s.add_argument("--threads", type=int, default=1, help="sentences decoded in parallel")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("backtranslate", help="create synthetic parallel data from monolingual text")
    s.add_argument("--checkpoint", required=True, help="reverse-direction checkpoint")
    s.add_argument("--vocab", required=True, help="vocabulary of the reverse model")
    s.add_argument("--codes", help="BPE codes applied to the monolingual text")
    s.add_argument("--mono", required=True, help="monolingual target-language text")
    s.add_argument("--subset", type=int, help="use only this many sentences (seeded shuffle)")
    s.add_argument("--seed", type=int, default=default_seed(), help="subset selection seed")
    s.add_argument("--tag", help="tag to prepend for a multilingual reverse model")
    s.add_argument("--beam", type=int, default=5, help="beam size")
    s.add_argument("--src-lang", default="src", help="forward source language code")
    s.add_argument("--tgt-lang", default="tgt", help="forward target language code")
    s.add_argument("--gold-src", help="gold source file to combine with")
    s.add_argument("--gold-tgt", help="gold target file to combine with")
    s.add_argument("--threads", type=int, default=1, help="sentences decoded in parallel")
    s.add_argument("--output-prefix", required=True, help="writes PREFIX.src, PREFIX.tgt, PREFIX.prov")
    s.set_defaults(func=cmd_backtranslate)

    s = sub.add_parser("score", help="corpus BLEU of a hypothesis file against a reference file")
    s.add_argument("--hyp", required=True, help="hypotheses, one per line")
    s.add_argument("--ref", required=True, help="references, one per line")
    s.add_argument("--max-n", type=int, default=4, help="highest n-gram order")
    s.add_argument("--smooth", action="store_true", help="add-one smoothing for n >= 2")
    s.add_argument("--tokenize", action="store_true", help="tokenize both files before scoring")
    s.add_argument("--json", action="store_true", help="print the report as one JSON line")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("analyze", help="Jaccard similarity vs BLEU report")
    s.add_argument("--results", required=True, help="CSV with pair,direction,family,bleu")
    s.add_argument("--corpora", required=True, help="directory with <pair>/train.<lang> files")
    s.add_argument("--output", required=True, help="CSV to write (pair,jaccard_x100,bleu,family)")
    s.add_argument("--spearman", action="store_true", help="rank correlation instead of Pearson")
    s.set_defaults(func=cmd_analyze)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            print("simtrans: error: a subcommand is required", file=sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        if not exc.reported:
            print(f"simtrans: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except (SimtransError, OSError) as exc:
        print(f"simtrans: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
