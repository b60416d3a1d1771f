"""Loading, cleaning, tagging and batching of parallel corpora."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError, DataError
from .subword import BOS_ID, EOS_ID, PAD_ID, Vocab

DEFAULT_MAX_LEN = 175
TAG_PATTERN = re.compile(r"<2[a-z]{2,3}>")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(line: str) -> list[str]:
    """Whitespace split, then peel punctuation off both ends of every word.

    Each peeled punctuation character becomes its own token; inner
    punctuation ("don't", "3.5") is kept. No case folding.
    """
    tokens: list[str] = []
    for word in line.split():
        start, end = 0, len(word)
        lead = []
        while start < end and _is_punct(word[start]):
            lead.append(word[start])
            start += 1
        trail = []
        while end > start and _is_punct(word[end - 1]):
            trail.append(word[end - 1])
            end -= 1
        tokens.extend(lead)
        if start < end:
            tokens.append(word[start:end])
        tokens.extend(reversed(trail))
    return tokens


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[str], list[str]]]
    source_lang: str
    target_lang: str
    # One "gold" / "synthetic" flag per pair when the corpus mixes origins.
    provenance: list[str] | None = None

    def __post_init__(self):
        if self.provenance is not None and len(self.provenance) != len(self.pairs):
            raise ArgumentError("provenance must have one flag per pair")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[list[str]]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[list[str]]:
        return [t for _, t in self.pairs]

    def _replace_pairs(self, pairs, keep=None) -> "ParallelCorpus":
        prov = self.provenance
        if prov is not None and keep is not None:
            prov = [prov[i] for i in keep]
        return ParallelCorpus(pairs, self.source_lang, self.target_lang, prov)


def read_lines(path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return text.splitlines()


def load_monolingual(path) -> list[list[str]]:
    return [tokenize(line) for line in read_lines(path)]


def load_parallel(
    src_path, tgt_path, src_lang: str, tgt_lang: str, pretokenized: bool = False
) -> ParallelCorpus:
    """Line i of each file becomes pair i.

    ``pretokenized`` files (e.g. BPE output) are split on whitespace only.
    """
    src = read_lines(src_path)
    tgt = read_lines(tgt_path)
    if len(src) != len(tgt):
        raise DataError(f"line count mismatch {len(src)} vs {len(tgt)}")
    split = str.split if pretokenized else tokenize
    pairs = [(split(s), split(t)) for s, t in zip(src, tgt)]
    return ParallelCorpus(pairs, src_lang, tgt_lang)


def write_parallel(corpus: ParallelCorpus, src_path, tgt_path) -> None:
    Path(src_path).write_text("".join(" ".join(s) + "\n" for s in corpus.sources), encoding="utf-8")
    Path(tgt_path).write_text("".join(" ".join(t) + "\n" for t in corpus.targets), encoding="utf-8")


def clean(corpus: ParallelCorpus, max_len: int = DEFAULT_MAX_LEN) -> ParallelCorpus:
    """Drop pairs with an empty side or a side longer than ``max_len`` tokens."""
    if max_len < 1:
        raise ArgumentError("max_len must be >= 1")
    keep = [
        i
        for i, (s, t) in enumerate(corpus.pairs)
        if 0 < len(s) <= max_len and 0 < len(t) <= max_len
    ]
    return corpus._replace_pairs([corpus.pairs[i] for i in keep], keep)


def tag_multilingual(corpus: ParallelCorpus, tag: str) -> ParallelCorpus:
    """Prepend the target-language tag (e.g. ``<2ca>``) to every source sentence."""
    if not TAG_PATTERN.fullmatch(tag):
        raise ArgumentError(f"malformed language tag {tag!r}; expected '<2xx>'")
    pairs = []
    for src, tgt in corpus.pairs:
        if src and TAG_PATTERN.fullmatch(src[0]):
            raise ArgumentError(f"corpus already tagged (first source token {src[0]!r})")
        pairs.append(([tag, *src], list(tgt)))
    return corpus._replace_pairs(pairs)


@dataclass
class Batch:
    """Padded id matrices for one training step.

    ``source`` ends every row with eos. ``target_in`` is bos + target and
    ``target_out`` is target + eos; both share ``target_mask``.
    """

    source: np.ndarray
    target_in: np.ndarray
    target_out: np.ndarray
    indices: list[int] = field(default_factory=list)

    @property
    def source_mask(self) -> np.ndarray:
        return self.source != PAD_ID

    @property
    def target_mask(self) -> np.ndarray:
        return self.target_out != PAD_ID

    @property
    def num_target_tokens(self) -> int:
        # Budget counts real target tokens; the appended eos is excluded.
        return int(self.target_mask.sum()) - len(self.indices)


def pad_rows(rows: Sequence[Sequence[int]], width: int | None = None) -> np.ndarray:
    width = max((len(r) for r in rows), default=0) if width is None else width
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def encode_pairs(
    pairs: Sequence[tuple[Sequence[str], Sequence[str]]], vocab: Vocab, indices: list[int]
) -> Batch:
    src = [vocab.encode(s) + [EOS_ID] for s, _ in pairs]
    tgt = [vocab.encode(t) for _, t in pairs]
    return Batch(
        source=pad_rows(src),
        target_in=pad_rows([[BOS_ID] + t for t in tgt]),
        target_out=pad_rows([t + [EOS_ID] for t in tgt]),
        indices=list(indices),
    )


def make_batches(
    corpus: ParallelCorpus, vocab: Vocab, max_tokens: int, seed: int
) -> list[Batch]:
    """Token-budgeted, length-bucketed batches covering every pair exactly once.

    Pairs are shuffled with ``seed``, stably sorted by length so that similar
    lengths share a batch, packed greedily under ``max_tokens`` real target
    tokens, and the batch order is shuffled again.
    """
    if max_tokens < 1:
        raise ArgumentError("max_tokens must be positive")
    if not corpus.pairs:
        return []
    rng = np.random.default_rng(seed)
    for i, (_, tgt) in enumerate(corpus.pairs):
        if len(tgt) > max_tokens:
            raise DataError(
                f"pair {i} has a {len(tgt)}-token target, above max_tokens={max_tokens}; clean first"
            )
    order = rng.permutation(len(corpus.pairs))
    order = sorted(order, key=lambda i: (len(corpus.pairs[i][1]), len(corpus.pairs[i][0])))

    groups: list[list[int]] = []
    current: list[int] = []
    used = 0
    for i in order:
        n = len(corpus.pairs[i][1])
        if current and used + n > max_tokens:
            groups.append(current)
            current, used = [], 0
        current.append(int(i))
        used += n
    if current:
        groups.append(current)

    batches = [encode_pairs([corpus.pairs[i] for i in g], vocab, g) for g in groups]
    return [batches[j] for j in rng.permutation(len(batches))]
