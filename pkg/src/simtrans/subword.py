"""Joint byte-pair encoding and the shared vocabulary.

Subwords that do not end a word carry the ``@@`` continuation marker, so
``["ab@@", "c"]`` spells the word ``abc``.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ArgumentError, FormatError

log = logging.getLogger(__name__)

MARKER = "@@"
BPE_HEADER = "#version: simtrans-bpe 1"

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)

Pair = tuple[str, str]


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[Pair, ...] = ()
    marker: str = MARKER

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise ArgumentError("duplicate merge rule in BPE model")

    @property
    def ranks(self) -> dict[Pair, int]:
        return {pair: i for i, pair in enumerate(self.merges)}

    def save(self, path) -> None:
        lines = [BPE_HEADER] + [f"{a} {b}" for a, b in self.merges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeModel":
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text or text[0].strip() != BPE_HEADER:
            raise FormatError(f"{path}: missing BPE header line '{BPE_HEADER}'")
        merges = []
        for lineno, line in enumerate(text[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) != 2 or not all(parts):
                raise FormatError(f"{path}:{lineno}: expected two symbols separated by one space")
            merges.append((parts[0], parts[1]))
        return cls(tuple(merges))


def _words(corpus: Iterable) -> Counter:
    freqs: Counter = Counter()
    for sentence in corpus:
        tokens = sentence.split() if isinstance(sentence, str) else sentence
        freqs.update(tokens)
    return freqs


def learn_bpe(corpus: Sequence, num_merges: int) -> BpeModel:
    """Greedily learn ``num_merges`` merge rules from frequency-weighted word types.

    ``corpus`` holds tokenized sentences (token lists, or strings split on
    whitespace). Each round merges the most frequent adjacent pair, ties going
    to the lexicographically smallest pair. Learning stops early once no pair
    occurs at least twice.
    """
    if num_merges < 0:
        raise ArgumentError("num_merges must be non-negative")
    if not corpus:
        raise ArgumentError("cannot learn BPE from an empty corpus")

    freqs = _words(corpus)
    words: list[list[str]] = [list(w) for w in freqs]
    counts: list[int] = [freqs[w] for w in freqs]

    stats: Counter = Counter()
    index: dict[Pair, set[int]] = defaultdict(set)
    for i, symbols in enumerate(words):
        for pair in zip(symbols, symbols[1:]):
            stats[pair] += counts[i]
            index[pair].add(i)

    merges: list[Pair] = []
    while len(merges) < num_merges and stats:
        best, best_count = min(stats.items(), key=lambda kv: (-kv[1], kv[0]))
        if best_count < 2:
            break
        merges.append(best)
        joined = best[0] + best[1]
        for i in sorted(index.pop(best, ())):
            old = words[i]
            new = _merge_word(old, best, joined)
            if new == old:
                continue
            for pair in zip(old, old[1:]):
                stats[pair] -= counts[i]
                if stats[pair] <= 0:
                    del stats[pair]
            for pair in zip(new, new[1:]):
                stats[pair] += counts[i]
                index[pair].add(i)
            words[i] = new
        stats.pop(best, None)
    return BpeModel(tuple(merges))


def _merge_word(symbols: list[str], pair: Pair, joined: str) -> list[str]:
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def segment_word(word: str, ranks: dict[Pair, int]) -> list[str]:
    """Split one word into subwords (without markers) by applying merges in rank order."""
    symbols = list(word)
    while len(symbols) > 1:
        candidates = [(ranks[p], p) for p in zip(symbols, symbols[1:]) if p in ranks]
        if not candidates:
            break
        _, pair = min(candidates)
        symbols = _merge_word(symbols, pair, pair[0] + pair[1])
    return symbols


def apply_bpe(sentence, model: BpeModel) -> list[str]:
    """Segment every word of ``sentence`` and mark all but the final piece."""
    tokens = sentence.split() if isinstance(sentence, str) else sentence
    ranks = model.ranks
    out: list[str] = []
    for word in tokens:
        pieces = segment_word(word, ranks)
        out.extend(p + model.marker for p in pieces[:-1])
        out.append(pieces[-1])
    return out


def revert_bpe_counted(tokens: Sequence[str], marker: str = MARKER) -> tuple[list[str], int]:
    """Undo segmentation. Returns the words and the number of dangling markers.

    A marker on the last token has no successor to join; it is stripped and
    counted.
    """
    words: list[str] = []
    buf = ""
    pending = False
    for tok in tokens:
        if tok.endswith(marker):
            buf += tok[: -len(marker)]
            pending = True
        else:
            words.append(buf + tok)
            buf = ""
            pending = False
    dangling = 0
    if pending:
        words.append(buf)
        dangling = 1
    return words, dangling


def revert_bpe(tokens: Sequence[str], marker: str = MARKER) -> list[str]:
    words, dangling = revert_bpe_counted(tokens, marker)
    if dangling:
        log.warning("dangling continuation marker at end of sequence")
    return words


@dataclass(frozen=True)
class Vocab:
    """Token/id bijection. Ids 0-3 are pad, bos, eos, unk; language tags follow."""

    tokens: tuple[str, ...]
    _ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ArgumentError("vocabulary must start with the reserved specials")
        ids = {t: i for i, t in enumerate(self.tokens)}
        if len(ids) != len(self.tokens):
            raise ArgumentError("vocabulary tokens are not unique")
        object.__setattr__(self, "_ids", ids)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self._ids.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        text = "".join(f"{t}\t{i}\n" for i, t in enumerate(self.tokens))
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        entries = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            tok, sep, idx = line.rpartition("\t")
            if not sep or not idx.isdigit():
                raise FormatError(f"{path}:{lineno}: expected 'token<TAB>id'")
            entries.append((int(idx), tok))
        entries.sort()
        if [i for i, _ in entries] != list(range(len(entries))):
            raise FormatError(f"{path}: ids are not contiguous from 0")
        try:
            return cls(tuple(t for _, t in entries))
        except ArgumentError as exc:
            raise FormatError(f"{path}: {exc}") from None


def build_vocab(corpora: Sequence[Sequence], language_tags: Sequence[str] = ()) -> Vocab:
    """Shared vocabulary over every corpus side.

    Order: specials, then tags, then corpus tokens by descending frequency
    (ties lexicographic).
    """
    if not corpora:
        raise ArgumentError("build_vocab needs at least one corpus")
    freqs: Counter = Counter()
    for corpus in corpora:
        freqs.update(_words(corpus))
    tags = list(dict.fromkeys(language_tags))
    reserved = set(SPECIALS) | set(tags)
    rest = sorted((t for t in freqs if t not in reserved), key=lambda t: (-freqs[t], t))
    return Vocab(tuple(SPECIALS) + tuple(tags) + tuple(rest))
