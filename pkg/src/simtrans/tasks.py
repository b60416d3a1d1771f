"""Synthetic language pairs with known ground truth, for desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ParallelCorpus


def make_words(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(n)]


def random_sentences(
    words: list[str], count: int, seed: int, min_len: int = 3, max_len: int = 10
) -> list[list[str]]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(min_len, max_len + 1))
        out.append([words[i] for i in rng.integers(0, len(words), size=n)])
    return out


def copy_corpus(num_sentences: int = 500, vocab_size: int = 20, seed: int = 0,
                min_len: int = 3, max_len: int = 10) -> ParallelCorpus:
    """Target equals source."""
    sents = random_sentences(make_words("w", vocab_size), num_sentences, seed, min_len, max_len)
    return ParallelCorpus([(s, list(s)) for s in sents], "xx", "xx")


@dataclass(frozen=True)
class Cipher:
    """Word substitution followed by swapping each adjacent pair of positions."""

    mapping: dict[str, str]

    @classmethod
    def random(cls, source_words: list[str], target_words: list[str], seed: int) -> "Cipher":
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(target_words))
        return cls({s: target_words[j] for s, j in zip(source_words, perm)})

    def encipher(self, tokens: list[str]) -> list[str]:
        out = [self.mapping[t] for t in tokens]
        for i in range(0, len(out) - 1, 2):
            out[i], out[i + 1] = out[i + 1], out[i]
        return out

    def decipher(self, tokens: list[str]) -> list[str]:
        inverse = {v: k for k, v in self.mapping.items()}
        out = [inverse.get(t, t) for t in tokens]
        for i in range(0, len(out) - 1, 2):
            out[i], out[i + 1] = out[i + 1], out[i]
        return out


def cipher_task(
    num_train: int,
    num_dev: int,
    vocab_size: int = 20,
    seed: int = 0,
    target_prefix: str = "t",
    source_lang: str = "sx",
    target_lang: str = "tx",
    min_len: int = 3,
    max_len: int = 10,
) -> tuple[ParallelCorpus, ParallelCorpus, Cipher]:
    """Train/dev corpora for a source language and its enciphered target language."""
    src_words = make_words("s", vocab_size)
    cipher = Cipher.random(src_words, make_words(target_prefix, vocab_size), seed)
    sents = random_sentences(src_words, num_train + num_dev, seed + 1, min_len, max_len)
    pairs = [(s, cipher.encipher(s)) for s in sents]
    return (
        ParallelCorpus(pairs[:num_train], source_lang, target_lang),
        ParallelCorpus(pairs[num_train:], source_lang, target_lang),
        cipher,
    )
