"""Corpus BLEU and output post-processing."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import ArgumentError
from .subword import revert_bpe


@dataclass(frozen=True)
class BleuReport:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    smoothed: bool = False

    @property
    def ratio(self) -> float:
        return self.hyp_len / self.ref_len if self.ref_len else 0.0

    def format(self) -> str:
        prec = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        line = (
            f"BLEU = {self.score:.2f}, {prec}, BP = {self.brevity_penalty:.4f}, "
            f"ratio = {self.ratio:.4f}, hyp_len = {self.hyp_len}, ref_len = {self.ref_len}"
        )
        return line + (" (add-one smoothing)" if self.smoothed else "")

    def to_json(self) -> str:
        data = asdict(self)
        data["ratio"] = self.ratio
        return json.dumps(data, sort_keys=True)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
    smoothing: bool = False,
) -> BleuReport:
    """Corpus-level BLEU (0-100) with clipped n-gram precisions and brevity penalty.

    Without smoothing any zero precision makes the score 0. ``smoothing``
    applies add-one to the counts of orders n >= 2.
    """
    if len(hypotheses) != len(references):
        raise ArgumentError(
            f"{len(hypotheses)} hypotheses but {len(references)} references"
        )
    if max_n < 1:
        raise ArgumentError("max_n must be >= 1")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = _ngram_counts(hyp, n)
            r = _ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)

    precisions = []
    for n in range(max_n):
        m, t = matches[n], totals[n]
        if smoothing and n >= 1:
            m, t = m + 1, t + 1
        precisions.append(m / t if t else 0.0)

    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    if bp == 0.0 or min(precisions) == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuReport(score, tuple(precisions), bp, hyp_len, ref_len, smoothing)


def postprocess(tokens: Sequence[str]) -> str:
    """Undo BPE and join words with single spaces."""
    return " ".join(revert_bpe(tokens))
