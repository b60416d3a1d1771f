"""Jaccard token-set similarity between corpora and its correlation with BLEU."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, DataError, UndefinedCorrelationError


def token_set(lines: Iterable[str]) -> set[str]:
    return {tok for line in lines for tok in line.split()}


def _lines(corpus) -> list[str]:
    if isinstance(corpus, (str, Path)):
        return Path(corpus).read_text(encoding="utf-8").splitlines()
    return [c if isinstance(c, str) else " ".join(c) for c in corpus]


def jaccard_similarity(corpus_a, corpus_b) -> float:
    """|A & B| / |A | B| over the distinct whitespace tokens of two corpora.

    Each corpus is a file path or a sequence of lines.
    """
    a = token_set(_lines(corpus_a))
    b = token_set(_lines(corpus_b))
    if not a or not b:
        raise ArgumentError("Jaccard similarity needs two non-empty corpora")
    return len(a & b) / len(a | b)


def pearson_correlation(points: Sequence[tuple[float, float]]) -> float:
    """Sample Pearson correlation of (x, y) points."""
    if len(points) < 2:
        raise ArgumentError("correlation needs at least two points")
    x = np.array([p[0] for p in points], dtype=np.float64)
    y = np.array([p[1] for p in points], dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined: zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def _ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks


def spearman_correlation(points: Sequence[tuple[float, float]]) -> float:
    x = _ranks(np.array([p[0] for p in points], dtype=np.float64))
    y = _ranks(np.array([p[1] for p in points], dtype=np.float64))
    return pearson_correlation(list(zip(x, y)))


@dataclass(frozen=True)
class ReportRow:
    pair: str  # translation direction, e.g. "es-ca"
    jaccard: float
    bilingual_bleu: float | None
    multilingual_bleu: float | None

    @property
    def jaccard_x100(self) -> float:
        return 100.0 * self.jaccard


@dataclass(frozen=True)
class SimilarityReport:
    rows: tuple[ReportRow, ...]
    correlations: dict[str, float]
    method: str = "pearson"


@dataclass(frozen=True)
class ResultRow:
    pair: str
    direction: str
    family: str
    bleu: float


def read_results(path) -> list[ResultRow]:
    """Parse a ``pair,direction,family,bleu`` CSV."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"pair", "direction", "family", "bleu"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: results file lacks columns {sorted(missing)}")
        for rec in reader:
            try:
                bleu = float(rec["bleu"])
            except ValueError:
                raise DataError(f"{path}: bad BLEU value {rec['bleu']!r}") from None
            rows.append(ResultRow(rec["pair"].strip(), rec["direction"].strip(),
                                  rec["family"].strip(), bleu))
    return rows


def pair_corpora(corpora_dir, pair: str) -> tuple[Path, Path]:
    """Training files ``<dir>/<pair>/train.<lang>`` for both languages of ``pair``."""
    langs = pair.split("-")
    if len(langs) != 2:
        raise DataError(f"pair name {pair!r} is not of the form xx-yy")
    paths = tuple(Path(corpora_dir) / pair / f"train.{lang}" for lang in langs)
    if not all(p.is_file() for p in paths):
        raise DataError(f"missing training corpora for pair {pair}")
    return paths


def build_report(results_file, corpora_dir, output_csv=None, method: str = "pearson") -> SimilarityReport:
    """Join BLEU results with per-pair Jaccard similarity and correlate them per model family.

    Writes ``pair,jaccard_x100,bleu,family`` rows followed by a blank line and
    ``family,pearson_r`` summary rows when ``output_csv`` is given.
    """
    if method not in ("pearson", "spearman"):
        raise ArgumentError(f"unknown correlation method {method!r}")
    correlate = pearson_correlation if method == "pearson" else spearman_correlation
    results = read_results(results_file)

    jaccard: dict[str, float] = {}
    for res in results:
        if res.pair not in jaccard:
            a, b = pair_corpora(corpora_dir, res.pair)
            jaccard[res.pair] = jaccard_similarity(a, b)

    by_direction: dict[str, dict] = {}
    for res in results:
        entry = by_direction.setdefault(res.direction, {"pair": res.pair})
        entry[res.family] = res.bleu
    rows = tuple(
        ReportRow(d, jaccard[e["pair"]], e.get("bilingual"), e.get("multilingual"))
        for d, e in sorted(by_direction.items())
    )

    families = sorted({r.family for r in results})
    correlations = {}
    for fam in families:
        pts = [(100.0 * jaccard[r.pair], r.bleu) for r in results if r.family == fam]
        correlations[fam] = correlate(pts)

    if output_csv is not None:
        with open(output_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pair", "jaccard_x100", "bleu", "family"])
            for res in sorted(results, key=lambda r: (r.direction, r.family)):
                w.writerow([res.direction, f"{100.0 * jaccard[res.pair]:.6f}", f"{res.bleu:g}", res.family])
            w.writerow([])
            w.writerow(["family", f"{method}_r"])
            for fam in families:
                w.writerow([fam, f"{correlations[fam]:.6f}"])
    return SimilarityReport(rows, correlations, method)
