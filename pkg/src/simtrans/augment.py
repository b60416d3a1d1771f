"""Back-translation: synthetic parallel data from monolingual target text."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ParallelCorpus
from .decoding import BeamConfig, translate_corpus
from .errors import ArgumentError
from .model import TransformerConfig
from .numerics import TensorSet
from .subword import Vocab

log = logging.getLogger(__name__)

GOLD = "gold"
SYNTHETIC = "synthetic"


@dataclass
class SyntheticCorpus:
    """(synthetic source, original target) pairs produced by a reverse model."""

    pairs: list[tuple[list[str], list[str]]]
    source_lang: str
    target_lang: str
    failures: int = 0
    # Index into the monolingual input for every kept pair.
    origin: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def provenance(self) -> list[str]:
        return [SYNTHETIC] * len(self.pairs)


def select_subset(mono: Sequence, size: int | None, seed: int) -> list:
    """First ``size`` sentences after a seeded shuffle (all of them when ``size`` is None)."""
    if size is None or size >= len(mono):
        return list(mono)
    order = np.random.default_rng(seed).permutation(len(mono))[:size]
    return [mono[i] for i in order]


def back_translate(
    reverse_params: TensorSet,
    reverse_config: TransformerConfig,
    mono_target: Sequence[Sequence[str]],
    vocab: Vocab,
    beam: BeamConfig = BeamConfig(5),
    source_lang: str = "src",
    target_lang: str = "tgt",
    threads: int = 1,
) -> SyntheticCorpus:
    """Translate target-language sentences back into the source language.

    The reverse model maps target -> source; the returned pairs are
    oriented source -> target for training the forward model. Sentences
    whose translation comes out empty are dropped and counted.
    """
    if not mono_target:
        log.warning("empty monolingual corpus: no synthetic data produced")
        return SyntheticCorpus([], source_lang, target_lang)
    outputs = translate_corpus(reverse_params, reverse_config, mono_target, vocab, beam, threads)
    pairs, origin = [], []
    failures = 0
    for i, (synth, tgt) in enumerate(zip(outputs, mono_target)):
        tokens = synth.split()
        if not tokens:
            failures += 1
            continue
        pairs.append((tokens, list(tgt)))
        origin.append(i)
    if failures:
        log.warning("%d of %d back-translations were empty and dropped", failures, len(mono_target))
    return SyntheticCorpus(pairs, source_lang, target_lang, failures, origin)


def combine(gold: ParallelCorpus, synthetic: SyntheticCorpus) -> ParallelCorpus:
    """Gold pairs followed by synthetic pairs, with a provenance flag per pair."""
    if len(synthetic) and (gold.source_lang, gold.target_lang) != (
        synthetic.source_lang,
        synthetic.target_lang,
    ):
        raise ArgumentError(
            f"direction mismatch: gold {gold.source_lang}-{gold.target_lang}, "
            f"synthetic {synthetic.source_lang}-{synthetic.target_lang}"
        )
    gold_prov = gold.provenance or [GOLD] * len(gold)
    return ParallelCorpus(
        list(gold.pairs) + list(synthetic.pairs),
        gold.source_lang,
        gold.target_lang,
        gold_prov + synthetic.provenance,
    )


def write_synthetic(corpus: ParallelCorpus | SyntheticCorpus, prefix) -> tuple[Path, Path, Path]:
    """Write ``<prefix>.src``, ``<prefix>.tgt`` and the ``<prefix>.prov`` sidecar."""
    prefix = Path(prefix)
    paths = tuple(prefix.with_name(prefix.name + ext) for ext in (".src", ".tgt", ".prov"))
    prov = corpus.provenance or [GOLD] * len(corpus.pairs)
    paths[0].write_text("".join(" ".join(s) + "\n" for s, _ in corpus.pairs), encoding="utf-8")
    paths[1].write_text("".join(" ".join(t) + "\n" for _, t in corpus.pairs), encoding="utf-8")
    paths[2].write_text("".join(p + "\n" for p in prov), encoding="utf-8")
    return paths
