"""Beam-search decoding with a frozen model."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError
from .model import TransformerConfig, encode, next_token_logprobs
from .numerics import TensorSet
from .subword import BOS_ID, EOS_ID, PAD_ID, Vocab
from .evaluation import postprocess

# Maps a matrix of equal-length prefixes [N, t] to next-token log-probs [N, V].
StepFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    finished: bool

    @property
    def output(self) -> list[int]:
        """Generated ids without bos and the closing eos."""
        body = self.tokens[1:]
        return list(body[:-1] if self.finished else body)


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 5
    max_len: int | None = None  # None: 2 * source length + 10
    length_penalty: float = 0.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ArgumentError("beam size must be >= 1")
        if self.max_len is not None and self.max_len < 1:
            raise ArgumentError("max_len must be >= 1")

    def resolved_max_len(self, source_len: int) -> int:
        return self.max_len if self.max_len is not None else 2 * source_len + 10


def _rank_key(h: Hypothesis, length_penalty: float):
    score = h.score
    if length_penalty and h.finished:
        score = score / (len(h.tokens) - 1) ** length_penalty
    return (-score, h.tokens)


def search(
    step_fn: StepFn,
    beam_size: int,
    max_len: int,
    bos_id: int = BOS_ID,
    eos_id: int = EOS_ID,
    length_penalty: float = 0.0,
) -> Hypothesis:
    """Model-agnostic beam search.

    Every live hypothesis is extended by its own top-``beam_size`` tokens
    (ties to the lower id); those candidates are pooled with the already
    finished hypotheses, which keep their frozen scores, and the best
    ``beam_size`` survive. Stops once every survivor has emitted eos or after
    ``max_len`` generated tokens.
    """
    if beam_size < 1:
        raise ArgumentError("beam size must be >= 1")
    if max_len < 1:
        raise ArgumentError("max_len must be >= 1")
    beam = [Hypothesis((bos_id,), 0.0, False)]
    for _ in range(max_len):
        live = [h for h in beam if not h.finished]
        if not live:
            break
        logprobs = np.asarray(step_fn(np.array([h.tokens for h in live], dtype=np.int64)))
        pool = [h for h in beam if h.finished]
        k = min(beam_size, logprobs.shape[1])
        for h, row in zip(live, logprobs):
            # stable argsort on -row keeps ascending ids among equal scores
            for tok in np.argsort(-row, kind="stable")[:k]:
                lp = float(row[tok])
                if lp == -np.inf:
                    continue
                tok = int(tok)
                pool.append(Hypothesis(h.tokens + (tok,), h.score + lp, tok == eos_id))
        if not pool:
            break
        pool.sort(key=lambda h: _rank_key(h, length_penalty))
        beam = pool[:beam_size]
    finished = [h for h in beam if h.finished]
    candidates = finished or beam
    return min(candidates, key=lambda h: _rank_key(h, length_penalty))


def model_step_fn(
    params: TensorSet, config: TransformerConfig, source_ids: Sequence[int]
) -> StepFn:
    """Step function for one source sentence; pad and bos are never generated."""
    enc = encode(np.asarray(source_ids, dtype=np.int64), params, config)

    def step(prefixes: np.ndarray) -> np.ndarray:
        lp = next_token_logprobs(prefixes, enc, params, config)
        lp[:, PAD_ID] = -np.inf
        lp[:, BOS_ID] = -np.inf
        return lp

    return step


def beam_search(
    params: TensorSet, config: TransformerConfig, source_ids: Sequence[int], beam: BeamConfig = BeamConfig()
) -> Hypothesis:
    """Translate one id sequence (eos-terminated source) and return the best hypothesis."""
    if len(source_ids) == 0:
        raise ArgumentError("cannot decode an empty source")
    step = model_step_fn(params, config, source_ids)
    return search(step, beam.beam_size, beam.resolved_max_len(len(source_ids)),
                  length_penalty=beam.length_penalty)


def score_sequence(
    params: TensorSet, config: TransformerConfig, source_ids: Sequence[int], tokens: Sequence[int]
) -> float:
    """Sum of per-step log-probabilities of ``tokens`` (starting with bos), one step at a time."""
    enc = encode(np.asarray(source_ids, dtype=np.int64), params, config)
    total = 0.0
    for i in range(1, len(tokens)):
        lp = next_token_logprobs(np.asarray(tokens[:i]), enc, params, config)
        total += float(lp[tokens[i]])
    return total


def source_ids(tokens: Sequence[str], vocab: Vocab) -> list[int]:
    return vocab.encode(tokens) + [EOS_ID]


def translate_ids(
    params: TensorSet,
    config: TransformerConfig,
    sources: Sequence[Sequence[int]],
    beam: BeamConfig = BeamConfig(),
    threads: int = 1,
) -> list[Hypothesis]:
    """Decode many id sequences; results keep the input order."""
    if threads > 1 and len(sources) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: beam_search(params, config, s, beam), sources))
    return [beam_search(params, config, s, beam) for s in sources]


def translate_corpus(
    params: TensorSet,
    config: TransformerConfig,
    sources: Sequence[Sequence[str]],
    vocab: Vocab,
    beam: BeamConfig = BeamConfig(),
    threads: int = 1,
) -> list[str]:
    """Beam-decode BPE-encoded sentences and return de-BPE'd, space-joined strings."""
    hyps = translate_ids(params, config, [source_ids(s, vocab) for s in sources], beam, threads)
    return [postprocess(vocab.decode(h.output)) for h in hyps]
