"""Training loop, BLEU-driven checkpoint selection and checkpoint files.

Checkpoint layout (little-endian)::

    magic  b"SMTRCKPT"
    u32    format version
    32B    sha256 config hash
    u32    config JSON length, then UTF-8 JSON (model + train config)
    i64    step
    f64    dev BLEU
    u32    tensor count
    per tensor: u32 name length, UTF-8 name, u32 rank, u32 * rank dims,
                float64 payload
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .data import ParallelCorpus, make_batches
from .decoding import BeamConfig, translate_corpus
from .errors import FormatError, NumericError, ShapeError
from .evaluation import corpus_bleu
from .model import TransformerConfig, forward_backward, init_params, param_shapes
from .numerics import (
    LrSchedule,
    OptimizerState,
    TensorSet,
    adam_step,
    clip_grad_norm,
    lr_at,
)
from .subword import Vocab, revert_bpe

log = logging.getLogger(__name__)

MAGIC = b"SMTRCKPT"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 2000
    validate_every: int = 200
    beta1: float = 0.90
    beta2: float = 0.98
    adam_eps: float = 1e-8
    lr: float = 5e-4
    warmup: int = 4000
    weight_decay: float = 1e-4
    label_smoothing: float = 0.1
    dropout: float = 0.3
    clip_norm: float = 0.0
    max_tokens: int = 4096
    seed: int = 1
    valid_beam: int = 5
    float32: bool = False
    threads: int = 1

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.warmup)


@dataclass(frozen=True)
class CheckpointMeta:
    step: int
    dev_bleu: float
    config_hash: str
    format_version: int = FORMAT_VERSION
    path: str | None = field(default=None, compare=False)


def config_payload(model_config: TransformerConfig, train_config: TrainConfig | None = None) -> dict:
    payload = {"model": model_config.to_dict()}
    if train_config is not None:
        payload["train"] = asdict(train_config)
    return payload


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: TensorSet, meta: CheckpointMeta, path, config: dict | None = None) -> None:
    """Write parameters and metadata; ``config`` is the JSON-able run configuration."""
    cfg_blob = json.dumps(config or {}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(bytes.fromhex(meta.config_hash))
    buf.write(struct.pack("<I", len(cfg_blob)))
    buf.write(cfg_blob)
    buf.write(struct.pack("<qd", meta.step, meta.dev_bleu))
    buf.write(struct.pack("<I", len(params)))
    for name, value in params.items():
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", value.ndim))
        buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
        buf.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected: TransformerConfig | None = None) -> tuple[TensorSet, CheckpointMeta, dict]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns ``(params, meta, config)``. With ``expected`` every tensor is
    checked against the shapes that configuration requires.
    """
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: checkpoint format version {version}, expected {FORMAT_VERSION}")
    chash = r.take(32).hex()
    (cfg_len,) = r.unpack("<I")
    try:
        config = json.loads(r.take(cfg_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt configuration block") from exc
    step, bleu = r.unpack("<qd")
    (count,) = r.unpack("<I")
    params: TensorSet = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode()
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}I")
        size = math.prod(shape)
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.data):
        raise FormatError(f"{path}: trailing bytes after last tensor")
    if expected is not None:
        want = param_shapes(expected)
        for name, shape in want.items():
            if name not in params:
                raise ShapeError(f"{path}: tensor '{name}' missing")
            if params[name].shape != shape:
                raise ShapeError(
                    f"{path}: tensor '{name}' has shape {params[name].shape}, expected {shape}"
                )
        extra = set(params) - set(want)
        if extra:
            raise ShapeError(f"{path}: unexpected tensors {sorted(extra)}")
    return params, CheckpointMeta(step, bleu, chash, version, str(path)), config


def model_config_from(config: dict) -> TransformerConfig:
    return TransformerConfig(**config["model"])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def validate(
    params: TensorSet,
    config: TransformerConfig,
    dev_corpus: ParallelCorpus,
    vocab: Vocab,
    beam_size: int = 5,
    threads: int = 1,
) -> float:
    """Beam-decode the dev sources and return corpus BLEU against de-BPE'd references."""
    hyps = translate_corpus(params, config, dev_corpus.sources, vocab, BeamConfig(beam_size), threads)
    refs = [revert_bpe(t) for t in dev_corpus.targets]
    return corpus_bleu([h.split() for h in hyps], refs).score


class TrainingAborted(NumericError):
    """Raised when the loss turns non-finite; carries the best checkpoint so far."""

    def __init__(self, message: str, best: CheckpointMeta | None):
        super().__init__(message)
        self.best = best


ValidateFn = Callable[[TensorSet, int], float]


def _step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def train(
    train_corpus: ParallelCorpus,
    dev_corpus: ParallelCorpus,
    vocab: Vocab,
    model_config: TransformerConfig,
    train_config: TrainConfig,
    output_dir,
    validate_fn: ValidateFn | None = None,
) -> CheckpointMeta:
    """Train from scratch and return the checkpoint with the best dev BLEU.

    Dev BLEU is measured every ``validate_every`` steps and after the last
    step (at step 0 when ``max_steps`` is 0); each measurement writes
    ``checkpoint_<step>.bin``. The best one (earliest on ties) is also copied
    to ``checkpoint_best.bin``. ``validate_fn(params, step)`` replaces beam
    decoding of the dev set when given.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_config = replace(model_config, dropout_rate=train_config.dropout)
    payload = config_payload(model_config, train_config)
    chash = config_hash(payload)
    dtype = np.float32 if train_config.float32 else np.float64

    params = init_params(model_config, train_config.seed, dtype)
    state = OptimizerState.zeros_like(params)
    schedule = train_config.schedule

    if validate_fn is None:
        def validate_fn(p, step):
            return validate(p, model_config, dev_corpus, vocab, train_config.valid_beam, train_config.threads)

    best: CheckpointMeta | None = None
    log_lines = ["step\tloss\tlr\tdevBLEU"]

    def checkpoint(step: int, loss: float, lr: float) -> None:
        nonlocal best
        bleu = float(validate_fn(params, step))
        path = out / f"checkpoint_{step}.bin"
        meta = CheckpointMeta(step, bleu, chash, path=str(path))
        save_checkpoint(params, meta, path, payload)
        log_lines.append(f"{step}\t{loss:.6f}\t{lr:.6e}\t{bleu:.4f}")
        log.info("step %d loss %.4f dev BLEU %.2f", step, loss, bleu)
        if best is None or bleu > best.dev_bleu:
            best = meta
            (out / "checkpoint_best.bin").write_bytes(path.read_bytes())

    try:
        if train_config.max_steps == 0:
            checkpoint(0, float("nan"), 0.0)
            return best

        epoch = 0
        batches = make_batches(train_corpus, vocab, train_config.max_tokens, train_config.seed)
        cursor = 0
        for step in range(1, train_config.max_steps + 1):
            if cursor == len(batches):
                epoch += 1
                batches = make_batches(train_corpus, vocab, train_config.max_tokens, train_config.seed + epoch)
                cursor = 0
            batch = batches[cursor]
            cursor += 1
            try:
                loss, grads = forward_backward(
                    batch, params, model_config, train_config.label_smoothing,
                    rng_seed=_step_seed(train_config.seed, step),
                )
            except NumericError as exc:
                raise TrainingAborted(f"step {step}: {exc}", best) from exc
            grads, _ = clip_grad_norm(grads, train_config.clip_norm)
            lr = lr_at(step, schedule)
            params, state = adam_step(
                params, grads, state, lr, train_config.beta1, train_config.beta2,
                train_config.adam_eps, train_config.weight_decay,
            )
            if step % train_config.validate_every == 0 or step == train_config.max_steps:
                checkpoint(step, loss, lr)
            else:
                log_lines.append(f"{step}\t{loss:.6f}\t{lr:.6e}\t")
    finally:
        (out / "train.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    return best


def read_train_log(path) -> list[tuple[int, float, float, float | None]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        step, loss, lr, bleu = line.split("\t")
        rows.append((int(step), float(loss), float(lr), float(bleu) if bleu else None))
    return rows
