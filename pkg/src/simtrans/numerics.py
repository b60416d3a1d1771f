"""Dense primitives, the training loss, Adam and the learning-rate schedule.

Tensors are plain ``numpy.ndarray`` values (row-major, float64 unless a
caller opts into float32). A "tensor set" is a ``dict[str, ndarray]``.
Every function here is pure: inputs are never modified in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, NumericError

TensorSet = dict[str, np.ndarray]


def _check_axis(x: np.ndarray, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ArgumentError(f"axis {axis} out of range for tensor of rank {x.ndim}")
    return axis % x.ndim


def _as_float(x) -> np.ndarray:
    x = np.asarray(x)
    return x if x.dtype.kind == "f" else x.astype(np.float64)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    x = _as_float(x)
    axis = _check_axis(x, axis)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = _as_float(x)
    axis = _check_axis(x, axis)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax_backward(grad_out: np.ndarray, probs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient w.r.t. the softmax input given its output ``probs``."""
    return probs * (grad_out - np.sum(grad_out * probs, axis=axis, keepdims=True))


@dataclass
class LayerNormCache:
    normed: np.ndarray
    inv_std: np.ndarray
    gain: np.ndarray


def layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, epsilon: float = 1e-5
) -> np.ndarray:
    """Normalize the last axis to zero mean / unit variance, then apply ``gain`` and ``bias``."""
    out, _ = layer_norm_forward(x, gain, bias, epsilon)
    return out


def layer_norm_forward(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, epsilon: float = 1e-5
) -> tuple[np.ndarray, LayerNormCache]:
    x = np.asarray(x)
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ArgumentError(
            f"gain/bias shapes {gain.shape}/{bias.shape} do not match last dimension {d}"
        )
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    normed = centered * inv_std
    return normed * gain + bias, LayerNormCache(normed, inv_std, gain)


def layer_norm_backward(
    grad_out: np.ndarray, cache: LayerNormCache
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_gain, grad_bias)."""
    normed, inv_std = cache.normed, cache.inv_std
    lead = tuple(range(grad_out.ndim - 1))
    grad_gain = np.sum(grad_out * normed, axis=lead)
    grad_bias = np.sum(grad_out, axis=lead)
    g = grad_out * cache.gain
    grad_x = inv_std * (
        g - g.mean(axis=-1, keepdims=True) - normed * np.mean(g * normed, axis=-1, keepdims=True)
    )
    return grad_x, grad_gain, grad_bias


def label_smoothed_ce(
    logits: np.ndarray, targets, epsilon: float, pad_id: int
) -> tuple[float, np.ndarray]:
    """Label-smoothed cross-entropy averaged over non-pad positions.

    Per position: ``(1-eps) * -log p[target] + eps/V' * sum_k -log p[k]`` where
    the sum and ``V'`` run over every class except ``pad_id``. Returns the
    mean loss and its gradient w.r.t. ``logits``.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ArgumentError("logits must be a batch x vocab matrix")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, vocab = logits.shape
    if targets.shape[0] != n:
        raise ArgumentError(f"{targets.shape[0]} targets for {n} logit rows")
    if not 0.0 <= epsilon < 1.0:
        raise ArgumentError("epsilon must lie in [0, 1)")
    if n and (targets.min() < 0 or targets.max() >= vocab):
        raise ArgumentError(f"target id out of range for vocabulary of size {vocab}")

    live = targets != pad_id
    count = int(live.sum())
    grad = np.zeros_like(logits)
    if count == 0:
        return 0.0, grad

    rows = np.nonzero(live)[0]
    lp = log_softmax(logits[rows], axis=-1)
    tgt = targets[rows]
    smooth_classes = np.ones(vocab, dtype=bool)
    if 0 <= pad_id < vocab:
        smooth_classes[pad_id] = False
    n_smooth = int(smooth_classes.sum())

    nll = -lp[np.arange(len(rows)), tgt]
    smooth = -lp[:, smooth_classes].sum(axis=1) / n_smooth
    loss = float(np.sum((1.0 - epsilon) * nll + epsilon * smooth) / count)

    probs = np.exp(lp)
    g = probs
    g[np.arange(len(rows)), tgt] -= 1.0 - epsilon
    g[:, smooth_classes] -= epsilon / n_smooth
    grad[rows] = g / count
    return loss, grad


@dataclass
class OptimizerState:
    """Adam moments, one accumulator pair per parameter tensor."""

    step: int = 0
    m: TensorSet = field(default_factory=dict)
    v: TensorSet = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: TensorSet) -> "OptimizerState":
        return cls(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: TensorSet,
    grads: TensorSet,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[TensorSet, OptimizerState]:
    """One bias-corrected Adam update with decoupled weight decay.

    Decay is applied to the parameter before the moment update:
    ``p -= lr * weight_decay * p``.
    """
    if state.step < 0:
        raise ArgumentError("optimizer step must be non-negative")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in tensor '{name}'")

    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params: TensorSet = {}
    new_m: TensorSet = {}
    new_v: TensorSet = {}
    for name, p in params.items():
        g = grads[name]
        m_prev = state.m.get(name)
        v_prev = state.v.get(name)
        if m_prev is None:
            m_prev = np.zeros_like(p)
            v_prev = np.zeros_like(p)
        if g.shape != p.shape:
            raise ArgumentError(f"gradient shape {g.shape} != parameter shape {p.shape} for '{name}'")
        p = p - lr * weight_decay * p if weight_decay else p
        m = beta1 * m_prev + (1.0 - beta1) * g
        v = beta2 * v_prev + (1.0 - beta2) * (g * g)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, OptimizerState(step=t, m=new_m, v=new_v)


@dataclass(frozen=True)
class LrSchedule:
    base_rate: float = 5e-4
    warmup_steps: int = 4000

    def __post_init__(self):
        if self.base_rate <= 0:
            raise ArgumentError("base_rate must be positive")
        if self.warmup_steps < 1:
            raise ArgumentError("warmup_steps must be at least 1")


def lr_at(step: int, schedule: LrSchedule) -> float:
    """Linear warmup to ``base_rate``, then inverse-square-root decay."""
    if step < 1:
        raise ArgumentError("step must be >= 1")
    if step <= schedule.warmup_steps:
        return schedule.base_rate * step / schedule.warmup_steps
    return schedule.base_rate * math.sqrt(schedule.warmup_steps / step)


def global_norm(grads: TensorSet) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_grad_norm(grads: TensorSet, threshold: float) -> tuple[TensorSet, float]:
    """Rescale ``grads`` to global norm ``threshold``; 0 disables clipping."""
    if threshold < 0:
        raise ArgumentError("threshold must be non-negative")
    norm = global_norm(grads)
    if threshold == 0 or norm <= threshold:
        return grads, norm
    scale = threshold / norm
    return {k: g * scale for k, g in grads.items()}, norm
