"""Post-norm Transformer encoder-decoder with an exact hand-written backward pass.

Layout conventions:

* activations are ``[batch, time, d_model]``;
* linear weights are stored ``[d_in, d_out]`` and applied as ``x @ W + b``;
* one embedding matrix serves encoder input, decoder input and (transposed)
  the output projection.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
import numpy as np

from .errors import ArgumentError, NumericError
from .numerics import (
    TensorSet,
    label_smoothed_ce,
    layer_norm_backward,
    layer_norm_forward,
    log_softmax,
)
from .subword import BOS_ID, PAD_ID

LN_EPS = 1e-5


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    num_layers: int = 6
    num_heads: int = 4
    d_model: int = 512
    d_ff: int | None = None
    dropout_rate: float = 0.3
    max_positions: int = 1024

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        for name in ("vocab_size", "num_layers", "num_heads", "d_model", "d_ff", "max_positions"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        if self.d_model % self.num_heads:
            raise ArgumentError("d_model must be divisible by num_heads")
        if self.d_model % 2:
            raise ArgumentError("d_model must be even for sinusoidal positions")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ArgumentError("dropout_rate must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _attn_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for proj in ("q", "k", "v", "o"):
        shapes[f"{prefix}.{proj}.weight"] = (d, d)
        shapes[f"{prefix}.{proj}.bias"] = (d,)
    return shapes


def _ln_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.gain": (d,), f"{prefix}.bias": (d,)}


def _ffn_shapes(prefix: str, d: int, d_ff: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.fc1.weight": (d, d_ff),
        f"{prefix}.fc1.bias": (d_ff,),
        f"{prefix}.fc2.weight": (d_ff, d),
        f"{prefix}.fc2.bias": (d,),
    }


def param_shapes(config: TransformerConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor, in a fixed order."""
    d, f = config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {"embed": (config.vocab_size, d)}
    for layer in range(config.num_layers):
        p = f"enc.{layer}"
        shapes.update(_attn_shapes(f"{p}.self_attn", d))
        shapes.update(_ln_shapes(f"{p}.ln1", d))
        shapes.update(_ffn_shapes(f"{p}.ffn", d, f))
        shapes.update(_ln_shapes(f"{p}.ln2", d))
    for layer in range(config.num_layers):
        p = f"dec.{layer}"
        shapes.update(_attn_shapes(f"{p}.self_attn", d))
        shapes.update(_ln_shapes(f"{p}.ln1", d))
        shapes.update(_attn_shapes(f"{p}.cross_attn", d))
        shapes.update(_ln_shapes(f"{p}.ln2", d))
        shapes.update(_ffn_shapes(f"{p}.ffn", d, f))
        shapes.update(_ln_shapes(f"{p}.ln3", d))
    return shapes


def param_count(config: TransformerConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(config).values())


def init_params(config: TransformerConfig, seed: int, dtype=np.float64) -> TensorSet:
    """Glorot-uniform weights and embedding, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    params: TensorSet = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            value = np.ones(shape)
        elif len(shape) == 1:
            value = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = value.astype(dtype)
    return params


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """``[n, d]`` table: even dims sin(pos / 10000^(i/d)), odd dims the matching cos."""
    if d % 2:
        raise ArgumentError("sinusoidal encoding needs an even dimension")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((n, d))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


class Dropout:
    """Inverted dropout driven by one seeded generator; inactive when ``rng`` is None."""

    def __init__(self, rate: float, rng: np.random.Generator | None):
        self.rate = rate
        self.rng = rng if rate > 0 else None

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        if self.rng is None:
            return x, None
        mask = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        return x * mask, mask


_NO_DROPOUT = Dropout(0.0, None)


def masked_softmax(scores: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``allowed``; all-masked rows give zeros."""
    allowed = np.broadcast_to(allowed, scores.shape)
    s = np.where(allowed, scores, -np.inf)
    row_max = np.max(s, axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(allowed, np.exp(s - row_max), 0.0)
    denom = np.sum(e, axis=-1, keepdims=True)
    return e / np.where(denom > 0, denom, 1.0)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """``x @ w (+ b)`` over the last axis as one 2-D GEMM."""
    out = x.reshape(-1, x.shape[-1]) @ w
    if b is not None:
        out += b
    return out.reshape(x.shape[:-1] + (w.shape[1],))


def _attention_forward(xq, xk, xv, allowed, params, prefix, heads, drop, cache):
    wq, wk, wv, wo = (params[f"{prefix}.{p}.weight"] for p in "qkvo")
    q = _split_heads(_linear(xq, wq, params[f"{prefix}.q.bias"]), heads)
    k = _split_heads(_linear(xk, wk, params[f"{prefix}.k.bias"]), heads)
    v = _split_heads(_linear(xv, wv, params[f"{prefix}.v.bias"]), heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    probs = masked_softmax((q @ k.transpose(0, 1, 3, 2)) * scale, allowed[:, None])
    probs_d, dmask = drop(probs)
    ctx = _merge_heads(probs_d @ v)
    out = _linear(ctx, wo, params[f"{prefix}.o.bias"])
    if cache is not None:
        cache.update(xq=xq, xk=xk, xv=xv, q=q, k=k, v=v, probs=probs, dmask=dmask,
                     probs_d=probs_d, ctx=ctx, scale=scale)
    return out


def _attention_backward(d_out, cache, params, grads, prefix, heads):
    """Returns gradients w.r.t. (queries, keys, values) inputs."""
    d = d_out.shape[-1]
    flat = d_out.reshape(-1, d)
    grads[f"{prefix}.o.weight"] += cache["ctx"].reshape(-1, d).T @ flat
    grads[f"{prefix}.o.bias"] += flat.sum(axis=0)
    d_ctx = _split_heads(_linear(d_out, params[f"{prefix}.o.weight"].T), heads)

    d_probs = d_ctx @ cache["v"].transpose(0, 1, 3, 2)
    d_v = cache["probs_d"].transpose(0, 1, 3, 2) @ d_ctx
    if cache["dmask"] is not None:
        d_probs = d_probs * cache["dmask"]
    probs = cache["probs"]
    d_scores = probs * (d_probs - np.sum(d_probs * probs, axis=-1, keepdims=True))
    d_scores *= cache["scale"]
    d_q = _merge_heads(d_scores @ cache["k"])
    d_k = _merge_heads(d_scores.transpose(0, 1, 3, 2) @ cache["q"])
    d_v = _merge_heads(d_v)

    out = []
    for proj, dy, x in (("q", d_q, cache["xq"]), ("k", d_k, cache["xk"]), ("v", d_v, cache["xv"])):
        dyf = dy.reshape(-1, d)
        grads[f"{prefix}.{proj}.weight"] += x.reshape(-1, x.shape[-1]).T @ dyf
        grads[f"{prefix}.{proj}.bias"] += dyf.sum(axis=0)
        out.append(_linear(dy, params[f"{prefix}.{proj}.weight"].T))
    return tuple(out)


def multi_head_attention(
    queries: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    mask: np.ndarray | None,
    params: TensorSet,
    num_heads: int,
    prefix: str = "attn",
) -> np.ndarray:
    """Scaled dot-product attention per head, concatenated and output-projected.

    ``queries`` is ``[Tq, d]`` or ``[B, Tq, d]``; ``mask`` is boolean
    (True = may attend) and broadcastable to ``[B, Tq, Tk]``. Rows with no
    allowed key produce a zero context vector.
    """
    single = np.ndim(queries) == 2
    q, k, v = (np.asarray(a)[None] if single else np.asarray(a) for a in (queries, keys, values))
    if k.shape[:2] != v.shape[:2] or q.shape[-1] != k.shape[-1]:
        raise ArgumentError("incompatible query/key/value shapes")
    if q.shape[-1] % num_heads:
        raise ArgumentError("model dimension not divisible by num_heads")
    if mask is None:
        mask = np.ones((q.shape[0], q.shape[1], k.shape[1]), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if single and mask.ndim == 2:
        mask = mask[None]
    if mask.shape[-1] != k.shape[1]:
        raise ArgumentError("mask does not cover every key position")
    out = _attention_forward(q, k, v, mask, params, prefix, num_heads, _NO_DROPOUT, None)
    return out[0] if single else out


def _ffn_forward(x, params, prefix, cache):
    h = _linear(x, params[f"{prefix}.fc1.weight"], params[f"{prefix}.fc1.bias"])
    r = np.maximum(h, 0.0)
    out = _linear(r, params[f"{prefix}.fc2.weight"], params[f"{prefix}.fc2.bias"])
    if cache is not None:
        cache.update(x=x, h=h, r=r)
    return out


def _ffn_backward(d_out, cache, params, grads, prefix):
    d = d_out.shape[-1]
    flat = d_out.reshape(-1, d)
    r = cache["r"]
    grads[f"{prefix}.fc2.weight"] += r.reshape(-1, r.shape[-1]).T @ flat
    grads[f"{prefix}.fc2.bias"] += flat.sum(axis=0)
    d_h = _linear(d_out, params[f"{prefix}.fc2.weight"].T) * (cache["h"] > 0)
    d_hf = d_h.reshape(-1, d_h.shape[-1])
    x = cache["x"]
    grads[f"{prefix}.fc1.weight"] += x.reshape(-1, x.shape[-1]).T @ d_hf
    grads[f"{prefix}.fc1.bias"] += d_hf.sum(axis=0)
    return _linear(d_h, params[f"{prefix}.fc1.weight"].T)


def _residual_norm(x, sub_out, params, prefix, drop, cache):
    """``LN(x + dropout(sub_out))``."""
    dropped, dmask = drop(sub_out)
    y, ln_cache = layer_norm_forward(x + dropped, params[f"{prefix}.gain"], params[f"{prefix}.bias"], LN_EPS)
    if cache is not None:
        cache[prefix] = (ln_cache, dmask)
    return y


def _residual_norm_backward(d_y, cache, grads, prefix):
    """Returns (grad to the residual input, grad to the sublayer output)."""
    ln_cache, dmask = cache[prefix]
    d_sum, d_gain, d_bias = layer_norm_backward(d_y, ln_cache)
    grads[f"{prefix}.gain"] += d_gain
    grads[f"{prefix}.bias"] += d_bias
    d_sub = d_sum * dmask if dmask is not None else d_sum
    return d_sum, d_sub


# ---------------------------------------------------------------------------
# encoder / decoder stacks
# ---------------------------------------------------------------------------


def _embed(ids, params, config, drop, cache, key):
    n = ids.shape[1]
    if n > config.max_positions:
        raise ArgumentError(f"sequence length {n} exceeds max_positions={config.max_positions}")
    x = params["embed"][ids] * math.sqrt(config.d_model) + sinusoidal_positions(n, config.d_model)
    x = x.astype(params["embed"].dtype, copy=False)
    x, dmask = drop(x)
    if cache is not None:
        cache[key] = (ids, dmask)
    return x


def _check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite activations in {where}")


def _encoder_forward(src, params, config, drop, cache):
    allowed = (src != PAD_ID)[:, None, :]
    x = _embed(src, params, config, drop, cache, "enc.embed")
    for layer in range(config.num_layers):
        p = f"enc.{layer}"
        c = {} if cache is not None else None
        ac = {} if cache is not None else None
        fc = {} if cache is not None else None
        a = _attention_forward(x, x, x, allowed, params, f"{p}.self_attn", config.num_heads, drop, ac)
        x = _residual_norm(x, a, params, f"{p}.ln1", drop, c)
        f = _ffn_forward(x, params, f"{p}.ffn", fc)
        x = _residual_norm(x, f, params, f"{p}.ln2", drop, c)
        _check_finite(x, f"encoder layer {layer}")
        if cache is not None:
            c.update(attn=ac, ffn=fc)
            cache[p] = c
    return x, allowed


def _decoder_forward(tgt_in, enc, src_allowed, params, config, drop, cache):
    t = tgt_in.shape[1]
    causal = np.tril(np.ones((t, t), dtype=bool))
    self_allowed = causal[None] & (tgt_in != PAD_ID)[:, None, :]
    y = _embed(tgt_in, params, config, drop, cache, "dec.embed")
    for layer in range(config.num_layers):
        p = f"dec.{layer}"
        c = {} if cache is not None else None
        sc = {} if cache is not None else None
        xc = {} if cache is not None else None
        fc = {} if cache is not None else None
        a = _attention_forward(y, y, y, self_allowed, params, f"{p}.self_attn", config.num_heads, drop, sc)
        y = _residual_norm(y, a, params, f"{p}.ln1", drop, c)
        a = _attention_forward(y, enc, enc, src_allowed, params, f"{p}.cross_attn", config.num_heads, drop, xc)
        y = _residual_norm(y, a, params, f"{p}.ln2", drop, c)
        f = _ffn_forward(y, params, f"{p}.ffn", fc)
        y = _residual_norm(y, f, params, f"{p}.ln3", drop, c)
        _check_finite(y, f"decoder layer {layer}")
        if cache is not None:
            c.update(self_attn=sc, cross_attn=xc, ffn=fc)
            cache[p] = c
    return y


def _embed_backward(d_x, cache, key, grads, config):
    ids, dmask = cache[key]
    if dmask is not None:
        d_x = d_x * dmask
    d_x = d_x * math.sqrt(config.d_model)
    np.add.at(grads["embed"], ids.reshape(-1), d_x.reshape(-1, d_x.shape[-1]))


def _decoder_backward(d_y, cache, params, grads, config):
    """Backprop through the decoder stack; returns the gradient w.r.t. encoder output."""
    d_enc = None
    for layer in reversed(range(config.num_layers)):
        p = f"dec.{layer}"
        c = cache[p]
        d_res, d_sub = _residual_norm_backward(d_y, c, grads, f"{p}.ln3")
        d_y = d_res + _ffn_backward(d_sub, c["ffn"], params, grads, f"{p}.ffn")
        d_res, d_sub = _residual_norm_backward(d_y, c, grads, f"{p}.ln2")
        dq, dk, dv = _attention_backward(d_sub, c["cross_attn"], params, grads, f"{p}.cross_attn", config.num_heads)
        d_y = d_res + dq
        d_enc = dk + dv if d_enc is None else d_enc + dk + dv
        d_res, d_sub = _residual_norm_backward(d_y, c, grads, f"{p}.ln1")
        dq, dk, dv = _attention_backward(d_sub, c["self_attn"], params, grads, f"{p}.self_attn", config.num_heads)
        d_y = d_res + dq + dk + dv
    _embed_backward(d_y, cache, "dec.embed", grads, config)
    return d_enc


def _encoder_backward(d_x, cache, params, grads, config):
    for layer in reversed(range(config.num_layers)):
        p = f"enc.{layer}"
        c = cache[p]
        d_res, d_sub = _residual_norm_backward(d_x, c, grads, f"{p}.ln2")
        d_x = d_res + _ffn_backward(d_sub, c["ffn"], params, grads, f"{p}.ffn")
        d_res, d_sub = _residual_norm_backward(d_x, c, grads, f"{p}.ln1")
        dq, dk, dv = _attention_backward(d_sub, c["attn"], params, grads, f"{p}.self_attn", config.num_heads)
        d_x = d_res + dq + dk + dv
    _embed_backward(d_x, cache, "enc.embed", grads, config)


def _dropout_for(config, train_mode, rng_seed):
    if not train_mode or config.dropout_rate == 0:
        return _NO_DROPOUT
    return Dropout(config.dropout_rate, np.random.default_rng(rng_seed))


def _as_batch(ids) -> tuple[np.ndarray, bool]:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        return ids[None], True
    if ids.ndim != 2:
        raise ArgumentError("token ids must be a vector or a matrix")
    return ids, False


def _check_ids(ids, config):
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ArgumentError(f"token id out of range for vocab_size={config.vocab_size}")


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


@dataclass
class EncoderStates:
    """Encoder output plus the key mask cross-attention needs."""

    states: np.ndarray  # [B, S, d]
    allowed: np.ndarray  # [B, 1, S]

    def repeat(self, n: int) -> "EncoderStates":
        """Broadcast a single-sentence encoding to ``n`` decoder rows."""
        return EncoderStates(
            np.broadcast_to(self.states, (n,) + self.states.shape[1:]),
            np.broadcast_to(self.allowed, (n,) + self.allowed.shape[1:]),
        )


def encode(
    source_ids, params: TensorSet, config: TransformerConfig, train_mode: bool = False, rng_seed: int = 0
) -> EncoderStates:
    src, _ = _as_batch(source_ids)
    _check_ids(src, config)
    states, allowed = _encoder_forward(src, params, config, _dropout_for(config, train_mode, rng_seed), None)
    return EncoderStates(states, allowed)


def decoder_logits(
    target_in, enc: EncoderStates, params: TensorSet, config: TransformerConfig
) -> np.ndarray:
    """Teacher-forced inference logits ``[B, T, V]`` for every prefix position."""
    tgt, _ = _as_batch(target_in)
    _check_ids(tgt, config)
    y = _decoder_forward(tgt, enc.states, enc.allowed, params, config, _NO_DROPOUT, None)
    return _linear(y, params["embed"].T)


def decode_step(
    prefix_ids, enc: EncoderStates, params: TensorSet, config: TransformerConfig
) -> np.ndarray:
    """Logits for the token following each prefix.

    ``prefix_ids`` is one prefix (returns ``[V]``) or a matrix of equal-length
    prefixes (returns ``[N, V]``); every prefix must start with bos.
    """
    tgt, single = _as_batch(prefix_ids)
    if tgt.shape[1] == 0:
        raise ArgumentError("decode_step needs a non-empty prefix")
    if np.any(tgt[:, 0] != BOS_ID):
        raise ArgumentError("prefix must begin with the beginning-of-sequence id")
    if enc.states.shape[0] != tgt.shape[0]:
        enc = enc.repeat(tgt.shape[0])
    logits = decoder_logits(tgt, enc, params, config)[:, -1]
    return logits[0] if single else logits


def next_token_logprobs(
    prefix_ids, enc: EncoderStates, params: TensorSet, config: TransformerConfig
) -> np.ndarray:
    return log_softmax(decode_step(prefix_ids, enc, params, config), axis=-1)


def _forward(batch, params, config, train_mode, rng_seed, cache):
    drop = _dropout_for(config, train_mode, rng_seed)
    src = np.asarray(batch.source)
    tgt_in = np.asarray(batch.target_in)
    _check_ids(src, config)
    _check_ids(tgt_in, config)
    enc, allowed = _encoder_forward(src, params, config, drop, cache)
    y = _decoder_forward(tgt_in, enc, allowed, params, config, drop, cache)
    return _linear(y, params["embed"].T), y


def forward_backward(
    batch,
    params: TensorSet,
    config: TransformerConfig,
    epsilon_ls: float = 0.1,
    rng_seed: int = 0,
    train_mode: bool = True,
) -> tuple[float, TensorSet]:
    """Teacher-forced label-smoothed loss over non-pad target tokens and its exact gradient.

    With ``train_mode`` the dropout masks are drawn from ``rng_seed``; the
    gradient is exact for those masks.
    """
    cache: dict = {}
    logits, y = _forward(batch, params, config, train_mode, rng_seed, cache)
    b, t, v = logits.shape
    loss, d_logits = label_smoothed_ce(
        logits.reshape(-1, v), np.asarray(batch.target_out).reshape(-1), epsilon_ls, PAD_ID
    )
    if not math.isfinite(loss):
        raise NumericError("non-finite loss at the output projection")

    grads = {k: np.zeros_like(p) for k, p in params.items()}
    d_logits = d_logits.reshape(b, t, v)
    grads["embed"] += d_logits.reshape(-1, v).T @ y.reshape(-1, y.shape[-1])
    d_y = _linear(d_logits, params["embed"])
    d_enc = _decoder_backward(d_y, cache, params, grads, config)
    _encoder_backward(d_enc, cache, params, grads, config)
    return loss, grads


def sentence_losses(
    batch, params: TensorSet, config: TransformerConfig, epsilon_ls: float = 0.0
) -> np.ndarray:
    """Per-sentence summed label-smoothed loss, dropout off."""
    logits, _ = _forward(batch, params, config, False, 0, None)
    out = np.zeros(logits.shape[0])
    for i in range(logits.shape[0]):
        loss, _ = label_smoothed_ce(logits[i], batch.target_out[i], epsilon_ls, PAD_ID)
        out[i] = loss * int((batch.target_out[i] != PAD_ID).sum())
    return out

