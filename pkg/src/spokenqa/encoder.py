"""Small pre-norm transformer encoders for the text and pseudo-speech streams."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, ContractError, LengthError, ParameterError, ShapeError
from .seeding import rng_for
from .tensor import (
    Tensor,
    concat,
    dropout,
    gelu,
    matmul,
    narrow,
    rows,
    softmax_t,
    sqrt,
    tile_rows,
    transpose,
)

# Finite stand-in for -inf in masked attention scores; large enough that the
# masked probability underflows to exactly 0 after max subtraction.
NEG_MASK = -1e30

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    max_len: int = 384
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "num_heads", "d_model", "d_ff", "max_len"):
            if int(getattr(self, name)) <= 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_layers < 0:
            raise ParameterError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.d_model % self.num_heads != 0:
            raise ParameterError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def _normal(rng, shape):
    return Tensor(rng.normal(0.0, INIT_STD, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape):
    return Tensor(np.ones(shape), requires_grad=True)


def layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gain + bias


class MHAParams:
    """Input/output projections for one attention block."""

    def __init__(self, d_model, seed, tag):
        rng = rng_for(seed, tag)
        self.wq = _normal(rng, (d_model, d_model))
        self.wk = _normal(rng, (d_model, d_model))
        self.wv = _normal(rng, (d_model, d_model))
        self.wo = _normal(rng, (d_model, d_model))
        self.bq = _zeros((d_model,))
        self.bk = _zeros((d_model,))
        self.bv = _zeros((d_model,))
        self.bo = _zeros((d_model,))

    def named(self, prefix):
        return {
            f"{prefix}.wq": self.wq, f"{prefix}.bq": self.bq,
            f"{prefix}.wk": self.wk, f"{prefix}.bk": self.bk,
            f"{prefix}.wv": self.wv, f"{prefix}.bv": self.bv,
            f"{prefix}.wo": self.wo, f"{prefix}.bo": self.bo,
        }


def multi_head_attention(q, k, v, *, num_heads, params=None, mask=None,
                         return_weights=False):
    """Scaled dot-product attention with head split/merge.

    q: [n_q x d], k and v: [n_k x d]. mask, if given, is boolean [n_q x n_k]
    with True marking admissible keys; masked scores go to -inf before the
    softmax. params=None runs without projections (used by tests).
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("attention operands must be 2-d")
    if q.shape[0] == 0 or k.shape[0] == 0:
        raise ContractError("attention over an empty sequence")
    d = q.shape[1]
    if k.shape[1] != d or v.shape[1] != d or k.shape[0] != v.shape[0]:
        raise ShapeError(
            f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    if d % num_heads != 0:
        raise ShapeError(f"d_model {d} not divisible by num_heads {num_heads}")

    bias = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[0], k.shape[0]):
            raise ShapeError(f"mask shape {mask.shape} does not match scores")
        if not mask.any(axis=1).all():
            raise ContractError("attention mask leaves a query row with no admissible key")
        bias = Tensor(np.where(mask, 0.0, NEG_MASK))

    if params is not None:
        q = matmul(q, params.wq) + params.bq
        k = matmul(k, params.wk) + params.bk
        v = matmul(v, params.wv) + params.bv

    d_head = d // num_heads
    scale = 1.0 / math.sqrt(d_head)
    heads, weights = [], []
    for h in range(num_heads):
        qh = narrow(q, 1, h * d_head, d_head)
        kh = narrow(k, 1, h * d_head, d_head)
        vh = narrow(v, 1, h * d_head, d_head)
        scores = matmul(qh, transpose(kh)) * scale
        if bias is not None:
            scores = scores + bias
        attn = softmax_t(scores, 1.0)
        heads.append(matmul(attn, vh))
        if return_weights:
            weights.append(attn.data)
    out = heads[0] if num_heads == 1 else concat(heads, axis=1)
    if params is not None:
        out = matmul(out, params.wo) + params.bo
    return (out, weights) if return_weights else out


class TransformerLayer:
    """Pre-norm block: x + attn(norm(x)), then x + ffn(norm(x))."""

    def __init__(self, d_model, d_ff, num_heads, seed, tag):
        rng = rng_for(seed, tag, "ffn")
        self.num_heads = num_heads
        self.attn = MHAParams(d_model, seed, (tag, "attn"))
        self.ln1_g, self.ln1_b = _ones((d_model,)), _zeros((d_model,))
        self.ln2_g, self.ln2_b = _ones((d_model,)), _zeros((d_model,))
        self.w1 = _normal(rng, (d_model, d_ff))
        self.b1 = _zeros((d_ff,))
        self.w2 = _normal(rng, (d_ff, d_model))
        self.b2 = _zeros((d_model,))

    def __call__(self, x, *, mask=None, dropout_rate=0.0, rng=None):
        h = layer_norm(x, self.ln1_g, self.ln1_b)
        a = multi_head_attention(h, h, h, num_heads=self.num_heads,
                                 params=self.attn, mask=mask)
        x = x + dropout(a, dropout_rate, rng)
        h = layer_norm(x, self.ln2_g, self.ln2_b)
        f = matmul(gelu(matmul(h, self.w1) + self.b1), self.w2) + self.b2
        return x + dropout(f, dropout_rate, rng)

    def named(self, prefix):
        out = self.attn.named(f"{prefix}.attn")
        out.update({
            f"{prefix}.ln1_g": self.ln1_g, f"{prefix}.ln1_b": self.ln1_b,
            f"{prefix}.ln2_g": self.ln2_g, f"{prefix}.ln2_b": self.ln2_b,
            f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2,
        })
        return out


class Encoder:
    """Token + learned position embeddings under a pre-norm transformer stack."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        rng = rng_for(config.seed, "embeddings")
        self.token_emb = _normal(rng, (config.vocab_size, config.d_model))
        self.pos_emb = _normal(rng, (config.max_len, config.d_model))
        self.layers = [
            TransformerLayer(config.d_model, config.d_ff, config.num_heads,
                             config.seed, f"layer{i}")
            for i in range(config.num_layers)
        ]
        if config.num_layers > 0:
            self.final_g, self.final_b = _ones((config.d_model,)), _zeros((config.d_model,))
        else:
            self.final_g = self.final_b = None

    def named_parameters(self, prefix="encoder"):
        out = {f"{prefix}.token_emb": self.token_emb, f"{prefix}.pos_emb": self.pos_emb}
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"{prefix}.layer{i}"))
        if self.final_g is not None:
            out[f"{prefix}.final_g"] = self.final_g
            out[f"{prefix}.final_b"] = self.final_b
        return out

    def parameter_count(self):
        return sum(p.size for p in self.named_parameters().values())

    def _check_ids(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ShapeError(f"token ids must be 1-d, got shape {ids.shape}")
        if ids.size > self.config.max_len:
            raise LengthError(
                f"sequence length {ids.size} exceeds max_len {self.config.max_len}"
            )
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            bad = int(ids[(ids < 0) | (ids >= self.config.vocab_size)][0])
            raise BoundsError(
                f"token id {bad} outside vocabulary of size {self.config.vocab_size}"
            )
        return ids

    def embed(self, ids):
        ids = self._check_ids(ids)
        if ids.size == 0:
            return Tensor(np.zeros((0, self.config.d_model)))
        return rows(self.token_emb, ids) + rows(self.pos_emb, np.arange(ids.size))

    def encode(self, ids, *, valid=None, training=False, rng=None):
        """Contextual embedding of the id sequence.

        valid marks positions usable as attention keys; invalid positions
        still produce rows but are never attended to.
        """
        x = self.embed(ids)
        n = x.shape[0]
        if n == 0:
            return x
        rate = self.config.dropout_rate if training else 0.0
        x = dropout(x, rate, rng)
        mask = None
        if valid is not None:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != (n,):
                raise ShapeError(f"valid mask shape {valid.shape} does not match length {n}")
            mask = np.broadcast_to(valid, (n, n)).copy()
        for layer in self.layers:
            x = layer(x, mask=mask, dropout_rate=rate, rng=rng)
        if self.final_g is not None:
            x = layer_norm(x, self.final_g, self.final_b)
        return x


def param_count(config: EncoderConfig) -> int:
    """Parameter count as a pure function of the configuration."""
    d, ff = config.d_model, config.d_ff
    n = config.vocab_size * d + config.max_len * d
    per_layer = 4 * (d * d + d) + 2 * 2 * d + (d * ff + ff) + (ff * d + d)
    n += config.num_layers * per_layer
    if config.num_layers > 0:
        n += 2 * d
    return n


def mean_rows(x):
    """Mean over sequence positions, kept as a single row."""
    return x.mean(axis=0, keepdims=True)


def broadcast_row(row, n):
    return tile_rows(row, n)
