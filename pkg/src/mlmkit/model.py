"""Bidirectional Transformer encoder with a tied-embedding MLM head.

Post-layer-norm blocks (original BERT ordering), GELU activations, learned
absolute position embeddings used directly at positions 0..L-1, and an MLM
head of dense + GELU + layer norm in front of the projection, which shares
storage with the token-embedding matrix. Forward passes and losses are built
on the autodiff engine, so gradients are exact for the computational graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import autodiff as ad
from .masking import IGNORE_INDEX, MaskedBatch

LAYER_NORM_EPS = 1e-5
INIT_STD = 0.02
INIT_TRUNC_SIGMAS = 2.0


class ModelError(ValueError):
    pass


class SequenceTooLongError(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    vocab_size: int
    max_positions: int
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ModelError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout {self.dropout} outside [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


# Reference architectures of the full-scale setup; the BASE values are the
# standard 12/768/12 encoder (~110M parameters), LARGE is 24/1024/16 (~335M).
BASE_CONFIG = ModelConfig(
    n_layers=12, d_model=768, n_heads=12, d_ff=3072, vocab_size=32000, max_positions=512
)
LARGE_CONFIG = ModelConfig(
    n_layers=24, d_model=1024, n_heads=16, d_ff=4096, vocab_size=32000, max_positions=512
)

Parameters = dict[str, np.ndarray]


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in declaration (checkpoint) order.

    The MLM projection is the token-embedding matrix itself and therefore
    does not appear as a separate entry.
    """
    d, ff, v, p = config.d_model, config.d_ff, config.vocab_size, config.max_positions
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (v, d)),
        ("pos_emb", (p, d)),
        ("emb_ln_g", (d,)),
        ("emb_ln_b", (d,)),
    ]
    for i in range(config.n_layers):
        prefix = f"layer{i}."
        shapes += [
            (prefix + "attn_wq", (d, d)),
            (prefix + "attn_bq", (d,)),
            (prefix + "attn_wk", (d, d)),
            (prefix + "attn_bk", (d,)),
            (prefix + "attn_wv", (d, d)),
            (prefix + "attn_bv", (d,)),
            (prefix + "attn_wo", (d, d)),
            (prefix + "attn_bo", (d,)),
            (prefix + "attn_ln_g", (d,)),
            (prefix + "attn_ln_b", (d,)),
            (prefix + "ffn_w1", (d, ff)),
            (prefix + "ffn_b1", (ff,)),
            (prefix + "ffn_w2", (ff, d)),
            (prefix + "ffn_b2", (d,)),
            (prefix + "ffn_ln_g", (d,)),
            (prefix + "ffn_ln_b", (d,)),
        ]
    shapes += [
        ("mlm_dense_w", (d, d)),
        ("mlm_dense_b", (d,)),
        ("mlm_ln_g", (d,)),
        ("mlm_ln_b", (d,)),
        ("mlm_out_bias", (v,)),
    ]
    return shapes


def count_params(config: ModelConfig) -> int:
    """Exact scalar parameter count from shape arithmetic."""
    return sum(int(np.prod(shape)) for _, shape in param_shapes(config))


def _truncated_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Normal(0, INIT_STD^2) truncated at +-2 sigma via inverse-CDF sampling."""
    lo, hi = ndtr(-INIT_TRUNC_SIGMAS), ndtr(INIT_TRUNC_SIGMAS)
    u = rng.random(shape)
    return ndtri(lo + u * (hi - lo)) * INIT_STD


def init_params(config: ModelConfig, seed: int) -> Parameters:
    """Deterministic initialization: truncated normal matrices, unit LN scales."""
    rng = np.random.default_rng((seed, 0x1A17))
    params: Parameters = {}
    for name, shape in param_shapes(config):
        if len(shape) >= 2:
            params[name] = _truncated_normal(rng, shape)
        elif name.endswith("_g"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


@dataclass
class ForwardResult:
    """Per-layer activations (embedding output first), MLM logits, attention."""

    hidden_states: list[np.ndarray]
    logits: np.ndarray
    attention: list[np.ndarray] | None = None


def tensorize(params: Parameters, requires_grad: bool) -> dict[str, ad.Tensor]:
    return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def layer_norm(x: ad.Tensor, gain: ad.Tensor, bias: ad.Tensor, eps: float = LAYER_NORM_EPS) -> ad.Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gain + bias


def _attention(
    x: ad.Tensor,
    pt: dict[str, ad.Tensor],
    prefix: str,
    config: ModelConfig,
    mask_bias: np.ndarray,
    train: bool,
    rng: np.random.Generator | None,
) -> tuple[ad.Tensor, ad.Tensor]:
    b, length, d = x.shape
    h, hd = config.n_heads, config.head_dim

    def split_heads(t: ad.Tensor) -> ad.Tensor:
        return t.reshape((b, length, h, hd)).swapaxes(1, 2)

    q = split_heads(x @ pt[prefix + "attn_wq"] + pt[prefix + "attn_bq"])
    k = split_heads(x @ pt[prefix + "attn_wk"] + pt[prefix + "attn_bk"])
    v = split_heads(x @ pt[prefix + "attn_wv"] + pt[prefix + "attn_bv"])
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(hd)) + ad.constant(mask_bias)
    probs = ad.softmax(scores, axis=-1)
    dropped = ad.dropout(probs, config.dropout, rng, train)
    context = (dropped @ v).swapaxes(1, 2).reshape((b, length, d))
    out = context @ pt[prefix + "attn_wo"] + pt[prefix + "attn_bo"]
    return out, probs


def _forward_graph(
    pt: dict[str, ad.Tensor],
    config: ModelConfig,
    input_ids: np.ndarray,
    attention_mask: np.ndarray,
    train: bool,
    rng: np.random.Generator | None,
) -> tuple[list[ad.Tensor], ad.Tensor, list[ad.Tensor]]:
    input_ids = np.asarray(input_ids, dtype=np.int64)
    _, length = input_ids.shape
    if length > config.max_positions:
        raise SequenceTooLongError(
            f"sequence length {length} exceeds max_positions {config.max_positions}"
        )
    x = ad.embedding(pt["tok_emb"], input_ids) + ad.embedding(
        pt["pos_emb"], np.arange(length)
    )
    x = layer_norm(x, pt["emb_ln_g"], pt["emb_ln_b"])
    x = ad.dropout(x, config.dropout, rng, train)
    hidden = [x]
    # PAD keys get a large negative score bias; exp() underflows to exactly 0.
    mask_bias = np.where(attention_mask, 0.0, -1e30)[:, None, None, :]
    attn_probs = []
    for i in range(config.n_layers):
        prefix = f"layer{i}."
        attn_out, probs = _attention(x, pt, prefix, config, mask_bias, train, rng)
        attn_probs.append(probs)
        attn_out = ad.dropout(attn_out, config.dropout, rng, train)
        x = layer_norm(x + attn_out, pt[prefix + "attn_ln_g"], pt[prefix + "attn_ln_b"])
        ffn = ad.gelu(x @ pt[prefix + "ffn_w1"] + pt[prefix + "ffn_b1"])
        ffn = ffn @ pt[prefix + "ffn_w2"] + pt[prefix + "ffn_b2"]
        ffn = ad.dropout(ffn, config.dropout, rng, train)
        x = layer_norm(x + ffn, pt[prefix + "ffn_ln_g"], pt[prefix + "ffn_ln_b"])
        hidden.append(x)
    head = layer_norm(
        ad.gelu(x @ pt["mlm_dense_w"] + pt["mlm_dense_b"]), pt["mlm_ln_g"], pt["mlm_ln_b"]
    )
    logits = head @ pt["tok_emb"].swapaxes(0, 1) + pt["mlm_out_bias"]
    return hidden, logits, attn_probs


def forward(
    params: Parameters,
    config: ModelConfig,
    batch: MaskedBatch,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    return_attention: bool = False,
) -> ForwardResult:
    """Evaluate the encoder on a batch; dropout active only in train mode."""
    pt = tensorize(params, requires_grad=False)
    hidden, logits, attn = _forward_graph(
        pt, config, batch.input_ids, batch.attention_mask, train_mode, rng
    )
    return ForwardResult(
        hidden_states=[t.data for t in hidden],
        logits=logits.data,
        attention=[t.data for t in attn] if return_attention else None,
    )


def _mlm_loss(logits: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    rows, cols = np.nonzero(labels != IGNORE_INDEX)
    if rows.size == 0:
        raise ModelError("batch has no labeled positions")
    log_probs = ad.log_softmax(logits, axis=-1)
    picked = ad.select(log_probs, (rows, cols, labels[rows, cols]))
    return -picked.mean()


def mlm_loss_and_grads(
    params: Parameters,
    config: ModelConfig,
    batch: MaskedBatch,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, Parameters]:
    """Mean cross-entropy over non-IGNORE positions and exact gradients."""
    pt = tensorize(params, requires_grad=True)
    _, logits, _ = _forward_graph(
        pt, config, batch.input_ids, batch.attention_mask, train_mode, rng
    )
    loss = _mlm_loss(logits, batch.labels)
    loss.backward()
    grads = {name: t.grad for name, t in pt.items()}
    return float(loss.data), grads


def labeled_positions(batch: MaskedBatch) -> int:
    return int((batch.labels != IGNORE_INDEX).sum())
