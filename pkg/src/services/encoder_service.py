"""
Pre-norm Transformer encoder over one window's k² tokens.

No absolute positions enter the computation. Position reaches attention only
through the contextual relative bias

    bias[i, j] = ⟨Q[i], r(Δrow, Δcol)⟩ / sqrt(head_dim)

where (Δrow, Δcol) is the offset from query i to key j inside the window and
r is a learnable per-head table with (2k−1)² entries.
"""

from functools import lru_cache
import math
from typing import List, Optional

import numpy as np

from src.core.numerics import (
    Tensor, concat, gelu, layer_norm, matmul, softmax_rows, take_along_rows
)
from src.models.models import EncoderConfig
from src.models.weights import EncoderWeights, LayerWeights
from src.utils.error_handling import ContractError, DimensionError


@lru_cache(maxsize=32)
def relative_offset_index(k: int) -> np.ndarray:
    """t × t table index of offset (row_j − row_i, col_j − col_i), t = k²."""
    rows, cols = np.divmod(np.arange(k * k), k)
    d_row = rows[None, :] - rows[:, None] + (k - 1)
    d_col = cols[None, :] - cols[:, None] + (k - 1)
    index = d_row * (2 * k - 1) + d_col
    index.setflags(write=False)
    return index


def offset_of(index: int, k: int) -> tuple:
    """Inverse of the table index: (Δrow, Δcol)."""
    d_row, d_col = divmod(index, 2 * k - 1)
    return d_row - (k - 1), d_col - (k - 1)


def rpe_bias(q: Tensor, table: Tensor, offsets: np.ndarray) -> Tensor:
    """
    Contextual relative-position bias for one head.

    Args:
        q: t × head_dim queries
        table: P × head_dim learnable vectors, P = (2k−1)²
        offsets: t × t indices into the table

    Returns:
        t × t bias, computed as (Q·tableᵀ) gathered at the offsets
    """
    t, head_dim = q.shape
    if offsets.shape != (t, t):
        raise DimensionError(f"offset matrix {offsets.shape} does not match {t} queries")
    if table.ndim != 2 or table.shape[1] != head_dim:
        raise DimensionError(f"RPE table {table.shape} does not match head_dim {head_dim}")
    if offsets.min() < 0 or offsets.max() >= table.shape[0]:
        raise ContractError("relative offset outside the RPE table")
    scores = matmul(q, table.T)
    return take_along_rows(scores, offsets) * (1.0 / math.sqrt(head_dim))


def attention(tokens: Tensor, layer: LayerWeights, table: Tensor, k: int, num_heads: int,
              capture: Optional[List[np.ndarray]] = None) -> Tensor:
    """
    Multi-head self-attention with contextual RPE over a k×k window.

    Args:
        tokens: k² × d (already layer-normed)
        layer: Block weights (Wq, Wk, Wv, Wo, bo)
        table: (H, (2k−1)², head_dim) RPE table
        k: Window side
        num_heads: H
        capture: When given, receives the H × t × t post-softmax weights

    Returns:
        k² × d
    """
    t, d = tokens.shape
    if t != k * k:
        raise DimensionError(f"attention expects {k * k} tokens for k={k}, got {t}")
    head_dim = d // num_heads
    scale = 1.0 / math.sqrt(head_dim)
    offsets = relative_offset_index(k)

    q = tokens @ layer.wq
    kk = tokens @ layer.wk
    v = tokens @ layer.wv

    heads, weights = [], []
    for h in range(num_heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        qh, kh, vh = q[:, cols], kk[:, cols], v[:, cols]
        logits = (qh @ kh.T) * scale + rpe_bias(qh, table[h], offsets)
        probs = softmax_rows(logits)
        if capture is not None:
            weights.append(probs.data.copy())
        heads.append(probs @ vh)

    if capture is not None:
        capture.append(np.stack(weights))
    merged = heads[0] if num_heads == 1 else concat(heads, axis=1)
    return merged @ layer.wo + layer.bo


def mlp(x: Tensor, layer: LayerWeights) -> Tensor:
    return gelu(x @ layer.w1 + layer.b1) @ layer.w2 + layer.b2


def encoder_forward(tokens: Tensor, weights: EncoderWeights, cfg: EncoderConfig,
                    capture: Optional[List[np.ndarray]] = None) -> Tensor:
    """
    L pre-norm blocks then a final LayerNorm; shape preserved.

    With `capture`, the per-layer attention weights (H × t × t each) are
    appended in layer order.
    """
    weights.check(cfg)
    if tokens.ndim != 2 or tokens.shape != (cfg.window_len, cfg.embed_dim):
        raise DimensionError(
            f"encoder expects {cfg.window_len}×{cfg.embed_dim} tokens, got {tokens.shape}"
        )
    x = tokens
    for index, layer in enumerate(weights.layers):
        normed = layer_norm(x, layer.ln1_gamma, layer.ln1_beta, cfg.ln_eps)
        x = x + attention(normed, layer, weights.rpe_for(index), cfg.k, cfg.num_heads, capture)
        x = x + mlp(layer_norm(x, layer.ln2_gamma, layer.ln2_beta, cfg.ln_eps), layer)
    return layer_norm(x, weights.final_gamma, weights.final_beta, cfg.ln_eps)
