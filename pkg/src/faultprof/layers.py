"""Transformer building blocks shared by the text and hierarchy encoders."""
from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn
from torch.nn import functional as F


def dropout(x: torch.Tensor, p: float, training: bool,
            generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Inverted dropout drawing its mask from an explicit generator."""
    if not training or p <= 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= p
    return x * keep / (1.0 - p)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, num_heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % num_heads:
            raise ValueError(f"d_model={d_model} not divisible by num_heads={num_heads}")
        self.d_model = d_model
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = dropout

    def forward(self, x, key_padding_mask=None, attn_bias=None, generator=None,
                return_weights=False):
        """
        x: (B, n, d). key_padding_mask: (B, n) bool, True marks padding.
        attn_bias: additive pre-softmax bias broadcastable to (B, h, n, n).
        """
        B, n, _ = x.shape
        q = self.q_proj(x).view(B, n, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(B, n, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(B, n, self.num_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if attn_bias is not None:
            scores = scores + attn_bias
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        attn = dropout(weights, self.dropout, self.training, generator)
        out = (attn @ v).transpose(1, 2).reshape(B, n, self.d_model)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class TransformerLayer(nn.Module):
    """Self-attention + GELU feed-forward with residuals.

    ``norm_first=False`` is the post-norm arrangement used by BERT;
    ``norm_first=True`` is the pre-norm arrangement used by Graphormer.
    """

    def __init__(self, d_model: int, num_heads: int, d_ff: int, dropout: float = 0.1,
                 norm_first: bool = False, eps: float = 1e-12):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, num_heads, dropout)
        self.ff_in = nn.Linear(d_model, d_ff)
        self.ff_out = nn.Linear(d_ff, d_model)
        self.norm1 = nn.LayerNorm(d_model, eps=eps)
        self.norm2 = nn.LayerNorm(d_model, eps=eps)
        self.dropout = dropout
        self.norm_first = norm_first

    def _ff(self, x, generator):
        h = dropout(F.gelu(self.ff_in(x)), self.dropout, self.training, generator)
        return self.ff_out(h)

    def forward(self, x, key_padding_mask=None, attn_bias=None, generator=None,
                return_weights=False):
        drop = lambda t: dropout(t, self.dropout, self.training, generator)  # noqa: E731
        if self.norm_first:
            a, w = self.attn(self.norm1(x), key_padding_mask, attn_bias, generator, True)
            x = x + drop(a)
            x = x + drop(self._ff(self.norm2(x), generator))
        else:
            a, w = self.attn(x, key_padding_mask, attn_bias, generator, True)
            x = self.norm1(x + drop(a))
            x = self.norm2(x + drop(self._ff(x, generator)))
        if return_weights:
            return x, w
        return x
