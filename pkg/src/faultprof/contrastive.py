"""Label-guided positive samples and the NT-Xent contrastive loss."""
from __future__ import annotations

import math
from typing import Optional, Sequence

import torch
from torch import nn
from torch.nn import functional as F

from .text_encoder import CLS, PAD, SEP, TokenSequence


class TokenLabelAttention(nn.Module):
    """Scaled dot-product scores between token states and node representations.

    With ``raw=True`` the learnable square projections are dropped and the
    scores are plain ``X H^T / sqrt(d)``.
    """

    def __init__(self, d_model: int, raw: bool = False):
        super().__init__()
        self.d_model = d_model
        self.raw = raw
        if not raw:
            self.w_q = nn.Parameter(torch.empty(d_model, d_model))
            self.w_k = nn.Parameter(torch.empty(d_model, d_model))
            nn.init.xavier_uniform_(self.w_q)
            nn.init.xavier_uniform_(self.w_k)

    def forward(self, X: torch.Tensor, H: torch.Tensor) -> torch.Tensor:
        return token_label_attention(X, H, None if self.raw else (self.w_q, self.w_k))


def token_label_attention(X: torch.Tensor, H: torch.Tensor, projections=None) -> torch.Tensor:
    """A = (X W_q)(H W_k)^T / sqrt(d). X: (..., n, d), H: (k, d) -> (..., n, k)."""
    if X.shape[-1] != H.shape[-1]:
        raise ValueError(f"token dim {X.shape[-1]} != node dim {H.shape[-1]}")
    d = X.shape[-1]
    if projections is not None:
        w_q, w_k = projections
        X = X @ w_q
        H = H @ w_k
    return X @ H.transpose(-1, -2) / math.sqrt(d)


def sample_gumbel(shape, generator: Optional[torch.Generator] = None,
                  dtype=torch.float32) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=torch.float64)
    tiny = torch.finfo(torch.float64).tiny
    u = u.clamp(min=tiny, max=1.0 - 1e-16)
    return (-torch.log(-torch.log(u))).to(dtype)


def gumbel_label_probs(A: torch.Tensor, temperature: float = 1.0, mode: str = "train",
                       generator: Optional[torch.Generator] = None,
                       noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Row-wise (gumbel-)softmax over the node axis.

    In train mode Gumbel(0, 1) noise is added before the tempered softmax;
    a pre-drawn ``noise`` tensor may be passed to freeze the draw. Eval mode
    adds no noise.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if mode == "train":
        if noise is None:
            noise = sample_gumbel(A.shape, generator, A.dtype)
        A = A + noise.to(A.dtype)
    elif mode != "eval":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return torch.softmax(A / temperature, dim=-1)


def token_importance(P: torch.Tensor, gold) -> torch.Tensor:
    """P_i = sum of P[i, j] over gold nodes j.

    ``gold`` is either a collection of node indices (for a single (n, k)
    matrix) or a 0/1 tensor broadcastable against the node axis, e.g.
    (B, k) for a batched (B, n, k) input.
    """
    if isinstance(gold, torch.Tensor):
        gold = gold.to(P.dtype)
        if gold.sum() == 0:
            raise ValueError("gold label set is empty")
        if gold.dim() == 1:
            return P @ gold
        return torch.einsum("bnk,bk->bn", P, gold)
    gold = sorted(set(gold))
    if not gold:
        raise ValueError("gold label set is empty")
    return P[..., gold].sum(dim=-1)


def select_positive_positions(importance: Sequence[float], threshold: float) -> list:
    """Body positions (0-based) whose importance exceeds the threshold.

    Falls back to the single most important position when none qualifies.
    """
    keep = [i for i, p in enumerate(importance) if p > threshold]
    if not keep and len(importance):
        best = max(range(len(importance)), key=lambda i: (importance[i], -i))
        keep = [best]
    return keep


def construct_positive(seq: TokenSequence, importance: Sequence[float], threshold: float,
                       max_len: Optional[int] = None) -> TokenSequence:
    """Keep [CLS], the qualifying body tokens in order, and [SEP]."""
    body = seq.active_ids[1:-1]
    importance = [float(x) for x in importance]
    if len(importance) != len(body):
        raise ValueError(f"importance has {len(importance)} entries for {len(body)} body tokens")
    kept = [body[i] for i in select_positive_positions(importance, threshold)]
    ids = [CLS] + kept + [SEP]
    length = len(seq.ids) if max_len is None else max_len
    mask = [1] * len(ids) + [0] * (length - len(ids))
    ids = ids + [PAD] * (length - len(ids))
    return TokenSequence(ids, mask)


def cosine_matrix(z: torch.Tensor) -> torch.Tensor:
    norms = z.norm(dim=-1)
    if bool((norms == 0).any()):
        raise ValueError("zero-norm representation: cosine similarity undefined")
    unit = z / norms[:, None]
    return unit @ unit.T


def nt_xent_loss(reps: torch.Tensor, partner: Sequence[int], tau: float = 1.0) -> torch.Tensor:
    """Summed NT-Xent over 2N representations.

    ``partner[i]`` is the index paired with ``i``; every other sample in the
    batch is a negative for anchor ``i``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    m = reps.shape[0]
    partner = torch.as_tensor(list(partner), dtype=torch.long)
    if m < 2 or m % 2 or partner.shape[0] != m:
        raise ValueError("need 2N >= 2 representations with one partner each")
    if bool((partner[partner] != torch.arange(m)).any()) or bool((partner == torch.arange(m)).any()):
        raise ValueError("partner map must be a fixed-point-free involution")
    logits = cosine_matrix(reps) / tau
    logits = logits.masked_fill(torch.eye(m, dtype=torch.bool), float("-inf"))
    return F.cross_entropy(logits, partner, reduction="sum")


def paired_nt_xent(originals: torch.Tensor, positives: torch.Tensor, tau: float = 1.0) -> torch.Tensor:
    """NT-Xent with originals (N, d) paired row-wise to positives (N, d)."""
    n = originals.shape[0]
    partner = list(range(n, 2 * n)) + list(range(n))
    return nt_xent_loss(torch.cat([originals, positives]), partner, tau)
