"""Sigmoid multi-label classifier head and training objectives."""
from __future__ import annotations

from typing import Optional

import torch
from torch import nn

from .taxonomy import Taxonomy, ancestor_closure

PROB_EPS = 1e-7


class Classifier(nn.Module):
    """Linear map from the [CLS] vector to k node logits (W_c: k x d_h, b_c: k)."""

    def __init__(self, d_model: int, k: int):
        super().__init__()
        self.linear = nn.Linear(d_model, k)

    @property
    def weight(self) -> torch.Tensor:
        return self.linear.weight

    def forward(self, cls: torch.Tensor) -> torch.Tensor:
        return classify(cls, self.linear.weight, self.linear.bias)


def classify(cls: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    if cls.shape[-1] != weight.shape[1] or bias.shape[0] != weight.shape[0]:
        raise ValueError(
            f"dimension mismatch: cls {tuple(cls.shape)}, W_c {tuple(weight.shape)}, "
            f"b_c {tuple(bias.shape)}"
        )
    return torch.sigmoid(cls @ weight.T + bias)


def predict_labels(probs, threshold: float = 0.5, taxonomy: Optional[Taxonomy] = None,
                   closure: bool = False) -> set:
    """Indices with probability strictly above ``threshold``.

    With ``closure=True`` every predicted node's ancestors are added.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    labels = {j for j, p in enumerate(probs) if float(p) > threshold}
    if closure:
        if taxonomy is None:
            raise ValueError("closure post-processing needs the taxonomy")
        ids = ancestor_closure(taxonomy, (taxonomy.nodes[j].id for j in labels))
        labels = {taxonomy.index[i] for i in ids}
    return labels


def weighted_bce(probs: torch.Tensor, gold: torch.Tensor, gamma: float = 5.0) -> torch.Tensor:
    """-sum[ gamma * f * log p + (1 - f) * log(1 - p) ] over examples and nodes."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    gold = gold.to(probs.dtype)
    if bool(((gold != 0) & (gold != 1)).any()):
        raise ValueError("gold entries must be 0 or 1")
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(gamma * gold * torch.log(p) + (1.0 - gold) * torch.log1p(-p)).sum()


def total_loss(cls_loss, pos_cls_loss, contra_loss, alpha: float = 0.1):
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return cls_loss + pos_cls_loss + alpha * contra_loss
