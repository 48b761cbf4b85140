"""The full profiler: text encoder, hierarchy encoder, positive sampling, classifier."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .classifier import Classifier, total_loss, weighted_bce
from .config import TrainConfig
from .contrastive import (
    TokenLabelAttention,
    gumbel_label_probs,
    paired_nt_xent,
    sample_gumbel,
    select_positive_positions,
    token_importance,
)
from .data import Batch
from .hierarchy import (
    HierarchyEncoder,
    TaxonomyStructure,
    graphormer_encode,
    node_input_features,
    taxonomy_structure,
)
from .taxonomy import Taxonomy, description_texts
from .text_encoder import CLS, PAD, SEP, TextEncoder, Vocabulary, collate, masked_mean, tokenize


@dataclass
class PositiveDraw:
    """Everything random or discrete in one positive-sample construction.

    Re-using a draw makes the loss a smooth function of the parameters,
    which is what finite-difference checking needs.
    """

    noise: torch.Tensor       # (B, n, k) gumbel noise
    keep: list                # per example: kept body positions (0-based)
    importance: torch.Tensor  # (B, n) detached P_i anchor for straight-through


@dataclass
class LossParts:
    total: torch.Tensor
    cls: torch.Tensor
    pos_cls: torch.Tensor
    contra: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("total", "cls", "pos_cls", "contra")}


class FaultProfiler(nn.Module):
    def __init__(self, config: TrainConfig, taxonomy: Taxonomy, vocab: Vocabulary):
        super().__init__()
        self.config = config
        self.k = taxonomy.k
        d = config.d_model
        self.encoder = TextEncoder(len(vocab), d, config.num_layers, config.num_heads,
                                   max_len=config.max_len, dropout=config.dropout)
        self.hierarchy = HierarchyEncoder(taxonomy.k, d, config.graph_layers, config.graph_heads,
                                          dropout=config.dropout,
                                          degree_encoding=config.degree_encoding)
        self.token_attention = TokenLabelAttention(d, raw=config.raw_attention)
        self.classifier = Classifier(d, taxonomy.k)
        self.structure: TaxonomyStructure = taxonomy_structure(taxonomy)
        seqs = [tokenize(t, vocab, config.max_len, pad=False) for t in description_texts(taxonomy)]
        desc_ids, desc_mask = collate(seqs)
        self.register_buffer("desc_ids", desc_ids, persistent=False)
        self.register_buffer("desc_mask", desc_mask, persistent=False)

    # -- prediction path -------------------------------------------------

    def forward(self, ids: torch.Tensor, mask: torch.Tensor, generator=None) -> torch.Tensor:
        hidden = self.encoder(ids, mask, generator=generator)
        return self.classifier(hidden[:, 0])

    # -- hierarchy ---------------------------------------------------------

    def description_embeddings(self, generator=None) -> torch.Tensor:
        ctx = torch.no_grad() if self.config.freeze_descriptions else contextlib.nullcontext()
        with ctx:
            hidden = self.encoder(self.desc_ids, self.desc_mask, generator=generator)
            return masked_mean(hidden, self.desc_mask)

    def node_representations(self, generator=None) -> torch.Tensor:
        desc = None
        if not self.config.ablated("no_description_embedding"):
            desc = self.description_embeddings(generator)
        features = node_input_features(self.hierarchy, self.structure, desc)
        if self.config.ablated("no_graphormer"):
            return features
        return graphormer_encode(features, self.structure, self.hierarchy, generator)

    # -- training objective ------------------------------------------------

    def draw_positives(self, batch: Batch, importance: torch.Tensor, noise: torch.Tensor) -> PositiveDraw:
        lengths = batch.mask.sum(dim=1).tolist()
        keep = []
        for row, n in enumerate(lengths):
            body = importance[row, 1 : n - 1].tolist()
            keep.append(select_positive_positions(body, self.config.lam))
        return PositiveDraw(noise, keep, importance.detach().clone())

    def positive_inputs(self, batch: Batch, draw: PositiveDraw, importance: torch.Tensor):
        B = batch.size
        length = max(len(k) for k in draw.keep) + 2
        ids = torch.full((B, length), PAD, dtype=torch.long)
        mask = torch.zeros((B, length), dtype=torch.bool)
        rows, src, dst = [], [], []
        for row, kept in enumerate(draw.keep):
            positions = [p + 1 for p in kept]
            ids[row, 0] = CLS
            ids[row, 1 : 1 + len(kept)] = batch.ids[row, positions]
            ids[row, 1 + len(kept)] = SEP
            mask[row, : len(kept) + 2] = True
            rows += [row] * len(kept)
            src += positions
            dst += range(1, 1 + len(kept))
        scale = None
        if self.config.straight_through:
            # value is exactly 1; the gradient is dP_i for each kept token
            delta = importance - draw.importance
            scale = torch.ones((B, length), dtype=importance.dtype)
            rows_t = torch.tensor(rows, dtype=torch.long)
            scale = scale.index_put((rows_t, torch.tensor(dst, dtype=torch.long)),
                                    1.0 + delta[rows_t, torch.tensor(src, dtype=torch.long)])
        return ids, mask, scale

    def loss(self, batch: Batch, generator: Optional[torch.Generator] = None,
             draw: Optional[PositiveDraw] = None) -> tuple:
        """Combined objective for one batch; returns ``(LossParts, draw)``.

        Pass a previous ``draw`` to reuse its noise, token selection and
        straight-through anchor.
        """
        cfg = self.config
        if batch.gold is None:
            raise ValueError("training batch needs gold labels")
        if bool((batch.gold.sum(dim=1) == 0).any()):
            raise ValueError("batch contains an example with an empty gold label set")
        gold = batch.gold.to(self.classifier.weight.dtype)
        hidden = self.encoder(batch.ids, batch.mask, generator=generator)
        cls = hidden[:, 0]
        cls_loss = weighted_bce(self.classifier(cls), gold, cfg.gamma)
        zero = cls_loss.new_zeros(())
        if cfg.ablated("no_contrastive_module"):
            return LossParts(cls_loss, cls_loss, zero, zero), None

        H = self.node_representations(generator)
        A = self.token_attention(hidden, H)  # (B, n, k)
        noise = draw.noise if draw is not None else sample_gumbel(A.shape, generator, A.dtype)
        P = gumbel_label_probs(A, cfg.gumbel_temperature, "train", noise=noise)
        importance = token_importance(P, gold)  # (B, n)
        if draw is None:
            draw = self.draw_positives(batch, importance, noise)
        pos_ids, pos_mask, scale = self.positive_inputs(batch, draw, importance)
        pos_hidden = self.encoder(pos_ids, pos_mask, token_scale=scale, generator=generator)
        pos_cls = pos_hidden[:, 0]
        pos_cls_loss = weighted_bce(self.classifier(pos_cls), gold, cfg.gamma)
        contra = paired_nt_xent(cls, pos_cls, cfg.tau)

        pos_term = zero if cfg.ablated("no_augmented_loss") else pos_cls_loss
        alpha = 0.0 if cfg.ablated("no_contrastive_loss") else cfg.alpha
        total = total_loss(cls_loss, pos_term, contra, alpha)
        return LossParts(total, cls_loss, pos_cls_loss, contra), draw

    @torch.no_grad()
    def predict_proba(self, batch: Batch) -> torch.Tensor:
        was_training = self.training
        self.eval()
        try:
            return self(batch.ids, batch.mask)
        finally:
            self.train(was_training)
