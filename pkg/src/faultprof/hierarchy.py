"""Graph-transformer encoder over the fault taxonomy.

Each attention score between nodes i and j gets two learned additive biases:
a spatial term indexed by their tree distance bucket and an edge term that
averages per-hop edge-type biases along the path i -> j.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .layers import TransformerLayer
from .taxonomy import (
    MAX_DISTANCE,
    MAX_LEVEL,
    NUM_DISTANCE_BUCKETS,
    Taxonomy,
    distance_bucket,
    shortest_path_distance,
    tree_path,
)

# edge type = level of the parent end of an edge (1..MAX_LEVEL-1) -> 0-based,
# plus one type reserved for cross-tree pairs
NUM_EDGE_TYPES = MAX_LEVEL
UNREACHABLE_EDGE_TYPE = MAX_LEVEL - 1
# hop slots are symmetric around the path midpoint
MAX_HOPS = (MAX_DISTANCE + 1) // 2
MAX_DEGREE = 32


@dataclass
class TaxonomyStructure:
    """Dense tensors describing pairwise structure, row order = taxonomy order."""

    buckets: torch.Tensor       # (k, k) long, distance bucket per pair
    edge_weights: torch.Tensor  # (k, k, MAX_HOPS, NUM_EDGE_TYPES) averaging weights
    in_degree: torch.Tensor     # (k,) long
    out_degree: torch.Tensor    # (k,) long


def hop_slot(t: int, length: int) -> int:
    # distance from the nearer path end, so the i->j and j->i paths share slots
    return min(t, length - 1 - t)


def taxonomy_structure(taxonomy: Taxonomy) -> TaxonomyStructure:
    k = taxonomy.k
    ids = [n.id for n in taxonomy.nodes]
    buckets = torch.zeros((k, k), dtype=torch.long)
    edge_weights = torch.zeros((k, k, MAX_HOPS, NUM_EDGE_TYPES), dtype=torch.float64)
    for i, a in enumerate(ids):
        for j, b in enumerate(ids):
            dist = shortest_path_distance(taxonomy, a, b)
            buckets[i, j] = distance_bucket(dist)
            if dist is None:
                edge_weights[i, j, 0, UNREACHABLE_EDGE_TYPE] = 1.0
                continue
            if dist == 0:
                continue
            path = tree_path(taxonomy, a, b)
            for t in range(dist):
                u, v = path[t], path[t + 1]
                parent_level = min(taxonomy.node(u).level, taxonomy.node(v).level)
                slot = min(hop_slot(t, dist), MAX_HOPS - 1)
                edge_weights[i, j, slot, parent_level - 1] += 1.0 / dist
    in_degree = torch.tensor([0 if n.parent_id is None else 1 for n in taxonomy.nodes])
    out_degree = torch.tensor(
        [min(len(taxonomy.children[n.id]), MAX_DEGREE) for n in taxonomy.nodes]
    )
    return TaxonomyStructure(buckets, edge_weights, in_degree, out_degree)


class GraphormerEncoder(nn.Module):
    def __init__(self, d_model: int, num_layers: int = 2, num_heads: int = 8,
                 d_ff: Optional[int] = None, dropout: float = 0.1):
        super().__init__()
        self.num_heads = num_heads
        self.spatial_bias = nn.Parameter(torch.zeros(NUM_DISTANCE_BUCKETS, num_heads))
        self.edge_bias = nn.Parameter(torch.zeros(MAX_HOPS, NUM_EDGE_TYPES, num_heads))
        self.layers = nn.ModuleList(
            TransformerLayer(d_model, num_heads, d_ff or 4 * d_model, dropout,
                             norm_first=True, eps=1e-5)
            for _ in range(num_layers)
        )
        self.final_norm = nn.LayerNorm(d_model, eps=1e-5)

    def attention_bias(self, structure: TaxonomyStructure) -> torch.Tensor:
        """(h, k, k) pre-softmax bias shared by every layer."""
        spatial = self.spatial_bias[structure.buckets]  # (k, k, h)
        weights = structure.edge_weights.to(self.edge_bias.dtype)
        edge = torch.einsum("ijtc,tch->ijh", weights, self.edge_bias)
        return (spatial + edge).permute(2, 0, 1)

    def forward(self, features: torch.Tensor, structure: TaxonomyStructure,
                generator=None) -> torch.Tensor:
        bias = self.attention_bias(structure)[None]
        x = features[None]
        for layer in self.layers:
            x = layer(x, attn_bias=bias, generator=generator)
        return self.final_norm(x)[0]


class HierarchyEncoder(nn.Module):
    """Label embeddings (+ degree embeddings) followed by the graph transformer."""

    def __init__(self, k: int, d_model: int, num_layers: int = 2, num_heads: int = 8,
                 dropout: float = 0.1, degree_encoding: bool = True):
        super().__init__()
        self.label_embedding = nn.Parameter(torch.randn(k, d_model) * 0.02)
        self.degree_encoding = degree_encoding
        if degree_encoding:
            self.in_degree_embedding = nn.Embedding(2, d_model)
            self.out_degree_embedding = nn.Embedding(MAX_DEGREE + 1, d_model)
            nn.init.normal_(self.in_degree_embedding.weight, std=0.02)
            nn.init.normal_(self.out_degree_embedding.weight, std=0.02)
        self.graphormer = GraphormerEncoder(d_model, num_layers, num_heads, dropout=dropout)

    def degree_term(self, structure: TaxonomyStructure) -> torch.Tensor:
        return (self.in_degree_embedding(structure.in_degree)
                + self.out_degree_embedding(structure.out_degree))


def node_input_features(hierarchy: HierarchyEncoder, structure: TaxonomyStructure,
                        description_embeddings: Optional[torch.Tensor]) -> torch.Tensor:
    """F[j] = label_embedding[j] + description_embedding[j] (+ degree term).

    Pass ``description_embeddings=None`` for the label-embedding-only ablation.
    """
    features = hierarchy.label_embedding
    if description_embeddings is not None:
        if description_embeddings.shape != features.shape:
            raise ValueError(
                f"description embeddings {tuple(description_embeddings.shape)} do not match "
                f"label embeddings {tuple(features.shape)}"
            )
        features = features + description_embeddings
    if hierarchy.degree_encoding:
        features = features + hierarchy.degree_term(structure)
    return features


def graphormer_encode(features: torch.Tensor, structure: TaxonomyStructure,
                      hierarchy: HierarchyEncoder, generator=None) -> torch.Tensor:
    if features.shape[0] != structure.buckets.shape[0]:
        raise ValueError(
            f"feature rows {features.shape[0]} != taxonomy size {structure.buckets.shape[0]}"
        )
    return hierarchy.graphormer(features, structure, generator)
