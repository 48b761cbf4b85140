"""Turning tickets into model-ready examples and batches."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch

from .ingest import IncidentTicket, build_incident_context
from .taxonomy import Taxonomy, ancestor_closure
from .text_encoder import TokenSequence, Vocabulary, collate, tokenize


@dataclass
class Example:
    ticket_id: str
    seq: TokenSequence
    gold: Optional[frozenset]  # node indices


@dataclass
class Batch:
    ids: torch.Tensor   # (B, n) long
    mask: torch.Tensor  # (B, n) bool
    gold: Optional[torch.Tensor]  # (B, k) 0/1 float

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def gold_indices(ticket: IncidentTicket, taxonomy: Taxonomy, closure: bool = True) -> frozenset:
    labels = ticket.gold_labels or frozenset()
    unknown = [x for x in labels if x not in taxonomy.index]
    if unknown:
        raise KeyError(f"ticket {ticket.id!r} references unknown nodes {sorted(unknown)}")
    if closure:
        labels = ancestor_closure(taxonomy, labels)
    return frozenset(taxonomy.index[x] for x in labels)


def make_examples(tickets: Sequence[IncidentTicket], taxonomy: Taxonomy, vocab: Vocabulary,
                  max_len: int, closure: bool = True, require_gold: bool = False) -> list:
    examples = []
    for ticket in tickets:
        context = build_incident_context(ticket)
        seq = tokenize(context.text, vocab, max_len, pad=False)
        gold = None
        if ticket.gold_labels is not None:
            gold = gold_indices(ticket, taxonomy, closure)
        if require_gold and not gold:
            raise ValueError(f"ticket {ticket.id!r} has an empty gold label set")
        examples.append(Example(ticket.id, seq, gold))
    return examples


def make_batch(examples: Sequence[Example], k: int, dtype=torch.float32) -> Batch:
    ids, mask = collate([e.seq for e in examples])
    gold = None
    if all(e.gold is not None for e in examples):
        gold = torch.zeros((len(examples), k), dtype=dtype)
        for row, e in enumerate(examples):
            gold[row, sorted(e.gold)] = 1.0
    return Batch(ids, mask, gold)
