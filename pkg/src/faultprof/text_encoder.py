"""Vocabulary, tokenization and the trainable incident text encoder."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import torch
from torch import nn

from .layers import TransformerLayer, dropout

PAD, UNK, CLS, SEP = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")

# ASCII alphanumeric runs are words; every other non-space codepoint
# (ASCII punctuation, CJK characters, ...) is a token on its own.
_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def pre_tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with " + ", ".join(SPECIAL_TOKENS))
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id_of(self, token: str) -> int:
        return self.ids.get(token, UNK)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for token in self.tokens:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line != "\n"])


def build_vocab(corpus: Iterable[str], size: int) -> Vocabulary:
    """Special tokens plus the ``size - 4`` most frequent pre-tokens.

    Ties are broken lexicographically so the result is deterministic.
    """
    if size < len(SPECIAL_TOKENS):
        raise ValueError(f"vocabulary size {size} smaller than {len(SPECIAL_TOKENS)} special tokens")
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for text in corpus:
        counts.update(pre_tokenize(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    body = [tok for tok, _ in ranked[: size - len(SPECIAL_TOKENS)]]
    return Vocabulary(list(SPECIAL_TOKENS) + body)


@dataclass
class TokenSequence:
    ids: list
    attention_mask: list

    @property
    def n(self) -> int:
        return sum(self.attention_mask)

    @property
    def active_ids(self) -> list:
        return self.ids[: self.n]


def tokenize(text: str, vocab: Vocabulary, max_len: int, pad: bool = True) -> TokenSequence:
    if max_len < 3:
        raise ValueError("max_len must be at least 3")
    body = [vocab.id_of(tok) for tok in pre_tokenize(text)][: max_len - 2]
    ids = [CLS] + body + [SEP]
    mask = [1] * len(ids)
    if pad:
        ids += [PAD] * (max_len - len(ids))
        mask += [0] * (max_len - len(mask))
    return TokenSequence(ids, mask)


def collate(seqs: Sequence[TokenSequence], length: Optional[int] = None):
    """Stack sequences into (ids, mask) tensors padded to ``length``
    (default: longest active length in the batch)."""
    if length is None:
        length = max(s.n for s in seqs)
    ids = torch.full((len(seqs), length), PAD, dtype=torch.long)
    mask = torch.zeros((len(seqs), length), dtype=torch.bool)
    for row, seq in enumerate(seqs):
        active = seq.active_ids[:length]
        ids[row, : len(active)] = torch.tensor(active, dtype=torch.long)
        mask[row, : len(active)] = True
    return ids, mask


class TextEncoder(nn.Module):
    """BERT-shaped encoder trained from scratch.

    Returns hidden states (B, n, d); the [CLS] representation is row 0.
    """

    def __init__(self, vocab_size: int, d_model: int = 64, num_layers: int = 2,
                 num_heads: int = 4, d_ff: Optional[int] = None, max_len: int = 128,
                 dropout: float = 0.1):
        super().__init__()
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.max_len = max_len
        self.token_embedding = nn.Embedding(vocab_size, d_model)
        self.position_embedding = nn.Embedding(max_len, d_model)
        self.embedding_norm = nn.LayerNorm(d_model, eps=1e-12)
        self.layers = nn.ModuleList(
            TransformerLayer(d_model, num_heads, d_ff or 4 * d_model, dropout, norm_first=False)
            for _ in range(num_layers)
        )
        self.dropout = dropout
        nn.init.normal_(self.token_embedding.weight, std=0.02)
        nn.init.normal_(self.position_embedding.weight, std=0.02)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor, token_scale=None,
                generator: Optional[torch.Generator] = None, return_attention: bool = False):
        """
        ids, mask: (B, n); mask is True on active positions.
        token_scale: optional (B, n) multiplier on token embeddings; used to
        route straight-through gradients into kept positive-sample tokens.
        """
        if ids.numel() and (int(ids.max()) >= self.vocab_size or int(ids.min()) < 0):
            raise IndexError(f"token id out of range for vocabulary of size {self.vocab_size}")
        n = ids.shape[1]
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.max_len}")
        tok = self.token_embedding(ids)
        if token_scale is not None:
            tok = tok * token_scale.unsqueeze(-1)
        positions = torch.arange(n, device=ids.device)
        x = tok + self.position_embedding(positions)[None]
        x = dropout(self.embedding_norm(x), self.dropout, self.training, generator)
        padding = ~mask
        attentions = []
        for layer in self.layers:
            x, w = layer(x, key_padding_mask=padding, generator=generator, return_weights=True)
            attentions.append(w)
        if return_attention:
            return x, attentions
        return x


@dataclass
class EncodedSequence:
    hidden: torch.Tensor  # (n, d)

    @property
    def cls(self) -> torch.Tensor:
        return self.hidden[0]


def encode(seq: TokenSequence, encoder: TextEncoder, mode: str = "eval",
           generator: Optional[torch.Generator] = None) -> EncodedSequence:
    """Encode one sequence, returning the hidden rows of its active positions."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if seq.n < 2:
        raise ValueError("sequence must contain at least [CLS] and [SEP]")
    was_training = encoder.training
    encoder.train(mode == "train")
    try:
        ids, mask = collate([seq], length=len(seq.ids))
        hidden = encoder(ids, mask, generator=generator)[0, : seq.n]
    finally:
        encoder.train(was_training)
    return EncodedSequence(hidden)


def masked_mean(hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over active rows: hidden (B, n, d), mask (B, n) -> (B, d)."""
    m = mask.to(hidden.dtype).unsqueeze(-1)
    return (hidden * m).sum(dim=1) / m.sum(dim=1)


def embed_description(text: str, vocab: Vocabulary, encoder: TextEncoder) -> torch.Tensor:
    seq = tokenize(text, vocab, encoder.max_len, pad=False)
    ids, mask = collate([seq])
    return masked_mean(encoder(ids, mask), mask)[0]
