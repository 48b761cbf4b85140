"""Deterministic synthetic taxonomies and planted-keyword ticket corpora.

Every leaf owns a set of made-up keywords that appear nowhere else, so the
gold labels of a generated ticket can be recovered exactly by keyword lookup.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .ingest import IncidentTicket, ServiceCategory, Severity, build_incident_context, write_tickets
from .taxonomy import MAX_LEVEL, FaultNode, Taxonomy, ancestor_closure, build_taxonomy, save_taxonomy
from .text_encoder import pre_tokenize

MAX_NODES = 200
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
TREND_START = datetime(2023, 1, 2, tzinfo=timezone.utc)  # a Monday


@dataclass
class SynthSpec:
    depth: int = 3
    branching: int = 3
    roots: Optional[int] = None          # defaults to ``branching``
    noise_vocab: int = 300
    keywords_per_leaf: int = 2
    tickets: int = 1000
    min_leaves: int = 1
    max_leaves: int = 3
    noise_tokens: int = 12
    skew: float = 0.0                    # Zipf exponent over leaves; 0 = uniform
    weeks: int = 26
    seed: int = 7

    @property
    def n_roots(self) -> int:
        return self.branching if self.roots is None else self.roots

    def node_count(self) -> int:
        return self.n_roots * sum(self.branching ** level for level in range(self.depth))

    def validate(self) -> None:
        problems = []
        if not 1 <= self.depth <= MAX_LEVEL:
            problems.append(f"depth must lie in 1..{MAX_LEVEL}")
        if self.branching < 1 or self.n_roots < 1:
            problems.append("branching and roots must be >= 1")
        elif self.node_count() > MAX_NODES:
            problems.append(f"spec yields {self.node_count()} nodes, more than {MAX_NODES}")
        if self.keywords_per_leaf < 1:
            problems.append("keywords_per_leaf must be >= 1")
        if not 1 <= self.min_leaves <= self.max_leaves <= 3:
            problems.append("need 1 <= min_leaves <= max_leaves <= 3")
        if self.tickets < 0 or self.noise_tokens < 0 or self.noise_vocab < 1:
            problems.append("ticket and noise counts must be non-negative")
        if problems:
            raise ValueError("; ".join(problems))


def _pseudo_words(rng: np.random.Generator, count: int, syllables: int) -> list:
    words, seen = [], set()
    while len(words) < count:
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _word_pools(spec: SynthSpec, n_leaves: int) -> tuple:
    rng = np.random.default_rng([spec.seed, 0])
    # keywords get 4 syllables, noise 3, so the two pools never collide
    keywords = _pseudo_words(rng, n_leaves * spec.keywords_per_leaf, 4)
    noise = _pseudo_words(rng, spec.noise_vocab, 3)
    return keywords, noise


def gen_taxonomy(spec: SynthSpec) -> tuple:
    """Complete ``branching``-ary forest of the given depth.

    Returns ``(taxonomy, keyword_map)`` where ``keyword_map`` maps each leaf id
    to its keywords.
    """
    spec.validate()
    leaves_total = spec.n_roots * spec.branching ** (spec.depth - 1)
    keywords, _ = _word_pools(spec, leaves_total)
    nodes, keyword_map = [], {}
    frontier = []
    for r in range(spec.n_roots):
        frontier.append((f"n{r}", 1, None))
    while frontier:
        node_id, level, parent = frontier.pop(0)
        label = node_id[1:]
        if level == spec.depth:
            kws = keywords[len(keyword_map) * spec.keywords_per_leaf:
                           (len(keyword_map) + 1) * spec.keywords_per_leaf]
            keyword_map[node_id] = kws
            nodes.append(FaultNode(
                id=node_id, name=f"Fault {label}", level=level, parent_id=parent,
                description=f"fault pattern {label} marked by " + " ".join(kws),
                phenomena=tuple(f"{kw} observed" for kw in kws),
                tolerance_measures=("switchover",),
            ))
            continue
        nodes.append(FaultNode(
            id=node_id, name=f"Category {label}", level=level, parent_id=parent,
            description=f"faults grouped under category {label}",
        ))
        for c in range(spec.branching):
            frontier.append((f"{node_id}.{c}", level + 1, node_id))
    return build_taxonomy(nodes), keyword_map


def oracle_labels(text: str, keyword_map: dict, taxonomy: Taxonomy) -> set:
    """Leaves whose full keyword set occurs in ``text``, closed upwards."""
    tokens = set(pre_tokenize(text))
    leaves = [leaf for leaf, kws in keyword_map.items() if set(kws) <= tokens]
    return ancestor_closure(taxonomy, leaves)


def ticket_oracle_labels(ticket: IncidentTicket, keyword_map: dict, taxonomy: Taxonomy) -> set:
    return oracle_labels(build_incident_context(ticket).text, keyword_map, taxonomy)


@dataclass
class SynthCorpus:
    taxonomy: Taxonomy
    keyword_map: dict
    train: list
    dev: list
    test: list

    @property
    def tickets(self) -> list:
        return self.train + self.dev + self.test


def split_sizes(n: int) -> tuple:
    n_train = int(round(0.8 * n))
    n_dev = int(round(0.1 * n))
    return n_train, n_dev, n - n_train - n_dev


def gen_tickets(spec: SynthSpec, taxonomy: Taxonomy, keyword_map: dict) -> SynthCorpus:
    spec.validate()
    rng = np.random.default_rng([spec.seed, 1])
    _, noise = _word_pools(spec, len(keyword_map))
    leaves = sorted(keyword_map)
    weights = np.array([1.0 / (rank + 1) ** spec.skew for rank in range(len(leaves))])
    weights /= weights.sum()
    severities = list(Severity)
    services = list(ServiceCategory)
    span = timedelta(weeks=spec.weeks).total_seconds()

    def noise_words(count):
        return [noise[i] for i in rng.integers(len(noise), size=count)]

    tickets = []
    for t in range(spec.tickets):
        n_leaves = int(rng.integers(spec.min_leaves, min(spec.max_leaves, len(leaves)) + 1))
        chosen = sorted(rng.choice(len(leaves), size=n_leaves, replace=False, p=weights).tolist())
        words = noise_words(spec.noise_tokens)
        for j in chosen:
            words.extend(keyword_map[leaves[j]])
        rng.shuffle(words)
        created = TREND_START + timedelta(seconds=int(rng.integers(int(span))))
        ticket = IncidentTicket(
            id=f"T{t:05d}",
            title=" ".join(noise_words(3)),
            symptom=" ".join(words),
            root_cause=" ".join(noise_words(3)),
            mitigation=" ".join(noise_words(2)),
            severity=severities[int(rng.integers(len(severities)))],
            service_category=services[int(rng.integers(len(services)))],
            created_at=created,
            gold_labels=frozenset(ancestor_closure(taxonomy, [leaves[j] for j in chosen])),
        )
        if ticket_oracle_labels(ticket, keyword_map, taxonomy) != set(ticket.gold_labels):
            raise AssertionError(f"keyword oracle disagrees with planted labels for {ticket.id}")
        tickets.append(ticket)
    n_train, n_dev, _ = split_sizes(len(tickets))
    return SynthCorpus(taxonomy, keyword_map, tickets[:n_train],
                       tickets[n_train : n_train + n_dev], tickets[n_train + n_dev :])


def generate(spec: SynthSpec) -> SynthCorpus:
    taxonomy, keyword_map = gen_taxonomy(spec)
    return gen_tickets(spec, taxonomy, keyword_map)


def write_corpus(corpus: SynthCorpus, out_dir, spec: Optional[SynthSpec] = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "taxonomy": out / "taxonomy.json",
        "keywords": out / "keywords.json",
        "train": out / "train.jsonl",
        "dev": out / "dev.jsonl",
        "test": out / "test.jsonl",
    }
    save_taxonomy(paths["taxonomy"], corpus.taxonomy)
    with open(paths["keywords"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(corpus.keyword_map, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for split in ("train", "dev", "test"):
        write_tickets(paths[split], getattr(corpus, split))
    if spec is not None:
        paths["spec"] = out / "synth_spec.json"
        with open(paths["spec"], "w", encoding="utf-8", newline="\n") as fh:
            json.dump(asdict(spec), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return paths
