"""Fault-pattern hierarchy: loading, validation and structural queries."""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

MAX_LEVEL = 5
# distances clamp at 2*MAX_LEVEL-2; one extra bucket for cross-tree pairs
MAX_DISTANCE = 2 * MAX_LEVEL - 2
UNREACHABLE = MAX_DISTANCE + 1
NUM_DISTANCE_BUCKETS = MAX_DISTANCE + 2


class TaxonomyError(ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class FaultNode:
    id: str
    name: str
    level: int
    parent_id: Optional[str] = None
    description: str = ""
    phenomena: tuple = ()
    tolerance_measures: tuple = ()


@dataclass
class Taxonomy:
    """A validated forest of fault nodes, ordered by id.

    ``nodes[j]`` is the node whose scores live in row/column ``j`` of every
    model matrix, so the order is part of the contract.
    """

    nodes: list
    index: dict = field(init=False, repr=False)
    children: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {node.id: j for j, node in enumerate(self.nodes)}
        self.children = {node.id: [] for node in self.nodes}
        for node in self.nodes:
            if node.parent_id is not None:
                self.children[node.parent_id].append(node.id)

    @property
    def k(self) -> int:
        return len(self.nodes)

    @property
    def edges(self) -> list:
        return [(n.parent_id, n.id) for n in self.nodes if n.parent_id is not None]

    @property
    def depth(self) -> int:
        return max((n.level for n in self.nodes), default=0)

    def node(self, node_id: str) -> FaultNode:
        try:
            return self.nodes[self.index[node_id]]
        except KeyError:
            raise KeyError(f"unknown taxonomy node {node_id!r}") from None

    def is_leaf(self, node_id: str) -> bool:
        return not self.children[node_id]

    def parent(self, node_id: str) -> Optional[str]:
        return self.node(node_id).parent_id

    def path_to_root(self, node_id: str) -> list:
        path = [node_id]
        while (parent := self.node(path[-1]).parent_id) is not None:
            path.append(parent)
        return path

    def root_of(self, node_id: str) -> str:
        return self.path_to_root(node_id)[-1]

    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_json(self).encode("utf-8")).hexdigest()


def canonical_json(taxonomy: Taxonomy) -> str:
    return json.dumps(taxonomy_to_dict(taxonomy), sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"))


def taxonomy_to_dict(taxonomy: Taxonomy) -> dict:
    return {
        "nodes": [
            {
                "id": n.id,
                "name": n.name,
                "level": n.level,
                "parent": n.parent_id,
                "description": n.description,
                "phenomena": list(n.phenomena),
                "tolerance": list(n.tolerance_measures),
            }
            for n in taxonomy.nodes
        ]
    }


def validate_nodes(nodes: Iterable[FaultNode]) -> list:
    """Return every violated invariant as a message (empty list when valid)."""
    nodes = list(nodes)
    problems = []
    by_id: dict = {}
    for node in nodes:
        if not node.id:
            problems.append("node with empty id")
            continue
        if node.id in by_id:
            problems.append(f"duplicate id {node.id!r}")
            continue
        by_id[node.id] = node
    for node in by_id.values():
        if not isinstance(node.level, int) or not 1 <= node.level <= MAX_LEVEL:
            problems.append(f"node {node.id!r}: level {node.level!r} outside 1..{MAX_LEVEL}")
        if node.parent_id is None:
            if node.level != 1:
                problems.append(f"node {node.id!r}: root node must have level 1, got {node.level}")
            continue
        if node.parent_id == node.id:
            problems.append(f"cycle: node {node.id!r} is its own parent")
            continue
        parent = by_id.get(node.parent_id)
        if parent is None:
            problems.append(f"node {node.id!r}: orphan parent reference {node.parent_id!r}")
            continue
        if node.level != parent.level + 1:
            problems.append(
                f"level mismatch: node {node.id!r} has level {node.level}, "
                f"parent {parent.id!r} has level {parent.level}"
            )
    # cycles longer than one edge
    reported = set()
    for start in by_id:
        seen = []
        current = start
        while current is not None and current in by_id and current not in seen:
            seen.append(current)
            current = by_id[current].parent_id
        if current is not None and current in seen and current != by_id[current].parent_id:
            cycle = frozenset(seen[seen.index(current):])
            if cycle not in reported:
                reported.add(cycle)
                problems.append(f"cycle detected among {sorted(cycle)}")
    return problems


def build_taxonomy(nodes: Iterable[FaultNode]) -> Taxonomy:
    nodes = list(nodes)
    problems = validate_nodes(nodes)
    if problems:
        raise TaxonomyError(problems)
    return Taxonomy(sorted(nodes, key=lambda n: n.id))


def _node_from_dict(entry: dict) -> FaultNode:
    return FaultNode(
        id=str(entry.get("id", "")),
        name=str(entry.get("name", "")),
        level=entry.get("level"),
        parent_id=entry.get("parent"),
        description=entry.get("description") or "",
        phenomena=tuple(entry.get("phenomena") or ()),
        tolerance_measures=tuple(entry.get("tolerance") or ()),
    )


def taxonomy_from_dict(payload: dict) -> Taxonomy:
    if not isinstance(payload, dict) or not isinstance(payload.get("nodes"), list):
        raise TaxonomyError("taxonomy must be an object with a 'nodes' array")
    return build_taxonomy(_node_from_dict(e) for e in payload["nodes"])


def load_taxonomy(path) -> Taxonomy:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TaxonomyError(f"invalid JSON: {exc}") from exc
    return taxonomy_from_dict(payload)


def save_taxonomy(path, taxonomy: Taxonomy) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(taxonomy_to_dict(taxonomy), fh, indent=2, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# queries

def ancestor_closure(taxonomy: Taxonomy, labels: Iterable[str]) -> set:
    closed = set()
    for label in labels:
        if label not in taxonomy.index:
            raise KeyError(f"unknown taxonomy node {label!r}")
        closed.update(taxonomy.path_to_root(label))
    return closed


def lowest_common_ancestor(taxonomy: Taxonomy, a: str, b: str) -> Optional[str]:
    ancestors = set(taxonomy.path_to_root(a))
    for node in taxonomy.path_to_root(b):
        if node in ancestors:
            return node
    return None


def tree_path(taxonomy: Taxonomy, a: str, b: str) -> Optional[list]:
    """Node ids along the unique undirected path a -> b, or None across trees."""
    lca = lowest_common_ancestor(taxonomy, a, b)
    if lca is None:
        return None
    up = taxonomy.path_to_root(a)
    down = taxonomy.path_to_root(b)
    up = up[: up.index(lca) + 1]
    down = down[: down.index(lca)]
    return up + down[::-1]


def shortest_path_distance(taxonomy: Taxonomy, a: str, b: str) -> Optional[int]:
    """Undirected tree distance; ``None`` when a and b live in different trees."""
    taxonomy.node(a)
    taxonomy.node(b)
    lca = lowest_common_ancestor(taxonomy, a, b)
    if lca is None:
        return None
    m = taxonomy.node(lca).level
    return taxonomy.node(a).level - m + taxonomy.node(b).level - m


def distance_bucket(distance: Optional[int]) -> int:
    if distance is None:
        return UNREACHABLE
    return min(distance, MAX_DISTANCE)


def bfs_distances(taxonomy: Taxonomy, source: str) -> dict:
    """Breadth-first distances on the undirected forest (reference routine)."""
    adjacency = {n.id: list(taxonomy.children[n.id]) for n in taxonomy.nodes}
    for parent, child in taxonomy.edges:
        adjacency[child].append(parent)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def node_description_text(node: FaultNode, is_leaf: bool = True) -> str:
    if is_leaf:
        parts = [f"Fault name: {node.name}"]
        if node.phenomena:
            parts.append("Examples: " + "; ".join(node.phenomena))
        if node.tolerance_measures:
            parts.append("Fault tolerance: " + "; ".join(node.tolerance_measures))
    else:
        parts = [f"Fault category: {node.name}"]
        if node.description:
            parts.append(f"Description: {node.description}")
    return ". ".join(parts)


def description_texts(taxonomy: Taxonomy) -> list:
    return [node_description_text(n, taxonomy.is_leaf(n.id)) for n in taxonomy.nodes]
