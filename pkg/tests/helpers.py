"""Independent reference routines used as test oracles."""
import math
import random
from collections import deque

from faultprof.taxonomy import MAX_LEVEL, FaultNode, build_taxonomy


def random_forest(rng: random.Random, size: int, max_roots: int = 3):
    """Random forest of ``size`` nodes respecting the level rule."""
    nodes = []
    roots = rng.randint(1, min(max_roots, size))
    for r in range(roots):
        nodes.append(FaultNode(f"r{r}", f"root {r}", 1, None, ""))
    while len(nodes) < size:
        parent = rng.choice([n for n in nodes if n.level < MAX_LEVEL])
        i = len(nodes)
        nodes.append(FaultNode(f"x{i:03d}", f"node {i}", parent.level + 1, parent.id, ""))
    rng.shuffle(nodes)
    return build_taxonomy(nodes)


def bfs_all_pairs(taxonomy):
    adj = {n.id: set() for n in taxonomy.nodes}
    for n in taxonomy.nodes:
        if n.parent_id is not None:
            adj[n.id].add(n.parent_id)
            adj[n.parent_id].add(n.id)
    out = {}
    for src in adj:
        dist = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        out[src] = dist
    return out


def path_walk_closure(taxonomy, labels):
    parents = {n.id: n.parent_id for n in taxonomy.nodes}
    out = set()
    for label in labels:
        node = label
        while node is not None:
            out.add(node)
            node = parents[node]
    return out


def brute_nt_xent(vectors, partner, tau):
    """Plain-Python NT-Xent: sum over anchors of -log softmax at the partner."""
    def cos(u, v):
        dot = sum(a * b for a, b in zip(u, v))
        return dot / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)))

    total = 0.0
    for i, u in enumerate(vectors):
        denom = sum(math.exp(cos(u, w) / tau) for j, w in enumerate(vectors) if j != i)
        total -= math.log(math.exp(cos(u, vectors[partner[i]]) / tau) / denom)
    return total


def brute_weighted_bce(probs, gold, gamma, eps=1e-7):
    total = 0.0
    for prow, frow in zip(probs, gold):
        for p, f in zip(prow, frow):
            p = min(max(p, eps), 1 - eps)
            total -= gamma * f * math.log(p) + (1 - f) * math.log(1 - p)
    return total


def brute_counts(predictions, golds):
    tp = fp = fn = 0
    for pred, gold in zip(predictions, golds):
        for label in set(pred) | set(gold):
            if label in pred and label in gold:
                tp += 1
            elif label in pred:
                fp += 1
            else:
                fn += 1
    return tp, fp, fn
