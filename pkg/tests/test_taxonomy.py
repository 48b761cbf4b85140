import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultprof.taxonomy import (
    MAX_DISTANCE,
    UNREACHABLE,
    FaultNode,
    TaxonomyError,
    ancestor_closure,
    bfs_distances,
    build_taxonomy,
    distance_bucket,
    load_taxonomy,
    lowest_common_ancestor,
    node_description_text,
    save_taxonomy,
    shortest_path_distance,
    taxonomy_from_dict,
)

from helpers import bfs_all_pairs, path_walk_closure, random_forest


def _write(tmp_path, nodes):
    path = tmp_path / "t.json"
    path.write_text(json.dumps({"nodes": nodes}))
    return path


def test_single_root_file(tmp_path):
    tax = load_taxonomy(_write(tmp_path, [{"id": "a", "name": "A", "level": 1, "parent": None}]))
    assert tax.k == 1 and tax.edges == [] and tax.depth == 1


def test_five_level_chain(tmp_path):
    nodes = [{"id": f"c{i}", "name": f"C{i}", "level": i, "parent": f"c{i - 1}" if i > 1 else None}
             for i in range(1, 6)]
    tax = load_taxonomy(_write(tmp_path, nodes))
    assert tax.k == 5 and len(tax.edges) == 4 and tax.depth == 5


def test_self_parent_is_cycle():
    with pytest.raises(TaxonomyError, match="cycle"):
        build_taxonomy([FaultNode("a", "A", 1, None, ""), FaultNode("b", "B", 2, "b", "")])


def test_validation_lists_every_problem():
    nodes = [
        FaultNode("a", "A", 2, None, ""),          # root not at level 1
        FaultNode("b", "B", 2, "missing", ""),     # orphan
        FaultNode("c", "C", 1, None, ""),
        FaultNode("d", "D", 3, "c", ""),           # level mismatch
        FaultNode("c", "C2", 1, None, ""),         # duplicate
        FaultNode("e", "E", 6, "d", ""),           # level out of range
    ]
    with pytest.raises(TaxonomyError) as info:
        build_taxonomy(nodes)
    text = str(info.value)
    for needle in ("root node", "orphan", "level mismatch", "duplicate", "outside 1..5"):
        assert needle in text


def test_longer_cycle_detected():
    nodes = [FaultNode("a", "A", 2, "b", ""), FaultNode("b", "B", 3, "a", "")]
    with pytest.raises(TaxonomyError, match="cycle detected"):
        build_taxonomy(nodes)


def test_malformed_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    with pytest.raises(TaxonomyError):
        load_taxonomy(bad)
    with pytest.raises(TaxonomyError):
        taxonomy_from_dict({"roots": []})


def test_nodes_ordered_by_id():
    tax = build_taxonomy([FaultNode("b", "B", 1, None, ""), FaultNode("a", "A", 1, None, "")])
    assert [n.id for n in tax.nodes] == ["a", "b"]
    assert tax.index == {"a": 0, "b": 1}


def test_closure_cpu_overload_path(fault_taxonomy):
    names = {fault_taxonomy.node(i).name for i in ancestor_closure(fault_taxonomy, {"cpu_overload"})}
    assert names == {"Customer Node", "Operating System", "System Resources", "CPU Overload"}


def test_closure_of_root_and_unknown(fault_taxonomy):
    assert ancestor_closure(fault_taxonomy, {"network"}) == {"network"}
    with pytest.raises(KeyError, match="nope"):
        ancestor_closure(fault_taxonomy, {"nope"})


def test_distance_small_cases(fault_taxonomy):
    assert shortest_path_distance(fault_taxonomy, "os", "os") == 0
    assert shortest_path_distance(fault_taxonomy, "os", "sysres") == 1
    assert shortest_path_distance(fault_taxonomy, "cpu_overload", "leak_slab") == 3
    assert shortest_path_distance(fault_taxonomy, "os", "link_down") is None
    assert lowest_common_ancestor(fault_taxonomy, "cpu_overload", "leak_slab") == "sysres"


def test_distance_matches_bfs_on_random_20_node_tree():
    tax = random_forest(random.Random(11), 20, max_roots=1)
    oracle = bfs_all_pairs(tax)
    for a in tax.index:
        assert bfs_distances(tax, a) == oracle[a]
        for b in tax.index:
            assert shortest_path_distance(tax, a, b) == oracle[a][b]


def test_distance_bucket():
    assert distance_bucket(None) == UNREACHABLE
    assert distance_bucket(3) == 3
    assert distance_bucket(MAX_DISTANCE + 4) == MAX_DISTANCE


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 30))
def test_structural_invariants(seed, size):
    rng = random.Random(seed)
    tax = random_forest(rng, size)
    oracle = bfs_all_pairs(tax)
    for node in tax.nodes:
        assert len(ancestor_closure(tax, {node.id})) == node.level
    ids = list(tax.index)
    for _ in range(20):
        a, b = rng.choice(ids), rng.choice(ids)
        m = lowest_common_ancestor(tax, a, b)
        d = shortest_path_distance(tax, a, b)
        assert d == oracle[a].get(b)
        if m is not None:
            la, lb, lm = tax.node(a).level, tax.node(b).level, tax.node(m).level
            assert d == abs(la - lm) + abs(lb - lm)
    labels = rng.sample(ids, min(3, len(ids)))
    assert ancestor_closure(tax, labels) == path_walk_closure(tax, labels)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_save_load_round_trip_keeps_index(tmp_path_factory, seed):
    tax = random_forest(random.Random(seed), 15)
    path = tmp_path_factory.mktemp("tax") / "t.json"
    save_taxonomy(path, tax)
    back = load_taxonomy(path)
    assert back.index == tax.index
    assert back.nodes == tax.nodes
    assert back.fingerprint() == tax.fingerprint()


def test_description_text_forms():
    leaf = FaultNode("c", "CPU Overload", 4, "s", "", ("single CPU utilization exceeding 90%",),
                     ("switchover",))
    assert node_description_text(leaf, is_leaf=True) == (
        "Fault name: CPU Overload. Examples: single CPU utilization exceeding 90%. "
        "Fault tolerance: switchover")
    internal = FaultNode("s", "System Resources", 3, "o", "")
    assert node_description_text(internal, is_leaf=False) == "Fault category: System Resources"
    bare = FaultNode("z", "Disk Full", 2, "o", "")
    assert node_description_text(bare, is_leaf=True) == "Fault name: Disk Full"
    described = FaultNode("o", "OS", 2, "r", "kernel faults")
    assert node_description_text(described, is_leaf=False) == "Fault category: OS. Description: kernel faults"
