import random

import torch
from torch import nn

from faultprof.hierarchy import (
    MAX_HOPS,
    NUM_EDGE_TYPES,
    UNREACHABLE_EDGE_TYPE,
    GraphormerEncoder,
    HierarchyEncoder,
    graphormer_encode,
    node_input_features,
    taxonomy_structure,
)
from faultprof.taxonomy import UNREACHABLE, FaultNode, build_taxonomy, distance_bucket

from helpers import bfs_all_pairs, random_forest


def _chain():
    return build_taxonomy([FaultNode("a", "A", 1, None, ""), FaultNode("b", "B", 2, "a", ""),
                           FaultNode("c", "C", 3, "b", "")])


def _randomize(module, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.rand(p.shape, generator=g, dtype=p.dtype) * 2 - 1)


def test_chain_buckets_match_bfs():
    tax = _chain()
    s = taxonomy_structure(tax)
    oracle = bfs_all_pairs(tax)
    for a, i in tax.index.items():
        for b, j in tax.index.items():
            assert int(s.buckets[i, j]) == oracle[a][b]
    assert s.buckets.tolist() == [[0, 1, 2], [1, 0, 1], [2, 1, 0]]


def test_structure_on_forest(fault_taxonomy):
    s = taxonomy_structure(fault_taxonomy)
    idx = fault_taxonomy.index
    oracle = bfs_all_pairs(fault_taxonomy)
    for a, i in idx.items():
        for b, j in idx.items():
            assert int(s.buckets[i, j]) == distance_bucket(oracle[a].get(b))
    i, j = idx["os"], idx["link_down"]
    assert int(s.buckets[i, j]) == UNREACHABLE
    assert float(s.edge_weights[i, j, 0, UNREACHABLE_EDGE_TYPE]) == 1.0
    assert float(s.edge_weights[i, i].abs().sum()) == 0.0
    # the weights along a path of length d sum to one
    d = 3
    w = s.edge_weights[idx["cpu_overload"], idx["leak_slab"]]
    assert abs(float(w.sum()) - 1.0) < 1e-12 and w.shape == (MAX_HOPS, NUM_EDGE_TYPES)
    assert int(s.buckets[idx["cpu_overload"], idx["leak_slab"]]) == d
    assert s.in_degree.tolist() == [0 if n.parent_id is None else 1 for n in fault_taxonomy.nodes]
    assert int(s.out_degree[idx["sysres"]]) == 2


def test_bias_is_symmetric_on_trees():
    for seed in range(5):
        tax = random_forest(random.Random(seed), 18)
        enc = GraphormerEncoder(8, num_layers=1, num_heads=2, dropout=0.0)
        _randomize(enc, seed)
        bias = enc.attention_bias(taxonomy_structure(tax))
        assert torch.allclose(bias, bias.transpose(1, 2), atol=1e-6)


def test_edge_bias_is_mean_over_hops():
    tax = _chain()
    enc = GraphormerEncoder(4, num_layers=1, num_heads=1, dropout=0.0)
    with torch.no_grad():
        enc.edge_bias.zero_()
        enc.edge_bias[0, 0, 0] = 2.0   # hop slot 0, edge below a level-1 parent
        enc.edge_bias[0, 1, 0] = 6.0   # hop slot 0, edge below a level-2 parent
    bias = enc.attention_bias(taxonomy_structure(tax))[0].detach()
    a, b, c = (tax.index[x] for x in "abc")
    assert float(bias[a, b]) == 2.0
    assert float(bias[b, c]) == 6.0
    assert float(bias[a, c]) == 4.0
    assert float(bias[a, a]) == 0.0


def test_zero_bias_equals_plain_pre_norm_transformer():
    torch.manual_seed(0)
    d, h, k = 16, 4, 5
    enc = GraphormerEncoder(d, num_layers=2, num_heads=h, dropout=0.0).eval()
    _randomize(enc, 3)
    with torch.no_grad():
        enc.spatial_bias.zero_()
        enc.edge_bias.zero_()
    reference = []
    for layer in enc.layers:
        ref = nn.TransformerEncoderLayer(d, h, 4 * d, dropout=0.0, activation="gelu",
                                         layer_norm_eps=1e-5, batch_first=True, norm_first=True)
        with torch.no_grad():
            a = layer.attn
            ref.self_attn.in_proj_weight.copy_(torch.cat([a.q_proj.weight, a.k_proj.weight, a.v_proj.weight]))
            ref.self_attn.in_proj_bias.copy_(torch.cat([a.q_proj.bias, a.k_proj.bias, a.v_proj.bias]))
            ref.self_attn.out_proj.weight.copy_(a.out_proj.weight)
            ref.self_attn.out_proj.bias.copy_(a.out_proj.bias)
            ref.linear1.load_state_dict(layer.ff_in.state_dict())
            ref.linear2.load_state_dict(layer.ff_out.state_dict())
            ref.norm1.load_state_dict(layer.norm1.state_dict())
            ref.norm2.load_state_dict(layer.norm2.state_dict())
        reference.append(ref.eval())
    tax = random_forest(random.Random(1), k)
    x = torch.randn(k, d)
    with torch.no_grad():
        ours = enc(x, taxonomy_structure(tax))
        y = x[None]
        for ref in reference:
            y = ref(y)
        theirs = enc.final_norm(y)[0]
    assert torch.allclose(ours, theirs, atol=1e-6)


def test_single_node_ignores_bias():
    tax = build_taxonomy([FaultNode("a", "A", 1, None, "")])
    enc = GraphormerEncoder(8, num_layers=2, num_heads=2, dropout=0.0).eval()
    _randomize(enc, 0)
    x = torch.randn(1, 8)
    s = taxonomy_structure(tax)
    with torch.no_grad():
        before = enc(x, s)
        _, w = enc.layers[0].attn(enc.layers[0].norm1(x[None]), attn_bias=enc.attention_bias(s)[None],
                                  return_weights=True)
        enc.spatial_bias.add_(5.0)
        after = enc(x, s)
    assert torch.equal(w, torch.ones(1, 2, 1, 1))
    assert torch.allclose(before, after)


def _relabel(tax, mapping):
    nodes = [FaultNode(mapping[n.id], n.name, n.level,
                       None if n.parent_id is None else mapping[n.parent_id], n.description)
             for n in tax.nodes]
    return build_taxonomy(nodes)


def test_relabeling_equivariance():
    for seed in range(4):
        rng = random.Random(seed)
        tax = random_forest(rng, 6)
        ids = [n.id for n in tax.nodes]
        shuffled = ids[:]
        rng.shuffle(shuffled)
        mapping = {old: f"z{shuffled.index(old)}" for old in ids}
        new = _relabel(tax, mapping)
        torch.manual_seed(seed)
        hier = HierarchyEncoder(tax.k, 8, num_layers=2, num_heads=2, dropout=0.0).eval()
        _randomize(hier, seed)
        s_old, s_new = taxonomy_structure(tax), taxonomy_structure(new)
        perm = [tax.index[old] for old in sorted(ids, key=lambda o: new.index[mapping[o]])]
        desc = torch.randn(tax.k, 8)
        with torch.no_grad():
            h_old = graphormer_encode(node_input_features(hier, s_old, desc), s_old, hier)
            hier.label_embedding.copy_(hier.label_embedding[perm])
            h_new = graphormer_encode(node_input_features(hier, s_new, desc[perm]), s_new, hier)
        assert torch.allclose(h_new, h_old[perm], atol=1e-5)


def test_node_input_feature_identities(fault_taxonomy):
    k = fault_taxonomy.k
    s = taxonomy_structure(fault_taxonomy)
    desc = torch.randn(k, 8)
    plain = HierarchyEncoder(k, 8, num_heads=2, degree_encoding=False)
    with torch.no_grad():
        plain.label_embedding.zero_()
    assert torch.equal(node_input_features(plain, s, desc), desc)
    plain_labels = HierarchyEncoder(k, 8, num_heads=2, degree_encoding=False)
    assert torch.equal(node_input_features(plain_labels, s, None), plain_labels.label_embedding)
    full = HierarchyEncoder(k, 8, num_heads=2, degree_encoding=True)
    batched = node_input_features(full, s, desc)
    for j in range(k):
        row = (full.label_embedding[j] + desc[j]
               + full.in_degree_embedding.weight[int(s.in_degree[j])]
               + full.out_degree_embedding.weight[int(s.out_degree[j])])
        assert torch.allclose(batched[j], row, atol=1e-6)


def test_outputs_finite_over_random_parameters():
    tax = random_forest(random.Random(2), 12)
    s = taxonomy_structure(tax)
    hier = HierarchyEncoder(tax.k, 8, num_layers=2, num_heads=2, dropout=0.0).eval()
    g = torch.Generator().manual_seed(0)
    with torch.no_grad():
        for trial in range(1000):
            for p in hier.parameters():
                p.copy_(torch.rand(p.shape, generator=g) * 2 - 1)
            x = torch.rand(tax.k, 8, generator=g) * 2 - 1
            h = graphormer_encode(node_input_features(hier, s, x), s, hier)
            assert bool(torch.isfinite(h).all()), trial
