import pytest
import torch

from faultprof.config import preset_config
from faultprof.data import make_batch, make_examples
from faultprof.ingest import build_incident_context
from faultprof.synth import SynthSpec, generate
from faultprof.taxonomy import FaultNode, build_taxonomy, description_texts
from faultprof.text_encoder import build_vocab


def tiny_config(**overrides):
    base = dict(d_model=16, num_layers=1, num_heads=2, graph_layers=1, graph_heads=2,
                max_len=64, batch_size=8, epochs=2, vocab_size=600)
    base.update(overrides)
    return preset_config("desk", **base)


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SynthSpec(depth=3, branching=2, roots=2, tickets=60, noise_tokens=6,
                              noise_vocab=40, seed=3))


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    corpus = [build_incident_context(t).text for t in small_corpus.train]
    return build_vocab(corpus + description_texts(small_corpus.taxonomy), 600)


@pytest.fixture(scope="session")
def small_examples(small_corpus, small_vocab):
    tax = small_corpus.taxonomy
    train = make_examples(small_corpus.train, tax, small_vocab, 64, require_gold=True)
    dev = make_examples(small_corpus.dev, tax, small_vocab, 64)
    return train, dev


@pytest.fixture
def small_batch(small_corpus, small_examples):
    return make_batch(small_examples[0][:3], small_corpus.taxonomy.k)


@pytest.fixture(scope="session")
def trained(small_corpus, small_vocab, small_examples):
    from faultprof.trainer import train

    torch.set_num_threads(1)
    train_set, dev_set = small_examples
    return train(tiny_config(), train_set, dev_set, small_corpus.taxonomy, small_vocab)


@pytest.fixture
def fault_taxonomy():
    """Small hand-built forest with one five-level branch."""
    nodes = [
        FaultNode("customer_node", "Customer Node", 1, None, "faults on customer hosts"),
        FaultNode("os", "Operating System", 2, "customer_node", "operating system faults"),
        FaultNode("sysres", "System Resources", 3, "os", ""),
        FaultNode("cpu_overload", "CPU Overload", 4, "sysres", "",
                  ("single CPU utilization exceeding 90%",), ("switchover",)),
        FaultNode("mem_leak", "Memory Leak", 4, "sysres", ""),
        FaultNode("leak_slab", "Slab Leak", 5, "mem_leak", ""),
        FaultNode("network", "Network", 1, None, "network faults"),
        FaultNode("link_down", "Link Down", 2, "network", ""),
    ]
    return build_taxonomy(nodes)
