import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hoptrace.graph import RelationGraph, Vocab, build_from_triples


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_label_graph(rng, n=None, num_predicates=None, density=0.15):
    """Random label-form graph with ids already resolved."""
    n = n or int(rng.integers(4, 50))
    num_predicates = num_predicates or int(rng.integers(1, 6))
    names = [f"e{i}" for i in range(n)]
    pnames = [f"p{k}" for k in range(num_predicates)]
    # a ring through every entity first, so ids come out dense and ordered
    triples = [(names[i], pnames[0], names[(i + 1) % n]) for i in range(n)]
    for h in range(n):
        for t in range(n):
            if h != t and rng.random() < density:
                k = int(rng.integers(num_predicates))
                triples.append((names[h], pnames[k], names[t]))
    return build_from_triples(triples)


def random_text_graph(rng, n=None, num_rels=None):
    """Random text-form graph; each relation carries a tiny sentence."""
    n = n or int(rng.integers(4, 30))
    num_rels = num_rels or int(rng.integers(2, 4 * n))
    names = [f"e{i}" for i in range(n)]
    rels = []
    for _ in range(num_rels):
        h = int(rng.integers(n))
        t = int(rng.integers(n))
        while t == h and n > 1:
            t = int(rng.integers(n))
        rels.append((h, t, f"<sub> rel{int(rng.integers(5))} <obj> ."))
    texts = sorted({r[2] for r in rels})
    index = {s: i for i, s in enumerate(texts)}
    trels = [(h, t, index[s]) for h, t, s in rels]
    return RelationGraph(
        Vocab(names), Vocab(), [], texts, trels, form="text"
    )


@pytest.fixture
def chain_graph():
    """a -p0-> b -p1-> c -p0-> d: one forced path per hop count."""
    return build_from_triples([("a", "p0", "b"), ("b", "p1", "c"), ("c", "p0", "d")])
