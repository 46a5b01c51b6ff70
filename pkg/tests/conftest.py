import numpy as np
import pytest

from netcore import Network
from network_generator import GeneratorConfig, NetworkGenerator, PropertyConfig


def make_chain(n, weight=1.0, length=1.0, labels=None):
    """n nodes evenly spaced on the x axis of [0, length] x [0, 1]"""
    coords = np.column_stack([np.linspace(0.0, length, n), np.zeros(n)])
    return Network.from_arrays([length, 1.0], coords, head=np.arange(n - 1), tail=np.arange(1, n),
                               weight=np.full(n - 1, weight), labels=labels)


def make_centered_lattice(n):
    """n x n unit-coefficient lattice with nodes at (i + 0.5) / n; 'bottom'/'top' label the outer rows"""
    x = (np.arange(n) + 0.5) / n
    xx, yy = np.meshgrid(x, x, indexing="ij")
    index = np.arange(n * n).reshape(n, n)
    head = np.concatenate([index[:-1, :].ravel(), index[:, :-1].ravel()])
    tail = np.concatenate([index[1:, :].ravel(), index[:, 1:].ravel()])
    return Network.from_arrays([1.0, 1.0], np.column_stack([xx.ravel(), yy.ravel()]), head=head, tail=tail,
                               labels={"bottom": index[:, 0], "top": index[:, -1]})


def make_random_graph(n, extra_edges, seed):
    """Connected random graph: a random spanning path plus extra distinct edges, weights in [0.5, 2]"""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    pairs = {tuple(sorted((int(a), int(b)))) for a, b in zip(order[:-1], order[1:])}
    while len(pairs) < n - 1 + extra_edges:
        a, b = rng.choice(n, size=2, replace=False)
        pairs.add(tuple(sorted((int(a), int(b)))))
    pairs = np.array(sorted(pairs))
    return Network.from_arrays([1.0, 1.0], rng.random((n, 2)), head=pairs[:, 0], tail=pairs[:, 1],
                               capacity=rng.uniform(0.5, 2.0, n), weight=rng.uniform(0.5, 2.0, len(pairs)))


@pytest.fixture
def chain():
    return make_chain


@pytest.fixture
def centered_lattice():
    return make_centered_lattice


@pytest.fixture
def random_graph():
    return make_random_graph(10, 12, seed=7)


@pytest.fixture
def poiseuille_lattice():
    """8 x 8 regular lattice with Poiseuille coefficients and face labels"""
    generator = NetworkGenerator(GeneratorConfig("structured_regular", (8, 8), seed=0), PropertyConfig(seed=1))
    return generator.generate()


@pytest.fixture
def irregular_lattice():
    generator = NetworkGenerator(GeneratorConfig("structured_irregular", (14, 14), seed=3, removal_prob=0.2),
                                 PropertyConfig(seed=3))
    return generator.generate()
