"""Small graph builders shared by the GAE and indicator tests."""

import numpy as np

from gaevol.corrnet import MarketGraph


def make_graph(adjacency, features, day="2021-02-01"):
    a = np.asarray(adjacency, dtype=float)
    return MarketGraph(tuple(f"T{i}" for i in range(len(a))), np.datetime64(day), 20, 0.7,
                       a, np.asarray(features, dtype=float))


def two_cliques(size=10, n_features=6, noise=0.1, seed=0, day="2021-02-01"):
    """Two disjoint cliques; features are the block one-hot plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    n = 2 * size
    block = np.repeat([0, 1], size)
    a = (block[:, None] == block[None, :]).astype(float)
    np.fill_diagonal(a, 0)
    x = np.zeros((n, n_features))
    x[np.arange(n), block] = 1.0
    x += noise * rng.normal(size=x.shape)
    return make_graph(a, x, day)


def erdos_renyi(n=60, p=0.2, n_features=6, seed=0, day="2021-02-01"):
    rng = np.random.default_rng(seed)
    a = np.triu((rng.random((n, n)) < p).astype(float), 1)
    return make_graph(a + a.T, rng.normal(size=(n, n_features)), day)
