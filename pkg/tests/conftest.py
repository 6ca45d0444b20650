import numpy as np
import pytest

from piconsensus.graph import DirectedGraph, build_graph, laplacian


def weighted_four_cycle() -> DirectedGraph:
    """The shipped 4-node topology: a weighted directed cycle whose
    Laplacian has left null vector (2, 2, 2, 3)/9."""
    return build_graph(4, [(1, 2, 3.0), (2, 3, 3.0), (3, 4, 2.0), (4, 1, 3.0)])


def random_scc_graph(rng: np.random.Generator, max_n: int = 8, min_gap: float | None = None):
    """Random strongly connected digraph with dyadic weights in [0.5, 2].

    Strong connectivity comes from a random Hamiltonian cycle; extra edges
    are sprinkled on top.  Dyadic weights (multiples of 1/64) keep all
    in-degree sums exactly representable, so row-sum identities hold in
    exact float arithmetic.  With ``min_gap`` set, graphs are resampled
    until every nonzero Laplacian eigenvalue has real part >= min_gap,
    which makes finite-time convergence of exp(-L t) observable.
    """
    while True:
        n = int(rng.integers(2, max_n + 1))
        order = rng.permutation(n)
        pairs = {(int(order[k]) + 1, int(order[(k + 1) % n]) + 1) for k in range(n)}
        for j in range(1, n + 1):
            for i in range(1, n + 1):
                if i != j and rng.random() < 0.35:
                    pairs.add((j, i))
        edges = [(j, i, float(rng.integers(32, 129)) / 64.0) for (j, i) in sorted(pairs)]
        g = build_graph(n, edges)
        if min_gap is not None:
            eigs = np.linalg.eigvals(laplacian(g).matrix)
            nonzero = eigs[np.abs(eigs) > 1e-9]
            if len(nonzero) != n - 1 or nonzero.real.min() < min_gap:
                continue
        return g


@pytest.fixture
def four_cycle():
    return weighted_four_cycle()
