"""Directed weighted communication graphs and their spectral utilities.

Nodes are numbered 1..N.  An edge ``(j, i, w)`` means node ``i`` receives
node ``j``'s state with coupling weight ``w > 0``.  The Laplacian is the
in-degree matrix minus the adjacency matrix, so every row sums to zero
and, for a strongly connected graph, the zero eigenvalue is simple with
a strictly positive left eigenvector ``omega`` (normalized to sum 1).
``omega`` weights the consensus value the controllers steer to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    pass


class SelfLoopError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class NonPositiveWeightError(GraphError):
    pass


class NodeIndexError(GraphError):
    pass


class NotStronglyConnectedError(GraphError):
    pass


@dataclass(frozen=True)
class DirectedGraph:
    """Validated weighted digraph; construct via :func:`build_graph`."""

    n: int
    edges: tuple[tuple[int, int, float], ...]  # (source j, target i, weight)

    def in_neighbors(self, i: int) -> list[tuple[int, float]]:
        """Nodes j whose state node i receives, with weights (1-based)."""
        return [(j, w) for (j, tgt, w) in self.edges if tgt == i]

    def adjacency(self) -> np.ndarray:
        """A[i-1, j-1] = weight of edge (j, i), 0 where absent."""
        a = np.zeros((self.n, self.n))
        for j, i, w in self.edges:
            a[i - 1, j - 1] = w
        return a


@dataclass(frozen=True)
class Laplacian:
    matrix: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class LeftEigenvector:
    omega: np.ndarray


def build_graph(n: int, edges) -> DirectedGraph:
    """Validate and freeze a digraph given as ``(source, target, weight)`` triples."""
    if n < 2:
        raise GraphError(f"need at least 2 nodes, got {n}")
    seen = set()
    clean = []
    for j, i, w in edges:
        if not (1 <= j <= n) or not (1 <= i <= n):
            raise NodeIndexError(f"edge ({j}, {i}) out of range 1..{n}")
        if j == i:
            raise SelfLoopError(f"self-loop at node {i}")
        if not (w > 0) or not math.isfinite(w):
            raise NonPositiveWeightError(f"edge ({j}, {i}) has non-positive weight {w}")
        if (j, i) in seen:
            raise DuplicateEdgeError(f"duplicate edge ({j}, {i})")
        seen.add((j, i))
        clean.append((int(j), int(i), float(w)))
    return DirectedGraph(int(n), tuple(clean))


def laplacian(g: DirectedGraph) -> Laplacian:
    """L = D - A with D = diag of in-degrees; rows sum to zero."""
    a = g.adjacency()
    lap = -a
    lap += 0.0  # clear the negative zeros -A leaves where A is empty
    lap[np.arange(g.n), np.arange(g.n)] = a.sum(axis=1)
    return Laplacian(lap)


def is_strongly_connected(g: DirectedGraph) -> bool:
    """True iff a directed path exists between every ordered node pair.

    Iterative Tarjan; strong connectivity == exactly one SCC.
    """
    succ: list[list[int]] = [[] for _ in range(g.n)]
    for j, i, _ in g.edges:
        succ[j - 1].append(i - 1)

    index = [-1] * g.n
    lowlink = [0] * g.n
    on_stack = [False] * g.n
    stack: list[int] = []
    counter = 0
    n_components = 0

    for root in range(g.n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = lowlink[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            for k in range(pi, len(succ[v])):
                w = succ[v][k]
                if index[w] == -1:
                    work[-1] = (v, k + 1)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    lowlink[v] = min(lowlink[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[v])
            if lowlink[v] == index[v]:
                n_components += 1
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    if w == v:
                        break
    return n_components == 1


def left_eigenvector(lap: Laplacian) -> LeftEigenvector:
    """Positive left null vector of L, normalized to sum 1.

    Solves the null space of L^T by SVD (rank-revealing); rejects inputs
    whose zero eigenvalue is not simple or whose null vector is not
    strictly one-signed, both of which indicate a graph that is not
    strongly connected.
    """
    lmat = np.asarray(lap.matrix, dtype=float)
    n = lmat.shape[0]
    _, sigma, vh = np.linalg.svd(lmat.T)
    scale = max(sigma[0], 1.0)
    if n >= 2 and sigma[-2] <= 1e-12 * scale:
        raise NotStronglyConnectedError("zero eigenvalue of L is not simple")
    omega = vh[-1]
    total = omega.sum()
    if abs(total) < 1e-12:
        raise NotStronglyConnectedError("left null vector sums to zero; graph is not strongly connected")
    omega = omega / total
    if omega.min() <= 1e-12:
        raise NotStronglyConnectedError("left null vector is not strictly positive")
    resid = np.abs(omega @ lmat).max()
    lnorm = np.abs(lmat).max()
    if resid > 1e-9 * max(lnorm, 1.0):
        raise GraphError(f"left eigenvector residual {resid:.3e} too large")
    return LeftEigenvector(omega)


def matrix_exponential(m: np.ndarray, t: float) -> np.ndarray:
    """e^{M t} by scaling-and-squaring of the truncated Taylor series.

    Sized for the small dense matrices used here; series is truncated at
    machine precision after scaling ||Mt|| below 1/2.
    """
    a = np.asarray(m, dtype=float) * t
    if not np.isfinite(a).all():
        raise ValueError("non-finite entries in M*t")
    if t < 0:
        raise ValueError("t must be >= 0")
    n = a.shape[0]
    norm = np.abs(a).sum(axis=1).max() if n else 0.0
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    b = a / (2.0 ** squarings)
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 40):
        term = term @ b / k
        result = result + term
        if np.abs(term).max() <= 1e-18 * np.abs(result).max():
            break
    for _ in range(squarings):
        result = result @ result
    return result


def predict_consensus(omega: LeftEigenvector, xbar) -> float:
    """Weighted average omega . xbar that the agents agree on."""
    xbar = np.asarray(xbar, dtype=float)
    if xbar.shape != omega.omega.shape:
        raise ValueError(f"dimension mismatch: omega has {omega.omega.shape[0]} entries, xbar has {xbar.shape}")
    return float(omega.omega @ xbar)
