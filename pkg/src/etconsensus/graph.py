"""Communication graphs, Laplacians and the spectral quantities the protocols rely on.

Node indices in the public constructors are 1-based, matching how scenarios are
written; everything stored on the objects is 0-based.  An edge ``(j, i)`` means
information flows from ``j`` to ``i``, i.e. ``j`` is a neighbor of ``i`` and
``a_ij`` is set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

UNDIRECTED_CONNECTED = "undirected-connected"
STRONGLY_CONNECTED = "strongly-connected"
LEADER_SPANNING_TREE = "leader-spanning-tree"
NONE = "none"


class GraphError(ValueError):
    """Invalid topology, or a topology outside the class an operation needs."""


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    n_nodes: int
    adjacency: np.ndarray
    undirected: bool = False
    laplacian: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        if a.shape != (self.n_nodes, self.n_nodes):
            raise GraphError(f"adjacency must be {self.n_nodes}x{self.n_nodes}, got {a.shape}")
        if np.any(np.diag(a) != 0):
            raise GraphError("self-loops are not allowed")
        if np.any(a < 0):
            raise GraphError("edge weights must be nonnegative")
        if self.undirected and not np.array_equal(a, a.T):
            raise GraphError("undirected graph needs a symmetric adjacency matrix")
        a.setflags(write=False)
        lap = np.diag(a.sum(axis=1)) - a
        lap.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "laplacian", lap)

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Edges as 1-based ``(source, target)`` pairs, sorted."""
        tgt, src = np.nonzero(self.adjacency)
        return sorted((int(j) + 1, int(i) + 1) for i, j in zip(tgt, src))

    def in_neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def out_neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[:, i])

    def degree(self, i: int) -> float:
        return float(self.laplacian[i, i])

    def fingerprint(self) -> str:
        return f"n={self.n_nodes};undirected={int(self.undirected)};edges={self.edges}"


def build_graph(
    edges: Iterable[Sequence[int]],
    n: int,
    undirected: bool = False,
    weights: Optional[Sequence[float]] = None,
) -> DirectedGraph:
    """Build a graph from 1-based ``(j, i)`` pairs (information flows j -> i).

    For ``undirected=True`` every pair is mirrored, so listing each edge once is
    enough.  Weights default to 1.
    """
    if n < 1:
        raise GraphError("graph needs at least one node")
    edges = [tuple(e) for e in edges]
    if weights is None:
        weights = [1.0] * len(edges)
    if len(weights) != len(edges):
        raise GraphError("one weight per edge required")
    a = np.zeros((n, n))
    for (j, i), w in zip(edges, weights):
        if len((j, i)) != 2:
            raise GraphError(f"edge {(j, i)} is not a pair")
        if not (1 <= j <= n and 1 <= i <= n):
            raise GraphError(f"edge {(j, i)} has a node outside 1..{n}")
        if i == j:
            raise GraphError(f"self-loop at node {i}")
        if w <= 0:
            raise GraphError(f"edge {(j, i)} has non-positive weight {w}")
        a[i - 1, j - 1] = w
        if undirected:
            a[j - 1, i - 1] = w
    return DirectedGraph(n, a, undirected)


def ring(n: int, undirected: bool = False) -> DirectedGraph:
    return build_graph([(k, k % n + 1) for k in range(1, n + 1)] if n > 1 else [], n, undirected)


def complete(n: int) -> DirectedGraph:
    return build_graph([(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)], n, True)


def star(n: int, center: int = 1, undirected: bool = False) -> DirectedGraph:
    return build_graph([(center, k) for k in range(1, n + 1) if k != center], n, undirected)


def chain(n: int, undirected: bool = False) -> DirectedGraph:
    return build_graph([(k, k + 1) for k in range(1, n)], n, undirected)


def _flow_matrix(graph: DirectedGraph) -> csr_matrix:
    # csgraph wants M[u, v] for an arc u -> v
    return csr_matrix(graph.adjacency.T)


def reachable_from(graph: DirectedGraph, root: int) -> np.ndarray:
    """0-based indices of nodes reachable from 0-based ``root`` (root included)."""
    order = breadth_first_order(_flow_matrix(graph), root, directed=True, return_predecessors=False)
    return np.sort(order)


def has_spanning_tree(graph: DirectedGraph, root: int) -> bool:
    """True if every node is reachable from the 1-based ``root``."""
    return len(reachable_from(graph, root - 1)) == graph.n_nodes


@dataclass(frozen=True)
class Classification:
    kind: str
    root: Optional[int] = None  # 1-based, only for leader-spanning-tree

    def __str__(self):
        return f"{self.kind}({self.root})" if self.root is not None else self.kind


def classify(graph: DirectedGraph) -> Classification:
    n_scc, _ = connected_components(_flow_matrix(graph), directed=True, connection="strong")
    if n_scc == 1:
        kind = UNDIRECTED_CONNECTED if graph.undirected else STRONGLY_CONNECTED
        return Classification(kind)
    if graph.undirected:
        return Classification(NONE)
    for root in range(1, graph.n_nodes + 1):
        if has_spanning_tree(graph, root):
            return Classification(LEADER_SPANNING_TREE, root)
    return Classification(NONE)


def is_strongly_connected(graph: DirectedGraph) -> bool:
    return classify(graph).kind in (UNDIRECTED_CONNECTED, STRONGLY_CONNECTED)


@dataclass(frozen=True, eq=False)
class SpectralData:
    left_eigenvector: np.ndarray
    R: np.ndarray
    symmetrized_laplacian: np.ndarray
    lambda2: float
    lambdaN: Optional[float] = None


def left_null_vector(laplacian: np.ndarray) -> np.ndarray:
    """Left zero eigenvector of a Laplacian, normalized to sum 1."""
    w, vecs = np.linalg.eig(laplacian.T)
    k = int(np.argmin(np.abs(w)))
    r = np.real(vecs[:, k])
    return r / r.sum()


def spectral_data(graph: DirectedGraph) -> SpectralData:
    cls = classify(graph)
    lap = graph.laplacian
    n = graph.n_nodes
    if cls.kind == UNDIRECTED_CONNECTED:
        eig = np.linalg.eigvalsh(lap)
        r = np.full(n, 1.0 / n)
        lam2 = float(eig[1]) if n > 1 else 0.0
        lamN = float(eig[-1])
    elif cls.kind == STRONGLY_CONNECTED:
        r = left_null_vector(lap)
        lamN = None
    else:
        raise GraphError(f"spectral data needs a strongly connected graph, got {cls}")
    if np.any(r <= 0):
        raise GraphError("left eigenvector is not strictly positive")
    R = np.diag(r)
    lhat = R @ lap + lap.T @ R
    lhat = 0.5 * (lhat + lhat.T)
    if cls.kind == STRONGLY_CONNECTED:
        eig_hat = np.linalg.eigvalsh(lhat)
        lam2 = float(eig_hat[1]) if n > 1 else 0.0
    return SpectralData(r, R, lhat, lam2, lamN)


def leader_partition(graph: DirectedGraph, leader: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(L2, L1)``: follower-to-leader column and the follower block.

    The leader must have no in-neighbors and reach every follower; ``L1`` is then
    a nonsingular M-matrix.
    """
    if leader != 1:
        raise GraphError("the leader must be agent 1")
    if graph.n_nodes < 2:
        raise GraphError("leader-follower needs at least one follower")
    if np.any(graph.adjacency[0] != 0):
        raise GraphError("the leader must not have in-neighbors")
    if not has_spanning_tree(graph, 1):
        raise GraphError("no directed spanning tree rooted at the leader")
    lap = graph.laplacian
    return lap[1:, :1].copy(), lap[1:, 1:].copy()
