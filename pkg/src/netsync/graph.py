"""Directed multigraphs and their incidence algebra.

Everything downstream (estimators, Fisher information, simulators) indexes
vertices and edges by the declaration order kept in :class:`Graph`.  The
incidence matrix follows the boundary convention ``D[target, e] = +1`` and
``D[source, e] = -1``, so ``D.T @ x`` gives ``x[target] - x[source]`` per edge.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import DisconnectedGraphError, GraphError

# subset enumeration bound for the brute-force tree enumerator
MAX_ENUMERATION_EDGES = 24


@dataclass(frozen=True)
class Edge:
    id: str
    source: Hashable
    target: Hashable


@dataclass(frozen=True)
class Graph:
    """Directed multigraph with a fixed vertex and edge order.

    Parallel edges are allowed, self-loops are not.
    """

    vertices: tuple
    edges: tuple[Edge, ...]
    _vindex: dict = field(init=False, repr=False, compare=False)

    def __init__(self, vertices: Iterable, edges: Iterable):
        vertices = tuple(vertices)
        if len(set(vertices)) != len(vertices):
            raise GraphError("duplicate vertex ids")
        vindex = {v: i for i, v in enumerate(vertices)}
        norm = []
        for k, e in enumerate(edges):
            if not isinstance(e, Edge):
                if len(e) == 2:
                    e = Edge(f"e{k + 1}", e[0], e[1])
                else:
                    e = Edge(str(e[0]), e[1], e[2])
            if e.source not in vindex or e.target not in vindex:
                raise GraphError(f"edge {e.id!r} references an unknown vertex")
            if e.source == e.target:
                raise GraphError(f"edge {e.id!r} is a self-loop")
            norm.append(e)
        if len({e.id for e in norm}) != len(norm):
            raise GraphError("duplicate edge ids")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "edges", tuple(norm))
        object.__setattr__(self, "_vindex", vindex)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def m(self) -> int:
        return len(self.edges)

    def index(self, vertex) -> int:
        try:
            return self._vindex[vertex]
        except KeyError:
            raise GraphError(f"unknown vertex {vertex!r}") from None

    def edge_index(self, edge_id: str) -> int:
        for k, e in enumerate(self.edges):
            if e.id == edge_id:
                return k
        raise GraphError(f"unknown edge {edge_id!r}")

    @cached_property
    def sources(self) -> np.ndarray:
        return np.array([self._vindex[e.source] for e in self.edges], dtype=np.intp)

    @cached_property
    def targets(self) -> np.ndarray:
        return np.array([self._vindex[e.target] for e in self.edges], dtype=np.intp)

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.intp)
        np.add.at(deg, self.sources, 1)
        np.add.at(deg, self.targets, 1)
        return deg

    @cached_property
    def incident(self) -> tuple[tuple[tuple[int, int, int], ...], ...]:
        """Per vertex: ``(edge index, neighbour index, sign)`` with sign +1 when
        the vertex is the edge target."""
        inc: list[list[tuple[int, int, int]]] = [[] for _ in range(self.n)]
        for k, (s, t) in enumerate(zip(self.sources, self.targets)):
            inc[t].append((k, int(s), 1))
            inc[s].append((k, int(t), -1))
        return tuple(tuple(row) for row in inc)

    def components(self) -> list[list[int]]:
        seen = [False] * self.n
        comps = []
        for start in range(self.n):
            if seen[start]:
                continue
            seen[start] = True
            comp, queue = [], deque([start])
            while queue:
                v = queue.popleft()
                comp.append(v)
                for _, u, _ in self.incident[v]:
                    if not seen[u]:
                        seen[u] = True
                        queue.append(u)
            comps.append(sorted(comp))
        return comps

    def is_connected(self) -> bool:
        return self.n > 0 and len(self.components()) == 1

    def is_bipartite(self) -> bool:
        color = [-1] * self.n
        for start in range(self.n):
            if color[start] >= 0:
                continue
            color[start] = 0
            queue = deque([start])
            while queue:
                v = queue.popleft()
                for _, u, _ in self.incident[v]:
                    if color[u] < 0:
                        color[u] = 1 - color[v]
                        queue.append(u)
                    elif color[u] == color[v]:
                        return False
        return True

    def with_edge(self, source, target, edge_id: str | None = None) -> "Graph":
        if edge_id is None:
            taken = {e.id for e in self.edges}
            k = self.m + 1
            while f"e{k}" in taken:
                k += 1
            edge_id = f"e{k}"
        return Graph(self.vertices, self.edges + (Edge(edge_id, source, target),))

    def to_dict(self) -> dict:
        return {
            "vertices": list(self.vertices),
            "edges": [{"id": e.id, "source": e.source, "target": e.target} for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Graph":
        try:
            vertices = data["vertices"]
            edges = [Edge(str(e["id"]), e["source"], e["target"]) for e in data["edges"]]
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed graph document: {exc}") from None
        return cls(vertices, edges)


def load_graph(path: str | Path) -> Graph:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphError(f"{path}: {exc}") from None
    return Graph.from_dict(data)


def save_graph(graph: Graph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class IncidenceSet:
    D: np.ndarray
    D_W: np.ndarray
    A: np.ndarray
    N: np.ndarray
    L: np.ndarray
    ref_vertex: Hashable
    ref_index: int

    @property
    def L_W(self) -> np.ndarray:
        keep = np.arange(self.L.shape[0]) != self.ref_index
        return self.L[np.ix_(keep, keep)]

    def D_WS(self, tree: Sequence[int]) -> np.ndarray:
        """Columns of ``D_W`` restricted to the edges of ``tree``."""
        return self.D_W[:, list(tree)]


def incidence_matrix(graph: Graph) -> np.ndarray:
    D = np.zeros((graph.n, graph.m))
    cols = np.arange(graph.m)
    D[graph.targets, cols] = 1.0
    D[graph.sources, cols] = -1.0
    return D


def build_incidence(graph: Graph, ref_vertex=None) -> IncidenceSet:
    if graph.n == 0:
        raise GraphError("empty graph")
    if ref_vertex is None:
        ref_vertex = graph.vertices[0]
    ref = graph.index(ref_vertex)
    D = incidence_matrix(graph)
    A = np.zeros((graph.n, graph.n))
    np.add.at(A, (graph.sources, graph.targets), 1.0)
    np.add.at(A, (graph.targets, graph.sources), 1.0)
    N = np.diag(graph.degrees.astype(float))
    D_W = np.delete(D, ref, axis=0)
    return IncidenceSet(D=D, D_W=D_W, A=A, N=N, L=D @ D.T, ref_vertex=ref_vertex, ref_index=ref)


def _reduced_laplacian(graph: Graph, weights=None, ref: int = 0) -> np.ndarray:
    D = incidence_matrix(graph)
    D_W = np.delete(D, ref, axis=0)
    if weights is None:
        return D_W @ D_W.T
    return (D_W * weights) @ D_W.T


def log_spanning_tree_count(graph: Graph) -> float:
    """Natural log of the spanning-tree count (``-inf`` when disconnected)."""
    if graph.n == 1:
        return 0.0
    if not graph.is_connected():
        return -math.inf
    sign, logdet = np.linalg.slogdet(_reduced_laplacian(graph))
    return float(logdet) if sign > 0 else -math.inf


def spanning_tree_count(graph: Graph) -> float:
    """Number of spanning trees via the matrix-tree theorem.

    Rounded to the nearest integer while the count is exactly representable
    in a double; larger counts are returned unrounded (see
    :func:`log_spanning_tree_count` for the log-space value).
    """
    logt = log_spanning_tree_count(graph)
    if logt == -math.inf:
        return 0.0
    t = math.exp(logt)
    if t < 2.0**53:
        return float(round(t))
    return t


class _UnionFind:
    __slots__ = ("parent",)

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a


def enumerate_spanning_trees(graph: Graph, cap: int = 100_000) -> list[tuple[int, ...]]:
    """All spanning trees as sorted tuples of edge indices, by backtracking.

    Brute-force oracle for the matrix-tree identities; limited to
    ``m <= 24`` edges and at most ``cap`` trees.
    """
    n, m = graph.n, graph.m
    if m > MAX_ENUMERATION_EDGES:
        raise GraphError(f"enumeration limited to {MAX_ENUMERATION_EDGES} edges, got {m}")
    if n == 1:
        return [()]
    need = n - 1
    src = [int(s) for s in graph.sources]
    dst = [int(t) for t in graph.targets]
    trees: list[tuple[int, ...]] = []
    chosen: list[int] = []

    def extend(start: int, parent: list[int]) -> None:
        if len(chosen) == need:
            trees.append(tuple(chosen))
            if len(trees) > cap:
                raise GraphError(f"more than {cap} spanning trees")
            return
        for k in range(start, m - (need - len(chosen)) + 1):
            uf = _UnionFind(0)
            uf.parent = parent
            a, b = uf.find(src[k]), uf.find(dst[k])
            if a == b:
                continue
            child = list(parent)
            child[a] = b
            chosen.append(k)
            extend(k + 1, child)
            chosen.pop()

    extend(0, list(range(n)))
    return trees


def weighted_tree_sum(graph: Graph, edge_weights) -> float:
    """Sum over spanning trees of the product of edge weights, computed as
    ``det(D_W W D_W^T)``."""
    w = np.asarray(edge_weights, dtype=float)
    if w.shape != (graph.m,):
        raise ValueError(f"expected {graph.m} edge weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("edge weights must be finite and positive")
    if graph.n == 1:
        return 1.0
    if not graph.is_connected():
        return 0.0
    M = _reduced_laplacian(graph, w)
    c, lower = scipy.linalg.cho_factor(M)
    return float(np.prod(np.diag(c)) ** 2)


def brute_force_tree_sum(graph: Graph, edge_weights, cap: int = 100_000) -> float:
    w = np.asarray(edge_weights, dtype=float)
    return float(sum(np.prod(w[list(S)]) for S in enumerate_spanning_trees(graph, cap)))


@dataclass(frozen=True)
class CycleBasis:
    basis: tuple[np.ndarray, ...]

    @property
    def dimension(self) -> int:
        return len(self.basis)

    def as_matrix(self, m: int) -> np.ndarray:
        """Basis vectors as rows of a ``(dimension, m)`` integer array."""
        if not self.basis:
            return np.zeros((0, m), dtype=np.int64)
        return np.vstack(self.basis)


def bfs_tree(graph: Graph, root: int = 0) -> tuple[list[int], list[int]]:
    """Breadth-first spanning tree: per-vertex parent and parent edge (-1 at root)."""
    parent = [-1] * graph.n
    pedge = [-1] * graph.n
    seen = [False] * graph.n
    seen[root] = True
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for k, u, _ in graph.incident[v]:
            if not seen[u]:
                seen[u] = True
                parent[u] = v
                pedge[u] = k
                queue.append(u)
    if not all(seen):
        raise DisconnectedGraphError("graph is not connected")
    return parent, pedge


def cycle_basis(graph: Graph, ref_vertex=None) -> CycleBasis:
    """Fundamental cycles of the BFS tree rooted at the reference vertex.

    Each basis vector closes one non-tree edge: +1 on that edge, and +-1 on
    the tree path back, so that ``D @ z == 0``.
    """
    root = 0 if ref_vertex is None else graph.index(ref_vertex)
    parent, pedge = bfs_tree(graph, root)
    depth = [0] * graph.n
    for v in range(graph.n):
        u = v
        while parent[u] >= 0:
            u = parent[u]
            depth[v] += 1
    tree_edges = {k for k in pedge if k >= 0}
    src, dst = graph.sources, graph.targets
    basis = []
    for k in range(graph.m):
        if k in tree_edges:
            continue
        z = np.zeros(graph.m, dtype=np.int64)
        z[k] = 1
        # walk from target back to source along the tree: target -> lca -> source
        u, v = int(dst[k]), int(src[k])
        up_from_target, up_from_source = [], []
        while u != v:
            if depth[u] >= depth[v]:
                up_from_target.append(u)
                u = parent[u]
            else:
                up_from_source.append(v)
                v = parent[v]
        for w in up_from_target:
            # traversing tree edge from w toward its parent
            e = pedge[w]
            z[e] += 1 if int(src[e]) == w else -1
        for w in up_from_source:
            # traversing tree edge from the parent down to w
            e = pedge[w]
            z[e] += 1 if int(dst[e]) == w else -1
        basis.append(z)
    return CycleBasis(tuple(basis))


def cocycle_projector(incidence: IncidenceSet) -> np.ndarray:
    """Orthogonal projector onto the cocycle space, ``D_W^T L_W^{-1} D_W``."""
    D_W = incidence.D_W
    if D_W.shape[0] == 0:
        return np.zeros((D_W.shape[1], D_W.shape[1]))
    cf = spd_factor(D_W @ D_W.T)
    P = D_W.T @ scipy.linalg.cho_solve(cf, D_W)
    return 0.5 * (P + P.T)


def spd_factor(M: np.ndarray, what: str = "reduced Laplacian"):
    """Cholesky factor with the degeneracy threshold used by every solver.

    Raises :class:`DisconnectedGraphError` when a pivot falls below
    ``1e-12`` times the largest diagonal entry.
    """
    M = np.asarray(M)
    if M.size == 0:
        return scipy.linalg.cho_factor(np.eye(0))
    scale = float(np.max(np.abs(np.diag(M))))
    try:
        c, lower = scipy.linalg.cho_factor(M, check_finite=True)
    except np.linalg.LinAlgError:
        raise DisconnectedGraphError(f"{what} is singular: disconnected or degenerate") from None
    if np.min(np.diag(c)) ** 2 < 1e-12 * scale:
        raise DisconnectedGraphError(f"{what} is singular: disconnected or degenerate")
    return c, lower


# -- generators ---------------------------------------------------------------


def _names(n: int) -> list[str]:
    return [f"v{i + 1}" for i in range(n)]


def path_graph(n: int) -> Graph:
    v = _names(n)
    return Graph(v, [(v[i], v[i + 1]) for i in range(n - 1)])


def ring_graph(n: int) -> Graph:
    v = _names(n)
    return Graph(v, [(v[i], v[(i + 1) % n]) for i in range(n)])


def complete_graph(n: int) -> Graph:
    v = _names(n)
    return Graph(v, [(v[i], v[j]) for i, j in itertools.combinations(range(n), 2)])


def star_graph(leaves: int) -> Graph:
    v = _names(leaves + 1)
    return Graph(v, [(v[0], v[i]) for i in range(1, leaves + 1)])


def triangle() -> Graph:
    """The 3-cycle used throughout the docs: v1->v2, v2->v3, v1->v3."""
    return Graph(["v1", "v2", "v3"], [("v1", "v2"), ("v2", "v3"), ("v1", "v3")])


def random_tree_edges(rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    """Uniform random labelled tree on ``n`` vertices via a Pruefer sequence."""
    if n == 1:
        return []
    if n == 2:
        return [(0, 1)]
    seq = [int(a) for a in rng.integers(0, n, size=n - 2)]
    degree = [1] * n
    for a in seq:
        degree[a] += 1
    edges = []
    for a in seq:
        leaf = next(i for i in range(n) if degree[i] == 1)
        edges.append((leaf, a))
        degree[leaf] -= 1
        degree[a] -= 1
    u, w = [i for i in range(n) if degree[i] == 1]
    edges.append((u, w))
    return edges


def random_connected_graph(
    rng: np.random.Generator, n: int, extra_edges: int, *, allow_parallel: bool = False
) -> Graph:
    """Uniform random spanning tree plus ``extra_edges`` uniform extra edges.

    Edge orientations are random.  Without ``allow_parallel`` the extra edges
    avoid existing vertex pairs, and ``extra_edges`` must fit.
    """
    pairs = [tuple(sorted(e)) for e in random_tree_edges(rng, n)]
    present = set(pairs)
    if allow_parallel:
        for _ in range(extra_edges):
            a, b = rng.choice(n, size=2, replace=False)
            pairs.append((int(a), int(b)))
    else:
        free = [p for p in itertools.combinations(range(n), 2) if p not in present]
        if extra_edges > len(free):
            raise GraphError(f"cannot add {extra_edges} edges to a tree on {n} vertices")
        for i in rng.choice(len(free), size=extra_edges, replace=False):
            pairs.append(free[int(i)])
    flips = rng.random(len(pairs)) < 0.5
    v = _names(n)
    return Graph(v, [(v[b], v[a]) if f else (v[a], v[b]) for (a, b), f in zip(pairs, flips)])
