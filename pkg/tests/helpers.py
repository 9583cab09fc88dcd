"""Independent oracles and hypothesis strategies shared by the tests."""
import itertools

import mpmath
import numpy as np
from hypothesis import strategies as st

from netsync.graph import Graph, random_connected_graph


def incidence_oracle(graph: Graph, ref: int = 0):
    """Incidence matrix assembled edge by edge, with the reference row dropped."""
    D = np.zeros((graph.n, graph.m))
    for k, e in enumerate(graph.edges):
        D[graph.vertices.index(e.target), k] += 1
        D[graph.vertices.index(e.source), k] -= 1
    return D, np.delete(D, ref, axis=0)


def trees_by_subsets(graph: Graph):
    """Spanning trees as the (n-1)-edge subsets with a nonsingular reduced incidence."""
    _, D_W = incidence_oracle(graph)
    out = []
    for S in itertools.combinations(range(graph.m), graph.n - 1):
        if abs(np.linalg.det(D_W[:, S])) > 0.5:
            out.append(S)
    return out


def cauchy_binet_oracle(graph: Graph, P: np.ndarray, d: int = 1) -> float:
    """``det(B P B^T)`` with ``B = I_d (x) D_W`` expanded over all column subsets."""
    _, D_W = incidence_oracle(graph)
    B = np.kron(np.eye(d), D_W)
    k = B.shape[0]
    # columns with nonzero maximal minors
    subsets = [S for S in itertools.combinations(range(B.shape[1]), k) if abs(np.linalg.det(B[:, S])) > 0.5]
    dets = {S: np.linalg.det(B[:, S]) for S in subsets}
    total = 0.0
    for S in subsets:
        for T in subsets:
            total += dets[S] * dets[T] * np.linalg.det(P[np.ix_(S, T)])
    return total


def mp_bessel_ratio(kappa: float) -> float:
    mpmath.mp.dps = 40
    return float(mpmath.besseli(1, kappa) / mpmath.besseli(0, kappa))


def random_spd(rng, k: int, cond: float = 10.0) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    ev = np.exp(rng.uniform(0, np.log(cond), k))
    M = (Q * ev) @ Q.T
    return 0.5 * (M + M.T)


@st.composite
def connected_graphs(draw, min_n=2, max_n=8, max_extra=6, parallel=False):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    free = n * (n - 1) // 2 - (n - 1)
    extra = draw(st.integers(0, max_extra if parallel else min(max_extra, free)))
    return random_connected_graph(rng, n, extra, allow_parallel=parallel)


def unit(angles) -> np.ndarray:
    return np.exp(1j * np.asarray(angles, dtype=float))
