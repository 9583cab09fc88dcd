"""Jacobi iteration for the Gaussian ML normal equations.

Each vertex replaces its value with the mean of what its neighbours predict
for it, ``x_k <- mean over edges (x_l + r_(l,k))``.  A fixed point solves
``L x = D r``.  Vertex values are only identified up to a constant, so
convergence is judged on edge increments ``D^T (x_new - x_old)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GraphError
from .gaussian import EstimateResult, _as_edge_vector, _require_connected
from .graph import Graph, IncidenceSet, build_incidence


@dataclass(frozen=True)
class JacobiState:
    x: np.ndarray
    iteration: int = 0
    last_delta: float = np.inf


@dataclass(frozen=True)
class ConvergenceDiagnostics:
    spectral_radius: float
    eigenvalues: np.ndarray
    bipartite_hazard: bool


def signed_edge_sums(graph: Graph, r: np.ndarray) -> np.ndarray:
    """``D r``: per vertex, incoming edge values minus outgoing ones."""
    out = np.zeros((graph.n,) + r.shape[1:])
    np.add.at(out, graph.targets, r)
    np.subtract.at(out, graph.sources, r)
    return out


def jacobi_step(graph: Graph, r, state: JacobiState, damping: float = 1.0) -> JacobiState:
    """One synchronous Jacobi sweep, optionally damped.

    ``damping`` is the weight on the new iterate: 1 is plain Jacobi, 0.5
    suppresses the period-2 mode on bipartite graphs.
    """
    deg = graph.degrees
    if np.any(deg == 0):
        raise GraphError("isolated vertex: every vertex needs at least one edge")
    r = _as_edge_vector(r, graph.m)
    x = np.asarray(state.x, dtype=float)
    s, t = graph.sources, graph.targets
    # neighbour predictions: the target sees x_s + r, the source sees x_t - r
    acc = np.zeros_like(x)
    np.add.at(acc, t, x[s] + r)
    np.add.at(acc, s, x[t] - r)
    new = acc / deg.reshape((-1,) + (1,) * (x.ndim - 1))
    if damping != 1.0:
        new = (1.0 - damping) * x + damping * new
    delta = float(np.max(np.abs(new[t] - new[s] - (x[t] - x[s])), initial=0.0))
    return JacobiState(x=new, iteration=state.iteration + 1, last_delta=delta)


def jacobi_run(
    graph: Graph,
    r,
    tol: float = 1e-9,
    max_iter: int | None = None,
    *,
    damping: float | None = None,
    ref_vertex=None,
    x0=None,
    incidence: IncidenceSet | None = None,
) -> EstimateResult:
    """Iterate :func:`jacobi_step` until edge increments fall below ``tol``.

    The stop also requires the geometric tail estimate
    ``delta q / (1 - q)``, with ``q`` the ratio of successive increments, to
    be below ``tol``, so slow mixing graphs are not stopped early.

    With ``damping=None`` plain Jacobi is used unless the graph is
    bipartite, where the iteration has a persistent -1 mode and 0.5 is
    used instead.  Works for scalar ``(m,)`` and vector ``(m, d)`` edge data;
    the vector case applies the recursion coordinate-wise.  Non-convergence
    is reported through ``converged=False`` rather than raised.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _require_connected(graph)
    r = _as_edge_vector(r, graph.m)
    if max_iter is None:
        max_iter = 10 * graph.n**2
    if damping is None:
        damping = 0.5 if graph.is_bipartite() else 1.0
    incidence = incidence or build_incidence(graph, ref_vertex)
    x = np.zeros((graph.n,) + r.shape[1:]) if x0 is None else np.array(x0, dtype=float)
    state = JacobiState(x=x)
    # floor below which increments are rounding noise
    floor = 1e-14 * (1.0 + float(np.max(np.abs(r), initial=0.0)))
    converged = False
    prev = np.inf
    while state.iteration < max_iter:
        state = jacobi_step(graph, r, state, damping)
        delta = state.last_delta
        if delta < tol:
            # geometric tail bound on the remaining edge-space distance
            q = delta / prev if prev > 0 else 0.0
            if delta <= floor or (q < 1.0 and delta * q / (1.0 - q) < tol):
                converged = True
                break
        prev = delta
    x = state.x - state.x[incidence.ref_index]
    x_hat = np.delete(x, incidence.ref_index, axis=0)
    omega = incidence.D_W.T @ x_hat
    Dr = signed_edge_sums(graph, r)
    kirchhoff = float(np.max(np.abs(incidence.L @ x - Dr), initial=0.0))
    return EstimateResult(
        x_hat=x_hat,
        omega_hat=omega,
        residual=r - omega,
        ref_index=incidence.ref_index,
        iterations=state.iteration,
        converged=converged,
        diagnostics={"last_delta": state.last_delta, "damping": damping, "normal_eq_residual": kirchhoff},
    )


def convergence_diagnostics(graph: Graph) -> ConvergenceDiagnostics:
    """Spectrum of the Jacobi iteration matrix ``N^{-1} A``.

    The hazard flag marks an eigenvalue at -1 (bipartite graphs), where
    undamped Jacobi oscillates.
    """
    inc = build_incidence(graph)
    d = np.sqrt(np.diag(inc.N))
    if np.any(d == 0):
        raise GraphError("isolated vertex")
    sym = inc.A / np.outer(d, d)
    ev = np.linalg.eigvalsh(sym)
    return ConvergenceDiagnostics(
        spectral_radius=float(np.max(np.abs(ev))),
        eigenvalues=ev,
        bipartite_hazard=bool(abs(ev[0] + 1.0) < 1e-9),
    )
