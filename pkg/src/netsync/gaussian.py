"""Closed-form ML estimation and Fisher information for Gaussian edge noise.

Vertex offsets are reported in the reference gauge: the reference vertex is
pinned to zero and ``x_hat`` holds the remaining ``n - 1`` offsets in graph
order.  Vector-valued problems use coordinate-major ordering throughout,
i.e. the flattened edge vector is ``r.T.ravel()`` (coordinate outer, edge
inner), matching the ``I (x) D_W`` block structure.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DisconnectedGraphError, GraphError, NoiseModelError
from .graph import (
    Graph,
    IncidenceSet,
    enumerate_spanning_trees,
    incidence_matrix,
    spanning_tree_count,
    spd_factor,
    weighted_tree_sum,
)

# explicit tree enumeration for the diagonal-noise determinant cross-check
TREE_SUM_EDGE_LIMIT = 16
# pairwise (Cauchy-Binet) enumeration for correlated noise
CAUCHY_BINET_EDGE_LIMIT = 10
CAUCHY_BINET_MAX_PAIRS = 1_000_000


def check_spd(R: np.ndarray, name: str = "covariance") -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise NoiseModelError(f"{name} must be square, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise NoiseModelError(f"{name} has non-finite entries")
    if not np.allclose(R, R.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(R).max(initial=0.0))):
        raise NoiseModelError(f"{name} is not symmetric")
    if R.size:
        ev = np.linalg.eigvalsh(R)
        if ev[0] <= 1e-12 * ev[-1] or ev[-1] <= 0:
            raise NoiseModelError(f"{name} is not positive definite")
    return R


# -- noise models -------------------------------------------------------------


@dataclass(frozen=True)
class IidScalar:
    sigma2: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise NoiseModelError("sigma2 must be positive")

    dim = 1

    def covariance(self, m: int) -> np.ndarray:
        return self.sigma2 * np.eye(m)


@dataclass(frozen=True)
class DiagonalScalar:
    variances: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise NoiseModelError("variances must be a vector of positive reals")
        object.__setattr__(self, "variances", v)

    dim = 1

    def covariance(self, m: int) -> np.ndarray:
        _expect(len(self.variances), m, "variances")
        return np.diag(self.variances)


@dataclass(frozen=True)
class FullScalar:
    covariance_matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "covariance_matrix", check_spd(self.covariance_matrix))

    dim = 1

    def covariance(self, m: int) -> np.ndarray:
        _expect(self.covariance_matrix.shape[0], m, "covariance")
        return self.covariance_matrix


@dataclass(frozen=True)
class IidVector:
    """Independent edges, each with the same ``d x d`` covariance."""

    edge_covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "edge_covariance", check_spd(self.edge_covariance))

    @property
    def dim(self) -> int:
        return self.edge_covariance.shape[0]

    def covariance(self, m: int) -> np.ndarray:
        return np.kron(self.edge_covariance, np.eye(m))


@dataclass(frozen=True)
class FullVector:
    """Joint ``md x md`` covariance in coordinate-major order."""

    covariance_matrix: np.ndarray
    d: int

    def __post_init__(self):
        object.__setattr__(self, "covariance_matrix", check_spd(self.covariance_matrix))
        if self.covariance_matrix.shape[0] % self.d:
            raise NoiseModelError("covariance size is not a multiple of d")

    @property
    def dim(self) -> int:
        return self.d

    def covariance(self, m: int) -> np.ndarray:
        _expect(self.covariance_matrix.shape[0], m * self.d, "covariance")
        return self.covariance_matrix


GaussianNoiseModel = IidScalar | DiagonalScalar | FullScalar | IidVector | FullVector


def _expect(got: int, want: int, what: str) -> None:
    if got != want:
        raise NoiseModelError(f"{what} has size {got}, expected {want}")


# -- results ------------------------------------------------------------------


@dataclass
class EstimateResult:
    x_hat: np.ndarray
    omega_hat: np.ndarray
    residual: np.ndarray
    ref_index: int
    gauge: str = "reference"
    iterations: int = 0
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def vertex_values(self, gauge: str | None = None) -> np.ndarray:
        """Offsets for all ``n`` vertices, reference gauge or mean-zero."""
        x = np.insert(self.x_hat, self.ref_index, 0.0, axis=0)
        if (gauge or self.gauge) == "mean-zero":
            x = x - x.mean(axis=0)
        return x


@dataclass(frozen=True)
class FisherReport:
    fisher: np.ndarray
    det_direct: float
    det_tree_formula: float
    estimator_covariance: np.ndarray
    # True when det_tree_formula came from explicit tree enumeration
    cross_checked: bool = False
    log_det: float = math.nan

    @property
    def trace_inverse(self) -> float:
        return float(np.trace(self.estimator_covariance))


# -- helpers ------------------------------------------------------------------


def _require_connected(graph: Graph) -> None:
    if not graph.is_connected():
        raise DisconnectedGraphError("graph is not connected")


def _as_edge_vector(r, m: int) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape[:1] != (m,):
        raise ValueError(f"expected edge data with leading dimension {m}, got {r.shape}")
    return r


def _precision_apply(R: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``R^{-1} B`` via Cholesky of the covariance."""
    return scipy.linalg.cho_solve(spd_factor(R, "covariance"), B)


def _logdet_spd(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    c, _ = spd_factor(M, "Fisher information")
    return float(2.0 * np.sum(np.log(np.diag(c))))


# -- estimators ---------------------------------------------------------------


def ml_estimate_iid(graph: Graph, incidence: IncidenceSet, r, sigma2: float = 1.0) -> EstimateResult:
    """ML offsets for iid Gaussian edge noise: ``L_W x = D_W r``.

    The estimate does not depend on ``sigma2``; it is validated only.
    """
    IidScalar(sigma2)
    _require_connected(graph)
    r = _as_edge_vector(r, graph.m)
    D_W = incidence.D_W
    x = scipy.linalg.cho_solve(spd_factor(D_W @ D_W.T), D_W @ r)
    omega = D_W.T @ x
    return EstimateResult(x_hat=x, omega_hat=omega, residual=r - omega, ref_index=incidence.ref_index)


def ml_estimate_correlated(graph: Graph, incidence: IncidenceSet, r, R) -> EstimateResult:
    """ML offsets for jointly Gaussian scalar noise with covariance ``R``.

    The edge estimate is the oblique projection of ``r`` onto the cocycle
    space along ``R Z``; the residual satisfies ``D R^{-1} (r - omega) = 0``.
    """
    _require_connected(graph)
    r = _as_edge_vector(r, graph.m)
    R = FullScalar(R).covariance(graph.m)
    D_W = incidence.D_W
    Rinv_DWt = _precision_apply(R, D_W.T)
    F = D_W @ Rinv_DWt
    x = scipy.linalg.cho_solve(spd_factor(F), Rinv_DWt.T @ r)
    omega = D_W.T @ x
    return EstimateResult(x_hat=x, omega_hat=omega, residual=r - omega, ref_index=incidence.ref_index)


def ml_estimate_vector(
    graph: Graph, incidence: IncidenceSet, r, noise: IidVector | FullVector
) -> EstimateResult:
    """ML offsets for ``R^d``-valued edge data ``r`` of shape ``(m, d)``."""
    _require_connected(graph)
    r = _as_edge_vector(r, graph.m)
    if r.ndim != 2 or r.shape[1] != noise.dim:
        raise ValueError(f"edge data must have shape ({graph.m}, {noise.dim}), got {r.shape}")
    D_W = incidence.D_W
    d = noise.dim
    if isinstance(noise, IidVector):
        # edge covariance cancels: each coordinate is an independent scalar problem
        x = scipy.linalg.cho_solve(spd_factor(D_W @ D_W.T), D_W @ r)
    elif isinstance(noise, FullVector):
        R = noise.covariance(graph.m)
        B = np.kron(np.eye(d), D_W)
        Rinv_Bt = _precision_apply(R, B.T)
        F = B @ Rinv_Bt
        xv = scipy.linalg.cho_solve(spd_factor(F), Rinv_Bt.T @ r.T.ravel())
        x = xv.reshape(d, -1).T
    else:
        raise TypeError(f"unsupported noise model {type(noise).__name__}")
    omega = D_W.T @ x
    return EstimateResult(x_hat=x, omega_hat=omega, residual=r - omega, ref_index=incidence.ref_index)


def mean_zero_gauge(graph: Graph, r, mu: float = 1.0) -> np.ndarray:
    """Offsets with zero network mean: ``(L + (mu/n) 11^T)^{-1} D r``.

    The result is the same for every ``mu > 0``.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    _require_connected(graph)
    D = incidence_matrix(graph)
    r = _as_edge_vector(r, graph.m)
    n = graph.n
    M = D @ D.T + (mu / n) * np.ones((n, n))
    return scipy.linalg.cho_solve(spd_factor(M, "regularized Laplacian"), D @ r)


def tree_coordinates(incidence: IncidenceSet, tree, x) -> np.ndarray:
    """Edge values ``nu = D_WS^T x`` on the spanning tree ``tree``."""
    return incidence.D_WS(tree).T @ np.asarray(x, dtype=float)


def offsets_from_tree(incidence: IncidenceSet, tree, nu) -> np.ndarray:
    """Inverse of :func:`tree_coordinates`."""
    return np.linalg.solve(incidence.D_WS(tree).T, np.asarray(nu, dtype=float))


# -- Fisher information -------------------------------------------------------


def tree_sign(incidence: IncidenceSet, tree) -> int:
    """``det D_WS``, which is +-1 exactly when ``tree`` is a spanning tree."""
    k = incidence.D_W.shape[0]
    tree = list(tree)
    if len(tree) != k:
        raise GraphError(f"a spanning tree has {k} edges, got {len(tree)}")
    det = np.linalg.det(incidence.D_WS(tree)) if k else 1.0
    if abs(abs(det) - 1.0) > 1e-9:
        raise GraphError(f"edge set {tuple(tree)} is not a spanning tree")
    return 1 if det > 0 else -1


def alpha_sign(incidence: IncidenceSet, S, S_prime) -> int:
    """``det(D_WS D_WS'^T)`` for a pair of spanning trees."""
    tree_sign(incidence, S)
    tree_sign(incidence, S_prime)
    M = incidence.D_WS(S) @ incidence.D_WS(S_prime).T
    return int(round(np.linalg.det(M))) if M.size else 1


def _signed_pair_sum(P: np.ndarray, index_sets: np.ndarray, signs: np.ndarray) -> float:
    """``sum_{I,J} s_I s_J det(P[I, J])`` over all pairs of index sets."""
    T = len(index_sets)
    total = 0.0
    chunk = max(1, 200_000 // max(T, 1))
    for start in range(0, T, chunk):
        rows = index_sets[start : start + chunk]
        sub = P[rows[:, None, :, None], index_sets[None, :, None, :]]
        dets = np.linalg.det(sub)
        total += float(signs[start : start + chunk] @ dets @ signs)
    return total


def multi_tree_index_sets(incidence: IncidenceSet, trees, d: int, m: int):
    """Index sets and signs of all multi-spanning trees for ``d`` coordinates.

    A multi-spanning tree picks one spanning tree per coordinate; its column
    set in coordinate-major order is ``{k*m + e : e in S_k}``.
    """
    signs = np.array([tree_sign(incidence, S) for S in trees], dtype=float)
    tree_arr = np.asarray(trees, dtype=np.intp).reshape(len(trees), -1)
    idx, sgn = [], []
    for combo in itertools.product(range(len(trees)), repeat=d):
        idx.append(np.concatenate([k * m + tree_arr[t] for k, t in enumerate(combo)]))
        sgn.append(np.prod(signs[list(combo)]))
    return np.asarray(idx, dtype=np.intp).reshape(len(idx), -1), np.asarray(sgn)


def cauchy_binet_det(incidence: IncidenceSet, trees, precision: np.ndarray, d: int = 1) -> float:
    """Fisher determinant as the signed double sum over (multi-)spanning trees."""
    m = incidence.D_W.shape[1]
    idx, sgn = multi_tree_index_sets(incidence, trees, d, m)
    return _signed_pair_sum(precision, idx, sgn)


def fisher_report(graph: Graph, incidence: IncidenceSet, noise: GaussianNoiseModel) -> FisherReport:
    """Fisher information for the reference-gauge offsets under ``noise``.

    ``det_tree_formula`` is the graph-theoretic determinant: spanning-tree
    count or weighted tree sum for independent noise, Cauchy-Binet pair sums
    over (multi-)spanning trees for correlated noise.  Explicit enumeration is
    used on small graphs; otherwise the closed form falls back to the
    matrix-tree determinant and ``cross_checked`` is False.
    """
    _require_connected(graph)
    n, m = graph.n, graph.m
    D_W = incidence.D_W
    L_W = D_W @ D_W.T
    k = n - 1
    cross = False

    if isinstance(noise, IidScalar):
        F = L_W / noise.sigma2
        trees = _maybe_trees(graph, TREE_SUM_EDGE_LIMIT)
        t = float(len(trees)) if trees is not None else spanning_tree_count(graph)
        cross = trees is not None
        tree_det = noise.sigma2 ** (-k) * t
    elif isinstance(noise, DiagonalScalar):
        w = 1.0 / noise.variances
        _expect(len(w), m, "variances")
        F = (D_W * w) @ D_W.T
        trees = _maybe_trees(graph, TREE_SUM_EDGE_LIMIT)
        if trees is not None:
            tree_det = float(sum(np.prod(w[list(S)]) for S in trees))
            cross = True
        else:
            tree_det = weighted_tree_sum(graph, w)
    elif isinstance(noise, FullScalar):
        P = np.linalg.inv(noise.covariance(m))
        P = 0.5 * (P + P.T)
        F = D_W @ P @ D_W.T
        tree_det, cross = _cauchy_binet_or_nan(graph, incidence, P, 1)
    elif isinstance(noise, IidVector):
        Rinv = np.linalg.inv(noise.edge_covariance)
        F = np.kron(Rinv, L_W)
        d = noise.dim
        trees = _maybe_trees(graph, TREE_SUM_EDGE_LIMIT)
        t = float(len(trees)) if trees is not None else spanning_tree_count(graph)
        cross = trees is not None
        tree_det = t**d / np.linalg.det(noise.edge_covariance) ** k
    elif isinstance(noise, FullVector):
        d = noise.dim
        P = np.linalg.inv(noise.covariance(m))
        P = 0.5 * (P + P.T)
        B = np.kron(np.eye(d), D_W)
        F = B @ P @ B.T
        tree_det, cross = _cauchy_binet_or_nan(graph, incidence, P, d)
    else:
        raise TypeError(f"unsupported noise model {type(noise).__name__}")

    F = 0.5 * (F + F.T)
    logdet = _logdet_spd(F)
    if not cross and math.isnan(tree_det):
        tree_det = math.exp(logdet)
    cov = scipy.linalg.cho_solve(spd_factor(F, "Fisher information"), np.eye(F.shape[0]))
    return FisherReport(
        fisher=F,
        det_direct=math.exp(logdet),
        det_tree_formula=float(tree_det),
        estimator_covariance=0.5 * (cov + cov.T),
        cross_checked=cross,
        log_det=logdet,
    )


def _maybe_trees(graph: Graph, edge_limit: int):
    if graph.m > edge_limit:
        return None
    try:
        return enumerate_spanning_trees(graph, cap=200_000)
    except GraphError:
        return None


def _cauchy_binet_or_nan(graph, incidence, P, d):
    trees = _maybe_trees(graph, CAUCHY_BINET_EDGE_LIMIT)
    if trees is None or (len(trees) ** d) ** 2 > CAUCHY_BINET_MAX_PAIRS:
        return math.nan, False
    return cauchy_binet_det(incidence, trees, P, d), True


def edge_covariance(incidence: IncidenceSet, report: FisherReport, d: int = 1) -> np.ndarray:
    """Covariance of the edge estimate, ``B C_x B^T`` with ``B = I (x) D_W^T``."""
    B = np.kron(np.eye(d), incidence.D_W.T)
    return B @ report.estimator_covariance @ B.T
