"""Parameters in the product group ``R^d x T^q``.

Group elements pair ``d`` real coordinates (added) with ``q`` unit-complex
coordinates (multiplied).  Edge data for ``m`` edges is held as a
:class:`ProductData` with arrays of shape ``(m, d)`` and ``(m, q)``.

The noise model is independent across edges and across coordinates:
Gaussian with per-edge variances on the linear part and von Mises on each
circle.  The likelihood then separates by coordinate, and the Fisher matrix
``(I (x) D_W) F (I (x) D_W^T)`` is block diagonal by coordinate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.stats

from .circle import (
    AmplitudePhaseState,
    CriticalPointReport,
    VonMisesModel,
    bessel_ratio,
    global_eigen_estimate,
    hybrid_ml_refine,
    log_likelihood as circle_log_likelihood,
)
from .errors import NoiseModelError
from .gaussian import (
    EstimateResult,
    FisherReport,
    _logdet_spd,
    _require_connected,
    ml_estimate_correlated,
    multi_tree_index_sets,
)
from .graph import Graph, build_incidence, enumerate_spanning_trees, spd_factor, weighted_tree_sum

# multi-spanning-tree enumeration limits for the determinant cross-check
MULTI_TREE_MAX_COORDS = 3
MULTI_TREE_MAX_EDGES = 10

UNIT_TOL = 1e-9


@dataclass(frozen=True)
class GroupElement:
    linear: np.ndarray
    circular: np.ndarray

    def __post_init__(self):
        lin = np.atleast_1d(np.asarray(self.linear, dtype=float))
        circ = np.atleast_1d(np.asarray(self.circular, dtype=complex))
        if lin.ndim != 1 or circ.ndim != 1:
            raise ValueError("group element parts must be one-dimensional")
        if np.any(np.abs(np.abs(circ) - 1.0) > UNIT_TOL):
            raise ValueError("circular coordinates must have unit modulus")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "circular", circ)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.linear), len(self.circular)

    @classmethod
    def identity(cls, d: int, q: int) -> "GroupElement":
        return cls(np.zeros(d), np.ones(q, dtype=complex))

    def compose(self, other: "GroupElement") -> "GroupElement":
        _match(self, other)
        return GroupElement(self.linear + other.linear, self.circular * other.circular)

    def inverse(self) -> "GroupElement":
        return GroupElement(-self.linear, np.conj(self.circular))

    def difference(self, other: "GroupElement") -> "GroupElement":
        """``self`` composed with the inverse of ``other``."""
        _match(self, other)
        return GroupElement(self.linear - other.linear, self.circular * np.conj(other.circular))

    def isclose(self, other: "GroupElement", tol: float = 1e-12) -> bool:
        _match(self, other)
        return bool(
            np.all(np.abs(self.linear - other.linear) <= tol)
            and np.all(np.abs(self.circular - other.circular) <= tol)
        )

    def to_dict(self) -> dict:
        return {
            "linear": [float(v) for v in self.linear],
            "circular": [float(a) for a in np.mod(np.angle(self.circular), 2 * np.pi)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroupElement":
        return cls(
            np.asarray(data.get("linear", []), dtype=float),
            np.exp(1j * np.asarray(data.get("circular", []), dtype=float)),
        )


def _match(a: GroupElement, b: GroupElement) -> None:
    if a.shape != b.shape:
        raise ValueError(f"group dimensions differ: {a.shape} vs {b.shape}")


def group_compose(a: GroupElement, b: GroupElement) -> GroupElement:
    return a.compose(b)


def group_inverse(a: GroupElement) -> GroupElement:
    return a.inverse()


def group_difference(a: GroupElement, b: GroupElement) -> GroupElement:
    return a.difference(b)


@dataclass(frozen=True)
class ProductData:
    """Per-edge (or per-vertex) group elements as two aligned arrays."""

    linear: np.ndarray
    circular: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float)
        circ = np.asarray(self.circular, dtype=complex)
        if lin.ndim != 2 or circ.ndim != 2 or lin.shape[0] != circ.shape[0]:
            raise ValueError("expected arrays of shape (k, d) and (k, q)")
        if np.any(np.abs(np.abs(circ) - 1.0) > UNIT_TOL):
            raise ValueError("circular coordinates must have unit modulus")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "circular", circ)

    def __len__(self) -> int:
        return self.linear.shape[0]

    def __getitem__(self, k: int) -> GroupElement:
        return GroupElement(self.linear[k], self.circular[k])

    @property
    def dims(self) -> tuple[int, int]:
        return self.linear.shape[1], self.circular.shape[1]

    @classmethod
    def from_elements(cls, elements) -> "ProductData":
        elements = list(elements)
        if not elements:
            raise ValueError("no elements")
        return cls(np.vstack([g.linear for g in elements]), np.vstack([g.circular for g in elements]))

    def elements(self) -> list[GroupElement]:
        return [self[k] for k in range(len(self))]


def edge_differences(graph: Graph, x: ProductData) -> ProductData:
    """``x_t - x_s`` per edge, in the group."""
    s, t = graph.sources, graph.targets
    return ProductData(x.linear[t] - x.linear[s], x.circular[t] * np.conj(x.circular[s]))


@dataclass(frozen=True)
class ProductNoiseModel:
    """Independent per-edge noise: ``variances`` ``(m, d)`` for the linear
    coordinates and concentrations ``kappa`` ``(m, q)`` for the circles."""

    variances: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        var = np.asarray(self.variances, dtype=float)
        kap = np.asarray(self.kappa, dtype=float)
        if var.ndim != 2 or kap.ndim != 2 or var.shape[0] != kap.shape[0]:
            raise NoiseModelError("expected variances (m, d) and kappa (m, q)")
        if not np.all(np.isfinite(var)) or np.any(var <= 0):
            raise NoiseModelError("variances must be finite and positive")
        if not np.all(np.isfinite(kap)) or np.any(kap <= 0):
            raise NoiseModelError("concentrations must be finite and positive")
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "kappa", kap)

    @classmethod
    def uniform(cls, m: int, variances=(), kappa=()) -> "ProductNoiseModel":
        return cls(np.tile(np.asarray(variances, float), (m, 1)), np.tile(np.asarray(kappa, float), (m, 1)))

    @property
    def m(self) -> int:
        return self.variances.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.variances.shape[1], self.kappa.shape[1]

    def coordinate_weights(self) -> np.ndarray:
        """Per-coordinate edge information, shape ``(d + q, m)``."""
        lin = 1.0 / self.variances.T
        circ = (self.kappa * bessel_ratio(self.kappa)).T if self.kappa.size else self.kappa.T
        return np.vstack([lin, circ])

    def check(self, graph: Graph, data: ProductData | None = None) -> None:
        if self.m != graph.m:
            raise NoiseModelError(f"noise model covers {self.m} edges, graph has {graph.m}")
        if data is not None and data.dims != self.dims:
            raise NoiseModelError(f"data dimensions {data.dims} do not match noise model {self.dims}")


def edge_fisher_blocks(model: ProductNoiseModel) -> np.ndarray:
    """Per-edge ``(d+q) x (d+q)`` Fisher blocks, shape ``(m, d+q, d+q)``."""
    w = model.coordinate_weights()
    blocks = np.zeros((model.m, w.shape[0], w.shape[0]))
    idx = np.arange(w.shape[0])
    blocks[:, idx, idx] = w.T
    return blocks


def assemble_edge_fisher(blocks: np.ndarray) -> np.ndarray:
    """Edge Fisher matrix in coordinate-major order (index ``c*m + e``)."""
    m, p, _ = blocks.shape
    F = np.zeros((p * m, p * m))
    e = np.arange(m)
    for a in range(p):
        for b in range(p):
            F[a * m + e, b * m + e] = blocks[:, a, b]
    return F


def product_tree_formula(graph: Graph, model: ProductNoiseModel) -> float:
    """Product over coordinates of the weighted spanning-tree sums."""
    return float(np.prod([weighted_tree_sum(graph, w) for w in model.coordinate_weights()]))


def multi_tree_sum(graph: Graph, model: ProductNoiseModel, ref_vertex=None) -> float:
    """``sum over multi-spanning trees S of det(F_SS)``, by enumeration."""
    inc = build_incidence(graph, ref_vertex)
    trees = enumerate_spanning_trees(graph)
    p = sum(model.dims)
    idx, _ = multi_tree_index_sets(inc, trees, p, graph.m)
    F = assemble_edge_fisher(edge_fisher_blocks(model))
    total = 0.0
    for rows in idx:
        total += np.linalg.det(F[np.ix_(rows, rows)])
    return float(total)


def fisher_report_product(graph: Graph, model: ProductNoiseModel, ref_vertex=None) -> FisherReport:
    """Fisher information ``(I (x) D_W) F (I (x) D_W^T)`` for all coordinates.

    ``det_tree_formula`` is the multi-spanning-tree sum when the instance is
    small enough to enumerate (``cross_checked``), and the per-coordinate
    product of weighted tree sums otherwise.
    """
    _require_connected(graph)
    model.check(graph)
    inc = build_incidence(graph, ref_vertex)
    p = sum(model.dims)
    B = np.kron(np.eye(p), inc.D_W)
    F = B @ assemble_edge_fisher(edge_fisher_blocks(model)) @ B.T
    F = 0.5 * (F + F.T)
    logdet = _logdet_spd(F)
    if p <= MULTI_TREE_MAX_COORDS and graph.m <= MULTI_TREE_MAX_EDGES:
        tree_det, cross = multi_tree_sum(graph, model, ref_vertex), True
    else:
        tree_det, cross = product_tree_formula(graph, model), False
    cov = scipy.linalg.cho_solve(spd_factor(F, "Fisher information"), np.eye(F.shape[0]))
    return FisherReport(
        fisher=F,
        det_direct=math.exp(logdet),
        det_tree_formula=tree_det,
        estimator_covariance=0.5 * (cov + cov.T),
        cross_checked=cross,
        log_det=logdet,
    )


@dataclass
class ProductEstimate:
    """Vertex estimates for all ``n`` vertices; the reference is the identity."""

    values: ProductData
    linear_results: tuple[EstimateResult, ...]
    circular_reports: tuple[CriticalPointReport, ...]
    ref_index: int

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.linear_results) and all(r.converged for r in self.circular_reports)


def ml_estimate_product(
    graph: Graph, r: ProductData, model: ProductNoiseModel, ref_vertex=None, threshold: float = 1e-9
) -> ProductEstimate:
    """ML vertex estimates, one coordinate at a time.

    Linear coordinates use the weighted least-squares solve; each circle
    starts from the top eigenvector of ``Q`` and is refined to a likelihood
    critical point by the hybrid iteration.
    """
    _require_connected(graph)
    model.check(graph, r)
    inc = build_incidence(graph, ref_vertex)
    ref = inc.ref_index
    d, q = model.dims
    lin = np.zeros((graph.n, d))
    circ = np.ones((graph.n, q), dtype=complex)
    lin_results, circ_reports = [], []
    for j in range(d):
        res = ml_estimate_correlated(graph, inc, r.linear[:, j], np.diag(model.variances[:, j]))
        lin[:, j] = res.vertex_values()
        lin_results.append(res)
    for j in range(q):
        vm = VonMisesModel(model.kappa[:, j])
        start = global_eigen_estimate(graph, r.circular[:, j], vm, "Q", ref_vertex=inc.ref_vertex)
        state = AmplitudePhaseState(a=np.ones(graph.n), x=start.values)
        phases, report = hybrid_ml_refine(
            graph, r.circular[:, j], vm, state, threshold=threshold, ref_vertex=inc.ref_vertex
        )
        circ[:, j] = phases.values
        circ_reports.append(report)
    return ProductEstimate(ProductData(lin, circ), tuple(lin_results), tuple(circ_reports), ref)


def product_log_likelihood(graph: Graph, r: ProductData, x: ProductData, model: ProductNoiseModel) -> float:
    """Sum of per-coordinate log-likelihoods of vertex values ``x``."""
    model.check(graph, r)
    omega = edge_differences(graph, x)
    resid = r.linear - omega.linear
    total = float(-0.5 * np.sum(resid**2 / model.variances + np.log(2 * np.pi * model.variances)))
    for j in range(model.dims[1]):
        total += circle_log_likelihood(graph, r.circular[:, j], x.circular[:, j], VonMisesModel(model.kappa[:, j]))
    return total


def joint_edge_log_density(model: ProductNoiseModel, e: int, residual: GroupElement) -> float:
    """Log density of one edge's noise element under the joint product law."""
    lin = scipy.stats.multivariate_normal(np.zeros(model.dims[0]), np.diag(model.variances[e])).logpdf(
        residual.linear
    )
    circ = np.sum(scipy.stats.vonmises.logpdf(np.angle(residual.circular), model.kappa[e]))
    return float(lin + circ)
