"""Phase alignment on the circle with von Mises edge noise.

Phases are unit complex numbers.  An edge ``e = (s, t)`` carries
``r_e = x_t * eps_e * conj(x_s)``, so the noiseless edge value is
``omega_e = x_t conj(x_s)``.  Global rotations of all phases are
unidentifiable; estimators return phases rotated so that the reference
vertex sits at 1.

Two eigenvector estimators are provided (``Q = N^{-1} A`` and the raw
augmented adjacency ``A``), a local power iteration for ``Q`` that needs
no global normalisation, and the hybrid refinement that drives every vertex
to the critical-point condition ``Im((A x)_v / x_v) = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.special

from .errors import EstimationError, NoiseModelError
from .gaussian import DiagonalScalar, FisherReport, fisher_report
from .graph import Graph, build_incidence, cycle_basis

UNIT_TOL = 1e-9

# crossover points for the Bessel ratio evaluation
_SERIES_MAX = 15.0
_ASYMPTOTIC_MIN = 500.0


# -- Bessel ratio -------------------------------------------------------------


def _ratio_series(k: np.ndarray) -> np.ndarray:
    q = (k * k) / 4.0
    term = np.ones_like(k)
    s0 = np.ones_like(k)
    s1 = np.ones_like(k)  # sum of term_j / (j + 1)
    for j in range(1, 80):
        term = term * q / (j * j)
        s0 = s0 + term
        s1 = s1 + term / (j + 1)
    return 0.5 * k * s1 / s0


def _ratio_continued_fraction(k: np.ndarray) -> np.ndarray:
    # I_nu / I_{nu-1} = 1 / (2 nu / k + I_{nu+1} / I_nu), evaluated backwards
    depth = int(2 * np.max(k)) + 40
    t = np.zeros_like(k)
    for nu in range(depth, 0, -1):
        t = 1.0 / (2.0 * nu / k + t)
    return t


def _ratio_asymptotic(k: np.ndarray) -> np.ndarray:
    s0 = np.ones_like(k)
    s1 = np.ones_like(k)
    a0 = np.ones_like(k)
    a1 = np.ones_like(k)
    for j in range(1, 12):
        odd = (2 * j - 1) ** 2
        a0 = -a0 * (0.0 - odd) / (j * 8.0 * k)
        a1 = -a1 * (4.0 - odd) / (j * 8.0 * k)
        s0 = s0 + a0
        s1 = s1 + a1
    return s1 / s0


def bessel_ratio(kappa):
    """Mean resultant length ``I1(kappa) / I0(kappa)`` of a von Mises law.

    Power series below 15, backward continued fraction up to 500, Hankel
    asymptotic series beyond.  Accepts scalars or arrays.
    """
    k = np.asarray(kappa, dtype=float)
    if not np.all(np.isfinite(k)) or np.any(k <= 0):
        raise ValueError("kappa must be finite and positive")
    out = np.empty_like(k)
    lo = k < _SERIES_MAX
    hi = k >= _ASYMPTOTIC_MIN
    mid = ~lo & ~hi
    if lo.any():
        out[lo] = _ratio_series(k[lo])
    if mid.any():
        out[mid] = _ratio_continued_fraction(k[mid])
    if hi.any():
        out[hi] = _ratio_asymptotic(k[hi])
    return float(out) if out.ndim == 0 else out


def log_i0(kappa):
    k = np.asarray(kappa, dtype=float)
    return np.log(scipy.special.i0e(k)) + k


# -- sampling -----------------------------------------------------------------


def von_mises_sample(rng: np.random.Generator, mean, kappa: float, count: int) -> np.ndarray:
    """Draw ``count`` unit-complex von Mises variates (Best & Fisher, 1979).

    Wrapped-Cauchy envelope with rejection.  Below ``kappa = 1e-6`` the law
    is indistinguishable from uniform and uniform phases are returned.
    """
    if not (np.isfinite(kappa) and kappa > 0):
        raise ValueError("kappa must be finite and positive")
    mean = complex(mean)
    if abs(abs(mean) - 1.0) > UNIT_TOL:
        raise ValueError("mean must be a unit complex number")
    if kappa < 1e-6:
        return mean * np.exp(1j * rng.uniform(-np.pi, np.pi, count))
    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
    s = (1.0 + rho * rho) / (2.0 * rho)
    out = np.empty(count)
    filled = 0
    while filled < count:
        batch = max(16, int(1.3 * (count - filled)))
        u1, u2, u3 = rng.random((3, batch))
        z = np.cos(np.pi * u1)
        f = (1.0 + s * z) / (s + z)
        c = kappa * (s - f)
        with np.errstate(divide="ignore"):
            accept = (c * (2.0 - c) - u2 > 0) | (np.log(c / u2) + 1.0 - c >= 0)
        theta = np.sign(u3[accept] - 0.5) * np.arccos(np.clip(f[accept], -1.0, 1.0))
        take = min(len(theta), count - filled)
        out[filled : filled + take] = theta[:take]
        filled += take
    return mean * np.exp(1j * out)


# -- data types ---------------------------------------------------------------


def _check_unit(z: np.ndarray, what: str) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(np.abs(z) - 1.0) > UNIT_TOL):
        raise ValueError(f"{what} must have unit modulus")
    return z


@dataclass
class PhaseAssignment:
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = _check_unit(self.values, "phases")

    def angles(self) -> np.ndarray:
        """Phases as radians in ``[0, 2 pi)``."""
        return np.mod(np.angle(self.values), 2 * np.pi)

    def rotated_to(self, ref_index: int) -> "PhaseAssignment":
        return PhaseAssignment(self.values * np.conj(self.values[ref_index]), dict(self.diagnostics))


@dataclass(frozen=True)
class VonMisesModel:
    kappa: np.ndarray

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        if k.ndim != 1 or not np.all(np.isfinite(k)) or np.any(k <= 0):
            raise NoiseModelError("concentrations must be finite and positive")
        object.__setattr__(self, "kappa", k)

    @classmethod
    def uniform(cls, m: int, kappa: float) -> "VonMisesModel":
        return cls(np.full(m, float(kappa)))

    def edge_fisher(self) -> np.ndarray:
        """Per-edge information ``kappa I1(kappa) / I0(kappa)``."""
        return self.kappa * bessel_ratio(self.kappa)

    def for_graph(self, graph: Graph) -> np.ndarray:
        if self.kappa.shape != (graph.m,):
            raise NoiseModelError(f"expected {graph.m} concentrations, got {self.kappa.shape[0]}")
        return self.kappa


@dataclass(frozen=True)
class AmplitudePhaseState:
    a: np.ndarray
    x: np.ndarray
    iteration: int = 0
    underflow: bool = False

    @property
    def y(self) -> np.ndarray:
        return self.a * self.x


@dataclass(frozen=True)
class CriticalPointReport:
    defect: np.ndarray
    rho: np.ndarray
    iterations: int = 0
    converged: bool = True
    flagged_vertices: tuple = ()

    @property
    def max_defect(self) -> float:
        return float(np.max(self.defect, initial=0.0))


# -- edge/vertex algebra --------------------------------------------------------


def edge_estimate(graph: Graph, x) -> np.ndarray:
    """``omega_e = x_t conj(x_s)`` for every edge."""
    x = np.asarray(x, dtype=complex)
    return x[..., graph.targets] * np.conj(x[..., graph.sources])


def cycle_products(graph: Graph, omega) -> np.ndarray:
    """Oriented product of ``omega`` around each fundamental cycle."""
    omega = np.asarray(omega, dtype=complex)
    Z = cycle_basis(graph).as_matrix(graph.m)
    # integer powers of unit complex numbers, computed through angles
    return np.exp(1j * (Z @ np.angle(omega)))


def _scatter(vals: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """Sum ``vals[..., e]`` into ``out[..., idx[e]]`` in edge order."""
    lead = vals.shape[:-1]
    out = np.zeros(lead + (n,), dtype=vals.dtype)
    flat_out = out.reshape(-1, n)
    flat_vals = vals.reshape(-1, vals.shape[-1])
    rows = np.arange(flat_out.shape[0])[:, None]
    np.add.at(flat_out, (rows, idx[None, :]), flat_vals)
    return out


def vertex_strength(graph: Graph, kappa) -> np.ndarray:
    """``kappa~_v d_v``: total concentration on the edges at each vertex."""
    kappa = np.asarray(kappa, dtype=float)
    return _scatter(kappa, graph.sources, graph.n) + _scatter(kappa, graph.targets, graph.n)


def neighbour_sum(graph: Graph, r, kappa, y) -> np.ndarray:
    """``(A y)_v``: kappa-weighted sum of the neighbours' predictions of ``y_v``.

    The target of ``e`` predicts ``y_s r_e``, the source ``y_t conj(r_e)``.
    Leading batch dimensions are carried through.
    """
    y = np.asarray(y, dtype=complex)
    s, t = graph.sources, graph.targets
    to_target = kappa * y[..., s] * r
    to_source = kappa * y[..., t] * np.conj(r)
    return _scatter(to_target, t, graph.n) + _scatter(to_source, s, graph.n)


def augmented_adjacency(graph: Graph, r, kappa) -> np.ndarray:
    """Hermitian matrix with ``A[t, s] = kappa_e r_e`` and ``A[s, t]`` its conjugate."""
    r = _check_unit(r, "edge measurements")
    A = np.zeros((graph.n, graph.n), dtype=complex)
    np.add.at(A, (graph.targets, graph.sources), kappa * r)
    np.add.at(A, (graph.sources, graph.targets), kappa * np.conj(r))
    return A


# -- likelihood and Fisher information -----------------------------------------


def log_likelihood(graph: Graph, r, x, model: VonMisesModel) -> float:
    """Von Mises log-likelihood of vertex phases ``x`` given edge data ``r``."""
    r = _check_unit(r, "edge measurements")
    x = _check_unit(x, "phases")
    kappa = model.for_graph(graph)
    omega = edge_estimate(graph, x)
    return float(np.sum(kappa * np.real(np.conj(omega) * r)) - np.sum(np.log(2 * np.pi) + log_i0(kappa)))


def fisher_report_circle(graph: Graph, model: VonMisesModel, ref_vertex=None) -> FisherReport:
    """Fisher information of the reference-gauge phase angles.

    Equal to the weighted Laplacian ``D_W diag(kappa I1/I0) D_W^T``; this is
    the Gaussian case with per-edge variances ``I0 / (kappa I1)``.
    """
    w = model.edge_fisher()
    model.for_graph(graph)
    return fisher_report(graph, build_incidence(graph, ref_vertex), DiagonalScalar(1.0 / w))


# -- Q matrix ---------------------------------------------------------------------


@dataclass(frozen=True)
class QMatrices:
    """``N`` (diagonal vertex strengths plus beta) and ``A`` (augmented
    adjacency plus beta I); the regularised operator is ``N^{-1} A``."""

    N: np.ndarray
    A: np.ndarray
    beta: float

    def __iter__(self):
        return iter((self.N, self.A))

    @property
    def q(self) -> np.ndarray:
        return self.A / np.diag(self.N)[:, None]

    def hermitian(self) -> np.ndarray:
        s = 1.0 / np.sqrt(np.diag(self.N).real)
        H = s[:, None] * self.A * s[None, :]
        return 0.5 * (H + H.conj().T)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.hermitian())

    def gershgorin_lower_bound(self) -> float:
        """``-1 + 2 beta / (max strength + beta)``."""
        top = float(np.max(np.diag(self.N).real)) - self.beta
        return -1.0 + 2.0 * self.beta / (top + self.beta)


def build_q_matrix(graph: Graph, r, model: VonMisesModel, beta: float = 0.0) -> QMatrices:
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    kappa = model.for_graph(graph)
    A = augmented_adjacency(graph, r, kappa) + beta * np.eye(graph.n)
    N = np.diag(vertex_strength(graph, kappa) + beta).astype(complex)
    return QMatrices(N=N, A=A, beta=float(beta))


def _normalise(y: np.ndarray, ref_index: int) -> np.ndarray:
    scale = np.max(np.abs(y))
    y = y / scale
    if np.any(np.abs(y) < 1e-12):
        raise EstimationError("eigenvector has a vanishing component; phase undetermined")
    x = y / np.abs(y)
    return x * np.conj(x[ref_index])


def global_eigen_estimate(
    graph: Graph, r, model: VonMisesModel, which: str = "Q", beta: float = 0.0, ref_vertex=None
) -> PhaseAssignment:
    """Phases of the top eigenvector of ``Q`` (default) or of ``A``.

    Ties between the two largest eigenvalues (within 1e-10) are flagged in
    ``diagnostics["ambiguous"]``; the result is still returned.
    """
    ref = 0 if ref_vertex is None else graph.index(ref_vertex)
    qm = build_q_matrix(graph, r, model, beta if which == "Q" else 0.0)
    if which == "Q":
        H = qm.hermitian()
        ev, vec = np.linalg.eigh(H)
        y = vec[:, -1] / np.sqrt(np.diag(qm.N).real)
    elif which == "A":
        ev, vec = np.linalg.eigh(qm.A)
        y = vec[:, -1]
    else:
        raise ValueError(f"which must be 'Q' or 'A', got {which!r}")
    gap = float(ev[-1] - ev[-2]) if len(ev) > 1 else math.inf
    return PhaseAssignment(
        _normalise(y, ref),
        {"eigenvalue": float(ev[-1]), "eigengap": gap, "ambiguous": gap < 1e-10},
    )


# -- local algorithms -----------------------------------------------------------------


def initial_state(rng: np.random.Generator, n: int) -> AmplitudePhaseState:
    """Unit amplitudes and uniformly random phases."""
    return AmplitudePhaseState(a=np.ones(n), x=np.exp(1j * rng.uniform(0, 2 * np.pi, n)))


def power_update(graph: Graph, r, kappa, y, beta: float = 0.0) -> np.ndarray:
    """One application of ``Q_beta`` using neighbour values only."""
    strength = vertex_strength(graph, kappa)
    return (neighbour_sum(graph, r, kappa, y) + beta * y) / (strength + beta)


def _split(y: np.ndarray):
    a = np.abs(y)
    under = a < 1e-300
    x = np.where(under, 1.0 + 0j, y / np.where(under, 1.0, a))
    return a, x, bool(np.any(under))


def local_power_step(
    graph: Graph, r, model: VonMisesModel, state: AmplitudePhaseState, beta: float = 0.0
) -> AmplitudePhaseState:
    """Each vertex becomes the kappa-weighted mean of its neighbours'
    amplitude-weighted predictions of its phase; no global normalisation."""
    if np.any(graph.degrees == 0):
        raise ValueError("isolated vertex")
    r = _check_unit(r, "edge measurements")
    kappa = model.for_graph(graph)
    a, x, under = _split(power_update(graph, r, kappa, state.y, beta))
    return AmplitudePhaseState(a=a, x=x, iteration=state.iteration + 1, underflow=state.underflow or under)


def local_power_run(
    graph: Graph,
    r,
    model: VonMisesModel,
    state: AmplitudePhaseState,
    beta: float = 0.0,
    tol: float = 1e-12,
    max_iter: int = 10_000,
) -> AmplitudePhaseState:
    """Power iteration until every vertex's phase moves less than ``tol``."""
    while state.iteration < max_iter:
        new = local_power_step(graph, r, model, state, beta)
        moved = np.max(np.abs(new.x - state.x))
        state = new
        if moved < tol or state.underflow:
            break
    return state


def critical_point_report(graph: Graph, r, model: VonMisesModel, x) -> CriticalPointReport:
    """Per-vertex ``Im`` and ``Re`` of ``(A x)_v / x_v``."""
    r = _check_unit(r, "edge measurements")
    x = _check_unit(x, "phases")
    z = neighbour_sum(graph, r, model.for_graph(graph), x) * np.conj(x)
    return CriticalPointReport(defect=np.abs(z.imag), rho=z.real)


def hybrid_step(graph: Graph, r, kappa, a, x, scale, beta: float):
    """One synchronous hybrid round; batch dimensions are allowed.

    Returns ``(a, x, scale, z, bad)`` where ``z = (A x)_v conj(x_v)`` was
    evaluated on the incoming phases and ``bad`` marks vertices whose real
    part was not positive (they keep their previous scale).
    """
    z = neighbour_sum(graph, r, kappa, x) * np.conj(x)
    bad = z.real <= 0
    scale = np.where(bad, scale, z.real)
    y = (neighbour_sum(graph, r, kappa, a * x) + beta * a * x) / (scale + beta)
    a, x, _ = _split(y)
    return a, x, scale, z, bad


def hybrid_ml_refine(
    graph: Graph,
    r,
    model: VonMisesModel,
    state: AmplitudePhaseState,
    threshold: float = 1e-9,
    max_iter: int = 10_000,
    ref_vertex=None,
    beta: float | None = None,
) -> tuple[PhaseAssignment, CriticalPointReport]:
    """Refine a power-iteration state to a likelihood critical point.

    Vertex ``v`` divides its neighbour sum by ``Re((A x)_v / x_v)`` in place
    of its fixed strength ``kappa~_v d_v``, regularised by ``beta`` like the
    power step (default: mean concentration).  Each vertex tests
    ``|Im((A x)_v / x_v)| < threshold``; the run ends in the first round
    where every vertex passes.  A vertex whose real part is not positive
    keeps its previous scale and is listed in ``flagged_vertices``.
    """
    r = _check_unit(r, "edge measurements")
    kappa = model.for_graph(graph)
    ref = 0 if ref_vertex is None else graph.index(ref_vertex)
    if beta is None:
        beta = float(np.mean(kappa))
    a, x = np.array(state.a, dtype=float), np.array(state.x, dtype=complex)
    scale = vertex_strength(graph, kappa)
    flagged: set[int] = set()
    it = 0
    while True:
        z = neighbour_sum(graph, r, kappa, x) * np.conj(x)
        done = bool(np.all(np.abs(z.imag) < threshold))
        if done or it >= max_iter:
            break
        a, x, scale, _, bad = hybrid_step(graph, r, kappa, a, x, scale, beta)
        flagged.update(int(v) for v in np.flatnonzero(bad))
        it += 1
    report = CriticalPointReport(
        defect=np.abs(z.imag),
        rho=z.real,
        iterations=it,
        converged=done,
        flagged_vertices=tuple(sorted(flagged)),
    )
    return PhaseAssignment(x * np.conj(x[ref]), {"iterations": it}), report


def circular_error(x_hat, x_true, ref_index: int = 0) -> float:
    """``1 - |mean over v != ref of x_hat_v conj(x_v)|^2``."""
    x_hat = _check_unit(x_hat, "estimate")
    x_true = _check_unit(x_true, "truth")
    n = x_hat.shape[-1]
    if n < 2:
        raise ValueError("circular error needs at least two vertices")
    keep = np.arange(n) != ref_index
    m = np.mean(x_hat[..., keep] * np.conj(x_true[..., keep]), axis=-1)
    return 1.0 - np.abs(m) ** 2
