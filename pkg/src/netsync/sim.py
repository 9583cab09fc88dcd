"""Monte Carlo experiments with nearest-neighbour message passing.

Local estimators run inside :class:`MessageHarness`, a synchronous-round
simulator: in each round every vertex sends its current state along every
incident edge (``2 m`` messages) and then updates from its inbox alone.  All
trials for one sweep value advance together as rows of ``(trials, n)``
arrays; a trial whose vertices have all gone quiet stops sending and is
frozen, so the outcome of a trial never depends on the others.

Randomness comes from one ``SeedSequence`` child per ``(sweep index,
trial)``, which makes results independent of how work is split across
processes.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import circle
from .abelian import ProductData, ProductNoiseModel, edge_differences, fisher_report_product, ml_estimate_product
from .errors import NetsyncError
from .gaussian import (
    DiagonalScalar,
    FullScalar,
    FullVector,
    IidScalar,
    IidVector,
    fisher_report,
)
from .graph import Graph, build_incidence, load_graph, random_connected_graph, ring_graph, path_graph
from .graph import complete_graph, spanning_tree_count, spd_factor, star_graph

SPACES = ("real", "real_d", "circle", "product")
ESTIMATORS = {
    "real": ("direct_ML", "jacobi"),
    "real_d": ("direct_ML", "jacobi"),
    "circle": ("global_Q", "global_A", "local_Q", "hybrid_ML"),
    "product": ("direct_ML",),
}
TRIALS_HEADER = ("sweep", "estimator", "trial", "metric", "rounds", "converged", "messages")
SUMMARY_HEADER = (
    "sweep",
    "estimator",
    "trials",
    "mean_metric",
    "stderr_metric",
    "converged_fraction",
    "mean_rounds",
    "mean_messages",
)
REFERENCE_HEADER = ("sweep", "trace_inv_fisher")


class ConfigError(NetsyncError, ValueError):
    pass


def fmt(v) -> str:
    """Text form used in every CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


# -- configuration ---------------------------------------------------------------


@dataclass
class SimConfig:
    """Experiment description.

    ``sweep`` holds noise levels: the concentration ``kappa`` for circle
    and product runs (product linear coordinates get variance ``1/kappa``)
    and the standard deviation ``sigma`` for real runs.  ``beta=None``
    regularises the local circle iterations with the mean concentration.
    """

    graph: dict
    space: str
    sweep: list
    estimators: list
    trials: int = 100
    seed: int = 0
    tol: float = 1e-9
    max_rounds: int = 2000
    beta: float | None = None
    switch_after: int = 50
    threshold: float = 1e-9
    dim: int = 1
    circles: int = 1
    workers: int = 1
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        if self.space not in SPACES:
            raise ConfigError(f"space must be one of {SPACES}, got {self.space!r}")
        if not self.sweep:
            raise ConfigError("sweep must list at least one noise level")
        for v in self.sweep:
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                raise ConfigError(f"sweep values must be positive numbers, got {v!r}")
        allowed = ESTIMATORS[self.space]
        if not self.estimators:
            raise ConfigError("no estimators requested")
        for e in self.estimators:
            if e not in allowed:
                raise ConfigError(f"estimator {e!r} not available for space {self.space!r}; choose from {allowed}")
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError("estimators listed twice")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2**64)")
        if self.tol <= 0 or self.threshold <= 0:
            raise ConfigError("tol and threshold must be positive")
        if not isinstance(self.max_rounds, int) or self.max_rounds < 1:
            raise ConfigError("max_rounds must be a positive integer")
        if self.beta is not None and self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        if self.dim < 1 or self.circles < 0 or self.workers < 1:
            raise ConfigError("dim and workers must be >= 1, circles >= 0")

    _FIELDS = (
        "graph", "space", "sweep", "estimators", "trials", "seed", "tol", "max_rounds",
        "beta", "switch_after", "threshold", "dim", "circles", "workers",
    )

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "SimConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - set(cls._FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"graph", "space", "sweep", "estimators"} - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        return cls(**data, base_dir=str(base_dir))

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def build_graph(self) -> Graph:
        spec = dict(self.graph)
        if "file" in spec:
            return load_graph(Path(self.base_dir) / spec["file"])
        kind = spec.get("generator")
        try:
            if kind == "ring":
                return ring_graph(int(spec["n"]))
            if kind == "path":
                return path_graph(int(spec["n"]))
            if kind == "complete":
                return complete_graph(int(spec["n"]))
            if kind == "star":
                return star_graph(int(spec["leaves"]))
            if kind == "random":
                rng = np.random.default_rng(int(spec["seed"]))
                return random_connected_graph(rng, int(spec["n"]), int(spec.get("extra_edges", 0)))
        except KeyError as exc:
            raise ConfigError(f"graph generator {kind!r} needs {exc}") from None
        raise ConfigError(f"graph must give 'file' or a known 'generator', got {spec!r}")


@dataclass(frozen=True)
class TrialRecord:
    sweep: float
    estimator: str
    trial: int
    metric: float
    rounds: int
    converged: bool
    messages: int
    # not written to CSV; kept for likelihood comparisons
    log_likelihood: float = math.nan
    defect: float = math.nan


@dataclass
class ExperimentResult:
    config: SimConfig
    records: list[TrialRecord]
    summary: list[dict]
    reference: list[tuple[float, float]]

    def trials_csv(self) -> str:
        return _csv(TRIALS_HEADER, ([getattr(r, k) for k in TRIALS_HEADER] for r in self.records))

    def summary_csv(self) -> str:
        return _csv(SUMMARY_HEADER, ([row[k] for k in SUMMARY_HEADER] for row in self.summary))

    def reference_csv(self) -> str:
        return _csv(REFERENCE_HEADER, self.reference)

    def select(self, estimator: str, sweep=None) -> list[TrialRecord]:
        return [r for r in self.records if r.estimator == estimator and (sweep is None or r.sweep == sweep)]


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


# -- measurement generation --------------------------------------------------------


def generate_measurements(rng: np.random.Generator, graph: Graph, truth, noise):
    """Edge data ``r_e = (x_t - x_s)`` composed with a noise draw.

    ``truth`` and ``noise`` must agree: real ``(n,)`` or ``(n, d)`` with a
    Gaussian model, unit-complex ``(n,)`` with :class:`VonMisesModel`, or
    :class:`ProductData` with :class:`ProductNoiseModel`.
    """
    m = graph.m
    s, t = graph.sources, graph.targets
    if isinstance(noise, circle.VonMisesModel):
        kappa = noise.for_graph(graph)
        eps = np.empty(m, dtype=complex)
        for k in np.unique(kappa):
            idx = np.flatnonzero(kappa == k)
            eps[idx] = circle.von_mises_sample(rng, 1.0, float(k), len(idx))
        return circle.edge_estimate(graph, truth) * eps
    if isinstance(noise, ProductNoiseModel):
        noise.check(graph)
        omega = edge_differences(graph, truth)
        lin = omega.linear + np.sqrt(noise.variances) * rng.standard_normal(noise.variances.shape)
        circ = omega.circular.copy()
        for j in range(noise.dims[1]):
            circ[:, j] *= generate_measurements(rng, graph, np.ones(graph.n), circle.VonMisesModel(noise.kappa[:, j]))
        return ProductData(lin, circ)
    x = np.asarray(truth, dtype=float)
    omega = x[t] - x[s]
    if isinstance(noise, IidScalar):
        return omega + math.sqrt(noise.sigma2) * rng.standard_normal(m)
    if isinstance(noise, DiagonalScalar):
        return omega + np.sqrt(noise.variances) * rng.standard_normal(m)
    if isinstance(noise, FullScalar):
        c = np.linalg.cholesky(noise.covariance(m))
        return omega + c @ rng.standard_normal(m)
    if isinstance(noise, IidVector):
        c = np.linalg.cholesky(noise.edge_covariance)
        return omega + rng.standard_normal((m, noise.dim)) @ c.T
    if isinstance(noise, FullVector):
        c = np.linalg.cholesky(noise.covariance(m))
        return omega + (c @ rng.standard_normal(m * noise.dim)).reshape(noise.dim, m).T
    raise TypeError(f"unsupported noise model {type(noise).__name__}")


# -- message passing ---------------------------------------------------------------


class LocalityError(NetsyncError, AssertionError):
    pass


class MessageHarness:
    """Synchronous rounds over the directed arcs of a graph.

    Arc ``k < m`` carries edge ``k`` from its source to its target, arc
    ``m + k`` the reverse.  ``send`` delivers one payload per arc for every
    active trial and counts the messages; ``collect`` sums per-arc terms at
    the receiving vertex.  Every ``(sender, receiver)`` pair used is
    recorded for the locality audit.
    """

    def __init__(self, graph: Graph, trials: int):
        self.graph = graph
        m = graph.m
        self.senders = np.concatenate([graph.sources, graph.targets])
        self.receivers = np.concatenate([graph.targets, graph.sources])
        self.edge = np.concatenate([np.arange(m), np.arange(m)])
        self.forward = np.arange(2 * m) < m
        self.messages = np.zeros(trials, dtype=np.int64)
        self.rounds = np.zeros(trials, dtype=np.int64)
        self.pairs_used: set[tuple[int, int]] = set()
        self._neighbours = {(int(a), int(b)) for a, b in zip(self.senders, self.receivers)}

    def send(self, state: np.ndarray, active: np.ndarray) -> np.ndarray:
        """Payload on each arc: the sender's current value, shape ``(trials, 2m, ...)``."""
        self.messages += active * len(self.senders)
        self.rounds += active
        self.pairs_used.update(zip(self.senders.tolist(), self.receivers.tolist()))
        return state[:, self.senders]

    def collect(self, terms: np.ndarray) -> np.ndarray:
        """Sum arc terms into their receivers."""
        return circle._scatter(terms, self.receivers, self.graph.n)

    def audit(self) -> None:
        edges = {(int(s), int(t)) for s, t in zip(self.graph.sources, self.graph.targets)}
        edges |= {(t, s) for s, t in edges}
        stray = self.pairs_used - edges
        if stray:
            raise LocalityError(f"messages between non-neighbours: {sorted(stray)[:5]}")


def _arc_r(h: MessageHarness, r: np.ndarray) -> np.ndarray:
    """Edge data as seen by each arc's receiver (conjugated on reverse arcs)."""
    ra = r[:, h.edge]
    return np.where(h.forward, ra, np.conj(ra))


def harness_power(h, r, kappa, y, beta, tol, max_rounds, active=None):
    """Local power iteration for ``Q_beta``; returns ``(y, done)``."""
    B = y.shape[0]
    k_arc = kappa[h.edge]
    strength = h.collect(k_arc[None, :])[0]
    ra = _arc_r(h, r)
    active = np.ones(B, bool) if active is None else active.copy()
    done = np.zeros(B, bool)
    under = np.zeros(B, bool)
    for _ in range(max_rounds):
        if not active.any():
            break
        inbox = h.send(y, active)
        y_new = (h.collect(k_arc * inbox * ra) + beta * y) / (strength + beta)
        a, x, _ = circle._split(y_new)
        x_old = y / np.maximum(np.abs(y), 1e-300)
        quiet = np.all(np.abs(x - x_old) < tol, axis=1)
        under |= np.any(a < 1e-300, axis=1)
        y = np.where(active[:, None], a * x, y)
        finished = active & (quiet | under)
        done |= active & quiet & ~under
        active &= ~finished
    return y, done


def harness_hybrid(h, r, kappa, y, beta, threshold, max_rounds):
    """Hybrid critical-point iteration; returns ``(x, done, defect, flagged)``.

    ``max_rounds`` caps each trial's total round count in ``h``, including
    rounds already spent before the switch.  Each exchange first evaluates
    the stop test, so the last permitted round may end without an update.
    """
    B, n = y.shape
    k_arc = kappa[h.edge]
    ra = _arc_r(h, r)
    scale = np.broadcast_to(h.collect(k_arc[None, :])[0], (B, n)).copy()
    a, x, _ = circle._split(y)
    active = np.ones(B, bool)
    done = np.zeros(B, bool)
    flagged = np.zeros(B, bool)
    defect = np.full(B, np.inf)
    while True:
        active &= h.rounds < max_rounds
        if not active.any():
            break
        inbox = h.send(np.stack([a * x, x], axis=-1), active)
        z = h.collect(k_arc * inbox[..., 1] * ra) * np.conj(x)
        dmax = np.max(np.abs(z.imag), axis=1)
        defect = np.where(active, dmax, defect)
        quiet = dmax < threshold
        done |= active & quiet
        active &= ~quiet
        bad = z.real <= 0
        flagged |= active & bad.any(axis=1)
        new_scale = np.where(bad, scale, z.real)
        y_new = (h.collect(k_arc * inbox[..., 0] * ra) + beta * a * x) / (new_scale + beta)
        a2, x2, _ = circle._split(y_new)
        upd = active[:, None]
        scale = np.where(upd, new_scale, scale)
        a = np.where(upd, a2, a)
        x = np.where(upd, x2, x)
    return x, done, defect, flagged


def harness_jacobi(h, r, deg, x, damping, tol, max_rounds):
    """Jacobi sweeps on real data ``r`` of shape ``(trials, m)``.

    Uses the stopping rule of :func:`~netsync.local_gaussian.jacobi_run`:
    edge increments below ``tol`` together with a geometric tail bound.
    """
    B = x.shape[0]
    s, t = h.graph.sources, h.graph.targets
    sign = np.where(h.forward, 1.0, -1.0)
    ra = r[:, h.edge] * sign
    floor = 1e-14 * (1.0 + np.max(np.abs(r), axis=1, initial=0.0))
    active = np.ones(B, bool)
    done = np.zeros(B, bool)
    prev = np.full(B, np.inf)
    for _ in range(max_rounds):
        if not active.any():
            break
        inbox = h.send(x, active)
        new = h.collect(inbox + ra) / deg
        new = (1.0 - damping) * x + damping * new
        step = new - x
        delta = np.max(np.abs(step[:, t] - step[:, s]), axis=1, initial=0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(prev > 0, delta / prev, 0.0)
            tail = np.where(q < 1.0, delta * q / (1.0 - q), np.inf)
        quiet = (delta < tol) & ((delta <= floor) | (tail < tol))
        x = np.where(active[:, None], new, x)
        prev = np.where(active, delta, prev)
        done |= active & quiet
        active &= ~quiet
    return x, done


# -- experiment --------------------------------------------------------------------


def trial_rng(seed: int, sweep_index: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(sweep_index, trial)))


def _run_sweep(config: SimConfig, graph: Graph, sweep_index: int) -> list[TrialRecord]:
    value = float(config.sweep[sweep_index])
    rngs = [trial_rng(config.seed, sweep_index, t) for t in range(config.trials)]
    runner = {"real": _sweep_real, "real_d": _sweep_real, "circle": _sweep_circle, "product": _sweep_product}
    return runner[config.space](config, graph, value, rngs)


def _records(config, value, name, metric, rounds, done, messages, ll=None, defect=None):
    out = []
    for t in range(len(metric)):
        out.append(
            TrialRecord(
                sweep=value,
                estimator=name,
                trial=t,
                metric=float(metric[t]),
                rounds=int(rounds[t]),
                converged=bool(done[t]),
                messages=int(messages[t]),
                log_likelihood=math.nan if ll is None else float(ll[t]),
                defect=math.nan if defect is None else float(defect[t]),
            )
        )
    return out


def _sweep_real(config, graph, sigma, rngs):
    B, n = len(rngs), graph.n
    d = config.dim if config.space == "real_d" else 1
    noise = IidScalar(sigma**2) if d == 1 else IidVector(sigma**2 * np.eye(d))
    truths, data = [], []
    for rng in rngs:
        x = rng.uniform(0.0, 10.0, n if d == 1 else (n, d))
        truths.append(x)
        data.append(generate_measurements(rng, graph, x, noise))
    # coordinates become extra rows of the batch
    X = np.stack(truths).reshape(B, n, d).transpose(0, 2, 1).reshape(B * d, n)
    R = np.stack(data).reshape(B, graph.m, d).transpose(0, 2, 1).reshape(B * d, graph.m)
    inc = build_incidence(graph)
    ref = inc.ref_index
    zeros = np.zeros(B, dtype=int)

    def metric(xh):
        e = (xh - xh[:, ref : ref + 1]) - (X - X[:, ref : ref + 1])
        e = np.delete(e, ref, axis=1).reshape(B, d, n - 1)
        return np.sum(e**2, axis=1).mean(axis=1)

    out = []
    for name in config.estimators:
        if name == "direct_ML":
            cf = spd_factor(inc.D_W @ inc.D_W.T)
            xw = scipy.linalg.cho_solve(cf, inc.D_W @ R.T).T
            xh = np.insert(xw, ref, 0.0, axis=1)
            out += _records(config, sigma, name, metric(xh), zeros, np.ones(B, bool), zeros)
        elif name == "jacobi":
            h = MessageHarness(graph, B * d)
            damping = 0.5 if graph.is_bipartite() else 1.0
            xh, done = harness_jacobi(h, R, graph.degrees.astype(float), np.zeros_like(X), damping, config.tol, config.max_rounds)
            h.audit()
            # a vector state travels as one message per arc
            rounds = h.rounds.reshape(B, d).max(axis=1)
            done_t = done.reshape(B, d).all(axis=1)
            out += _records(config, sigma, name, metric(xh), rounds, done_t, rounds * 2 * graph.m)
    return out


def _sweep_circle(config, graph, kappa, rngs):
    B, n, m = len(rngs), graph.n, graph.m
    model = circle.VonMisesModel.uniform(m, kappa)
    k = model.kappa
    beta = kappa if config.beta is None else config.beta
    X = np.empty((B, n), complex)
    R = np.empty((B, m), complex)
    Y0 = np.empty((B, n), complex)
    for t, rng in enumerate(rngs):
        X[t] = np.exp(1j * rng.uniform(0.0, 2 * np.pi, n))
        R[t] = generate_measurements(rng, graph, X[t], model)
        Y0[t] = circle.initial_state(rng, n).y
    ref = 0
    zeros = np.zeros(B, dtype=int)

    def finish(y):
        x = y / np.abs(y)
        return x * np.conj(x[:, ref : ref + 1])

    def loglik(x):
        om = x[:, graph.targets] * np.conj(x[:, graph.sources])
        return np.sum(k * np.real(np.conj(om) * R), axis=1) - m * (np.log(2 * np.pi) + circle.log_i0(kappa))

    out = []
    for name in config.estimators:
        if name in ("global_Q", "global_A"):
            A = np.zeros((B, n, n), complex)
            rows = np.arange(B)[:, None]
            np.add.at(A, (rows, graph.targets[None, :], graph.sources[None, :]), k * R)
            np.add.at(A, (rows, graph.sources[None, :], graph.targets[None, :]), k * np.conj(R))
            if name == "global_Q":
                s = 1.0 / np.sqrt(circle.vertex_strength(graph, k))
                ev, vec = np.linalg.eigh(s[:, None] * A * s[None, :])
                y = vec[..., -1] * s
            else:
                ev, vec = np.linalg.eigh(A)
                y = vec[..., -1]
            ok = (ev[:, -1] - ev[:, -2] >= 1e-10) & np.all(np.abs(y) > 1e-12 * np.abs(y).max(axis=1, keepdims=True), axis=1)
            x = finish(y)
            out += _records(config, kappa, name, circle.circular_error(x, X, ref), zeros, ok, zeros, loglik(x))
        elif name == "local_Q":
            h = MessageHarness(graph, B)
            y, done = harness_power(h, R, k, Y0.copy(), beta, config.tol, config.max_rounds)
            h.audit()
            x = finish(y)
            out += _records(config, kappa, name, circle.circular_error(x, X, ref), h.rounds, done, h.messages, loglik(x))
        elif name == "hybrid_ML":
            h = MessageHarness(graph, B)
            y, _ = harness_power(h, R, k, Y0.copy(), beta, config.tol, min(config.switch_after, config.max_rounds))
            xh, done, defect, _ = harness_hybrid(h, R, k, y, beta, config.threshold, config.max_rounds)
            h.audit()
            x = finish(xh)
            out += _records(config, kappa, name, circle.circular_error(x, X, ref), h.rounds, done, h.messages, loglik(x), defect)
    return out


def _sweep_product(config, graph, kappa, rngs):
    B, n, m = len(rngs), graph.n, graph.m
    d, q = config.dim, config.circles
    model = ProductNoiseModel.uniform(m, [1.0 / kappa] * d, [kappa] * q)
    metrics, done = np.empty(B), np.empty(B, bool)
    for t, rng in enumerate(rngs):
        x = ProductData(rng.uniform(0.0, 10.0, (n, d)), np.exp(1j * rng.uniform(0.0, 2 * np.pi, (n, q))))
        r = generate_measurements(rng, graph, x, model)
        est = ml_estimate_product(graph, r, model, threshold=config.threshold)
        ref = est.ref_index
        lin = (est.values.linear - est.values.linear[ref]) - (x.linear - x.linear[ref])
        err = float(np.sum(np.delete(lin, ref, axis=0) ** 2, axis=1).mean()) if d else 0.0
        for j in range(q):
            err += float(circle.circular_error(est.values.circular[:, j], x.circular[:, j], ref))
        metrics[t], done[t] = err, est.converged
    zeros = np.zeros(B, dtype=int)
    return _records(config, kappa, "direct_ML", metrics, zeros, done, zeros)


def reference_trace(config: SimConfig, graph: Graph, value: float) -> float:
    """``trace(F^{-1})`` of the reference-gauge Fisher information."""
    inc = build_incidence(graph)
    if config.space == "real":
        return fisher_report(graph, inc, IidScalar(value**2)).trace_inverse
    if config.space == "real_d":
        return fisher_report(graph, inc, IidVector(value**2 * np.eye(config.dim))).trace_inverse
    if config.space == "circle":
        return circle.fisher_report_circle(graph, circle.VonMisesModel.uniform(graph.m, value)).trace_inverse
    model = ProductNoiseModel.uniform(graph.m, [1.0 / value] * config.dim, [value] * config.circles)
    return fisher_report_product(graph, model).trace_inverse


def _summarise(config: SimConfig, records: list[TrialRecord]) -> list[dict]:
    rows = []
    for value in config.sweep:
        for name in config.estimators:
            sel = [r for r in records if r.sweep == float(value) and r.estimator == name]
            metric = np.array([r.metric for r in sel])
            rows.append(
                {
                    "sweep": float(value),
                    "estimator": name,
                    "trials": len(sel),
                    "mean_metric": float(metric.mean()),
                    "stderr_metric": float(metric.std(ddof=1) / math.sqrt(len(sel))) if len(sel) > 1 else 0.0,
                    "converged_fraction": float(np.mean([r.converged for r in sel])),
                    "mean_rounds": float(np.mean([r.rounds for r in sel])),
                    "mean_messages": float(np.mean([r.messages for r in sel])),
                }
            )
    return rows


def _sweep_task(args):
    config, graph, i = args
    return i, _run_sweep(config, graph, i)


def run_experiment(config: SimConfig, workers: int | None = None) -> ExperimentResult:
    """Run every (sweep value, estimator, trial) combination.

    Sweep values are independent tasks; with ``workers > 1`` they run in
    separate processes.  Output order is fixed by the config regardless.
    """
    graph = config.build_graph()
    if not graph.is_connected():
        raise ConfigError("simulation graph must be connected")
    workers = config.workers if workers is None else workers
    tasks = [(config, graph, i) for i in range(len(config.sweep))]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            done = dict(pool.map(_sweep_task, tasks))
    else:
        done = dict(map(_sweep_task, tasks))
    order = {name: k for k, name in enumerate(config.estimators)}
    records = sorted(
        itertools.chain.from_iterable(done[i] for i in range(len(tasks))),
        key=lambda r: (config.sweep.index(r.sweep), order[r.estimator], r.trial),
    )
    reference = [(float(v), reference_trace(config, graph, float(v))) for v in config.sweep]
    return ExperimentResult(config, records, _summarise(config, records), reference)


def write_results(result: ExperimentResult, out_dir: str | Path) -> list[Path]:
    """Write ``trials.csv``, ``summary.csv`` and ``reference.csv`` atomically."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in (
        ("trials.csv", result.trials_csv()),
        ("summary.csv", result.summary_csv()),
        ("reference.csv", result.reference_csv()),
    ):
        paths.append(atomic_write(out / name, text))
    return paths


def atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


# -- network design ------------------------------------------------------------------


@dataclass(frozen=True)
class DesignCandidate:
    source: object
    target: object
    spanning_trees: float
    fisher_det: float
    rank: int
    tied: bool


def missing_edges(graph: Graph) -> list[tuple]:
    """Vertex pairs with no edge between them, in vertex order."""
    present = {frozenset((e.source, e.target)) for e in graph.edges}
    return [(u, v) for u, v in itertools.combinations(graph.vertices, 2) if frozenset((u, v)) not in present]


def network_design_report(graph: Graph, candidates=None, sigma2: float = 1.0) -> list[DesignCandidate]:
    """Rank single-edge additions by the resulting spanning-tree count.

    ``fisher_det`` is the determinant for iid noise of variance ``sigma2``,
    ``t / sigma2^(n-1)``, so both columns order candidates identically.
    Equal counts share a rank and are marked ``tied``.  A candidate parallel
    to an existing edge is allowed.
    """
    if not graph.is_connected():
        raise ConfigError("base graph must be connected")
    candidates = missing_edges(graph) if candidates is None else [tuple(c) for c in candidates]
    scored = []
    for u, v in candidates:
        t = spanning_tree_count(graph.with_edge(u, v))
        scored.append((u, v, t, t / sigma2 ** (graph.n - 1)))
    scored.sort(key=lambda c: -c[2])
    counts = [c[2] for c in scored]
    out = []
    for k, (u, v, t, det) in enumerate(scored):
        rank = counts.index(t) + 1
        out.append(DesignCandidate(u, v, t, det, rank, counts.count(t) > 1))
    return out
