"""Command-line front end: ``netsync analyze | estimate | simulate | design``.

Exit status is 0 on success, 1 for unusable input and 2 when a numerical
method fails or does not converge.  Output files are written to a temporary
name and renamed, so a failed command leaves no partial file behind.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import circle
from .abelian import ProductNoiseModel, ml_estimate_product
from .errors import EstimationError, GraphError, NetsyncError
from .gaussian import FullScalar, IidVector, ml_estimate_correlated, ml_estimate_iid, ml_estimate_vector
from .graph import Graph, build_incidence, load_graph, log_spanning_tree_count, spanning_tree_count
from .io import load_measurements, load_noise_file, load_vertex_values, vertex_document, write_json_atomic
from .local_gaussian import convergence_diagnostics, jacobi_run, signed_edge_sums
from .sim import SimConfig, atomic_write, network_design_report, run_experiment, write_results

SEED_ENV = "NETSYNC_SEED"
METHODS = {
    "real": ("direct", "jacobi"),
    "real_d": ("direct", "jacobi"),
    "circle": ("eigen", "hybrid"),
    "product": ("direct",),
}


class UsageError(NetsyncError, ValueError):
    pass


def g12(v) -> str:
    return f"{float(v):.12g}"


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def resolve_vertex(graph: Graph, name):
    """Match a command-line vertex name against ids that may not be strings."""
    if name is None or name in graph.vertices:
        return name
    for v in graph.vertices:
        if str(v) == name:
            return v
    raise GraphError(f"unknown vertex {name!r}")


# -- analyze -------------------------------------------------------------------------


def analyze_graph(graph: Graph) -> dict:
    comps = graph.components() if graph.n else []
    connected = len(comps) == 1
    report = {
        "vertices": graph.n,
        "edges": graph.m,
        "connected": connected,
        "components": len(comps),
        "betti_number": graph.m - graph.n + len(comps),
        "spanning_trees": spanning_tree_count(graph),
        "log_spanning_trees": log_spanning_tree_count(graph),
        "det_reduced_laplacian": spanning_tree_count(graph) if connected else 0.0,
        "bipartite": graph.is_bipartite(),
    }
    if graph.n and np.all(graph.degrees > 0):
        diag = convergence_diagnostics(graph)
        report["jacobi_spectral_radius"] = diag.spectral_radius
        report["bipartite_hazard"] = diag.bipartite_hazard
    else:
        report["jacobi_spectral_radius"] = None
        report["bipartite_hazard"] = None
    return report


def cmd_analyze(args) -> int:
    report = analyze_graph(load_graph(args.graph))
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        for k, v in report.items():
            if isinstance(v, float):
                v = g12(v)
            elif v is None:
                v = "undefined"
            print(f"{k}: {v}")
    return 0


# -- estimate ------------------------------------------------------------------------


def _noise_params(args, graph: Graph) -> dict:
    params = load_noise_file(args.noise_file, graph) if args.noise_file else {}
    if args.sigma2 is not None:
        params.setdefault("variances", np.full(graph.m, args.sigma2))
    if args.kappa is not None:
        params.setdefault("kappa", np.full(graph.m, args.kappa))
    return params


def _real_estimate(args, graph, r, params):
    inc = build_incidence(graph, args.ref)
    vector = r.ndim == 2
    if "covariance" in params:
        R = params["covariance"]
    elif "variances" in params:
        R = np.diag(params["variances"])
    else:
        R = None
    if args.method == "jacobi":
        if R is not None and not np.allclose(R, R[0, 0] * np.eye(graph.m)):
            raise UsageError("jacobi needs iid noise; use --method direct for weighted or correlated noise")
        res = jacobi_run(graph, r, tol=args.tol, max_iter=args.max_iter, ref_vertex=args.ref, incidence=inc)
    elif vector:
        if R is not None and not np.allclose(R, R[0, 0] * np.eye(graph.m)):
            raise UsageError("vector data supports iid noise only")
        res = ml_estimate_vector(graph, inc, r, IidVector(np.eye(r.shape[1])))
    elif R is None:
        res = ml_estimate_iid(graph, inc, r)
    else:
        res = ml_estimate_correlated(graph, inc, r, FullScalar(R).covariance(graph.m))
    x = res.vertex_values()
    if args.gauge == "mean-zero":
        x = x - x.mean(axis=0)
    resid = res.residual
    weighted = resid if R is None else np.linalg.solve(R, resid)
    kirchhoff = float(np.max(np.abs(signed_edge_sums(graph, weighted))))
    diag = {
        "method": args.method,
        "iterations": res.iterations,
        "converged": res.converged,
        "residual_norm": float(np.linalg.norm(resid)),
        "residual_max": float(np.max(np.abs(resid))),
        "kirchhoff_residual": kirchhoff,
    }
    return x, diag, res.converged


def _circle_estimate(args, graph, r, params):
    kappa = params.get("kappa", np.ones(graph.m))
    model = circle.VonMisesModel(kappa)
    model.for_graph(graph)
    if args.method == "eigen":
        est = circle.global_eigen_estimate(graph, r, model, "Q", ref_vertex=args.ref)
        converged = True
        diag = {"method": "eigen", "eigenvalue": est.diagnostics["eigenvalue"], "ambiguous": est.diagnostics["ambiguous"]}
    else:
        rng = np.random.default_rng(args.seed)
        beta = float(np.mean(model.kappa))
        state = circle.local_power_run(
            graph, r, model, circle.initial_state(rng, graph.n), beta=beta, max_iter=args.switch_after
        )
        est, rep = circle.hybrid_ml_refine(
            graph, r, model, state, threshold=args.threshold, max_iter=args.max_iter or 10_000, ref_vertex=args.ref
        )
        converged = rep.converged
        diag = {
            "method": "hybrid",
            "iterations": state.iteration + rep.iterations,
            "converged": rep.converged,
            "flagged_vertices": [str(graph.vertices[v]) for v in rep.flagged_vertices],
        }
    rep = circle.critical_point_report(graph, r, model, est.values)
    omega = circle.edge_estimate(graph, est.values)
    diag["critical_point_defect"] = rep.max_defect
    diag["log_likelihood"] = circle.log_likelihood(graph, r, est.values, model)
    diag["residual_max"] = float(np.max(np.abs(np.angle(r * np.conj(omega)))))
    return est.values, diag, converged


def _product_estimate(args, graph, r, params):
    d, q = r.dims
    var = params.get("variances", np.ones(graph.m))
    kap = params.get("kappa", np.ones(graph.m))
    model = ProductNoiseModel(np.tile(np.asarray(var)[:, None], (1, d)), np.tile(np.asarray(kap)[:, None], (1, q)))
    est = ml_estimate_product(graph, r, model, ref_vertex=args.ref, threshold=args.threshold)
    diag = {
        "method": "direct",
        "converged": est.converged,
        "critical_point_defect": max((c.max_defect for c in est.circular_reports), default=0.0),
    }
    return est.values, diag, est.converged


def _truth_metric(graph, space, x, truth_path, ref_index):
    _, truth = load_vertex_values(truth_path, graph, space)
    if space == "circle":
        return "circular_error", float(circle.circular_error(x, truth, ref_index))
    if space == "product":
        err = np.delete((x.linear - x.linear[ref_index]) - (truth.linear - truth.linear[ref_index]), ref_index, 0)
        ce = [circle.circular_error(x.circular[:, j], truth.circular[:, j], ref_index) for j in range(x.dims[1])]
        return "error", float(np.mean(np.sum(err**2, axis=1)) + np.sum(ce))
    e = (x - x[ref_index]) - (truth - truth[ref_index])
    e = np.delete(np.asarray(e).reshape(graph.n, -1), ref_index, 0)
    return "squared_error", float(np.mean(np.sum(e**2, axis=1)))


def cmd_estimate(args) -> int:
    graph = load_graph(args.graph)
    space, r = load_measurements(args.measurements, graph, args.space)
    if space is None:
        raise UsageError("measurement file has no 'space'; pass --space")
    method = args.method or METHODS[space][0]
    if method not in METHODS[space]:
        raise UsageError(f"method {method!r} does not apply to {space!r} data; choose from {METHODS[space]}")
    if space != "real" and space != "real_d" and args.gauge != "reference":
        raise UsageError("only the reference gauge is defined for phases")
    args.method = method
    args.ref = resolve_vertex(graph, args.ref)
    params = _noise_params(args, graph)
    runner = {"real": _real_estimate, "real_d": _real_estimate, "circle": _circle_estimate, "product": _product_estimate}
    x, diag, converged = runner[space](args, graph, r, params)
    ref = args.ref if args.ref is not None else graph.vertices[0]
    if args.truth:
        name, value = _truth_metric(graph, space, x, args.truth, graph.index(ref))
        diag[name] = value
    doc = vertex_document(graph, space, x, reference=ref, gauge=args.gauge, diagnostics=diag)
    if args.out:
        write_json_atomic(args.out, doc)
    for k, v in diag.items():
        print(f"{k}: {g12(v) if isinstance(v, float) else v}")
    if not converged:
        print("error: estimator did not converge", file=sys.stderr)
        return 2
    return 0


# -- simulate ------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = SimConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    elif SEED_ENV in os.environ:
        config.seed = default_seed()
    if args.trials is not None:
        config.trials = args.trials
    SimConfig.__post_init__(config)
    result = run_experiment(config, workers=args.workers)
    for p in write_results(result, args.out):
        print(p)
    return 0


# -- design --------------------------------------------------------------------------


def cmd_design(args) -> int:
    graph = load_graph(args.graph)
    if args.candidates == "all-missing":
        candidates = None
    else:
        try:
            with open(args.candidates) as fh:
                candidates = [tuple(c) for c in json.load(fh)]
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise UsageError(f"{args.candidates}: {exc}") from None
        for c in candidates:
            if len(c) != 2:
                raise UsageError(f"candidate {c!r} is not a vertex pair")
        candidates = [(resolve_vertex(graph, u), resolve_vertex(graph, v)) for u, v in candidates]
    ranked = network_design_report(graph, candidates, args.sigma2)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "source", "target", "spanning_trees", "fisher_det", "tied"])
    for c in ranked:
        w.writerow([c.rank, c.source, c.target, g12(c.spanning_trees), g12(c.fisher_det), int(c.tied)])
    if args.out:
        atomic_write(args.out, buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0


# -- entry point ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Reports usage errors with exit status 1, like other input errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netsync", description="Offset and phase alignment on measurement graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="graph invariants relevant to estimation")
    a.add_argument("graph")
    a.add_argument("--json", action="store_true", help="print the report as JSON")
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("estimate", help="estimate vertex values from edge measurements")
    e.add_argument("graph")
    e.add_argument("measurements")
    e.add_argument("--space", choices=("real", "real_d", "circle", "product"))
    e.add_argument("--method", choices=("direct", "jacobi", "eigen", "hybrid"))
    e.add_argument("--ref", help="reference vertex id (default: first vertex)")
    e.add_argument("--gauge", choices=("reference", "mean-zero"), default="reference")
    e.add_argument("--sigma2", type=float, help="iid Gaussian variance")
    e.add_argument("--kappa", type=float, help="common von Mises concentration")
    e.add_argument("--noise-file", help="JSON with per-edge variances/kappa or a covariance matrix")
    e.add_argument("--truth", help="vertex values to score the estimate against")
    e.add_argument("--tol", type=float, default=1e-10)
    e.add_argument("--max-iter", type=int)
    e.add_argument("--threshold", type=float, default=1e-9, help="critical-point defect threshold")
    e.add_argument("--switch-after", type=int, default=50, help="power rounds before the hybrid switch")
    e.add_argument("--seed", type=int, help=f"seed for random initial phases (default ${SEED_ENV} or 0)")
    e.add_argument("--out", help="write the estimate as JSON")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="run a Monte Carlo experiment from a JSON config")
    s.add_argument("config")
    s.add_argument("--out", required=True, help="directory for the CSV files")
    s.add_argument("--seed", type=int, help=f"override the config seed (also ${SEED_ENV})")
    s.add_argument("--trials", type=int)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("design", help="rank candidate edges by spanning-tree count")
    d.add_argument("graph")
    d.add_argument("--candidates", default="all-missing", help="'all-missing' or a JSON list of vertex pairs")
    d.add_argument("--sigma2", type=float, default=1.0)
    d.add_argument("--out", help="also write the table as CSV")
    d.set_defaults(func=cmd_design)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "seed", None) is None and args.command == "estimate":
            args.seed = default_seed()
        return args.func(args)
    except (EstimationError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NetsyncError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
