"""Command-line entry point: ``avgdyn simulate | verify | experiment``.

Every run writes a ``manifest.json`` holding the full configuration; running
``avgdyn --manifest path/manifest.json`` re-executes it and reproduces the
numeric output exactly.

Exit codes: 0 ok, 1 file I/O or numerical failure, 2 validation, 3 non-convergence, 4 acceptance
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, dynamics, duality, qchain
from .dynamics import EDGE, NODE, ModelParams
from .graph import Graph, GraphError, generate, read_graph, spectral

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NONCONVERGED, EXIT_ACCEPTANCE = 0, 1, 2, 3, 4

SUITES = ("duality", "qchain", "martingale", "potential-drop", "edge-identity")
EXPERIMENTS = ("variance", "scaling", "occupancy")

VARIANCE_COLUMNS = ("graph", "n", "d", "k", "alpha", "trials", "seed", "epsilon", "var_F",
                    "std_error_of_var", "exact_form", "lower_bound", "upper_bound", "z",
                    "mean_F", "std_error_of_mean", "failed_trials", "pass")
SCALING_COLUMNS = ("n", "lambda2", "median_T", "bound_value", "ratio", "unconverged", "seed")
OCCUPANCY_COLUMNS = ("class", "frequency", "expected", "std_error", "z")

# keys of the parsed arguments that define a run (everything but output plumbing)
_CONFIG_KEYS = ("command", "suite", "experiment", "graph", "generate", "model", "alpha", "k",
                "lazy", "init", "center", "epsilon", "trials", "seed", "max_steps",
                "trace_stride", "log_length", "family", "sizes", "band", "bootstrap", "burn_in",
                "format", "events", "gnuplot")


class CliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config plumbing


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, columns, rows, fmt: str) -> Path:
    if fmt == "json":
        path = path.with_suffix(".json")
        path.write_text(json.dumps([dict(zip(columns, r)) for r in rows], indent=1) + "\n")
        return path
    path = path.with_suffix(".csv")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def load_graph_arg(args) -> Graph:
    if bool(args.graph) == bool(args.generate):
        raise CliError("give exactly one of --graph FILE or --generate SPEC")
    if args.graph:
        return read_graph(args.graph)
    return generate(args.generate)


def params_from_args(args) -> ModelParams:
    return ModelParams(args.model, args.alpha, args.k, args.lazy)


def parse_init(spec: str, graph: Graph) -> np.ndarray:
    """Initial state from a spec string.

    constant:c | plusminus[:s] | eigenvector:P|L[:scale|n] |
    random-uniform:lo:hi:seed | file:path
    """
    kind, _, rest = spec.partition(":")
    n = graph.n
    try:
        if kind == "constant":
            return np.full(n, float(rest or 0.0))
        if kind == "plusminus":
            s = float(rest) if rest else 1.0
            return s * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        if kind == "eigenvector":
            which, _, scale = rest.partition(":")
            scale = n if scale in ("", "n") else float(scale)
            return dynamics.eigenvector_initial_state(graph, which, scale)
        if kind == "random-uniform":
            lo, hi, seed = rest.split(":")
            return np.random.default_rng(int(seed)).uniform(float(lo), float(hi), size=n)
        if kind == "file":
            return dynamics.as_state(np.loadtxt(rest, dtype=float, ndmin=1), graph)
    except ValueError as exc:
        raise CliError(f"bad --init {spec!r}: {exc}") from None
    raise CliError(f"unknown --init kind {kind!r}")


def initial_state(args, graph: Graph) -> np.ndarray:
    x = parse_init(args.init, graph)
    return dynamics.center(x, graph) if args.center else x


def resolve_workers(args) -> int:
    if args.workers is not None:
        w = args.workers
    else:
        try:
            w = int(os.environ.get("AVGDYN_WORKERS", "1"))
        except ValueError:
            raise CliError("AVGDYN_WORKERS must be an integer") from None
    if w < 1:
        raise CliError("worker count must be >= 1")
    return w


def graph_info(graph: Graph) -> dict:
    return {"name": graph.name, "n": graph.n, "m": graph.m}


def make_manifest(args, graph: dict, results, criteria=None) -> dict:
    cfg = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    return {
        "tool": "avgdyn",
        "version": __version__,
        "config": cfg,
        "graph": graph,
        "seeds": {
            "master_seed": args.seed,
            "per_trial": "numpy SeedSequence(master_seed, spawn_key=(i,)), i = 0..trials-1",
        },
        "results": results,
        "criteria": criteria or {},
    }


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args, out: Path) -> int:
    graph = load_graph_arg(args)
    params = params_from_args(args)
    params.validate(graph)
    if args.trace_stride < 1:
        raise CliError("--trace-stride must be >= 1")
    x0 = initial_state(args, graph)
    res = dynamics.run_to_convergence(x0, graph, params, args.epsilon, max_steps=args.max_steps,
                                      rng=np.random.default_rng(args.seed),
                                      trace_stride=args.trace_stride, record_events=args.events)
    trace_path = write_table(out / "trace", dynamics.TRACE_COLUMNS, res.trace, args.format)
    result = {"graph": graph.summary(), "params": params.to_dict(), "epsilon": args.epsilon,
              "seed": args.seed, **res.to_dict()}
    write_json(out / "result.json", result)
    if args.events:
        log = duality.EventLog(tuple(res.events), params, graph)
        (out / "events.jsonl").write_text(log.to_jsonl())
    write_json(out / "manifest.json", make_manifest(args, graph_info(graph), res.to_dict()))
    if args.gnuplot and args.format == "csv":
        (out / "trace.gp").write_text(
            "set datafile separator ','\nset key autotitle columnhead\nset logscale y\n"
            "set xlabel 'step'\nset ylabel 'phi'\n"
            f"plot '{trace_path.name}' using 1:3 with lines\n")
    print(f"{res.status}: steps={res.steps} M={res.final_M!r} phi={res.final_phi!r}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


# ---------------------------------------------------------------------------
# verify


def _random_states(graph: Graph, count: int, rng) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(count, graph.n))


def suite_duality(graph, params, trials, rng, log_length) -> dict:
    checks = []
    for i in range(trials):
        log = duality.random_log(graph, params, log_length, rng)
        xi0 = rng.uniform(-1.0, 1.0, size=graph.n)
        _, state = duality.diffuse_backward(xi0, log, check_mass=True)
        r = duality.duality_check(xi0, log)
        tol = duality.duality_tolerance(xi0)
        checks.append({"log": i, "residual": r, "tolerance": tol, "mass_error": state.column_sum_error(),
                       "pass": r <= tol})
    return {"checks": checks, "max_residual": max(c["residual"] for c in checks),
            "passed": all(c["pass"] for c in checks)}


def suite_qchain(graph, params, trials, rng, log_length) -> dict:
    rep = qchain.verify_stationary(graph, params.k, params.alpha)
    return {"checks": [rep.to_dict()], "max_residual": rep.residual, "passed": rep.passed()}


def suite_martingale(graph, params, trials, rng, log_length) -> dict:
    """Node Model: E[M'] = M. Edge Model: E[Avg'] = Avg always, and E[M'] = M
    only on regular graphs, where the two coincide."""
    checks = []
    for i, x in enumerate(_random_states(graph, trials, rng)):
        e = dynamics.exact_one_step_expectation(x, graph, params)
        if params.kind == NODE:
            r = e.martingale_residual
        else:
            r = e.avg_martingale_residual
            if graph.is_regular:
                r = max(r, e.martingale_residual)
        checks.append({"state": i, "residual": r, "M_residual": e.martingale_residual,
                       "Avg_residual": e.avg_martingale_residual, "pass": r <= 1e-12})
    return {"martingale": "M" if params.kind == NODE else "Avg", "checks": checks,
            "max_residual": max(c["residual"] for c in checks),
            "passed": all(c["pass"] for c in checks)}


def suite_potential_drop(graph, params, trials, rng, log_length) -> dict:
    if params.kind != NODE:
        raise CliError("the potential-drop suite applies to the node model")
    lam = spectral(graph).lambda2_P
    factor = dynamics.potential_drop_factor(lam, params.alpha, params.k, graph.n)
    checks = []
    for i, x in enumerate(_random_states(graph, trials, rng)):
        e = dynamics.exact_one_step_expectation(x, graph, params)
        excess = e.E_phi_next - factor * e.phi
        checks.append({"state": i, "ratio": e.E_phi_next / e.phi, "factor": factor,
                       "residual": max(excess, 0.0), "pass": excess <= 1e-12 * max(1.0, e.phi)})
    return {"lambda2_P": lam, "factor": factor, "checks": checks,
            "max_residual": max(c["residual"] for c in checks),
            "passed": all(c["pass"] for c in checks)}


def suite_edge_identity(graph, params, trials, rng, log_length) -> dict:
    if params.kind != EDGE:
        raise CliError("the edge-identity suite applies to the edge model")
    checks = []
    for i, x in enumerate(_random_states(graph, trials, rng)):
        e = dynamics.exact_one_step_expectation(x, graph, params)
        pred = dynamics.edge_second_moment_prediction(x, graph, params.alpha)
        r = abs(e.E_sumsq_next - pred)
        checks.append({"state": i, "residual": r, "pass": r <= 1e-12})
    return {"checks": checks, "max_residual": max(c["residual"] for c in checks),
            "passed": all(c["pass"] for c in checks)}


_SUITE_FUNCS = {
    "duality": suite_duality,
    "qchain": suite_qchain,
    "martingale": suite_martingale,
    "potential-drop": suite_potential_drop,
    "edge-identity": suite_edge_identity,
}


def cmd_verify(args, out: Path) -> int:
    if args.suite not in _SUITE_FUNCS:
        raise CliError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
    graph = load_graph_arg(args)
    params = params_from_args(args)
    params.validate(graph)
    if args.trials < 1:
        raise CliError("--trials must be >= 1")
    rng = np.random.default_rng(args.seed)
    body = _SUITE_FUNCS[args.suite](graph, params, args.trials, rng, args.log_length)
    report = {"suite": args.suite, "graph": graph.name, "params": params.to_dict(), "seed": args.seed, **body}
    write_json(out / "report.json", report)
    write_json(out / "manifest.json", make_manifest(args, graph_info(graph), {"max_residual": body["max_residual"]},
                                                    {args.suite: body["passed"]}))
    print(f"{args.suite}: {'PASS' if body['passed'] else 'FAIL'} max_residual={body['max_residual']:.3e}"
          f" checks={len(body['checks'])}")
    return EXIT_OK if body["passed"] else EXIT_ACCEPTANCE


# ---------------------------------------------------------------------------
# experiment


def experiment_variance(args, graph: Graph, params: ModelParams, workers: int):
    x0 = initial_state(args, graph)
    pred = analysis.variance_analytic(graph, x0, params.k, params.alpha)
    mc = analysis.variance_monte_carlo(graph, x0, params, args.trials, epsilon=args.epsilon,
                                       master_seed=args.seed, workers=workers,
                                       bootstrap=args.bootstrap)
    z = (mc.var_F - pred.exact_form) / mc.std_error_of_var if mc.std_error_of_var > 0 else math.inf
    ok = abs(z) <= 3.0 and not mc.flagged
    row = (graph.name, graph.n, graph.d, params.k, params.alpha, mc.trials, args.seed, mc.epsilon,
           mc.var_F, mc.std_error_of_var, pred.exact_form, pred.lower_bound, pred.upper_bound, z,
           mc.mean_F, mc.std_error_of_mean, mc.failed_trials, ok)
    results = {"prediction": pred.to_dict(), "monte_carlo": mc.to_dict(), "z": z}
    line = (f"variance {graph.name} k={params.k} alpha={params.alpha}: {'PASS' if ok else 'FAIL'} "
            f"var_F={mc.var_F:.6g} exact_form={pred.exact_form:.6g} SE={mc.std_error_of_var:.3g} z={z:+.2f}")
    return VARIANCE_COLUMNS, [row], results, {"variance_within_3se": ok}, line, mc.flagged


def experiment_scaling(args, graph_unused, params: ModelParams, workers: int):
    if not args.family or not args.sizes:
        raise CliError("scaling needs --family and --sizes")
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = analysis.convergence_scaling_experiment(args.family, sizes, params, args.epsilon,
                                                   args.trials, master_seed=args.seed, workers=workers)
    spread = analysis.ratio_spread(rows) if all(r["ratio"] > 0 for r in rows) else 1.0
    unconv = sum(r["unconverged"] for r in rows)
    ok = spread <= args.band
    table = [tuple(r[c] for c in SCALING_COLUMNS) for r in rows]
    line = f"scaling {args.family} {params.kind}: {'PASS' if ok else 'FAIL'} spread={spread:.3f} band={args.band}"
    return SCALING_COLUMNS, table, {"rows": rows, "spread": spread}, {"ratio_band": ok}, line, unconv > 0


def experiment_occupancy(args, graph: Graph, params: ModelParams, workers: int):
    if params.kind != NODE or params.lazy:
        raise CliError("the two-walk occupancy experiment uses the non-lazy node model")
    est = qchain.pair_occupancy(graph, params.k, params.alpha, args.trials,
                                np.random.default_rng(args.seed), burn_in=args.burn_in)
    z = est.z_scores()
    ok = bool(np.all(np.abs(z) <= 3.0))
    rows = [(name, est.frequencies[i], est.expected[i], est.std_errors[i], z[i])
            for i, name in enumerate(("S0", "S1", "S+"))]
    line = (f"occupancy {graph.name} k={params.k} alpha={params.alpha}: {'PASS' if ok else 'FAIL'} "
            + " ".join(f"{r[0]}={r[1]:.5f}/{r[2]:.5f}(z={r[4]:+.2f})" for r in rows))
    return OCCUPANCY_COLUMNS, rows, est.to_dict(), {"occupancy_within_3se": ok}, line, False


def cmd_experiment(args, out: Path) -> int:
    if args.experiment not in EXPERIMENTS:
        raise CliError(f"unknown experiment {args.experiment!r}")
    if args.trials < 1 or (args.experiment == "variance" and args.trials < 2):
        raise CliError("--trials too small")
    workers = resolve_workers(args)
    params = params_from_args(args)
    if args.experiment in ("variance", "occupancy"):
        graph = load_graph_arg(args)
        params.validate(graph)
        fn = experiment_variance if args.experiment == "variance" else experiment_occupancy
    else:
        if args.epsilon is None:
            raise CliError("scaling needs --epsilon")
        graph = None
        fn = experiment_scaling
    columns, rows, results, criteria, line, unconverged = fn(args, graph, params, workers)
    table = write_table(out / args.experiment, columns, rows, args.format)
    ginfo = graph_info(graph) if graph else {"family": args.family, "sizes": args.sizes}
    write_json(out / "manifest.json", make_manifest(args, ginfo, results, criteria))
    if args.gnuplot and args.format == "csv" and args.experiment == "scaling":
        (out / "scaling.gp").write_text(
            "set datafile separator ','\nset key autotitle columnhead\nset logscale xy\n"
            "set xlabel 'n'\n"
            f"plot '{table.name}' using 1:3 with linespoints, '' using 1:4 with lines\n")
    print(line)
    if unconverged:
        return EXIT_NONCONVERGED
    return EXIT_OK if all(criteria.values()) else EXIT_ACCEPTANCE


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", help="edge-list file ('u v' per line, '#' comments)")
    p.add_argument("--generate", help="generator spec, e.g. cycle:8, random_regular:12:4:7")
    p.add_argument("--model", choices=(NODE, EDGE), default=NODE)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--lazy", action="store_true")
    p.add_argument("--init", default="random-uniform:-1:1:0",
                   help="constant:c | plusminus[:s] | eigenvector:P|L[:scale] | random-uniform:lo:hi:seed | file:path")
    p.add_argument("--center", action="store_true", help="shift the initial state so that M(0) = 0")
    p.add_argument("--seed", type=int, default=0, help="64-bit master seed")
    p.add_argument("--workers", type=int, default=None, help="defaults to $AVGDYN_WORKERS or 1")
    p.add_argument("--out", default=None, help="output directory (default: current directory)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avgdyn", description="Averaging dynamics on graphs.")
    parser.add_argument("--version", action="version", version=f"avgdyn {__version__}")
    parser.add_argument("--manifest", help="re-run the configuration stored in a manifest.json")
    parser.add_argument("--out", dest="manifest_out", default=None,
                        help="with --manifest: output directory (default: <manifest dir>/rerun)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="run one trajectory to convergence")
    _common(p)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--trace-stride", type=int, default=1)
    p.add_argument("--events", action="store_true", help="write the event log as events.jsonl")

    p = sub.add_parser("verify", help="exact verification suites")
    p.add_argument("suite", help="|".join(SUITES))
    _common(p)
    p.add_argument("--trials", type=int, default=100, help="random logs or states")
    p.add_argument("--log-length", type=int, default=50)

    p = sub.add_parser("experiment", help="statistical experiments")
    p.add_argument("experiment", help="|".join(EXPERIMENTS))
    _common(p)
    p.add_argument("--epsilon", type=float, default=None,
                   help="potential threshold (variance default: predicted variance / 1e4)")
    p.add_argument("--trials", type=int, default=1000,
                   help="trials (variance), seeds per size (scaling) or recorded steps (occupancy)")
    p.add_argument("--family", help="graph family for scaling")
    p.add_argument("--sizes", help="comma-separated generator sizes for scaling")
    p.add_argument("--band", type=float, default=4.0, help="allowed max/min ratio spread")
    p.add_argument("--bootstrap", action="store_true", help="bootstrap cross-check of the variance SE")
    p.add_argument("--burn-in", type=int, default=None, help="occupancy burn-in steps (default 50 n^2)")
    return parser


def _from_manifest(path: str, out: str | None) -> argparse.Namespace:
    manifest = json.loads(Path(path).read_text())
    cfg = manifest["config"]
    args = argparse.Namespace(**{k: None for k in _CONFIG_KEYS})
    for key, value in cfg.items():
        setattr(args, key, value)
    args.workers = None
    args.out = out or str(Path(path).parent / "rerun")
    return args


_COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify, "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.manifest:
            args = _from_manifest(args.manifest, args.manifest_out)
        if args.command not in _COMMANDS:
            parser.print_usage(sys.stderr)
            print("avgdyn: error: a subcommand or --manifest is required", file=sys.stderr)
            return EXIT_VALIDATION
        for key in _CONFIG_KEYS:
            if not hasattr(args, key):
                setattr(args, key, None)
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](args, out)
    except (GraphError, dynamics.ParameterError, qchain.QChainError, analysis.AnalysisError,
            duality.EventLogError, CliError) as exc:
        print(f"avgdyn: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FloatingPointError as exc:
        print(f"avgdyn: numerical error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"avgdyn: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
