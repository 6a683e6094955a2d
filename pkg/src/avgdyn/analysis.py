"""Variance of the convergence value, time-dependent variance bounds, and
convergence-time scaling experiments."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .dynamics import EDGE, NODE, ModelParams
from .graph import Graph, GraphError, generate, spectral
from .qchain import stationary_closed_form


class AnalysisError(ValueError):
    pass


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent stream for ``trial``: SeedSequence(master_seed) with spawn
    key (trial,), i.e. the same stream ``SeedSequence(master_seed).spawn``
    hands out as its ``trial``-th child."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(trial,)))


# ---------------------------------------------------------------------------
# analytic variance


@dataclass(frozen=True)
class VariancePrediction:
    exact_form: float
    lower_bound: float
    upper_bound: float
    slack: float
    sq_norm: float
    edge_sum: float
    tight_lower: float
    tight_upper: float
    mu: tuple[float, float, float]

    def sandwiched(self) -> bool:
        return self.lower_bound - self.slack <= self.exact_form <= self.upper_bound + self.slack

    def to_dict(self) -> dict:
        return {
            "exact_form": self.exact_form,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "slack": self.slack,
            "tight_lower": self.tight_lower,
            "tight_upper": self.tight_upper,
            "sq_norm": self.sq_norm,
            "edge_sum": self.edge_sum,
            "mu": list(self.mu),
        }


def directed_edge_sum(graph: Graph, x: np.ndarray) -> float:
    """sum over directed edges (u, v) of x_u x_v."""
    indptr, indices = graph.csr
    return float(np.dot(x[graph.edge_src], x[indices]))


def variance_analytic(graph: Graph, xi0, k: int, alpha: float) -> VariancePrediction:
    """Limit variance of the convergence value for a centred initial state.

    ``exact_form`` is (mu0 - mu+) sum x_u^2 + (mu1 - mu+) sum_{E+} x_u x_v.
    ``lower_bound``/``upper_bound`` are the Theta constants
    2(1-a)(2dk-d-k) / (3dk+d-3k) and 2k(d-1)(1-a) / (3dk+d-3k) times
    ||x||^2 / n^2. ``tight_lower``/``tight_upper`` bracket the exact form
    using the edge-sum range 0 <= sum_{E+} x_u x_v + d ||x||^2 <= 2d ||x||^2.
    """
    if not graph.is_regular:
        raise GraphError(f"variance prediction needs a regular graph; {graph.name} is not")
    x = dynamics.as_state(xi0, graph)
    scale = max(1.0, float(np.abs(x).max()))
    if abs(graph.pi @ x) > 1e-12 * scale:
        raise AnalysisError("initial state must be centred (M(0) = 0); see dynamics.center")
    n, d = graph.n, graph.d
    t = stationary_closed_form(n, d, k, alpha)
    sq = float(x @ x)
    es = directed_edge_sum(graph, x)
    exact = (t.mu0 - t.mu_plus) * sq + (t.mu1 - t.mu_plus) * es
    denom = 3 * d * k + d - 3 * k
    upper = 2 * k * (d - 1) * (1 - alpha) / denom * sq / n**2
    lower = 2 * (1 - alpha) * (2 * d * k - d - k) / denom * sq / n**2
    lead = (t.mu0 - t.mu_plus) - d * (t.mu1 - t.mu_plus)
    return VariancePrediction(
        exact_form=exact,
        lower_bound=lower,
        upper_bound=upper,
        slack=1.0 / n**5,
        sq_norm=sq,
        edge_sum=es,
        tight_lower=(lead + 2 * d * (t.mu1 - t.mu_plus)) * sq,
        tight_upper=lead * sq,
        mu=(t.mu0, t.mu1, t.mu_plus),
    )


def variance_k1(n: int, alpha: float, sq_norm: float) -> float:
    """k = 1 specialisation: (1 - a) ||x||^2 / (n (n a + 1 - a))."""
    return (1 - alpha) * sq_norm / (n * (n * alpha + 1 - alpha))


# ---------------------------------------------------------------------------
# Monte Carlo


def variance_standard_error(samples: np.ndarray) -> float:
    """Moment-based standard error of the unbiased sample variance."""
    N = samples.size
    if N < 2:
        raise AnalysisError("need at least 2 samples")
    dev = samples - samples.mean()
    m2 = float(np.mean(dev**2))
    m4 = float(np.mean(dev**4))
    s2 = m2 * N / (N - 1)
    var_of_s2 = (m4 - (N - 3) / (N - 1) * s2 * s2) / N
    return math.sqrt(max(var_of_s2, 0.0))


def bootstrap_variance_se(samples: np.ndarray, resamples: int = 1000, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    N = samples.size
    stats = np.empty(resamples)
    for b in range(resamples):
        stats[b] = samples[rng.integers(0, N, size=N)].var(ddof=1)
    return float(stats.std(ddof=1))


@dataclass
class MonteCarloEstimate:
    trials: int
    mean_F: float
    var_F: float
    std_error_of_var: float
    std_error_of_mean: float
    seed: int
    epsilon: float
    failed_trials: int = 0
    bootstrap_se: float | None = None
    values: np.ndarray | None = field(default=None, repr=False)
    steps: np.ndarray | None = field(default=None, repr=False)

    @property
    def flagged(self) -> bool:
        return self.failed_trials > 0

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "mean_F": self.mean_F,
            "var_F": self.var_F,
            "std_error_of_var": self.std_error_of_var,
            "std_error_of_mean": self.std_error_of_mean,
            "bootstrap_se": self.bootstrap_se,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "failed_trials": self.failed_trials,
            "median_steps": float(np.median(self.steps)) if self.steps is not None else None,
        }


def _trial_block(args):
    graph, xi0, params, epsilon, max_steps, master_seed, start, stop = args
    out = np.empty(stop - start)
    steps = np.empty(stop - start, dtype=np.int64)
    ok = np.empty(stop - start, dtype=bool)
    for i, trial in enumerate(range(start, stop)):
        out[i], steps[i], ok[i] = dynamics.final_value(
            xi0, graph, params, epsilon, trial_rng(master_seed, trial), max_steps)
    return out, steps, ok


def _blocks(trials: int, workers: int):
    size = max(1, math.ceil(trials / max(1, workers * 4)))
    return [(s, min(trials, s + size)) for s in range(0, trials, size)]


def run_trials(graph: Graph, xi0, params: ModelParams, epsilon: float, trials: int,
               master_seed: int, workers: int = 1, max_steps: int | None = None):
    """Final values M(T_eps) for ``trials`` independent runs, in trial order.

    Trial i always uses ``trial_rng(master_seed, i)``, so the output does not
    depend on ``workers``.
    """
    params.validate(graph)
    x = dynamics.as_state(xi0, graph)
    if max_steps is None:
        max_steps = dynamics.default_max_steps(x, graph, params, epsilon)
    jobs = [(graph, x, params, epsilon, max_steps, master_seed, a, b) for a, b in _blocks(trials, workers)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_trial_block, jobs))
    else:
        parts = [_trial_block(j) for j in jobs]
    values = np.concatenate([p[0] for p in parts])
    steps = np.concatenate([p[1] for p in parts])
    ok = np.concatenate([p[2] for p in parts])
    return values, steps, ok


def variance_monte_carlo(graph: Graph, xi0, params: ModelParams, trials: int,
                         epsilon: float | None = None, master_seed: int = 0,
                         workers: int = 1, bootstrap: bool = False) -> MonteCarloEstimate:
    """Sample variance of F = M(T_eps) over independent runs.

    Default epsilon is the analytic variance / 10^4 (regular graphs only).
    """
    if trials < 2:
        raise AnalysisError("trials must be >= 2")
    x = dynamics.as_state(xi0, graph)
    if epsilon is None:
        predicted = variance_analytic(graph, x, params.k, params.alpha).exact_form
        epsilon = predicted / 1e4 if predicted > 0 else 1e-12
    values, steps, ok = run_trials(graph, x, params, epsilon, trials, master_seed, workers)
    mean = float(values.mean())
    var = float(values.var(ddof=1))
    return MonteCarloEstimate(
        trials=trials,
        mean_F=mean,
        var_F=var,
        std_error_of_var=variance_standard_error(values),
        std_error_of_mean=math.sqrt(var / trials),
        seed=master_seed,
        epsilon=epsilon,
        failed_trials=int((~ok).sum()),
        bootstrap_se=bootstrap_variance_se(values) if bootstrap else None,
        values=values,
        steps=steps,
    )


# ---------------------------------------------------------------------------
# time-dependent bounds


def variance_time_bounds(params: ModelParams, graph: Graph, t: int, K: float) -> dict:
    """Var(M(t)) <= t (d_max / 2m * K)^2 and, for the Edge Model,
    Var(Avg(t)) <= t K^2 / n^2."""
    if t < 0 or K < 0:
        raise AnalysisError("t and K must be non-negative")
    out = {"bound_M": t * (graph.d_max / (2 * graph.m) * K) ** 2}
    out["bound_Avg"] = t * K**2 / graph.n**2 if params.kind == EDGE else None
    return out


def time_variance_ensemble(graph: Graph, xi0, params: ModelParams, times, trials: int,
                           master_seed: int) -> dict:
    """Sample Var(M(t)) and Var(Avg(t)) over independent trajectories."""
    times = sorted(int(t) for t in times)
    snaps = np.empty((trials, len(times), 2))
    for i in range(trials):
        snaps[i] = dynamics.snapshot_run(xi0, graph, params, times, trial_rng(master_seed, i))
    var = snaps.var(axis=0, ddof=1)
    return {"times": times, "var_M": var[:, 0], "var_Avg": var[:, 1], "trials": trials}


# ---------------------------------------------------------------------------
# convergence-time scaling


def convergence_bound(graph: Graph, params: ModelParams, xi0, epsilon: float) -> float:
    """n log(n ||x||^2 / eps) / (1 - lambda2(P)) for the Node Model,
    m log(n ||x||^2 / eps) / lambda2(L) for the Edge Model."""
    s = spectral(graph)
    x = np.asarray(xi0, dtype=float)
    log_term = math.log(graph.n * float(x @ x) / epsilon) if x @ x > 0 else 0.0
    if params.kind == NODE:
        return graph.n * log_term / (1 - s.lambda2_P)
    return graph.m * log_term / s.lambda2_L


def convergence_scaling_experiment(family: str, sizes, params: ModelParams, epsilon: float,
                                   seeds: int, master_seed: int = 0, workers: int = 1) -> list[dict]:
    """Median T_eps from the eigenvector initial state n * f2 against the
    convergence bound, one row per size."""
    rows = []
    for size in sizes:
        graph = generate(f"{family}:{size}")
        params.validate(graph)
        which = "P" if params.kind == NODE else "L"
        x = dynamics.eigenvector_initial_state(graph, which, graph.n)
        s = spectral(graph)
        values, steps, ok = run_trials(graph, x, params, epsilon, seeds,
                                       master_seed + size, workers)
        median_T = float(np.median(steps))
        bound = convergence_bound(graph, params, x, epsilon)
        rows.append({
            "n": graph.n,
            "lambda2": s.lambda2_P if which == "P" else s.lambda2_L,
            "median_T": median_T,
            "bound_value": bound,
            "ratio": median_T / bound if bound > 0 else 0.0,
            "unconverged": int((~ok).sum()),
            "seed": master_seed + size,
        })
    return rows


def ratio_spread(rows) -> float:
    ratios = [r["ratio"] for r in rows]
    return max(ratios) / min(ratios)
