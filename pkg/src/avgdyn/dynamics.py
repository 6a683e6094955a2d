"""Node Model and Edge Model averaging dynamics.

States are plain float64 arrays indexed by node. One step of the Node Model
picks a uniform node u and a uniform k-subset S of its neighbours and sets
``x[u] = alpha * x[u] + (1 - alpha) / k * sum(x[S])``; the Edge Model picks a
uniform directed edge (u, v) and sets ``x[u] = alpha * x[u] + (1 - alpha) * x[v]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .graph import Graph, spectral

NODE, EDGE = "node", "edge"

ENUMERATION_CAP = 10**7
RECOMPUTE_EVERY = 10**6
DRIFT_TOLERANCE = 1e-8


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    kind: str
    alpha: float
    k: int = 1
    lazy: bool = False

    def __post_init__(self):
        if self.kind not in (NODE, EDGE):
            raise ParameterError(f"kind must be 'node' or 'edge', got {self.kind!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.k) != self.k or self.k < 1:
            raise ParameterError(f"k must be a positive integer, got {self.k}")
        if self.kind == EDGE and (self.k != 1 or self.lazy):
            raise ParameterError("the edge model has k = 1 and no lazy variant")

    def validate(self, graph: Graph) -> None:
        if self.kind == NODE and self.k > graph.d_min:
            raise ParameterError(f"k = {self.k} exceeds the minimum degree {graph.d_min} of {graph.name}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "k": self.k, "lazy": self.lazy}


@dataclass(frozen=True)
class SelectionEvent:
    updater: int
    sources: tuple[int, ...]
    noop: bool = False

    def to_dict(self) -> dict:
        return {"u": self.updater, "sources": list(self.sources), "noop": self.noop}


def as_state(values, graph: Graph) -> np.ndarray:
    x = np.array(values, dtype=np.float64)
    if x.shape != (graph.n,):
        raise ParameterError(f"state has shape {x.shape}, graph has n = {graph.n}")
    return x


# ---------------------------------------------------------------------------
# single steps (reference path)


def _below(rng, n: int) -> int:
    i = int(rng.random() * n)
    return i if i < n else n - 1


def sample_event(graph: Graph, params: ModelParams, rng) -> SelectionEvent:
    """Draw one event, consuming ``rng`` exactly as the compiled kernel does."""
    if params.kind == EDGE:
        indptr, indices = graph.csr
        e = _below(rng, int(indptr[-1]))
        return SelectionEvent(int(graph.edge_src[e]), (int(indices[e]),))
    u = _below(rng, graph.n)
    if params.lazy and rng.random() < 0.5:
        return SelectionEvent(u, (), noop=True)
    buf = list(graph.adjacency[u])
    d = len(buf)
    for i in range(params.k):
        j = i + _below(rng, d - i)
        buf[i], buf[j] = buf[j], buf[i]
    return SelectionEvent(u, tuple(buf[: params.k]))


def apply_event(x: np.ndarray, event: SelectionEvent, alpha: float) -> None:
    """Apply ``event`` to ``x`` in place."""
    if event.noop:
        return
    s = 0.0
    for v in event.sources:
        s += x[v]
    k = len(event.sources)
    x[event.updater] = alpha * x[event.updater] + ((1.0 - alpha) / k) * s


def step(state, graph: Graph, params: ModelParams, rng):
    """One step of the process. Returns ``(new_state, event)``."""
    x = np.array(state, dtype=np.float64)
    event = sample_event(graph, params, rng)
    apply_event(x, event, params.alpha)
    return x, event


# ---------------------------------------------------------------------------
# statistics


def weighted_mean(state, graph: Graph) -> tuple[float, float]:
    """(Avg, M): plain mean and degree-weighted mean sum_u d_u/2m x_u."""
    x = np.asarray(state, dtype=np.float64)
    return float(x.mean()), float(graph.pi @ x)


def potential(state, graph: Graph) -> float:
    """pi-weighted variance <x, x>_pi - <1, x>_pi^2, evaluated as
    sum_u pi_u (x_u - M)^2 to avoid cancellation."""
    x = np.asarray(state, dtype=np.float64)
    mean = graph.pi @ x
    return float(graph.pi @ (x - mean) ** 2)


def potential_pairwise(state, graph: Graph) -> float:
    """The same potential as 1/2 sum_{u,v} pi_u pi_v (x_u - x_v)^2."""
    x = np.asarray(state, dtype=np.float64)
    pi = graph.pi
    diff = x[:, None] - x[None, :]
    return float(0.5 * np.einsum("u,v,uv->", pi, pi, diff * diff))


def discrepancy(state) -> float:
    x = np.asarray(state, dtype=np.float64)
    return float(x.max() - x.min())


def center(state, graph: Graph) -> np.ndarray:
    """Shift so that the degree-weighted mean M is zero."""
    x = as_state(state, graph)
    return x - graph.pi @ x


def eigenvector_initial_state(graph: Graph, which: str, scale: float) -> np.ndarray:
    """``scale * f2`` for P (pi-normalised) or L (unit norm)."""
    s = spectral(graph)
    if which == "P":
        return scale * s.f2_P
    if which == "L":
        return scale * s.f2_L
    raise ParameterError(f"which must be 'P' or 'L', got {which!r}")


def default_max_steps(state, graph: Graph, params: ModelParams, epsilon: float) -> int:
    s = spectral(graph)
    sq = float(np.dot(state, state))
    log_term = max(1.0, math.log(max(graph.n * sq / epsilon, 1.0)))
    if params.kind == NODE:
        base = graph.n * log_term / (1.0 - s.lambda2_P)
    else:
        base = graph.m * log_term / s.lambda2_L
    return 100 * math.ceil(base)


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    converged: bool
    T_eps: int | None
    steps: int
    final_state: np.ndarray
    final_M: float
    final_Avg: float
    final_phi: float
    max_steps: int
    trace: list[tuple] | None = None
    events: list[SelectionEvent] | None = field(default=None, repr=False)
    max_drift: float = 0.0

    @property
    def status(self) -> str:
        return "converged" if self.converged else "max_steps"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "T_eps": self.T_eps,
            "steps": self.steps,
            "max_steps": self.max_steps,
            "final_M": self.final_M,
            "final_Avg": self.final_Avg,
            "final_phi": self.final_phi,
            "max_drift": self.max_drift,
            "final_state": self.final_state.tolist(),
        }


TRACE_COLUMNS = ("step", "updater", "phi", "M", "Avg")


class _Runner:
    """Holds the compiled-kernel state for one trajectory."""

    def __init__(self, state, graph: Graph, params: ModelParams, epsilon: float, rng):
        self.graph = graph
        self.params = params
        self.eps = float(epsilon)
        self.rng = rng
        self.x = as_state(state, graph)
        self.pi = np.ascontiguousarray(graph.pi)
        self.indptr, self.indices = graph.csr
        self.edge_src = graph.edge_src
        self.buf = np.empty(max(graph.d_max, 1), dtype=np.int64)
        mean, phi = _kernels.exact_phi(self.x, self.pi)
        # shift by M(0) keeps S2 - S1^2 well conditioned
        self.acc = np.array([0.0, phi, mean])
        self.phi0 = phi
        self.max_drift = 0.0

    @property
    def phi(self) -> float:
        return float(self.acc[1] - self.acc[0] ** 2)

    def resync(self) -> None:
        mean, phi = _kernels.exact_phi(self.x, self.pi)
        drift = abs(self.phi - phi)
        self.max_drift = max(self.max_drift, drift)
        if drift > DRIFT_TOLERANCE * max(1.0, self.phi0):
            raise FloatingPointError(f"incremental potential drifted by {drift:.3e}")
        self.acc[0] = mean - self.acc[2]
        self.acc[1] = phi + self.acc[0] ** 2

    def advance(self, nsteps: int, record: bool):
        k = self.params.k
        if record:
            ev_u = np.empty(nsteps, dtype=np.int64)
            ev_src = np.empty((nsteps, k), dtype=np.int64)
            ev_noop = np.empty(nsteps, dtype=np.bool_)
        else:
            ev_u = np.empty(0, dtype=np.int64)
            ev_src = np.empty((0, k), dtype=np.int64)
            ev_noop = np.empty(0, dtype=np.bool_)
        done, conv = _kernels.advance(
            self.x, self.acc, self.indptr, self.indices, self.edge_src, self.pi,
            self.params.kind == EDGE, self.params.alpha, k, self.params.lazy,
            self.eps, nsteps, self.rng, self.buf, ev_u, ev_src, ev_noop, record)
        events = None
        if record:
            events = [
                SelectionEvent(int(ev_u[t]), () if ev_noop[t] else tuple(int(v) for v in ev_src[t]),
                               bool(ev_noop[t]))
                for t in range(done)
            ]
        return done, conv, events


def run_to_convergence(state0, graph: Graph, params: ModelParams, epsilon: float,
                       max_steps: int | None = None, rng=None, trace_stride: int | None = None,
                       record_events: bool = False) -> RunResult:
    """Run until the potential first drops to ``epsilon`` or ``max_steps`` pass.

    ``rng`` is a ``numpy.random.Generator`` (or a seed). With ``trace_stride``
    a row (step, updater, phi, M, Avg) is kept every ``trace_stride`` steps,
    plus the first and last rows.
    """
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    params.validate(graph)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    runner = _Runner(state0, graph, params, epsilon, rng)
    if max_steps is None:
        max_steps = default_max_steps(runner.x, graph, params, epsilon)

    trace = [] if trace_stride else None
    events: list[SelectionEvent] | None = [] if record_events else None

    def row(t, updater):
        avg, m = float(runner.x.mean()), float(runner.pi @ runner.x)
        return (t, updater, runner.phi, m, avg)

    if trace is not None:
        trace.append(row(0, -1))

    t = 0
    converged = runner.phi0 <= epsilon
    chunk = min(trace_stride or RECOMPUTE_EVERY, RECOMPUTE_EVERY)
    since_resync = 0
    while not converged and t < max_steps:
        nsteps = min(chunk, max_steps - t)
        record = record_events or trace is not None
        done, converged, evs = runner.advance(nsteps, record)
        t += done
        since_resync += done
        if events is not None:
            events.extend(evs)
        if since_resync >= RECOMPUTE_EVERY and not converged:
            runner.resync()
            since_resync = 0
        if trace is not None:
            trace.append(row(t, evs[-1].updater if evs else -1))

    mean, phi = _kernels.exact_phi(runner.x, runner.pi)
    return RunResult(
        converged=converged,
        T_eps=t if converged else None,
        steps=t,
        final_state=runner.x,
        final_M=float(mean),
        final_Avg=float(runner.x.mean()),
        final_phi=float(phi),
        max_steps=max_steps,
        trace=trace,
        events=events,
        max_drift=runner.max_drift,
    )


def final_value(state0, graph: Graph, params: ModelParams, epsilon: float, rng,
                max_steps: int) -> tuple[float, int, bool]:
    """Lean variant of :func:`run_to_convergence` for Monte Carlo loops:
    returns (M(T_eps), T_eps or steps run, converged)."""
    runner = _Runner(state0, graph, params, epsilon, rng)
    if runner.phi0 <= epsilon:
        return float(runner.acc[2]), 0, True
    t = 0
    while t < max_steps:
        nsteps = min(RECOMPUTE_EVERY, max_steps - t)
        done, conv, _ = runner.advance(nsteps, False)
        t += done
        if conv:
            return float(runner.acc[0] + runner.acc[2]), t, True
        runner.resync()
    return float(runner.acc[0] + runner.acc[2]), t, False


def snapshot_run(state0, graph: Graph, params: ModelParams, times, rng) -> np.ndarray:
    """Values of (M, Avg) at each requested step count (sorted, ascending)."""
    runner = _Runner(state0, graph, params, -1.0, rng)  # never stops early
    out = np.empty((len(times), 2))
    t = 0
    for i, target in enumerate(times):
        while t < target:
            done, _, _ = runner.advance(min(RECOMPUTE_EVERY, target - t), False)
            t += done
        out[i] = float(runner.pi @ runner.x), float(runner.x.mean())
    return out


# ---------------------------------------------------------------------------
# exact one-step expectations


@dataclass(frozen=True)
class OneStepExpectation:
    M: float
    Avg: float
    sumsq: float
    phi: float
    E_M_next: float
    E_Avg_next: float
    E_sumsq_next: float
    E_phi_next: float
    events: int

    @property
    def martingale_residual(self) -> float:
        return abs(self.E_M_next - self.M)

    @property
    def avg_martingale_residual(self) -> float:
        return abs(self.E_Avg_next - self.Avg)


def _event_blocks(graph: Graph, params: ModelParams):
    """Yield (u, sources-array, weight) covering all equiprobable non-noop events."""
    if params.kind == EDGE:
        w = 1.0 / (2 * graph.m)
        for u, nbrs in enumerate(graph.adjacency):
            yield u, np.array(nbrs, dtype=np.int64)[:, None], w
        return
    scale = 0.5 if params.lazy else 1.0
    for u, nbrs in enumerate(graph.adjacency):
        subsets = np.array(list(itertools.combinations(nbrs, params.k)), dtype=np.int64)
        yield u, subsets, scale / (graph.n * len(subsets))


def count_events(graph: Graph, params: ModelParams) -> int:
    if params.kind == EDGE:
        return 2 * graph.m
    return int(sum(math.comb(int(d), params.k) for d in graph.degrees))


def exact_one_step_expectation(state, graph: Graph, params: ModelParams) -> OneStepExpectation:
    """Expectations of M, Avg, sum of squares and phi after one step, by
    enumerating every equiprobable event (the lazy no-op branch included)."""
    params.validate(graph)
    total = count_events(graph, params)
    if total > ENUMERATION_CAP:
        raise ParameterError(f"{total} events exceed the enumeration cap {ENUMERATION_CAP}")
    x = as_state(state, graph)
    pi = graph.pi
    n = graph.n
    M = float(pi @ x)
    y = x - M
    phi = float(pi @ (y * y))
    sumsq = float(x @ x)
    Avg = float(x.mean())

    dM = dAvg = dsq = dphi = 0.0
    for u, subsets, w in _event_blocks(graph, params):
        k = subsets.shape[1]
        new = params.alpha * x[u] + ((1.0 - params.alpha) / k) * x[subsets].sum(axis=1)
        delta = new - x[u]
        dM += w * pi[u] * delta.sum()
        dAvg += w * delta.sum() / n
        dsq += w * (new * new - x[u] * x[u]).sum()
        # phi after the move, relative to the old weighted mean
        s1 = pi[u] * delta
        s2 = pi[u] * ((y[u] + delta) ** 2 - y[u] ** 2)
        dphi += w * (s2 - s1 * s1).sum()

    return OneStepExpectation(
        M=M, Avg=Avg, sumsq=sumsq, phi=phi,
        E_M_next=M + dM, E_Avg_next=Avg + dAvg,
        E_sumsq_next=sumsq + dsq, E_phi_next=phi + dphi,
        events=total,
    )


def potential_drop_factor(lambda2: float, alpha: float, k: int, n: int) -> float:
    """Claimed contraction of E[phi'] / phi for the lazy Node Model."""
    return 1.0 - (1.0 - alpha) * (1.0 - lambda2) * (2.0 * alpha + (1.0 - alpha) * (1.0 + lambda2) * (1.0 - 1.0 / k)) / n


def edge_second_moment_prediction(state, graph: Graph, alpha: float) -> float:
    """sum x^2 - alpha (1 - alpha) / m * x^T L x, the Edge Model's expected
    next sum of squares."""
    x = as_state(state, graph)
    return float(x @ x - alpha * (1.0 - alpha) / graph.m * (x @ graph.laplacian() @ x))
