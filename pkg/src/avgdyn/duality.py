"""Backward diffusion dual of the averaging process and the correlated
random walks that realise it.

The forward process applies events chi(1), ..., chi(T) to the state. The
dual spreads loads with the transposed matrices in reverse order; with cost
vector x(0) its per-commodity cost W(T) equals x(T) exactly, event by event.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dynamics import ModelParams, SelectionEvent, apply_event, as_state, sample_event
from .graph import Graph


class EventLogError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EventLog:
    events: tuple[SelectionEvent, ...]
    params: ModelParams
    graph: Graph

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        for t, ev in enumerate(self.events):
            _check_event(ev, self.params, self.graph, t)

    def __len__(self):
        return len(self.events)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"t": t + 1, "u": ev.updater, "sources": list(ev.sources), "noop": ev.noop}) + "\n"
            for t, ev in enumerate(self.events)
        )

    @classmethod
    def from_jsonl(cls, text: str, params: ModelParams, graph: Graph) -> EventLog:
        events = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("t", lineno) != len(events) + 1:
                raise EventLogError(f"line {lineno}: event index {rec.get('t')} out of sequence")
            events.append(SelectionEvent(int(rec["u"]), tuple(int(v) for v in rec["sources"]),
                                         bool(rec.get("noop", False))))
        return cls(tuple(events), params, graph)


def _check_event(ev: SelectionEvent, params: ModelParams, graph: Graph, t: int) -> None:
    if not 0 <= ev.updater < graph.n:
        raise EventLogError(f"event {t + 1}: updater {ev.updater} out of range")
    if ev.noop:
        if ev.sources:
            raise EventLogError(f"event {t + 1}: no-op carries sources")
        return
    want = params.k
    if len(ev.sources) != want or len(set(ev.sources)) != want:
        raise EventLogError(f"event {t + 1}: expected {want} distinct sources, got {ev.sources}")
    nbrs = graph.adjacency[ev.updater]
    for v in ev.sources:
        if v not in nbrs:
            raise EventLogError(f"event {t + 1}: {v} is not a neighbour of {ev.updater}")


def random_log(graph: Graph, params: ModelParams, T: int, rng) -> EventLog:
    params.validate(graph)
    return EventLog(tuple(sample_event(graph, params, rng) for _ in range(T)), params, graph)


# ---------------------------------------------------------------------------
# matrices


def event_to_backward_matrix(event: SelectionEvent, params: ModelParams, n: int) -> np.ndarray:
    """B for one event: column u keeps alpha at u and sends (1-alpha)/k to
    each source; all other columns are the identity."""
    B = np.eye(n)
    if event.noop:
        return B
    u = event.updater
    B[u, u] = params.alpha
    for v in event.sources:
        B[v, u] = (1.0 - params.alpha) / len(event.sources)
    return B


def event_to_forward_matrix(event: SelectionEvent, params: ModelParams, n: int) -> np.ndarray:
    """F with x' = F x for one event."""
    F = np.eye(n)
    if event.noop:
        return F
    u = event.updater
    F[u, u] = params.alpha
    for v in event.sources:
        F[u, v] = (1.0 - params.alpha) / len(event.sources)
    return F


# ---------------------------------------------------------------------------
# diffusion


@dataclass
class DiffusionState:
    R: np.ndarray  # column u is the load vector of commodity u
    step: int

    def column_sum_error(self) -> float:
        return float(np.abs(self.R.sum(axis=0) - 1.0).max())


def backward_apply(R: np.ndarray, event: SelectionEvent, alpha: float) -> None:
    """R <- B R in place, touching only the updater and source rows."""
    if event.noop:
        return
    u = event.updater
    share = (1.0 - alpha) / len(event.sources)
    row_u = R[u].copy()
    for v in event.sources:
        R[v] += share * row_u
    R[u] = alpha * row_u


def diffuse_backward(cost, log: EventLog, check_mass: bool = False):
    """Run the diffusion on the reversed event sequence.

    Returns ``(W, DiffusionState)`` with ``W = cost @ R(T)``.
    """
    n = log.graph.n
    c = as_state(cost, log.graph)
    R = np.eye(n)
    for t, ev in enumerate(reversed(log.events), start=1):
        backward_apply(R, ev, log.params.alpha)
        if check_mass:
            err = np.abs(R.sum(axis=0) - 1.0).max()
            if err > 1e-12:
                raise FloatingPointError(f"mass not conserved after diffusion step {t}: {err:.3e}")
    return c @ R, DiffusionState(R=R, step=len(log))


def replay_forward(xi0, log: EventLog) -> np.ndarray:
    x = as_state(xi0, log.graph)
    for ev in log.events:
        apply_event(x, ev, log.params.alpha)
    return x


def duality_check(xi0, log: EventLog) -> float:
    """max |W(T) - x(T)| for the forward replay and the reversed diffusion."""
    xT = replay_forward(xi0, log)
    W, _ = diffuse_backward(xi0, log)
    return float(np.abs(W - xT).max())


def duality_tolerance(xi0) -> float:
    return 1e-12 * max(1.0, float(np.abs(np.asarray(xi0)).max()))


# ---------------------------------------------------------------------------
# correlated random walks


@dataclass
class WalkResult:
    start_nodes: np.ndarray
    positions: np.ndarray  # (trials, len(start_nodes)) final node of each walk

    @property
    def trials(self) -> int:
        return self.positions.shape[0]

    def occupancy(self, n: int) -> np.ndarray:
        """Empirical distribution over V of each walk, one row per start node."""
        out = np.empty((len(self.start_nodes), n))
        for j in range(len(self.start_nodes)):
            out[j] = np.bincount(self.positions[:, j], minlength=n) / self.trials
        return out


def correlated_walks(log: EventLog, start_nodes, trials: int, rng) -> WalkResult:
    """One walk per start node per trial, all driven by the same event log in
    diffusion (reversed) order. A walk sitting on the updater stays with
    probability alpha and otherwise jumps to a uniform source; walks decide
    independently of each other."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    starts = np.asarray(start_nodes, dtype=np.int64)
    pos = np.tile(starts, (trials, 1))
    alpha = log.params.alpha
    for ev in reversed(log.events):
        if ev.noop:
            continue
        here = np.nonzero(pos == ev.updater)
        if here[0].size == 0:
            continue
        move = rng.random(here[0].size) >= alpha
        srcs = np.asarray(ev.sources, dtype=np.int64)
        choice = srcs[rng.integers(0, len(srcs), size=here[0].size)]
        rows, cols = here[0][move], here[1][move]
        pos[rows, cols] = choice[move]
    return WalkResult(start_nodes=starts, positions=pos)
