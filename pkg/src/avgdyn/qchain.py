"""Joint chain of two correlated walks on a d-regular graph.

State (x, y) is the ordered pair of walk positions. Each step a uniform
node u and a uniform k-subset S of its neighbours are drawn; a walk at u
stays with probability alpha, otherwise it jumps to a uniform member of S,
independently of the other walk. The stationary law is constant on the
distance classes S0 (x = y), S1 (adjacent) and S+ (distance >= 2).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _kernels
from .graph import (CLASS_S0, CLASS_S1, CLASS_SPLUS, Graph, GraphError,
                    distance_classes)

Q_CAP = 64


class QChainError(ValueError):
    pass


@dataclass(frozen=True)
class StationaryTriple:
    mu0: float
    mu1: float
    mu_plus: float
    gamma: float
    ell: float
    n: int
    d: int
    k: int
    alpha: float

    def mass(self) -> float:
        n, d = self.n, self.d
        return n * self.mu0 + n * d * self.mu1 + n * (n - d - 1) * self.mu_plus

    def by_class(self) -> np.ndarray:
        return np.array([self.mu0, self.mu1, self.mu_plus])

    def to_dict(self) -> dict:
        return {
            "n": self.n, "d": self.d, "k": self.k, "alpha": self.alpha,
            "mu0": self.mu0, "mu1": self.mu1, "mu_plus": self.mu_plus,
            "gamma": self.gamma, "ell": self.ell, "sum": self.mass(),
        }


def stationary_closed_form(n: int, d: int, k: int, alpha: float) -> StationaryTriple:
    if not 2 <= d < n:
        # d = 1 is K2, where the normalising constant vanishes
        raise QChainError(f"need 2 <= d < n, got n={n}, d={d}")
    if not 1 <= k <= d:
        raise QChainError(f"need 1 <= k <= d, got k={k}, d={d}")
    if not 0.0 < alpha < 1.0:
        raise QChainError(f"alpha must lie in (0, 1), got {alpha}")
    gamma = k * (1 + alpha) - (1 - alpha)
    ell = 1.0 / (n * (n * (d * gamma - 2 * alpha * k) + 2 * (1 - alpha) * (d - k)))
    return StationaryTriple(
        mu0=2 * k * (d - 1) * ell,
        mu1=(d - 1) * gamma * ell,
        mu_plus=(d * gamma - 2 * alpha * k) * ell,
        gamma=gamma, ell=ell, n=n, d=d, k=k, alpha=alpha,
    )


@dataclass(frozen=True, eq=False)
class QMatrix:
    matrix: np.ndarray  # (n*n, n*n), state (x, y) -> index x*n + y
    graph: Graph
    k: int
    alpha: float

    def row_sum_error(self) -> float:
        return float(np.abs(self.matrix.sum(axis=1) - 1.0).max())

    def entry(self, x, y, u, v) -> float:
        n = self.graph.n
        return float(self.matrix[x * n + y, u * n + v])


def _require_regular(graph: Graph, k: int, alpha: float) -> int:
    if not graph.is_regular:
        raise GraphError(f"the Q-chain is built for regular graphs only; {graph.name} is not regular")
    if graph.n > Q_CAP:
        raise QChainError(f"n = {graph.n} exceeds the Q-matrix cap {Q_CAP}")
    d = graph.d
    if not 1 <= k <= d:
        raise QChainError(f"need 1 <= k <= d, got k={k}, d={d}")
    if not 0.0 < alpha < 1.0:
        raise QChainError(f"alpha must lie in (0, 1), got {alpha}")
    return d


def build_q_matrix(graph: Graph, k: int, alpha: float) -> QMatrix:
    """Transition matrix from the closed-form entries, with pi_x = 1/n."""
    d = _require_regular(graph, k, alpha)
    n = graph.n
    p = 1.0 / n
    a, b = alpha, 1.0 - alpha
    Q = np.zeros((n * n, n * n))
    for x in range(n):
        nbrs = graph.adjacency[x]
        s = x * n + x
        # both walks at x
        if k > 1:
            both_split = b * b * p * (k - 1) / (k * d * (d - 1))
            for u in nbrs:
                for v in nbrs:
                    if u != v:
                        Q[s, u * n + v] = both_split
        for u in nbrs:
            Q[s, u * n + u] = b * b * p / (k * d)
            Q[s, x * n + u] = a * b * p / d
            Q[s, u * n + x] = a * b * p / d
        Q[s, s] = a * a * p + (1 - p)
        # walks apart
        for y in range(n):
            if y == x:
                continue
            s = x * n + y
            for v in graph.adjacency[y]:
                Q[s, x * n + v] += b * p / d
            for u in nbrs:
                Q[s, u * n + y] += b * p / d
            Q[s, s] = (1 - 2 * p) + 2 * p * a
    return QMatrix(Q, graph, k, alpha)


def q_matrix_from_events(graph: Graph, k: int, alpha: float) -> np.ndarray:
    """Brute-force transition matrix: enumerate every (u, S) event and every
    stay/jump outcome of both walks. Works for irregular graphs too."""
    n = graph.n
    if n > Q_CAP:
        raise QChainError(f"n = {n} exceeds the Q-matrix cap {Q_CAP}")
    if k > graph.d_min:
        raise QChainError(f"k = {k} exceeds the minimum degree {graph.d_min}")
    Q = np.zeros((n * n, n * n))

    def moves(pos, u, S):
        if pos != u:
            return [(pos, 1.0)]
        return [(u, alpha)] + [(s, (1 - alpha) / k) for s in S]

    for u in range(n):
        subsets = list(itertools.combinations(graph.adjacency[u], k))
        w_event = 1.0 / (n * len(subsets))
        for S in subsets:
            for x in range(n):
                for y in range(n):
                    for x2, px in moves(x, u, S):
                        for y2, py in moves(y, u, S):
                            Q[x * n + y, x2 * n + y2] += w_event * px * py
    return Q


def closed_form_vector(graph: Graph, triple: StationaryTriple) -> np.ndarray:
    labels = distance_classes(graph).labels.ravel()
    return triple.by_class()[labels]


def solve_stationary_numeric(Q: QMatrix | np.ndarray) -> np.ndarray:
    """Solve mu Q = mu, sum(mu) = 1: the last column of (Q - I) is replaced
    by ones and the system is solved against the last unit vector."""
    M = np.array(Q.matrix if isinstance(Q, QMatrix) else Q, dtype=float)
    size = M.shape[0]
    A = M - np.eye(size)
    A[:, -1] = 1.0
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    try:
        mu = scipy.linalg.solve(A.T, rhs)
    except scipy.linalg.LinAlgError as exc:
        raise QChainError("stationary system is singular; the chain construction is broken") from exc
    return mu


@dataclass
class StationaryReport:
    residual: float
    sum_error: float
    class_spread: float
    numeric_residual: float
    max_class_deviation: float
    row_sum_error: float
    triple: StationaryTriple
    numeric_by_class: tuple[float, float, float]

    def passed(self, tol: float = 1e-12, class_tol: float = 1e-10) -> bool:
        return (self.residual <= tol and self.sum_error <= tol and self.row_sum_error <= tol
                and self.class_spread <= class_tol and self.max_class_deviation <= class_tol)

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "sum_error": self.sum_error,
            "class_spread": self.class_spread,
            "numeric_residual": self.numeric_residual,
            "max_class_deviation": self.max_class_deviation,
            "row_sum_error": self.row_sum_error,
            "triple": self.triple.to_dict(),
            "numeric_by_class": list(self.numeric_by_class),
        }


def verify_stationary(graph: Graph, k: int, alpha: float) -> StationaryReport:
    Q = build_q_matrix(graph, k, alpha)
    triple = stationary_closed_form(graph.n, graph.d, k, alpha)
    labels = distance_classes(graph).labels.ravel()
    mu = triple.by_class()[labels]
    numeric = solve_stationary_numeric(Q)
    spread = 0.0
    deviation = 0.0
    by_class = []
    for cls, value in zip((CLASS_S0, CLASS_S1, CLASS_SPLUS), triple.by_class()):
        block = numeric[labels == cls]
        if block.size == 0:
            by_class.append(float("nan"))
            continue
        spread = max(spread, float(block.max() - block.min()))
        deviation = max(deviation, float(np.abs(block - value).max()))
        by_class.append(float(block.mean()))
    return StationaryReport(
        residual=float(np.abs(mu @ Q.matrix - mu).max()),
        sum_error=abs(triple.mass() - 1.0),
        class_spread=spread,
        numeric_residual=float(np.abs(numeric @ Q.matrix - numeric).max()),
        max_class_deviation=deviation,
        row_sum_error=Q.row_sum_error(),
        triple=triple,
        numeric_by_class=tuple(by_class),
    )


def non_reversibility_witness(Q: QMatrix):
    """A pair (x, x) -> (u, v) with positive forward and zero backward
    probability, or None."""
    n = Q.graph.n
    M = Q.matrix
    for x in range(n):
        s = x * n + x
        for t in np.nonzero(M[s])[0]:
            if t != s and M[t, s] == 0.0:
                return (x, x), divmod(int(t), n)
    return None


# ---------------------------------------------------------------------------
# empirical occupancy


@dataclass
class OccupancyEstimate:
    frequencies: np.ndarray  # overall class frequencies (S0, S1, S+)
    std_errors: np.ndarray  # batch-means standard errors
    expected: np.ndarray  # |S0| mu0, |S1| mu1, |S+| mu+
    samples: int
    burn_in: int
    batches: int

    def z_scores(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (self.frequencies - self.expected) / self.std_errors
        # a class with zero expected mass and zero observed mass is a match
        return np.where((self.std_errors == 0) & (self.frequencies == self.expected), 0.0, z)

    def to_dict(self) -> dict:
        return {
            "frequencies": self.frequencies.tolist(),
            "std_errors": self.std_errors.tolist(),
            "expected": self.expected.tolist(),
            "z": self.z_scores().tolist(),
            "samples": self.samples,
            "burn_in": self.burn_in,
            "batches": self.batches,
        }


def pair_occupancy(graph: Graph, k: int, alpha: float, samples: int, rng,
                   burn_in: int | None = None, batches: int = 100, start=(0, 1)) -> OccupancyEstimate:
    """Simulate the two walks with node-model events and estimate the
    distance-class frequencies. Burn-in defaults to 50 n^2 steps, a
    heuristic stand-in for the mixing time."""
    d = _require_regular(graph, k, alpha)
    n = graph.n
    if burn_in is None:
        burn_in = 50 * n * n
    if samples % batches:
        raise QChainError("samples must be a multiple of batches")
    dc = distance_classes(graph)
    labels = np.ascontiguousarray(dc.labels.astype(np.int64))
    indptr, indices = graph.csr
    buf = np.empty(d, dtype=np.int64)
    counts = _kernels.pair_walk_counts(rng, indptr, indices, graph.edge_src, n, k, alpha, labels,
                                       int(start[0]), int(start[1]), burn_in, batches,
                                       samples // batches, buf)
    batch_freq = counts / (samples // batches)
    freq = counts.sum(axis=0) / samples
    se = batch_freq.std(axis=0, ddof=1) / np.sqrt(batches)
    triple = stationary_closed_form(n, d, k, alpha)
    expected = np.array(dc.sizes) * triple.by_class()
    return OccupancyEstimate(freq, se, expected, samples, burn_in, batches)
