"""Undirected simple graphs, generators, and the spectral quantities the
averaging analysis is phrased in (lazy walk matrix P, Laplacian L).

Nodes are contiguous 0-based integers. A ``Graph`` is immutable once built
and is shared read-only by simulation workers.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

SPECTRAL_CAP = 4096
RANDOM_REGULAR_RETRIES = 1000


class GraphError(ValueError):
    """Base class for graph construction and ingestion failures."""


class MalformedLineError(GraphError):
    pass


class SelfLoopError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class DisconnectedGraphError(GraphError):
    pass


class InfeasibleParametersError(GraphError):
    pass


class SizeCapError(GraphError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Connected simple undirected graph.

    ``adjacency[u]`` is the sorted tuple of neighbours of ``u``. ``labels``
    holds the original node ids when ingestion had to relabel them.
    """

    adjacency: tuple[tuple[int, ...], ...]
    name: str = "graph"
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        n = len(self.adjacency)
        if n < 2:
            raise GraphError("graphs need at least 2 nodes (n = 1 has no neighbours to sample)")
        for u, nbrs in enumerate(self.adjacency):
            if list(nbrs) != sorted(set(nbrs)):
                raise DuplicateEdgeError(f"adjacency of node {u} is not a sorted set")
            for v in nbrs:
                if v == u:
                    raise SelfLoopError(f"self-loop at node {u}")
                if not 0 <= v < n:
                    raise GraphError(f"neighbour {v} of node {u} out of range")
                if u not in self.adjacency[v]:
                    raise GraphError(f"asymmetric adjacency between {u} and {v}")
        if not _is_connected(self.adjacency):
            raise DisconnectedGraphError(f"graph '{self.name}' is disconnected")

    @classmethod
    def from_edges(cls, n: int, edges, name: str = "graph", labels=None) -> Graph:
        adj: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            if u == v:
                raise SelfLoopError(f"self-loop at node {u}")
            if v in adj[u]:
                raise DuplicateEdgeError(f"duplicate edge {{{u}, {v}}}")
            adj[u].add(v)
            adj[v].add(u)
        return cls(tuple(tuple(sorted(a)) for a in adj), name=name, labels=labels)

    @property
    def n(self) -> int:
        return len(self.adjacency)

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.array([len(a) for a in self.adjacency], dtype=np.int64)
        d.setflags(write=False)
        return d

    @property
    def m(self) -> int:
        return int(self.degrees.sum()) // 2

    @property
    def d_max(self) -> int:
        return int(self.degrees.max())

    @property
    def d_min(self) -> int:
        return int(self.degrees.min())

    @property
    def is_regular(self) -> bool:
        return self.d_max == self.d_min

    @property
    def d(self) -> int:
        """Common degree of a regular graph."""
        if not self.is_regular:
            raise GraphError(f"graph '{self.name}' is not regular")
        return self.d_max

    @cached_property
    def pi(self) -> np.ndarray:
        """Stationary distribution of the walk, d_u / 2m."""
        p = self.degrees / (2.0 * self.m)
        p.setflags(write=False)
        return p

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) of the adjacency lists; directed edge e runs
        from ``edge_src[e]`` to ``indices[e]``."""
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(self.degrees)
        indices = np.fromiter(itertools.chain.from_iterable(self.adjacency),
                              dtype=np.int64, count=int(indptr[-1]))
        indptr.setflags(write=False)
        indices.setflags(write=False)
        return indptr, indices

    @cached_property
    def edge_src(self) -> np.ndarray:
        src = np.repeat(np.arange(self.n, dtype=np.int64), self.degrees)
        src.setflags(write=False)
        return src

    def edges(self):
        """Undirected edges as (u, v) with u < v."""
        return [(u, v) for u, nbrs in enumerate(self.adjacency) for v in nbrs if u < v]

    def adjacency_matrix(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        indptr, indices = self.csr
        A[self.edge_src, indices] = 1.0
        return A

    def laplacian(self) -> np.ndarray:
        return np.diag(self.degrees.astype(float)) - self.adjacency_matrix()

    def lazy_walk_matrix(self) -> np.ndarray:
        return 0.5 * np.eye(self.n) + 0.5 * self.adjacency_matrix() / self.degrees[:, None]

    def summary(self, spectral_summary: SpectralSummary | None = None) -> dict:
        s = spectral_summary or spectral(self)
        out = {"name": self.name, "n": self.n, "m": self.m, "regular": self.is_regular}
        if self.is_regular:
            out["d"] = self.d
        else:
            out["degree_histogram"] = {str(k): v for k, v in sorted(Counter(self.degrees.tolist()).items())}
        out["lambda2_P"] = s.lambda2_P
        out["lambda2_L"] = s.lambda2_L
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _is_connected(adjacency) -> bool:
    n = len(adjacency)
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                queue.append(v)
    return count == n


# ---------------------------------------------------------------------------
# ingestion


def load_graph(text: str, name: str = "graph") -> Graph:
    """Parse a whitespace-separated edge list ("u v" per line, '#' comments).

    Ids that are not already 0..n-1 are relabeled in increasing order; the
    original ids are kept on ``Graph.labels``.
    """
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise MalformedLineError(f"line {lineno}: expected 'u v', got {raw!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedLineError(f"line {lineno}: non-integer node id in {raw!r}") from None
        if u < 0 or v < 0:
            raise MalformedLineError(f"line {lineno}: negative node id in {raw!r}")
        if u == v:
            raise SelfLoopError(f"line {lineno}: self-loop at node {u}")
        pairs.append((u, v))
    if not pairs:
        raise MalformedLineError("edge list is empty")

    ids = sorted({x for p in pairs for x in p})
    labels = None
    if ids != list(range(len(ids))):
        labels = tuple(ids)
        index = {x: i for i, x in enumerate(ids)}
        pairs = [(index[u], index[v]) for u, v in pairs]

    seen = set()
    for u, v in pairs:
        key = (min(u, v), max(u, v))
        if key in seen:
            a, b = (labels[key[0]], labels[key[1]]) if labels else key
            raise DuplicateEdgeError(f"duplicate edge {{{a}, {b}}}")
        seen.add(key)
    return Graph.from_edges(len(ids), pairs, name=name, labels=labels)


def read_graph(path) -> Graph:
    with open(path) as fh:
        return load_graph(fh.read(), name=str(path))


def to_edge_list(graph: Graph) -> str:
    return "".join(f"{u} {v}\n" for u, v in graph.edges())


# ---------------------------------------------------------------------------
# generators


def cycle(n: int) -> Graph:
    if n < 3:
        raise InfeasibleParametersError("cycle needs n >= 3")
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], name=f"cycle({n})")


def path(n: int) -> Graph:
    if n < 2:
        raise InfeasibleParametersError("path needs n >= 2")
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)], name=f"path({n})")


def complete(n: int) -> Graph:
    if n < 2:
        raise InfeasibleParametersError("complete graph needs n >= 2")
    return Graph.from_edges(n, itertools.combinations(range(n), 2), name=f"complete({n})")


def hypercube(dim: int) -> Graph:
    if dim < 1:
        raise InfeasibleParametersError("hypercube needs dim >= 1")
    n = 1 << dim
    edges = [(u, u ^ (1 << b)) for u in range(n) for b in range(dim) if u < u ^ (1 << b)]
    return Graph.from_edges(n, edges, name=f"hypercube({dim})")


def torus(r: int, c: int) -> Graph:
    # r, c >= 3 keeps the wrap-around edges simple
    if r < 3 or c < 3:
        raise InfeasibleParametersError("torus needs r >= 3 and c >= 3")
    edges = []
    for i in range(r):
        for j in range(c):
            u = i * c + j
            edges.append((u, i * c + (j + 1) % c))
            edges.append((u, ((i + 1) % r) * c + j))
    return Graph.from_edges(r * c, edges, name=f"torus({r},{c})")


def petersen() -> Graph:
    outer = [(i, (i + 1) % 5) for i in range(5)]
    spokes = [(i, i + 5) for i in range(5)]
    inner = [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
    return Graph.from_edges(10, outer + spokes + inner, name="petersen")


def random_regular(n: int, d: int, seed) -> Graph:
    """Uniform pairing of n*d stubs; a pairing with a self-loop or a repeated
    pair is rejected and redrawn, at most 1000 times."""
    if n * d % 2 != 0:
        raise InfeasibleParametersError("n * d must be even")
    if not 1 <= d < n:
        raise InfeasibleParametersError("need 1 <= d < n")
    rng = np.random.default_rng(seed)
    stubs = np.repeat(np.arange(n), d)
    for _ in range(RANDOM_REGULAR_RETRIES):
        perm = rng.permutation(stubs).reshape(-1, 2)
        lo, hi = perm.min(axis=1), perm.max(axis=1)
        if np.any(lo == hi):
            continue
        keys = lo * n + hi
        if np.unique(keys).size != keys.size:
            continue
        try:
            return Graph.from_edges(n, zip(lo.tolist(), hi.tolist()), name=f"random_regular({n},{d},{seed})")
        except DisconnectedGraphError:
            continue
    raise InfeasibleParametersError(
        f"no simple connected {d}-regular pairing on {n} nodes after {RANDOM_REGULAR_RETRIES} attempts")


GENERATORS = {
    "cycle": cycle,
    "path": path,
    "complete": complete,
    "hypercube": hypercube,
    "torus": torus,
    "petersen": petersen,
    "random_regular": random_regular,
}


def generate(spec: str) -> Graph:
    """Build a graph from a spec such as ``cycle:8`` or ``random_regular:12:4:7``."""
    family, *args = spec.strip().split(":")
    if family not in GENERATORS:
        raise InfeasibleParametersError(f"unknown graph family {family!r}")
    try:
        ints = [int(a) for a in args]
    except ValueError:
        raise InfeasibleParametersError(f"non-integer parameter in {spec!r}") from None
    try:
        return GENERATORS[family](*ints)
    except TypeError:
        raise InfeasibleParametersError(f"wrong number of parameters in {spec!r}") from None


# ---------------------------------------------------------------------------
# spectral quantities


@dataclass(frozen=True, eq=False)
class SpectralSummary:
    lambda2_P: float
    lambda2_L: float
    pi: np.ndarray
    f2_P: np.ndarray  # <f, f>_pi = 1
    f2_L: np.ndarray  # Euclidean unit norm
    eigvals_P: np.ndarray = field(repr=False)
    eigvals_L: np.ndarray = field(repr=False)


def spectral(graph: Graph) -> SpectralSummary:
    """Second eigenpairs of the lazy walk matrix and of the Laplacian.

    P is similar to the symmetric matrix D^{1/2} P D^{-1/2}, so both problems
    go through a dense symmetric eigensolve.
    """
    cached = graph.__dict__.get("_spectral")
    if cached is not None:
        return cached
    if graph.n > SPECTRAL_CAP:
        raise SizeCapError(f"n = {graph.n} exceeds the dense eigensolve cap {SPECTRAL_CAP}")
    A = graph.adjacency_matrix()
    deg = graph.degrees.astype(float)
    inv_sqrt = 1.0 / np.sqrt(deg)
    S = 0.5 * np.eye(graph.n) + 0.5 * inv_sqrt[:, None] * A * inv_sqrt[None, :]
    wP, vP = np.linalg.eigh(S)
    # right eigenvector of P is D^{-1/2} v; sqrt(2m) makes it pi-normalised
    f2_P = math.sqrt(2.0 * graph.m) * inv_sqrt * vP[:, -2]
    wL, vL = np.linalg.eigh(np.diag(deg) - A)
    summary = SpectralSummary(
        lambda2_P=float(wP[-2]),
        lambda2_L=float(wL[1]),
        pi=graph.pi,
        f2_P=f2_P,
        f2_L=vL[:, 1].copy(),
        eigvals_P=wP[::-1].copy(),
        eigvals_L=wL,
    )
    object.__setattr__(graph, "_spectral", summary)
    return summary


# ---------------------------------------------------------------------------
# distance classes

CLASS_S0, CLASS_S1, CLASS_SPLUS = 0, 1, 2


@dataclass(frozen=True, eq=False)
class DistanceClasses:
    """Ordered pairs split by shortest-path distance: 0, 1, and >= 2."""

    dist: np.ndarray
    labels: np.ndarray  # CLASS_S0 / CLASS_S1 / CLASS_SPLUS per ordered pair

    @property
    def sizes(self) -> tuple[int, int, int]:
        counts = np.bincount(self.labels.ravel(), minlength=3)
        return int(counts[0]), int(counts[1]), int(counts[2])

    def pairs(self, cls: int) -> np.ndarray:
        return np.argwhere(self.labels == cls)


def all_pairs_distances(graph: Graph) -> np.ndarray:
    n = graph.n
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        row = dist[s]
        row[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in graph.adjacency[u]:
                if row[v] < 0:
                    row[v] = row[u] + 1
                    queue.append(v)
    return dist


def distance_classes(graph: Graph) -> DistanceClasses:
    dist = all_pairs_distances(graph)
    labels = np.minimum(dist, CLASS_SPLUS).astype(np.int8)
    return DistanceClasses(dist=dist, labels=labels)


def isoperimetric_number(graph: Graph) -> float:
    """min |E(S, V\\S)| / |S| over 0 < |S| <= n/2, by exhaustive search."""
    n = graph.n
    if n > 16:
        raise SizeCapError("brute-force isoperimetric number is limited to n <= 16")
    edges = np.array(graph.edges())
    best = math.inf
    for mask in range(1, 1 << n):
        size = bin(mask).count("1")
        if size > n // 2:
            continue
        inside = (mask >> np.arange(n)) & 1
        cut = int(np.sum(inside[edges[:, 0]] != inside[edges[:, 1]]))
        best = min(best, cut / size)
    return best
