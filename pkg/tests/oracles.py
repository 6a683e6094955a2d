"""Independent reference computations used by the tests.

Nothing here imports the package internals it checks: graphs come from
networkx, events are enumerated from scratch and applied as dense matrices.
"""

import itertools
from fractions import Fraction

import networkx as nx
import numpy as np


def nx_graph(graph):
    G = nx.Graph()
    G.add_nodes_from(range(graph.n))
    G.add_edges_from(graph.edges())
    return G


def lazy_walk_eigs(G):
    """Sorted eigenvalues of the lazy walk matrix (1/2)(I + D^-1 A), from the
    non-symmetric matrix itself."""
    A = nx.to_numpy_array(G, nodelist=sorted(G))
    P = 0.5 * (np.eye(len(A)) + A / A.sum(axis=1, keepdims=True))
    return np.sort(np.linalg.eigvals(P).real)[::-1], P


def laplacian_eigs(G):
    L = nx.laplacian_matrix(G, nodelist=sorted(G)).toarray().astype(float)
    return np.sort(np.linalg.eigvalsh(L)), L


def events(G, kind, k, lazy=False):
    """All equiprobable events as (weight, updater, sources); a lazy no-op is
    (weight, None, ())."""
    n = G.number_of_nodes()
    out = []
    if kind == "edge":
        m = G.number_of_edges()
        for u in G:
            for v in G[u]:
                out.append((1.0 / (2 * m), u, (v,)))
        return out
    for u in G:
        subsets = list(itertools.combinations(sorted(G[u]), k))
        w = (0.5 if lazy else 1.0) / (n * len(subsets))
        for S in subsets:
            out.append((w, u, S))
        if lazy:
            out.append((0.5 / n, None, ()))
    return out


def forward_matrix(n, u, S, alpha):
    F = np.eye(n)
    if u is None:
        return F
    F[u, u] = alpha
    for s in S:
        F[u, s] += (1 - alpha) / len(S)
    return F


def one_step(G, x, kind, alpha, k=1, lazy=False):
    """Dense-matrix expectations (E[M'], E[Avg'], E[sum x'^2], E[phi'])."""
    n = len(x)
    deg = np.array([G.degree(i) for i in range(n)], dtype=float)
    pi = deg / deg.sum()
    acc = np.zeros(4)
    for w, u, S in events(G, kind, k, lazy):
        y = forward_matrix(n, u, S, alpha) @ x
        M = pi @ y
        acc += w * np.array([M, y.mean(), y @ y, pi @ (y - M) ** 2])
    return acc


def second_moment_limit(G, x, kind, alpha, k=1):
    """lim E[x(t) x(t)^T] = c * 11^T. The map C -> E[F C F^T] on vec(C)
    conserves nu . vec(C) for its left unit eigenvector nu; normalising
    nu . vec(11^T) = 1 gives c = nu . vec(x x^T)."""
    n = len(x)
    T = np.zeros((n * n, n * n))
    for w, u, S in events(G, kind, k):
        F = forward_matrix(n, u, S, alpha)
        T += w * np.kron(F, F)
    A = np.vstack([(T - np.eye(n * n)).T, np.ones((1, n * n))])
    rhs = np.zeros(n * n + 1)
    rhs[-1] = 1.0
    nu = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return float(nu @ np.outer(x, x).ravel())


def exact_q_k4_half():
    """Q-chain of K4 with k = 1, alpha = 1/2 in exact rationals, built by
    following both walks through every event."""
    n, a = 4, Fraction(1, 2)
    Q = {}
    for u in range(n):
        for v in range(n):
            if u == v:
                continue
            w = Fraction(1, n * 3)
            for x in range(n):
                for y in range(n):
                    mx = [(x, 1)] if x != u else [(u, a), (v, 1 - a)]
                    my = [(y, 1)] if y != u else [(u, a), (v, 1 - a)]
                    for x2, px in mx:
                        for y2, py in my:
                            key = ((x, y), (x2, y2))
                            Q[key] = Q.get(key, 0) + w * px * py
    return Q
