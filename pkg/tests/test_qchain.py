from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from avgdyn import graph as G
from avgdyn import qchain as Q
from avgdyn.graph import GraphError
from avgdyn.qchain import QChainError


def test_closed_form_k4_golden():
    t = Q.stationary_closed_form(4, 3, 1, 0.5)
    assert t.gamma == 1.0 and t.ell == pytest.approx(1 / 40)
    assert (t.mu0, t.mu1, t.mu_plus) == pytest.approx((0.1, 0.05, 0.05), abs=1e-15)
    assert t.mass() == pytest.approx(1.0, abs=1e-15)


def test_k4_chain_in_rationals():
    q = oracles.exact_q_k4_half()
    mu = {(x, y): Fraction(1, 10) if x == y else Fraction(1, 20) for x in range(4) for y in range(4)}
    for s in mu:
        assert sum(q.get((s, t), 0) for t in mu) == 1
    for t in mu:
        assert sum(mu[s] * q.get((s, t), 0) for s in mu) == mu[t]
    M = Q.build_q_matrix(G.complete(4), 1, 0.5).matrix
    for (s, t), v in q.items():
        assert M[s[0] * 4 + s[1], t[0] * 4 + t[1]] == pytest.approx(float(v), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 200), st.data(), st.floats(0.001, 0.999))
def test_closed_form_mass_property(n, data, alpha):
    d = data.draw(st.integers(2, n - 1))
    k = data.draw(st.integers(1, d))
    t = Q.stationary_closed_form(n, d, k, alpha)
    assert abs(t.mass() - 1) <= 1e-12
    assert t.mu0 > 0 and t.mu1 > 0 and t.mu_plus > 0


@pytest.mark.parametrize("args", [(4, 4, 1, 0.5), (2, 1, 1, 0.5), (4, 3, 4, 0.5), (4, 3, 0, 0.5), (4, 3, 1, 1.0)])
def test_closed_form_rejects(args):
    with pytest.raises(QChainError):
        Q.stationary_closed_form(*args)


def test_entries_golden():
    q1 = Q.build_q_matrix(G.complete(4), 1, 0.5)
    q2 = Q.build_q_matrix(G.complete(4), 2, 0.5)
    for x in range(4):
        for u in range(4):
            for v in range(4):
                if len({x, u, v}) == 3:
                    assert q1.entry(x, x, u, v) == 0.0
                    assert q2.entry(x, x, u, v) == pytest.approx(1 / 192, abs=1e-15)
    c4 = Q.build_q_matrix(G.cycle(4), 1, 0.5)
    assert c4.entry(0, 2, 0, 0) == 0.0


MATRIX = [G.cycle(4), G.cycle(7), G.complete(5), G.hypercube(3), G.petersen(), G.random_regular(10, 4, 3)]


@pytest.mark.parametrize("g", MATRIX, ids=lambda g: g.name)
@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_q_matrix_matches_enumeration(g, alpha):
    for k in range(1, min(3, g.d) + 1):
        q = Q.build_q_matrix(g, k, alpha)
        assert q.row_sum_error() <= 1e-12
        assert np.abs(q.matrix - Q.q_matrix_from_events(g, k, alpha)).max() <= 1e-14


@pytest.mark.parametrize("g, k, alpha", [(G.petersen(), 2, 0.3), (G.complete(4), 1, 0.5), (G.cycle(6), 1, 0.1),
                                         (G.cycle(6), 2, 0.9), (G.hypercube(3), 3, 0.5)])
def test_verify_stationary(g, k, alpha):
    rep = Q.verify_stationary(g, k, alpha)
    assert rep.passed()
    assert rep.residual <= 1e-12 and rep.sum_error <= 1e-12
    assert rep.class_spread <= 1e-10 and rep.max_class_deviation <= 1e-10
    assert rep.numeric_residual <= 1e-12


def test_numeric_solve_k4():
    mu = Q.solve_stationary_numeric(Q.build_q_matrix(G.complete(4), 1, 0.5))
    labels = G.distance_classes(G.complete(4)).labels.ravel()
    assert np.allclose(mu[labels == 0], 0.1, atol=1e-12)
    assert np.allclose(mu[labels == 1], 0.05, atol=1e-12)


def test_rejects_irregular_and_large():
    with pytest.raises(GraphError):
        Q.build_q_matrix(G.path(4), 1, 0.5)
    with pytest.raises(QChainError):
        Q.build_q_matrix(G.cycle(5), 3, 0.5)
    with pytest.raises(QChainError):
        Q.build_q_matrix(G.cycle(Q.Q_CAP + 1), 1, 0.5)


def test_irregular_numeric_solve():
    g = G.load_graph("0 1\n1 2\n2 3\n3 0\n0 2\n3 4\n4 5\n5 3")
    M = Q.q_matrix_from_events(g, 1, 0.4)
    assert np.abs(M.sum(axis=1) - 1).max() <= 1e-12
    mu = Q.solve_stationary_numeric(M)
    assert mu.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.abs(mu @ M - mu).max() <= 1e-12
    assert mu.min() >= -1e-15


def test_non_reversibility_witness():
    g = G.hypercube(3)
    q = Q.build_q_matrix(g, 2, 0.5)
    w = Q.non_reversibility_witness(q)
    assert w is not None
    (x, _), (u, v) = w
    assert q.entry(x, x, u, v) > 0 and q.entry(u, v, x, x) == 0
    dist = G.all_pairs_distances(g)
    assert dist[u, v] == 2 and dist[x, u] == 1 and dist[x, v] == 1


@pytest.mark.parametrize("g, k", [(G.complete(4), 1), (G.cycle(6), 2), (G.petersen(), 3)])
def test_pair_occupancy_short(g, k):
    est = Q.pair_occupancy(g, k, 0.5, 10**6, np.random.default_rng(21))
    assert est.frequencies.sum() == pytest.approx(1.0)
    assert np.all(np.abs(est.z_scores()) <= 3)
    assert est.burn_in == 50 * g.n**2


def test_pair_occupancy_batches():
    with pytest.raises(QChainError):
        Q.pair_occupancy(G.complete(4), 1, 0.5, 1001, np.random.default_rng(0))
