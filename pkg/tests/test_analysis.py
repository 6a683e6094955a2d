import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from avgdyn import analysis as A
from avgdyn import dynamics as D
from avgdyn import graph as G
from avgdyn.dynamics import EDGE, NODE, ModelParams

REGULAR = [G.complete(4), G.cycle(6), G.hypercube(3), G.petersen(), G.random_regular(8, 3, 2), G.complete(6)]


def centred(g, seed):
    return D.center(np.random.default_rng(seed).uniform(-1, 1, g.n), g)


@pytest.mark.parametrize("g", REGULAR, ids=lambda g: g.name)
@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_exact_form_against_second_moment_oracle(g, alpha):
    Gx = oracles.nx_graph(g)
    x = centred(g, 5)
    for k in range(1, min(3, g.d) + 1):
        ref = oracles.second_moment_limit(Gx, x, NODE, alpha, k)
        assert A.variance_analytic(g, x, k, alpha).exact_form == pytest.approx(ref, rel=1e-9, abs=1e-14)


def test_k4_golden():
    pred = A.variance_analytic(G.complete(4), [1, -1, 1, -1], 1, 0.5)
    assert pred.exact_form == pytest.approx(0.2, abs=1e-15)
    assert A.variance_k1(4, 0.5, 4.0) == pytest.approx(0.2, abs=1e-15)
    # Theta constants: 2(1-a)(2dk-d-k)/(3dk+d-3k) = 2/9 at (d, k) = (3, 1), times ||x||^2/n^2
    assert pred.lower_bound == pred.upper_bound == pytest.approx(2 / 9 * 4 / 16)
    assert pred.slack == 4.0**-5


@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.7])
def test_k1_graph_independence(alpha):
    x = np.random.default_rng(3).uniform(-1, 1, 8)
    out = []
    for g in (G.cycle(8), G.hypercube(3), G.random_regular(8, 4, 0), G.complete(8)):
        xc = D.center(x, g)
        pred = A.variance_analytic(g, xc, 1, alpha)
        assert pred.mu[1] == pytest.approx(pred.mu[2], rel=1e-14)
        out.append(pred.exact_form)
        assert pred.exact_form == pytest.approx(A.variance_k1(8, alpha, xc @ xc), rel=1e-12)
    assert max(out) - min(out) <= 1e-14 * max(out)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(REGULAR), st.integers(1, 3), st.floats(0.01, 0.99), st.integers(0, 2**32 - 1))
def test_tight_bounds_bracket_exact_form(g, k, alpha, seed):
    k = min(k, g.d)
    pred = A.variance_analytic(g, centred(g, seed), k, alpha)
    tol = 1e-12 * pred.sq_norm
    assert pred.tight_lower - tol <= pred.exact_form <= pred.tight_upper + tol
    assert pred.exact_form >= -tol
    if k == 1:
        assert pred.lower_bound == pytest.approx(pred.upper_bound, rel=1e-15)


def test_analytic_rejections_and_zero():
    with pytest.raises(G.GraphError):
        A.variance_analytic(G.path(4), [1, -1, 1, -1], 1, 0.5)
    with pytest.raises(A.AnalysisError):
        A.variance_analytic(G.cycle(4), [1, 0, 0, 0], 1, 0.5)
    pred = A.variance_analytic(G.cycle(4), np.zeros(4), 2, 0.5)
    assert pred.exact_form == pred.lower_bound == pred.upper_bound == 0.0


def test_standard_error_formula():
    rng = np.random.default_rng(0)
    s = rng.normal(scale=2.0, size=4000)
    se = A.variance_standard_error(s)
    # normal data: SE of the sample variance is about sigma^2 sqrt(2 / (N - 1))
    assert se == pytest.approx(4.0 * np.sqrt(2 / 3999), rel=0.1)
    assert A.bootstrap_variance_se(s, resamples=400) == pytest.approx(se, rel=0.15)
    with pytest.raises(A.AnalysisError):
        A.variance_standard_error(np.array([1.0]))


def test_trial_rng_is_spawned_child():
    kids = np.random.SeedSequence(99).spawn(3)
    for i, kid in enumerate(kids):
        assert np.random.default_rng(kid).random() == A.trial_rng(99, i).random()


def test_monte_carlo_k4_small():
    g = G.complete(4)
    x = np.array([1.0, -1, 1, -1])
    mc = A.variance_monte_carlo(g, x, ModelParams(NODE, 0.5), 20000, master_seed=5)
    assert abs(mc.var_F - 0.2) <= 3 * mc.std_error_of_var
    assert abs(mc.mean_F) <= 3 * mc.std_error_of_mean
    assert mc.failed_trials == 0 and mc.epsilon == pytest.approx(0.2 / 1e4)


def test_monte_carlo_zero_state():
    mc = A.variance_monte_carlo(G.cycle(6), np.zeros(6), ModelParams(NODE, 0.5), 50)
    assert mc.var_F == 0.0 and np.all(mc.steps == 0) and np.all(mc.values == 0)


def test_monte_carlo_worker_independence():
    g = G.hypercube(3)
    x = centred(g, 1)
    p = ModelParams(NODE, 0.5, 2)
    one = A.variance_monte_carlo(g, x, p, 300, master_seed=17, workers=1)
    two = A.variance_monte_carlo(g, x, p, 300, master_seed=17, workers=2)
    assert np.array_equal(one.values, two.values) and one.var_F == two.var_F
    other = A.variance_monte_carlo(g, x, p, 300, master_seed=18)
    assert not np.array_equal(one.values, other.values)


def test_monte_carlo_rejects():
    with pytest.raises(A.AnalysisError):
        A.variance_monte_carlo(G.cycle(4), [1, -1, 1, -1], ModelParams(NODE, 0.5), 1)


def test_time_bounds_examples():
    e = ModelParams(EDGE, 0.5)
    n = ModelParams(NODE, 0.5)
    assert A.variance_time_bounds(e, G.cycle(4), 0, 2.0) == {"bound_M": 0.0, "bound_Avg": 0.0}
    assert A.variance_time_bounds(e, G.cycle(4), 100, 2.0)["bound_Avg"] == pytest.approx(25.0)
    g = G.petersen()
    assert A.variance_time_bounds(n, g, 30, 1.5)["bound_M"] == pytest.approx(30 * (1.5 / 10) ** 2)
    assert A.variance_time_bounds(n, g, 30, 1.5)["bound_Avg"] is None
    with pytest.raises(A.AnalysisError):
        A.variance_time_bounds(n, g, -1, 1.0)


@pytest.mark.parametrize("g, p", [(G.cycle(8), ModelParams(EDGE, 0.5)), (G.path(6), ModelParams(EDGE, 0.3)),
                                  (G.load_graph("0 1\n1 2\n2 3\n3 0\n0 2\n3 4"), ModelParams(NODE, 0.5, 1))])
def test_time_variance_bounds_hold(g, p):
    x = np.random.default_rng(2).uniform(-1, 1, g.n)
    K = D.discrepancy(x)
    times = [1, 5, 20, 80, 320]
    ens = A.time_variance_ensemble(g, x, p, times, 4000, master_seed=3)
    for i, t in enumerate(times):
        b = A.variance_time_bounds(p, g, t, K)
        # the sample variance has relative SE about sqrt(2 / N); allow 10 percent
        assert ens["var_M"][i] <= 1.1 * b["bound_M"]
        if p.kind == EDGE:
            assert ens["var_Avg"][i] <= 1.1 * b["bound_Avg"]


def test_edge_avg_variance_non_decreasing():
    g = G.path(6)
    x = np.random.default_rng(4).uniform(-1, 1, 6)
    times = [2, 8, 32, 128, 512]
    ens = A.time_variance_ensemble(g, x, ModelParams(EDGE, 0.5), times, 6000, master_seed=8)
    v = ens["var_Avg"]
    se = v * np.sqrt(2 / 5999) * 3
    for i in range(len(v) - 1):
        assert v[i + 1] >= v[i] - se[i] - se[i + 1]


def test_scaling_converged_start():
    rows = A.convergence_scaling_experiment("cycle", [6, 8], ModelParams(NODE, 0.5), 1e9, 3)
    assert all(r["median_T"] == 0 and r["ratio"] == 0 for r in rows)


def test_scaling_complete_family():
    rows = A.convergence_scaling_experiment("complete", [4, 8, 16], ModelParams(NODE, 0.5), 1e-6, 30,
                                            master_seed=2)
    assert [r["n"] for r in rows] == [4, 8, 16]
    assert A.ratio_spread(rows) <= 4
    # with 1 - lambda2 of order one the median grows like n log n
    T = [r["median_T"] for r in rows]
    assert T[0] < T[1] < T[2]


def test_convergence_bound_expression():
    g = G.cycle(8)
    x = D.eigenvector_initial_state(g, "L", 8)
    b = A.convergence_bound(g, ModelParams(EDGE, 0.5), x, 1e-6)
    assert b == pytest.approx(g.m * np.log(8 * (x @ x) / 1e-6) / G.spectral(g).lambda2_L)
