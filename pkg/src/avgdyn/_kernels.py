"""Compiled inner loops.

Every random choice goes through ``below`` (floor of ``rng.random() * n``)
so that the pure-Python reference path in :mod:`avgdyn.dynamics` consumes
the generator stream identically and reproduces these trajectories bit for
bit.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def below(rng, n):
    i = int(rng.random() * n)
    return i if i < n else n - 1


@njit(cache=True)
def sample_event(rng, indptr, indices, edge_src, n, is_edge, k, lazy, buf):
    """Draw one selection event. Sources land in ``buf[:k]``.

    Returns ``(updater, noop)``.
    """
    if is_edge:
        e = below(rng, indptr[n])
        buf[0] = indices[e]
        return edge_src[e], False
    u = below(rng, n)
    if lazy and rng.random() < 0.5:
        return u, True
    start = indptr[u]
    d = indptr[u + 1] - start
    for i in range(d):
        buf[i] = indices[start + i]
    # partial Fisher-Yates: first k slots become a uniform ordered k-sample
    for i in range(k):
        j = i + below(rng, d - i)
        tmp = buf[i]
        buf[i] = buf[j]
        buf[j] = tmp
    return u, False


@njit(cache=True)
def exact_phi(x, pi):
    mean = 0.0
    for i in range(x.shape[0]):
        mean += pi[i] * x[i]
    phi = 0.0
    for i in range(x.shape[0]):
        dx = x[i] - mean
        phi += pi[i] * dx * dx
    return mean, phi


@njit(cache=True)
def advance(x, acc, indptr, indices, edge_src, pi, is_edge, alpha, k, lazy,
            eps, nsteps, rng, buf, ev_u, ev_src, ev_noop, record):
    """Run at most ``nsteps`` steps in place on ``x``.

    ``acc`` holds (S1, S2, c): pi-weighted first and second moments of
    ``x - c``, so phi = S2 - S1**2 is updated in O(1) per step. A threshold
    crossing is confirmed by an exact recomputation before stopping.

    Returns ``(steps_taken, converged)``.
    """
    n = x.shape[0]
    w = (1.0 - alpha) / k
    c = acc[2]
    for t in range(nsteps):
        u, noop = sample_event(rng, indptr, indices, edge_src, n, is_edge, k, lazy, buf)
        if record:
            ev_u[t] = u
            ev_noop[t] = noop
            for i in range(k):
                ev_src[t, i] = buf[i]
        if noop:
            continue
        s = 0.0
        for i in range(k):
            s += x[buf[i]]
        old = x[u]
        new = alpha * old + w * s
        x[u] = new
        a = old - c
        b = new - c
        acc[0] += pi[u] * (b - a)
        acc[1] += pi[u] * (b * b - a * a)
        if acc[1] - acc[0] * acc[0] <= eps:
            mean, phi = exact_phi(x, pi)
            acc[0] = mean - c
            acc[1] = phi + acc[0] * acc[0]
            if phi <= eps:
                return t + 1, True
    return nsteps, False


@njit(cache=True)
def pair_walk_counts(rng, indptr, indices, edge_src, n, k, alpha, labels,
                     x, y, burn_in, batches, batch_len, buf):
    """Two walks driven by shared node-model events; counts of the
    distance class of (X, Y) per batch after ``burn_in`` steps."""
    counts = np.zeros((batches, 3), dtype=np.int64)
    total = burn_in + batches * batch_len
    for t in range(total):
        u, noop = sample_event(rng, indptr, indices, edge_src, n, False, k, False, buf)
        if x == u:
            if rng.random() >= alpha:
                x = buf[below(rng, k)]
        if y == u:
            if rng.random() >= alpha:
                y = buf[below(rng, k)]
        if t >= burn_in:
            counts[(t - burn_in) // batch_len, labels[x, y]] += 1
    return counts
