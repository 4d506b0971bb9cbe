"""Independent reference computations used by the tests."""

from __future__ import annotations

import math

import numpy as np

from smallgain.trajectories import Signal, Trajectory


def bisect_inverse(f, y, lo=0.0, hi=1.0, iters=200):
    """Smallest ``s`` with ``f(s) >= y`` for increasing scalar ``f``, by plain bisection."""
    while f(hi) < y:
        hi *= 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) >= y:
            hi = mid
        else:
            lo = mid
    return hi


def plf_root(knots, r0=0.0):
    """Largest root of ``g(r) = r`` for a piecewise-linear ``g`` above ``r0``, or None.

    ``knots`` gives ``(x, g(x))`` with the last segment extended linearly.
    """
    xs = [k[0] for k in knots]
    ys = [k[1] for k in knots]
    roots = []
    segs = list(zip(xs[:-1], ys[:-1], xs[1:], ys[1:]))
    slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    segs.append((xs[-1], ys[-1], math.inf, slope))
    for x0, y0, x1, y1 in segs:
        m = y1 if math.isinf(x1) else (y1 - y0) / (x1 - x0)
        if m == 1.0:
            continue
        r = (y0 - m * x0) / (1.0 - m)
        if x0 <= r <= x1 and r > r0:
            roots.append(r)
    return max(roots) if roots else None


def sup_measure(u):
    """``mu(a, b) = max |u|`` over grid indices ``a..b`` as a dense table."""
    n = u.size
    table = np.zeros((n, n))
    for a in range(n):
        table[a, a:] = np.maximum.accumulate(np.abs(u[a:]))
    return table


def oracle_trajectory(rng, t, *, k, lam, gamma, sigma1, sigma2, sigma3, C, d, x0, u,
                      gain_a=None, gain_b=None, shrink=True):
    """Trajectory satisfying both hypotheses by construction on the grid ``t``.

    Output bound: ``beta(s, t) = k s exp(-lam t)``, gain ``gamma``, input
    term ``gain_a(sup |u|)``, constant ``C``. State bound: ``sigma1 >= id``,
    ``sigma2``, ``sigma3``, ``gain_b(sup |u|)``, ``d``. Each new sample is the
    minimum over start times of the bound's right-hand side using only past
    samples, optionally shrunk by a random factor in [0.5, 1].
    """
    n = t.size
    mu = sup_measure(u)
    ga = (lambda v: v) if gain_a is None else gain_a
    gb = (lambda v: 0.0 * v) if gain_b is None else gain_b
    x = np.zeros(n)
    y = np.zeros(n)
    x[0] = x0
    for i in range(n):
        if i > 0:
            best = math.inf
            for a in range(i):
                past_y = y[a:i].max()
                rhs = max(sigma1(x[a]), sigma2(t[i] - t[a]), sigma3(past_y), gb(mu[a, i]), d)
                best = min(best, rhs)
            x[i] = best * (rng.uniform(0.5, 1.0) if shrink else 1.0)
        best = math.inf
        for a in range(i + 1):
            past_y = y[a:i].max() if i > a else 0.0
            rhs = max(k * x[a] * math.exp(-lam * (t[i] - t[a])), gamma(past_y), ga(mu[a, i]), C)
            best = min(best, rhs)
        y[i] = best * (rng.uniform(0.5, 1.0) if shrink else 1.0)
    return Trajectory(t, x, y, Signal(t, u), tau=math.inf, step=float(t[1] - t[0]))
