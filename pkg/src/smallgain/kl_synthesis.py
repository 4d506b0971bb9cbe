"""KL bounds from stability and attractivity data, and back.

The attractivity data of a practical-IOS set is a table ``T(eps, r)``: any
trajectory starting with ``x(t0) <= r`` satisfies
``y(t) <= max{eps, mu(u, t0, t)}`` once ``t >= t0 + T(eps, r)``. This module
turns such a table plus a stability gain ``delta`` into a single KL bound
(and a KL bound into such data) on explicit grids.

Envelopes are built from samples so that they dominate off the grid too:
the sampled function is pushed to its monotone hull and shifted by one cell
in each direction before bilinear interpolation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .comparison import (KINF, CappedKL, ExtendedInverse, GriddedKL, KLFn, MaxKL, PiecewiseLinear, ScalarFn,
                         fmin, inverse, scalar_from_dict, scale, scale_kl)
from .errors import DataError, HypothesisError, SynthesisError
from .trajectories import InputMeasure, IOSCertificate, ZeroMeasure

DEFAULT_MARGIN = 0.05
DEFAULT_POINTS = 64
MAX_T_NODES = 2048


def default_eps_grid(C: float, scale: float = 1.0, n: int = DEFAULT_POINTS) -> np.ndarray:
    return C + scale * np.geomspace(1e-6, 1e6, n)


def default_r_grid(scale: float = 1.0, n: int = DEFAULT_POINTS) -> np.ndarray:
    return scale * np.geomspace(1e-6, 1e6, n)


# ---------------------------------------------------------------------------
# attractivity tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AttractivityTable:
    """Attractivity times on an ``(eps, r)`` grid.

    ``durations[i, j]`` is the time for level ``eps[i]`` from initial size ``r[j]``;
    it only means something where ``reachable[i, j]`` is true.
    """

    C: float
    delta: ScalarFn
    eps: np.ndarray
    r: np.ndarray
    durations: np.ndarray
    reachable: np.ndarray | None = None

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=float)
        r = np.asarray(self.r, dtype=float)
        T = np.asarray(self.durations, dtype=float)
        ok = np.isfinite(T) if self.reachable is None else np.asarray(self.reachable, dtype=bool)
        if eps.size == 0 or r.size == 0:
            raise DataError("attractivity table has an empty grid")
        if T.shape != (eps.size, r.size) or ok.shape != T.shape:
            raise DataError("attractivity times must have shape (len(eps), len(r))")
        if self.C < 0:
            raise DataError("offset constant must be nonnegative")
        if np.any(np.diff(eps) <= 0) or np.any(np.diff(r) <= 0):
            raise DataError("table grids must be strictly increasing")
        if eps[0] <= self.C:
            raise DataError("table levels must exceed the offset constant")
        if r[0] <= 0:
            raise DataError("table radii must be positive")
        T = np.where(ok, T, 0.0)
        if np.any(T < 0) or not np.all(np.isfinite(T)):
            raise DataError("attractivity times must be finite and nonnegative where reachable")
        for a in (eps, r, T, ok):
            a.setflags(write=False)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "durations", T)
        object.__setattr__(self, "reachable", ok)

    def times(self) -> np.ndarray:
        """Times with ``inf`` in unreachable cells (computed, never stored)."""
        return np.where(self.reachable, self.durations, np.inf)

    def lookup(self, eps: float, r: float) -> float:
        """Conservative time for ``(eps, r)``.

        Uses the largest grid level ``<= eps`` and the smallest grid radius
        ``>= r``; ``inf`` when either falls off the grid.
        """
        i = int(np.searchsorted(self.eps, eps, side="right")) - 1
        j = int(np.searchsorted(self.r, r, side="left"))
        if i < 0 or j >= self.r.size:
            return math.inf
        return float(self.durations[i, j]) if self.reachable[i, j] else math.inf

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# C", repr(float(self.C)), "delta", json.dumps(self.delta.to_dict())])
        w.writerow(["eps\\r"] + [repr(float(v)) for v in self.r])
        for i, e in enumerate(self.eps):
            w.writerow([repr(float(e))] + [repr(float(self.durations[i, j])) if self.reachable[i, j]
                                           else "unreachable" for j in range(self.r.size)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "AttractivityTable":
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 3 or rows[0][0] != "# C" or rows[1][0] != "eps\\r":
            raise DataError("not an attractivity table CSV")
        C = float(rows[0][1])
        delta = scalar_from_dict(json.loads(rows[0][3]))
        r = np.array(rows[1][1:], dtype=float)
        eps = np.array([row[0] for row in rows[2:]], dtype=float)
        cells = [row[1:] for row in rows[2:]]
        ok = np.array([[c != "unreachable" for c in row] for row in cells])
        T = np.array([[0.0 if c == "unreachable" else float(c) for c in row] for row in cells])
        return cls(C, delta, eps, r, T, ok)


def regularize_times(table: AttractivityTable) -> AttractivityTable:
    """``r / (eps - C) + min{T(eps', r') : r' >= r, C < eps' <= eps}`` on the grid.

    The result is strictly increasing in ``r`` and strictly decreasing in
    ``eps`` wherever it is reachable, and each entry is still a valid
    attractivity time: it is no smaller than a stored time for a smaller
    level and a larger radius.
    """
    T = table.times()
    if T.size == 0:
        raise DataError("attractivity table has an empty grid")
    inf_part = np.flip(np.minimum.accumulate(np.flip(T, axis=1), axis=1), axis=1)
    inf_part = np.minimum.accumulate(inf_part, axis=0)
    extra = table.r[None, :] / (table.eps[:, None] - table.C)
    ok = np.isfinite(inf_part)
    return AttractivityTable(table.C, table.delta, table.eps, table.r,
                             np.where(ok, inf_part + extra, 0.0), ok)


def _first_level_grid(table: AttractivityTable, r_index: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``min{eps_i : T[i, j] <= t}`` for each ``j`` in ``r_index`` and each ``t``; inf if none.

    Levels are ascending, so the first hit along ``eps`` is the minimum.
    """
    T = table.times()[:, r_index]
    t = np.asarray(t, dtype=float)
    hit = T[:, :, None] <= t[None, None, :]
    any_hit = hit.any(axis=0)
    first = np.argmax(hit, axis=0)
    return np.where(any_hit, table.eps[first], np.inf)


def first_level_reached(table: AttractivityTable, r: float, t: float) -> float:
    """Smallest grid level reached from radius ``r`` within time ``t``; ``inf`` if none.

    ``r`` is snapped up to the radius grid.
    """
    if not r > 0 or t < 0:
        raise DataError("first_level_reached needs r > 0 and t >= 0")
    j = int(np.searchsorted(table.r, r, side="left"))
    if j >= table.r.size:
        return math.inf
    return float(_first_level_grid(table, np.array([j]), np.array([float(t)]))[0, 0])


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------


def monotone_hull(values: np.ndarray) -> np.ndarray:
    """Smallest array above ``values`` that is nondecreasing along axis 0 and
    nonincreasing along axis 1."""
    h = np.maximum.accumulate(values, axis=0)
    return np.flip(np.maximum.accumulate(np.flip(h, axis=1), axis=1), axis=1)


def _check_bullets(s_grid, t_grid, phi, stability_delta, T_witness, eps_probes, rtol):
    if eps_probes is None:
        hi = float(np.max(phi)) if phi.size else 1.0
        eps_probes = np.geomspace(max(hi, 1e-12) * 1e-6, max(hi, 1e-12) * 2.0, 25)
    for e in np.asarray(eps_probes, dtype=float):
        tol = rtol * e
        if stability_delta is not None:
            rows = s_grid <= stability_delta(e)
            if np.any(rows):
                block = phi[rows]
                if np.max(block) > e + tol:
                    i, k = np.unravel_index(int(np.argmax(block)), block.shape)
                    raise HypothesisError(
                        f"phi exceeds {e:g} for s <= delta({e:g})", bullet="stability",
                        witness=(float(s_grid[rows][i]), float(t_grid[k]), float(e)))
        if T_witness is not None:
            for j, r in enumerate(s_grid):
                T = float(T_witness(e, r))
                if not math.isfinite(T):
                    continue
                cols = t_grid >= T
                if not np.any(cols):
                    continue
                block = phi[: j + 1][:, cols]
                if np.max(block) > e + tol:
                    i, k = np.unravel_index(int(np.argmax(block)), block.shape)
                    raise HypothesisError(
                        f"phi exceeds {e:g} after time {T:g} from radius {r:g}",
                        bullet="attractivity", witness=(float(s_grid[i]), float(t_grid[cols][k]), float(e)))


def kl_envelope(s_grid: Sequence[float], t_grid: Sequence[float], phi: np.ndarray, *,
                stability_delta: ScalarFn | None = None,
                T_witness: Callable[[float, float], float] | None = None,
                margin: float = DEFAULT_MARGIN, eps_probes: Sequence[float] | None = None,
                rtol: float = 1e-9) -> KLFn:
    """KL function above the samples ``phi[j, k] = phi(s_grid[j], t_grid[k])``.

    ``s_grid`` is positive and increasing, ``t_grid`` starts at 0. Each
    sample is read as a bound for the cell to its lower left in ``s`` and
    lower right in ``t``, which is exact for monotone ``phi``. The decay
    hypothesis (via ``T_witness(eps, r)``) and the small-signal hypothesis
    (via ``stability_delta``) are checked on the grid first.

    Past the grid the envelope extends linearly in ``s`` and decays
    exponentially in ``t`` at rate ``1 / t_max``. Below ``s_grid[0]``,
    when ``stability_delta`` is given, the bound ``phi(s, t) <= delta^{-1}(s)``
    is used through a capped term.
    """
    s = np.asarray(s_grid, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    v = np.asarray(phi, dtype=float)
    if s.ndim != 1 or t.ndim != 1 or v.shape != (s.size, t.size):
        raise DataError("envelope samples must have shape (len(s_grid), len(t_grid))")
    if s.size < 1 or t.size < 2 or s[0] <= 0 or t[0] != 0:
        raise DataError("envelope grids need positive s and t starting at 0")
    if np.any(np.diff(s) <= 0) or np.any(np.diff(t) <= 0):
        raise DataError("envelope grids must be strictly increasing")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise SynthesisError("envelope samples must be finite and nonnegative")
    _check_bullets(s, t, v, stability_delta, T_witness, eps_probes, rtol)

    hull = monotone_hull(v)
    n, m = hull.shape
    shifted = hull[np.minimum(np.arange(n) + 1, n - 1)][:, np.maximum(np.arange(m) - 1, 0)]
    values = np.vstack([np.zeros((1, m)), (1.0 + margin) * shifted])
    t_max = float(t[-1])
    reg = 1e-12 * max(float(np.max(values)), 1.0) / max(float(s[-1]), 1.0)
    grid_part = GriddedKL(np.concatenate([[0.0], s]), t, values, 1.0 / t_max, reg, t_max)
    if stability_delta is None:
        return grid_part
    cap = CappedKL(_scaled_inverse(stability_delta, 1.0 + margin), grid_part, float(s[0]))
    return MaxKL((grid_part, cap))


def _scaled_inverse(delta: ScalarFn, c: float) -> ScalarFn:
    return scale(c, inverse(delta))


# ---------------------------------------------------------------------------
# beta from stability and attractivity data
# ---------------------------------------------------------------------------


def _time_nodes(table: AttractivityTable, max_nodes: int = MAX_T_NODES) -> np.ndarray:
    T = table.durations[table.reachable]
    nodes = np.unique(np.concatenate([[0.0], T[T > 0]]))
    if nodes.size > max_nodes:
        q = np.quantile(nodes, np.linspace(0.0, 1.0, max_nodes))
        nodes = np.unique(np.concatenate([[0.0], q]))
    if nodes.size < 2:
        top = float(np.max(T)) if T.size else 0.0
        nodes = np.array([0.0, max(top, 1.0)])
    return nodes


def attractivity_levels(table: AttractivityTable, t_nodes: np.ndarray | None = None
              ) -> tuple[np.ndarray, np.ndarray]:
    """``min{first_level_reached(r, t) - C, delta^{-1}(r)}`` sampled on ``(table.r, t_nodes)``."""
    t_nodes = _time_nodes(table) if t_nodes is None else np.asarray(t_nodes, dtype=float)
    pb = _first_level_grid(table, np.arange(table.r.size), t_nodes)
    dinv = inverse(table.delta)(table.r)
    phi = np.minimum(pb - table.C, dinv[:, None])
    return t_nodes, phi


def beta_from_attractivity(table: AttractivityTable, margin: float = DEFAULT_MARGIN) -> KLFn:
    """KL function ``beta`` such that for every ``r > 0`` and ``t >= 0`` some
    level ``eps`` reached from ``r`` within ``t`` (or ``eps = inf``) has
    ``min{eps - 2C, delta^{-1}(r)} <= beta(r, t)``.

    ``table`` should be regularized. Built as twice a KL envelope of
    ``min{first_level_reached - C, delta^{-1}}``.
    """
    t_nodes, phi = attractivity_levels(table)

    def witness(e, r):
        return table.lookup(e + table.C, r)

    bar = kl_envelope(table.r, t_nodes, phi, stability_delta=table.delta, T_witness=witness,
                      margin=margin, eps_probes=table.eps - table.C)
    return scale_kl(2.0, bar)


def attractivity_witness(table: AttractivityTable, beta: KLFn, r: float, t: float,
                     rtol: float = 1e-9) -> float | None:
    """A level ``eps`` (possibly ``inf``) certifying the lemma at ``(r, t)``, or ``None``."""
    pb = first_level_reached(table, r, t)
    dinv = float(inverse(table.delta)(r))
    b = float(beta(r, t))
    cands = [pb] if math.isfinite(pb) else []
    cands.append(math.inf)
    for e in cands:
        if min(e - 2 * table.C, dinv) <= b * (1 + rtol) + 1e-12:
            return e
    return None


# ---------------------------------------------------------------------------
# both directions between KL bounds and practical data
# ---------------------------------------------------------------------------


def delta_minorant(beta_hat: ScalarFn, eps_grid: Sequence[float]) -> ScalarFn:
    """Class-K-infinity function below ``beta_hat^{-1}`` wherever the latter is finite.

    The chord interpolant of ``beta_hat^{-1}`` on the grid (through 0, linear
    tail) is intersected with the exact inverse, so the result equals the
    inverse where the chord overshoots and stays unbounded where
    ``beta_hat`` saturates.
    """
    inv = inverse(beta_hat)
    top = beta_hat.sup
    e = np.asarray(eps_grid, dtype=float)
    e = e[(e > 0) & (e < top)]
    vals = inv(e)
    keep = np.isfinite(vals)
    e, vals = e[keep], vals[keep]
    knots_x = np.concatenate([[0.0], e])
    knots_y = np.concatenate([[0.0], vals])
    strict = np.concatenate([[True], np.diff(knots_y) > 0])
    knots_x, knots_y = knots_x[strict], knots_y[strict]
    if knots_x.size < 2:
        knots_x, knots_y = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    chord = PiecewiseLinear(knots_x, knots_y, KINF, "linear")
    if inv.cls == KINF:
        return fmin(chord, inv)
    return fmin(chord, ExtendedInverse(inv, top))


def first_time_below(beta: KLFn, eps: np.ndarray, r: np.ndarray, time_step: float,
                     t_cap: float = 1e12) -> tuple[np.ndarray, np.ndarray]:
    """Smallest multiple of ``time_step`` with ``beta(r, t) <= eps``, elementwise.

    Returns ``(times, reachable)``; unreachable when the bound still exceeds
    ``eps`` at ``t_cap``.
    """
    eps, r = np.broadcast_arrays(np.asarray(eps, dtype=float), np.asarray(r, dtype=float))
    eps, r = eps.ravel(), r.ravel()
    n_cap = math.ceil(t_cap / time_step)
    ok = beta(r, np.full(r.shape, n_cap * time_step)) <= eps
    lo = np.zeros(r.shape, dtype=np.int64)
    hi = np.full(r.shape, n_cap, dtype=np.int64)
    done0 = beta(r, np.zeros(r.shape)) <= eps
    hi[done0] = 0
    # bracket: grow hi geometrically from 1 so bisection works on small ranges
    k = np.where(done0 | ~ok, hi, 1)
    while True:
        need = ~done0 & ok & (k < n_cap) & (beta(r, k * time_step) > eps)
        if not np.any(need):
            break
        lo = np.where(need, k, lo)
        k = np.where(need, np.minimum(2 * k, n_cap), k)
    hi = np.where(done0 | ~ok, hi, k)
    active = ~done0 & ok
    while np.any(active & (hi - lo > 1)):
        mid = (lo + hi) // 2
        good = beta(r, mid * time_step) <= eps
        upd = active & (hi - lo > 1)
        hi = np.where(upd & good, mid, hi)
        lo = np.where(upd & ~good, mid, lo)
    times = np.where(ok, hi * time_step, 0.0)
    return times, ok


def kl_to_practical(cert: IOSCertificate, eps_grid: Sequence[float] | None = None,
                    r_grid: Sequence[float] | None = None, time_step: float = 1e-2,
                    scale: float = 1.0) -> tuple[ScalarFn, AttractivityTable]:
    """Practical stability gain and attractivity table implied by a KL bound.

    ``delta`` stays below the inverse of ``s -> beta(s, 0)``; ``T(eps, r)``
    is the first multiple of ``time_step`` with ``beta(r, T) <= eps``.
    """
    eps = default_eps_grid(cert.C, scale) if eps_grid is None else np.asarray(eps_grid, float)
    r = default_r_grid(scale) if r_grid is None else np.asarray(r_grid, float)
    beta_hat = cert.beta.at_time(0.0)
    delta = delta_minorant(beta_hat, default_r_grid(scale))
    E, R = np.meshgrid(eps, r, indexing="ij")
    T, ok = first_time_below(cert.beta, E, R, time_step)
    return delta, AttractivityTable(cert.C, delta, eps, r, T.reshape(E.shape), ok.reshape(E.shape))


def practical_to_kl(delta: ScalarFn, table: AttractivityTable,
                    mu: InputMeasure | None = None, margin: float = DEFAULT_MARGIN
                    ) -> IOSCertificate:
    """KL certificate ``(3 beta, mu, 3C)`` from practical stability and attractivity data."""
    if delta is not table.delta:
        table = AttractivityTable(table.C, delta, table.eps, table.r, table.durations, table.reachable)
    beta = beta_from_attractivity(regularize_times(table), margin)
    return IOSCertificate(scale_kl(3.0, beta), ZeroMeasure() if mu is None else mu, 3.0 * table.C)
