"""Sampled trajectories, input measures and bound checkers.

A trajectory is the quadruple ``(tau, u, x, y)`` sampled on a time grid:
``x`` and ``y`` are nonnegative magnitudes, ``u`` is an arbitrary input
record (here a :class:`Signal`) that only input measures look into.
Quantifiers over times become quantifiers over grid points and suprema are
grid maxima, so refining the grid tightens every check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .comparison import ATOL, RTOL, KLFn, ScalarFn, kl_from_dict, scalar_from_dict
from .errors import DataError, HorizonError, IntervalError

MAX_FULL_ROWS = 2000


# ---------------------------------------------------------------------------
# signals and trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Signal:
    """Sampled multichannel signal: ``values[i, k]`` is channel ``k`` at ``t[i]``."""

    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or v.shape[0] != t.size:
            raise DataError("signal values must have one row per sample time")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def norm(self, channels: Sequence[int] | None = None) -> np.ndarray:
        """Pointwise max-norm over the selected channels."""
        v = self.values if channels is None else self.values[:, list(channels)]
        if v.shape[1] == 0:
            return np.zeros(self.t.size)
        return np.max(np.abs(v), axis=1)

    def stack(self, other: "Signal") -> "Signal":
        if other.t.shape != self.t.shape or np.any(other.t != self.t):
            raise DataError("cannot stack signals on different grids")
        return Signal(self.t, np.hstack([self.values, other.values]))


def zero_signal(t: np.ndarray, channels: int = 1) -> Signal:
    return Signal(t, np.zeros((len(t), channels)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled trajectory ``(tau, u, x, y)``.

    ``tau`` is the horizon; ``inf`` is stored as the finite simulation span
    with ``truncated=True``. ``step`` records the time discipline: a uniform
    step (``dt`` or 1 for discrete time) or ``None`` for an irregular grid.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: Signal | None = None
    tau: float = math.inf
    step: float | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        for a in (t, x, y):
            a.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if t.ndim != 1 or t.size == 0:
            raise DataError("time grid must be a nonempty vector")
        if t[0] != 0.0:
            raise DataError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise DataError("time grid must be strictly increasing")
        if not t[-1] < self.tau:
            raise DataError("time grid must lie inside [0, tau)")
        if x.shape != t.shape or y.shape != t.shape:
            raise DataError("x and y need one sample per grid point")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("x and y samples must be finite")
        if np.any(x < 0) or np.any(y < 0):
            raise DataError("x and y are magnitudes and must be nonnegative")
        if self.u is not None and (self.u.t.shape != t.shape or np.any(self.u.t != t)):
            raise DataError("input signal must be sampled on the trajectory grid")

    @property
    def truncated(self) -> bool:
        """True when the horizon is infinite and only a finite span is stored."""
        return math.isinf(self.tau)

    @property
    def input(self) -> Signal:
        return self.u if self.u is not None else zero_signal(self.t)

    def to_dict(self) -> dict:
        return {
            "t": self.t.tolist(),
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "u": None if self.u is None else self.u.values.tolist(),
            "tau": None if math.isinf(self.tau) else self.tau,
            "step": self.step,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        t = np.asarray(d["t"], dtype=float)
        u = None if d.get("u") is None else Signal(t, np.asarray(d["u"], dtype=float))
        tau = math.inf if d.get("tau") is None else float(d["tau"])
        return cls(t, np.asarray(d["x"]), np.asarray(d["y"]), u, tau, d.get("step"))


def write_csv(traj: Trajectory, path) -> None:
    """Write ``t, x, y, u1..uk`` columns."""
    u = traj.u.values if traj.u is not None else np.zeros((traj.t.size, 0))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y"] + [f"u{k + 1}" for k in range(u.shape[1])])
        for i in range(traj.t.size):
            w.writerow([repr(float(traj.t[i])), repr(float(traj.x[i])), repr(float(traj.y[i]))]
                       + [repr(float(v)) for v in u[i]])


def read_csv(path, tau: float = math.inf, step: float | None = None) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if header[:3] != ["t", "x", "y"]:
        raise DataError("trajectory CSV must start with columns t, x, y")
    t = body[:, 0]
    u = Signal(t, body[:, 3:]) if body.shape[1] > 3 else None
    return Trajectory(t, body[:, 1], body[:, 2], u, tau, step)


# ---------------------------------------------------------------------------
# interval suprema
# ---------------------------------------------------------------------------


def _snap(t: np.ndarray, a: float, b: float) -> tuple[int, int]:
    i = max(int(np.searchsorted(t, a, side="right")) - 1, 0)
    j = min(int(np.searchsorted(t, b, side="left")), t.size - 1)
    return i, j


def sup_on_interval(traj: Trajectory, which: str, a: float, b: float) -> float:
    """Grid supremum of ``x`` or ``y`` over ``[a, b]`` (endpoints snapped outward)."""
    if a > b:
        raise IntervalError(f"empty interval [{a}, {b}]")
    if a < 0:
        raise IntervalError("interval must start at or after 0")
    if b >= traj.tau:
        raise HorizonError(f"interval end {b} is not before the horizon {traj.tau}")
    sig = {"x": traj.x, "y": traj.y}[which]
    i, j = _snap(traj.t, a, b)
    return float(np.max(sig[i:j + 1]))


# ---------------------------------------------------------------------------
# input measures
# ---------------------------------------------------------------------------


class InputMeasure:
    """Monotone interval function ``mu(u, a, b)``.

    ``running(u, i0)`` returns ``mu(u, t[i0], t[j])`` for all ``j >= i0``;
    ``__call__`` evaluates a single interval after snapping its endpoints
    outward to the grid.
    """

    def running(self, u: Signal, i0: int) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def __call__(self, u: Signal, a: float, b: float) -> float:
        if a > b:
            raise IntervalError(f"empty interval [{a}, {b}]")
        i, j = _snap(u.t, a, b)
        return float(self.running(u, i)[j - i])

    def to_dict(self) -> dict:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True)
class SupNorm(InputMeasure):
    """``sup |u(t)|`` over the interval; ``channels`` selects components."""

    channels: tuple | None = None

    def running(self, u, i0):
        return np.maximum.accumulate(u.norm(self.channels)[i0:])

    def to_dict(self):
        return {"kind": "sup", "channels": None if self.channels is None else list(self.channels)}


@dataclass(frozen=True)
class IntegralNorm(InputMeasure):
    """Trapezoidal ``integral |u(t)| dt`` over the interval."""

    channels: tuple | None = None

    def running(self, u, i0):
        n = u.norm(self.channels)[i0:]
        dt = np.diff(u.t[i0:])
        return np.concatenate([[0.0], np.cumsum(0.5 * (n[1:] + n[:-1]) * dt)])

    def to_dict(self):
        return {"kind": "integral",
                "channels": None if self.channels is None else list(self.channels)}


@dataclass(frozen=True)
class ZeroMeasure(InputMeasure):
    def running(self, u, i0):
        return np.zeros(u.t.size - i0)

    def to_dict(self):
        return {"kind": "zero"}


@dataclass(frozen=True, eq=False)
class MaxOf(InputMeasure):
    """``max_k f_k(mu_k(u, a, b))`` for nondecreasing ``f_k``: again an input measure."""

    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((f, m) for f, m in self.terms))

    def running(self, u, i0):
        out = None
        for f, m in self.terms:
            v = f(m.running(u, i0))
            out = v if out is None else np.maximum(out, v)
        return out

    def to_dict(self):
        return {"kind": "max", "terms": [{"gain": f.to_dict(), "measure": m.to_dict()}
                                         for f, m in self.terms]}


def gain_of(gain: ScalarFn, measure: InputMeasure) -> MaxOf:
    """``gain(measure(u, a, b))``."""
    return MaxOf(((gain, measure),))


def measure_from_dict(d: dict) -> InputMeasure:
    kind = d.get("kind")
    ch = d.get("channels")
    ch = None if ch is None else tuple(int(c) for c in ch)
    if kind == "sup":
        m = SupNorm(ch)
    elif kind == "integral":
        m = IntegralNorm(ch)
    elif kind == "zero":
        return ZeroMeasure()
    elif kind == "max":
        return MaxOf(tuple((scalar_from_dict(x["gain"]), measure_from_dict(x["measure"]))
                           for x in d["terms"]))
    else:
        raise DataError(f"unknown input measure {kind!r}")
    if "gain" in d:
        return gain_of(scalar_from_dict(d["gain"]), m)
    return m


@dataclass(frozen=True, eq=False)
class IOSCertificate:
    """``(beta, mu, C)``: the data of a KL-practical-IOS bound.

    ``notes`` carries diagnostics recorded during synthesis.
    """

    beta: KLFn
    mu: InputMeasure
    C: float
    notes: tuple = ()

    def __post_init__(self):
        if not self.C >= 0:
            raise DataError("certificate constant must be nonnegative")

    def to_dict(self) -> dict:
        return {"beta": self.beta.to_dict(), "mu": self.mu.to_dict(), "C": self.C,
                "notes": list(self.notes)}

    @classmethod
    def from_dict(cls, d: dict) -> "IOSCertificate":
        return cls(kl_from_dict(d["beta"]), measure_from_dict(d["mu"]), float(d["C"]),
                   tuple(d.get("notes", ())))


# ---------------------------------------------------------------------------
# checkers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckReport:
    """Result of checking a bound over pairs ``(t0, t)`` with ``t0 <= t``.

    ``margin`` is the smallest ``rhs - lhs`` seen (negative means the bound
    is exceeded somewhere) and ``worst_pair`` where it occurs;
    ``first_violation`` is the first failing pair in scan order.
    """

    passed: bool
    margin: float
    worst_pair: tuple | None
    first_violation: tuple | None
    violations: int
    pairs_checked: int
    horizon_truncated: bool

    def __bool__(self):
        return self.passed


def select_rows(traj: Trajectory, max_full: int = MAX_FULL_ROWS) -> np.ndarray:
    """Start indices ``t0`` to check.

    All of them up to ``max_full`` grid points; beyond that a strided subset
    plus the local minima of ``x`` and local maxima of ``y`` (where bounds
    anchored at ``t0`` are tightest).
    """
    n = traj.t.size
    if n <= max_full:
        return np.arange(n)
    stride = int(math.ceil(n / max_full))
    rows = [np.arange(0, n, stride), [n - 1]]
    for sig, sign in ((traj.x, 1.0), (traj.y, -1.0)):
        v = sign * sig
        interior = np.flatnonzero((v[1:-1] <= v[:-2]) & (v[1:-1] <= v[2:])) + 1
        if interior.size > max_full // 4:
            interior = interior[np.argsort(v[interior], kind="stable")[: max_full // 4]]
        rows.append(interior)
    return np.unique(np.concatenate(rows)).astype(int)


class _Accumulator:
    def __init__(self, rtol, atol):
        self.rtol, self.atol = rtol, atol
        self.margin = math.inf
        self.worst = None
        self.first = None
        self.violations = 0
        self.pairs = 0

    def add(self, t0, times, lhs, rhs):
        if lhs.size == 0:
            return
        self.pairs += lhs.size
        gap = rhs - lhs
        k = int(np.argmin(gap))
        if gap[k] < self.margin:
            self.margin = float(gap[k])
            self.worst = (float(t0), float(times[k]))
        bad = lhs > rhs + self.atol + self.rtol * np.abs(rhs)
        nbad = int(np.count_nonzero(bad))
        if nbad:
            if self.first is None:
                self.first = (float(t0), float(times[int(np.argmax(bad))]))
            self.violations += nbad

    def report(self, traj):
        return CheckReport(self.violations == 0, self.margin, self.worst, self.first,
                           self.violations, self.pairs, traj.truncated)


def _check(traj, rhs_row, lhs_sig, rtol, atol, max_full, rows=None):
    acc = _Accumulator(rtol, atol)
    t = traj.t
    for i0 in (select_rows(traj, max_full) if rows is None else rows):
        acc.add(t[i0], t[i0:], lhs_sig[i0:], rhs_row(int(i0)))
    return acc.report(traj)


def check_output_bound(traj: Trajectory, beta: KLFn, gamma: ScalarFn, mu_a: InputMeasure,
                       C: float, *, rtol: float = RTOL, atol: float = ATOL,
                       max_full: int = MAX_FULL_ROWS,
                       starts: Sequence[int] | None = None) -> CheckReport:
    """Check ``y(t) <= max{beta(x(t0), t - t0), gamma(|y|_[t0,t]), |u|^a_[t0,t], C}``."""
    t, x, y, u = traj.t, traj.x, traj.y, traj.input

    def rhs(i0):
        dt = t[i0:] - t[i0]
        b = beta(np.full(dt.shape, x[i0]), dt)
        g = gamma(np.maximum.accumulate(y[i0:]))
        return np.maximum(np.maximum(b, g), np.maximum(mu_a.running(u, i0), C))

    return _check(traj, rhs, y, rtol, atol, max_full, starts)


def check_state_bound(traj: Trajectory, sigma1: ScalarFn, sigma2: ScalarFn, sigma3: ScalarFn,
                      mu_b: InputMeasure, d: float, *, rtol: float = RTOL, atol: float = ATOL,
                      max_full: int = MAX_FULL_ROWS,
                      starts: Sequence[int] | None = None) -> CheckReport:
    """Check ``x(t) <= max{s1(x(t0)), s2(t - t0), s3(|y|_[t0,t]), |u|^b_[t0,t], d}``."""
    t, x, y, u = traj.t, traj.x, traj.y, traj.input

    def rhs(i0):
        dt = t[i0:] - t[i0]
        v = np.maximum(sigma2(dt), sigma3(np.maximum.accumulate(y[i0:])))
        v = np.maximum(v, mu_b.running(u, i0))
        return np.maximum(v, max(sigma1(x[i0]), d))

    return _check(traj, rhs, x, rtol, atol, max_full, starts)


def check_kl_practical_ios(traj: Trajectory, cert: IOSCertificate, *, rtol: float = RTOL,
                           atol: float = ATOL, max_full: int = MAX_FULL_ROWS,
                           starts: Sequence[int] | None = None) -> CheckReport:
    """Check ``y(t) <= max{beta(x(t0), t - t0), |u|_[t0,t], C}`` for all grid pairs.

    ``starts`` restricts the start indices ``t0`` (e.g. ``[0]``).
    """
    return _check(traj, lambda i0: kl_bound_from(traj, cert, i0), traj.y, rtol, atol, max_full,
                  starts)


def kl_bound_from(traj: Trajectory, cert: IOSCertificate, i0: int = 0) -> np.ndarray:
    """Right-hand side ``max{beta(x(t0), t - t0), |u|_[t0,t], C}`` on the grid from ``t0 = t[i0]``."""
    t, x = traj.t, traj.x
    dt = t[i0:] - t[i0]
    b = cert.beta(np.full(dt.shape, x[i0]), dt)
    return np.maximum(b, np.maximum(cert.mu.running(traj.input, i0), cert.C))


@dataclass(frozen=True)
class PracticalReport:
    """Both clauses of (mu, C)-practical IOS."""

    stability: CheckReport
    attractivity: CheckReport

    @property
    def passed(self) -> bool:
        return self.stability.passed and self.attractivity.passed

    @property
    def failed_clause(self) -> str | None:
        if not self.stability.passed:
            return "stability"
        if not self.attractivity.passed:
            return "attractivity"
        return None

    def __bool__(self):
        return self.passed


def default_probes(traj: Trajectory, C: float) -> tuple[np.ndarray, np.ndarray]:
    """Data-driven ``(eps, r)`` probe sets for :func:`check_practical_ios`."""
    scale = max(float(np.max(traj.y)), float(np.max(traj.x)), 1e-12)
    eps = C + scale * np.geomspace(1e-3, 2.0, 13)
    pos = traj.x[traj.x > 0]
    if pos.size:
        r = np.unique(np.concatenate([np.geomspace(pos.min(), pos.max(), 8), [pos.max()]]))
    else:
        r = np.array([scale])
    return eps, r


def _lookup(T_table) -> Callable[[float, float], float]:
    if hasattr(T_table, "lookup"):
        return T_table.lookup
    return T_table


def check_practical_ios(traj: Trajectory, delta: ScalarFn, T_table, mu: InputMeasure, C: float,
                        *, eps_probes: Sequence[float] | None = None,
                        r_probes: Sequence[float] | None = None, rtol: float = RTOL,
                        atol: float = ATOL, max_full: int = MAX_FULL_ROWS) -> PracticalReport:
    """Check uniform practical stability and attractivity on grid pairs.

    ``T_table`` is either a callable ``(eps, r) -> time`` or an object with
    a ``lookup(eps, r)`` method; ``inf`` means no claim.

    Stability: for each ``t0`` the binding probe is the smallest ``eps``
    with ``x(t0) <= delta(eps)``. Attractivity: for each probe ``eps > C``
    the earliest claimed time uses the smallest ``T(eps, r)`` over probes
    ``r >= x(t0)``.
    """
    d_eps, d_r = default_probes(traj, C)
    eps = np.sort(np.asarray(d_eps if eps_probes is None else eps_probes, dtype=float))
    eps = eps[eps > 0]
    r_pr = np.sort(np.asarray(d_r if r_probes is None else r_probes, dtype=float))
    lookup = _lookup(T_table)
    t, x, y, u = traj.t, traj.x, traj.y, traj.input
    rows = select_rows(traj, max_full)

    delta_eps = delta(eps)
    stab = _Accumulator(rtol, atol)
    for i0 in rows:
        ok = np.flatnonzero(delta_eps >= x[i0])
        if ok.size == 0:
            continue
        e = eps[ok[0]]
        m = mu.running(u, i0)
        stab.add(t[i0], t[i0:], y[i0:], np.maximum(np.maximum(m, e), C))

    attr_eps = eps[eps > C]
    T = np.array([[float(lookup(e, r)) for r in r_pr] for e in attr_eps]).reshape(
        attr_eps.size, r_pr.size)
    attr = _Accumulator(rtol, atol)
    for i0 in rows:
        usable = r_pr >= x[i0]
        if not np.any(usable):
            continue
        m = None
        for k, e in enumerate(attr_eps):
            Tk = float(np.min(T[k, usable]))
            if not math.isfinite(Tk):
                continue
            start = t[i0] + Tk
            j0 = int(np.searchsorted(t, start - 1e-12 * max(abs(start), 1.0), side="left"))
            if j0 >= t.size:
                continue
            if m is None:
                m = mu.running(u, i0)
            attr.add(t[i0], t[j0:], y[j0:], np.maximum(m[j0 - i0:], e))
    return PracticalReport(stab.report(traj), attr.report(traj))
