"""Feedback interconnections of two systems with outputs.

Two systems

    x1' = f1(x1, y2, u1),  y1 = h1(x1, y2, u1)
    x2' = f2(x2, y1, u2),  y2 = h2(x2, y1, u2)

are simulated with fixed-step RK4, their claimed gain certificates are
checked on the run, and the certificates are composed into a bound for the
closed loop when the loop gain is a contraction. Norms of pairs are maxima:
``|(a, b)| = max{|a|, |b|}``; vector norms are max-abs norms.

The adapters at the end cast other stability questions (incremental,
detectability, operator form) as trajectory quadruples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .comparison import (ContractionResult, KLFn, ScalarFn, ComposedKL, MaxKL, compose, fmax,
                         is_contraction_above, zero)
from .errors import ContractionError, CouplingError, DataError
from .small_gain import SmallGainData, synthesize_certificate
from .trajectories import (CheckReport, IOSCertificate, MaxOf, Signal, SupNorm, Trajectory,
                           ZeroMeasure, check_output_bound, check_state_bound, check_kl_practical_ios, gain_of)

ESCAPE_GUARD = 1e12
FIXED_POINT_TOL = 1e-12
FIXED_POINT_ITERS = 50
RELAXATION = 0.5


# ---------------------------------------------------------------------------
# systems and runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GainCertificate:
    """Claimed bounds for one subsystem, started at any time from state ``xi``.

    Output: ``|y| <= max{beta(|xi|, t), gamma_y(|v|), gamma_u(|u|), C}``.
    State: ``|x| <= max{sigma1(|xi|), sigma3(|y|), sigma4(|u|), d}``.
    ``v`` is the partner output and norms of signals are sups since the
    start.
    """

    beta: KLFn
    gamma_y: ScalarFn
    gamma_u: ScalarFn = field(default_factory=zero)
    C: float = 0.0
    sigma1: ScalarFn = field(default_factory=zero)
    sigma3: ScalarFn = field(default_factory=zero)
    sigma4: ScalarFn = field(default_factory=zero)
    d: float = 0.0

    def __post_init__(self):
        if self.C < 0 or self.d < 0:
            raise DataError("certificate constants must be nonnegative")


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """ODE subsystem ``x' = rhs(x, v, u)``, ``y = output_map(x, v, u)``.

    ``feedthrough`` says whether the output depends on the partner output
    ``v``; when neither system has feedthrough the outputs are explicit.
    """

    state_dim: int
    rhs: Callable
    output_map: Callable
    output_dim: int = 1
    input_dim: int = 1
    feedthrough: bool = False
    certificate: GainCertificate | None = None
    name: str = ""

    def __post_init__(self):
        if self.state_dim < 1 or self.output_dim < 1 or self.input_dim < 0:
            raise DataError("system dimensions must be positive")


def _vec(v, n) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
    if a.size != n:
        raise DataError(f"expected a vector of length {n}, got {a.size}")
    return a


def _norm(a: np.ndarray) -> np.ndarray:
    """Row-wise max-abs norm of an ``(n, k)`` array."""
    if a.shape[1] == 0:
        return np.zeros(a.shape[0])
    return np.max(np.abs(a), axis=1)


class _Input:
    """Input as a function of time: callable, sampled :class:`Signal`, or zero."""

    def __init__(self, u, dim):
        self.dim = dim
        if u is None:
            self.f = lambda t: np.zeros(dim)
        elif isinstance(u, Signal):
            if u.channels != dim:
                raise DataError(f"input has {u.channels} channels, system expects {dim}")
            tg, vals = u.t, u.values
            self.f = lambda t: np.array([np.interp(t, tg, vals[:, k]) for k in range(dim)])
        elif callable(u):
            self.f = lambda t: _vec(u(t), dim)
        else:
            c = _vec(u, dim)
            self.f = lambda t: c

    def __call__(self, t):
        return self.f(t)


@dataclass(frozen=True, eq=False)
class PairedRun:
    """Simulated interconnection: states, outputs and inputs on a common grid.

    ``tau`` is the escape time when the overflow guard tripped (samples
    stop before it) and ``inf`` otherwise.
    """

    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    tau: float = math.inf
    dt: float = 0.0

    @property
    def escaped(self) -> bool:
        return math.isfinite(self.tau)

    def super_trajectory(self) -> Trajectory:
        """Quadruple of the closed loop: ``x = |(x1, x2)|``, ``y = |(y1, y2)|``, ``u = (u1, u2)``."""
        x = np.maximum(_norm(self.x1), _norm(self.x2))
        y = np.maximum(_norm(self.y1), _norm(self.y2))
        u = Signal(self.t, np.hstack([self.u1, self.u2]))
        return Trajectory(self.t, x, y, u, self.tau, self.dt)

    def subsystem_trajectory(self, i: int) -> Trajectory:
        """Quadruple of subsystem ``i`` with input channels ``(partner output, own input)``."""
        x, y, v, u = ((self.x1, self.y1, self.y2, self.u1) if i == 1
                      else (self.x2, self.y2, self.y1, self.u2))
        return Trajectory(self.t, _norm(x), _norm(y), Signal(self.t, np.hstack([v, u])),
                          self.tau, self.dt)


@dataclass(frozen=True, eq=False)
class SystemRun:
    """Simulated single system with its partner port driven externally."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    tau: float = math.inf
    dt: float = 0.0


def _rk4(f, x, t, dt):
    k1 = f(t, x)
    k2 = f(t + dt / 2, x + dt / 2 * k1)
    k3 = f(t + dt / 2, x + dt / 2 * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


class _Loop:
    """Solves the output pair ``y1 = h1(x1, y2, u1)``, ``y2 = h2(x2, y1, u2)``."""

    def __init__(self, sys1, sys2):
        self.s1, self.s2 = sys1, sys2
        self.y1 = np.zeros(sys1.output_dim)
        self.y2 = np.zeros(sys2.output_dim)

    def _map(self, x1, x2, u1, u2, y1, y2):
        return (_vec(self.s1.output_map(x1, y2, u1), self.s1.output_dim),
                _vec(self.s2.output_map(x2, y1, u2), self.s2.output_dim))

    def solve(self, x1, x2, u1, u2, t):
        s1, s2 = self.s1, self.s2
        if not s1.feedthrough and not s2.feedthrough:
            y1, y2 = self._map(x1, x2, u1, u2, self.y1, self.y2)
        elif not s1.feedthrough:
            y1 = _vec(s1.output_map(x1, self.y2, u1), s1.output_dim)
            y2 = _vec(s2.output_map(x2, y1, u2), s2.output_dim)
        elif not s2.feedthrough:
            y2 = _vec(s2.output_map(x2, self.y1, u2), s2.output_dim)
            y1 = _vec(s1.output_map(x1, y2, u1), s1.output_dim)
        else:
            y1, y2 = self._iterate(x1, x2, u1, u2, t)
        self.y1, self.y2 = y1, y2
        return y1, y2

    def _iterate(self, x1, x2, u1, u2, t):
        residual = math.inf
        for relax in (1.0, RELAXATION):
            y1, y2 = self.y1, self.y2
            for _ in range(FIXED_POINT_ITERS):
                n1, n2 = self._map(x1, x2, u1, u2, y1, y2)
                residual = max(float(np.max(np.abs(n1 - y1))), float(np.max(np.abs(n2 - y2))))
                scale = max(1.0, float(np.max(np.abs(n1))), float(np.max(np.abs(n2))))
                y1 = (1 - relax) * y1 + relax * n1
                y2 = (1 - relax) * y2 + relax * n2
                if residual <= FIXED_POINT_TOL * scale:
                    return y1, y2
        raise CouplingError(f"output loop did not converge at t={t:g} (residual {residual:.3g})",
                            residual=residual, time=t)


def _grid(horizon, dt):
    if not dt > 0 or not horizon > 0:
        raise DataError("horizon and dt must be positive")
    n = int(math.floor(horizon / dt + 1e-9))
    return np.arange(n + 1) * dt


def simulate(sys1: SystemSpec, sys2: SystemSpec, xi1, xi2, u1=None, u2=None, *,
             horizon: float = 10.0, dt: float = 1e-3, guard: float = ESCAPE_GUARD) -> PairedRun:
    """Fixed-step RK4 run of the interconnection.

    Inputs may be callables of time, sampled signals (linearly interpolated
    between samples) or constants. If a state leaves the ``guard`` ball the
    run is cut there and ``tau`` records the time.
    """
    t = _grid(horizon, dt)
    in1, in2 = _Input(u1, sys1.input_dim), _Input(u2, sys2.input_dim)
    n1, n2 = sys1.state_dim, sys2.state_dim
    loop = _Loop(sys1, sys2)

    def field_(tt, z):
        x1, x2 = z[:n1], z[n1:]
        a, b = in1(tt), in2(tt)
        y1, y2 = loop.solve(x1, x2, a, b, tt)
        return np.concatenate([_vec(sys1.rhs(x1, y2, a), n1), _vec(sys2.rhs(x2, y1, b), n2)])

    z = np.concatenate([_vec(xi1, n1), _vec(xi2, n2)])
    X = np.empty((t.size, n1 + n2))
    Y1 = np.empty((t.size, sys1.output_dim))
    Y2 = np.empty((t.size, sys2.output_dim))
    U1 = np.empty((t.size, sys1.input_dim))
    U2 = np.empty((t.size, sys2.input_dim))
    tau = math.inf
    last = t.size
    for k, tk in enumerate(t):
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > guard:
            tau, last = float(tk), k
            break
        a, b = in1(tk), in2(tk)
        y1, y2 = loop.solve(z[:n1], z[n1:], a, b, tk)
        X[k], Y1[k], Y2[k], U1[k], U2[k] = z, y1, y2, a, b
        if k + 1 < t.size:
            with np.errstate(over="ignore", invalid="ignore"):
                z = _rk4(field_, z, tk, dt)
    if last == 0:
        raise DataError("initial state already exceeds the overflow guard")
    return PairedRun(t[:last], X[:last, :n1], X[:last, n1:], Y1[:last], Y2[:last], U1[:last],
                     U2[:last], tau, dt)


def simulate_system(sys: SystemSpec, xi, u=None, v=None, *, horizon: float = 10.0,
                    dt: float = 1e-3, guard: float = ESCAPE_GUARD) -> SystemRun:
    """Run one system with its partner port driven by ``v`` (zero by default)."""
    t = _grid(horizon, dt)
    inu = _Input(u, sys.input_dim)
    inv = _Input(v, sys.output_dim if v is None else
                 (v.channels if isinstance(v, Signal) else np.atleast_1d(v(0.0) if callable(v)
                                                                          else v).size))
    n = sys.state_dim

    def field_(tt, x):
        return _vec(sys.rhs(x, inv(tt), inu(tt)), n)

    x = _vec(xi, n)
    X = np.empty((t.size, n))
    Y = np.empty((t.size, sys.output_dim))
    U = np.empty((t.size, sys.input_dim))
    tau, last = math.inf, t.size
    for k, tk in enumerate(t):
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > guard:
            tau, last = float(tk), k
            break
        X[k] = x
        Y[k] = _vec(sys.output_map(x, inv(tk), inu(tk)), sys.output_dim)
        U[k] = inu(tk)
        if k + 1 < t.size:
            with np.errstate(over="ignore", invalid="ignore"):
                x = _rk4(field_, x, tk, dt)
    return SystemRun(t[:last], X[:last], Y[:last], U[:last], tau, dt)


# ---------------------------------------------------------------------------
# small-gain condition and composite certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmallGainResult:
    holds: bool
    witness: float | None
    forward: ContractionResult
    backward: ContractionResult
    mode: str

    def __bool__(self):
        return self.holds


def small_gain_condition(g1y: ScalarFn, g2y: ScalarFn, r0: float = 0.0, mode: str = "both",
                         **grid) -> SmallGainResult:
    """Contraction of the loop gains ``g1y o g2y`` and ``g2y o g1y``.

    ``mode='both'`` needs both orders above ``r0``; ``mode='either'`` uses
    ``r0 = 0`` and accepts either order. Both orders are always evaluated.
    """
    if mode not in ("both", "either"):
        raise DataError(f"unknown small-gain mode {mode!r}")
    floor = r0 if mode == "both" else 0.0
    fwd = is_contraction_above(compose(g1y, g2y), floor, **grid)
    bwd = is_contraction_above(compose(g2y, g1y), floor, **grid)
    if mode == "both":
        holds = fwd.holds and bwd.holds
        wit = None if holds else (fwd.witness if not fwd.holds else bwd.witness)
    else:
        holds = fwd.holds or bwd.holds
        wit = None if holds else min(fwd.witness, bwd.witness)
    return SmallGainResult(holds, wit, fwd, bwd, mode)


@dataclass(frozen=True, eq=False)
class CompositeCertificate:
    """Closed-loop output bound in hypothesis form, plus the derived conclusion.

    ``beta``, ``gamma_loop``, ``gamma_u`` and ``C`` bound the closed-loop
    output in terms of its own past (the loop gain is a contraction);
    ``state_offsets`` are the per-subsystem constants of the state bounds;
    ``data`` packages them with the state bound; ``conclusion`` is the
    KL-practical bound obtained from ``data``, or ``None`` if not computed.
    """

    beta: KLFn
    gamma_loop: ScalarFn
    gamma_u: ScalarFn
    C: float
    state_offsets: tuple
    r0: float
    data: SmallGainData | None = None
    conclusion: IOSCertificate | None = None


def _cert(sys: SystemSpec) -> GainCertificate:
    if sys.certificate is None:
        raise DataError(f"system {sys.name or '?'} has no gain certificate")
    return sys.certificate


def composite_certificate(sys1: SystemSpec, sys2: SystemSpec, r0: float = 0.0, *,
                          conclude: bool = True, r_grid: Sequence[float] | None = None,
                          eps_grid: Sequence[float] | None = None, depth: int = 4096,
                          time_step: float = 1e-2, scale: float = 1.0) -> CompositeCertificate:
    """Compose subsystem certificates into a closed-loop bound.

    Raises :class:`ContractionError` when the loop gain is not a contraction
    above ``r0`` in both orders. With ``conclude`` the KL-practical
    conclusion is synthesized on the given grids (defaults: 33 points over
    ``[1e-4, 1e4] * scale``).
    """
    c1, c2 = _cert(sys1), _cert(sys2)
    sg = small_gain_condition(c1.gamma_y, c2.gamma_y, r0, "both")
    if not sg.holds:
        raise ContractionError(f"loop gain is not a contraction above r0={r0} "
                               f"(fails at r={sg.witness})", witness=sg.witness)
    b1, b2 = c1.beta, c2.beta
    th1, th2 = b1.at_time(0.0), b2.at_time(0.0)
    g1, g2 = c1.gamma_y, c2.gamma_y

    def half(beta, s_map=None, outer=None):
        return ComposedKL(beta, outer=outer, s_map=s_map, t_scale=0.5)

    beta = MaxKL((
        half(b1, c1.sigma1),
        half(b1, compose(c1.sigma3, th1)),
        half(b1, compose(c1.sigma3, compose(g1, th2))),
        half(b2, outer=g1),
        half(b2, c2.sigma1),
        half(b2, compose(c2.sigma3, th2)),
        half(b2, compose(c2.sigma3, compose(g2, th1))),
        half(b1, outer=g2),
    ))
    gamma_loop = fmax(compose(g1, g2), compose(g2, g1))
    gamma_u = fmax(
        compose(th1, compose(c1.sigma3, compose(g1, c2.gamma_u))),
        compose(th1, compose(c1.sigma3, c1.gamma_u)),
        compose(th1, c1.sigma4),
        compose(g1, c2.gamma_u),
        c1.gamma_u,
        compose(th2, compose(c2.sigma3, compose(g2, c1.gamma_u))),
        compose(th2, compose(c2.sigma3, c2.gamma_u)),
        compose(th2, c2.sigma4),
        compose(g2, c1.gamma_u),
        c2.gamma_u,
    )
    ct1 = max(float(c1.sigma3(g1(c2.C))), float(c1.sigma3(c1.C)), float(c1.sigma3(r0)), c1.d)
    ct2 = max(float(c2.sigma3(g2(c1.C))), float(c2.sigma3(c2.C)), float(c2.sigma3(r0)), c2.d)
    C = max(float(th1(ct1)), float(g1(c2.C)), c1.C, float(th2(ct2)), float(g2(c1.C)), c2.C)

    m1 = sys1.input_dim
    ch1 = tuple(range(m1))
    ch2 = tuple(range(m1, m1 + sys2.input_dim))
    mu_b = MaxOf(((c1.sigma4, SupNorm(ch1)), (c2.sigma4, SupNorm(ch2))))
    data = SmallGainData(beta, gamma_loop, r0, fmax(c1.sigma1, c2.sigma1), zero(),
                         fmax(c1.sigma3, c2.sigma3), max(c1.d, c2.d), C,
                         gain_of(gamma_u, SupNorm()), mu_b, time_step)
    conclusion = None
    if conclude:
        r = scale * np.geomspace(1e-4, 1e4, 33) if r_grid is None else r_grid
        floor = max(C, r0)
        eps = floor + scale * np.geomspace(1e-4, 1e4, 33) if eps_grid is None else eps_grid
        conclusion = synthesize_certificate(data, r, eps, depth=depth)
    return CompositeCertificate(beta, gamma_loop, gamma_u, C, (ct1, ct2), r0, data, conclusion)


def certify_interconnection(run: PairedRun, cert: CompositeCertificate | IOSCertificate, *,
                            all_starts: bool = False, rtol: float = 1e-9,
                            atol: float = 1e-12) -> CheckReport:
    """Check the closed-loop conclusion on the run.

    By default only the bound from the initial time is checked at every
    grid time; ``all_starts`` checks every start time.
    """
    ios = cert.conclusion if isinstance(cert, CompositeCertificate) else cert
    if ios is None:
        raise DataError("composite certificate carries no conclusion; build it with conclude=True")
    traj = run.super_trajectory()
    return check_kl_practical_ios(traj, ios, rtol=rtol, atol=atol,
                                  starts=None if all_starts else [0])


def verify_subsystem_certificates(run: PairedRun, sys1: SystemSpec, sys2: SystemSpec, *,
                                  rtol: float = 1e-9, atol: float = 1e-12,
                                  max_full: int = 400) -> dict:
    """Check each subsystem's claimed output and state bounds on the run."""
    out = {}
    for i, sys in ((1, sys1), (2, sys2)):
        c = _cert(sys)
        traj = run.subsystem_trajectory(i)
        p = (sys2 if i == 1 else sys1).output_dim
        v_ch = tuple(range(p))
        u_ch = tuple(range(p, p + sys.input_dim))
        mu_a = MaxOf(((c.gamma_y, SupNorm(v_ch)), (c.gamma_u, SupNorm(u_ch))))
        out[f"output_{i}"] = check_output_bound(traj, c.beta, zero(), mu_a, c.C, rtol=rtol,
                                                atol=atol, max_full=max_full)
        out[f"state_{i}"] = check_state_bound(traj, c.sigma1, zero(), c.sigma3,
                                              gain_of(c.sigma4, SupNorm(u_ch)), c.d, rtol=rtol,
                                              atol=atol, max_full=max_full)
    return out


# ---------------------------------------------------------------------------
# adapters
# ---------------------------------------------------------------------------


def adapt_incremental(run_a: SystemRun, run_b: SystemRun) -> Trajectory:
    """Difference quadruple: ``x = y = |x_a - x_b|`` driven by ``u_a - u_b``.

    Runs must share their time grid up to the shorter one; the result lives
    on the common horizon.
    """
    n = min(run_a.t.size, run_b.t.size)
    if n == 0 or np.any(run_a.t[:n] != run_b.t[:n]):
        raise DataError("incremental runs must share a time grid")
    if run_a.x.shape[1] != run_b.x.shape[1] or run_a.u.shape[1] != run_b.u.shape[1]:
        raise DataError("incremental runs must have matching dimensions")
    t = run_a.t[:n]
    dx = _norm(run_a.x[:n] - run_b.x[:n])
    tau = min(run_a.tau, run_b.tau)
    return Trajectory(t, dx, dx.copy(), Signal(t, run_a.u[:n] - run_b.u[:n]), tau,
                      run_a.dt or None)


def adapt_ioss(run: SystemRun, w=None) -> Trajectory:
    """Detectability quadruple: ``x = |x|``, input ``(y, u)``.

    The output channel is ``|x|`` too, unless an error signal ``w`` is given
    (an ``(n, k)`` array or a callable ``w(x, u)``), in which case it is
    ``|w|``.
    """
    x = _norm(run.x)
    if w is None:
        y = x.copy()
    elif callable(w):
        y = np.array([float(np.max(np.abs(np.atleast_1d(w(run.x[k], run.u[k])))))
                      for k in range(run.t.size)])
    else:
        wa = np.asarray(w, dtype=float)
        y = _norm(wa.reshape(run.t.size, -1))
    return Trajectory(run.t, x, y, Signal(run.t, np.hstack([run.y, run.u])), run.tau,
                      run.dt or None)


def ioss_measure(gamma_y: ScalarFn, gamma_u: ScalarFn, output_dim: int, input_dim: int) -> MaxOf:
    """``max{gamma_y(|y|), gamma_u(|u|)}`` over the input channels built by :func:`adapt_ioss`."""
    return MaxOf(((gamma_y, SupNorm(tuple(range(output_dim)))),
                  (gamma_u, SupNorm(tuple(range(output_dim, output_dim + input_dim))))))


def adapt_io_operator(t: Sequence[float], w: np.ndarray, output: np.ndarray) -> Trajectory:
    """Operator quadruple: ``x(t) = sup_{s <= t} |w(s)|``, ``y = |F(w)|``, input ``w``.

    ``t`` may start before 0 (the input record before time 0); the input
    must vanish at the first sample, standing in for ``w = 0`` on the
    unrecorded past. The quadruple lives on the samples with ``t >= 0``,
    which must include 0.
    """
    t = np.asarray(t, dtype=float)
    wa = np.asarray(w, dtype=float).reshape(t.size, -1)
    out = np.asarray(output, dtype=float).reshape(t.size, -1)
    if t.size == 0 or np.any(np.diff(t) <= 0):
        raise DataError("operator record needs a strictly increasing time grid")
    if t[0] < 0 and np.any(wa[0] != 0):
        raise DataError("input record has a nonzero left tail; its past is not recorded")
    zero_idx = np.flatnonzero(t == 0.0)
    if zero_idx.size == 0:
        raise DataError("operator record must contain the time 0")
    k0 = int(zero_idx[0])
    running = np.maximum.accumulate(_norm(wa))
    tt = t[k0:]
    return Trajectory(tt, running[k0:], _norm(out)[k0:], Signal(tt, wa[k0:]), math.inf,
                      float(tt[1] - tt[0]) if tt.size > 1 else None)
