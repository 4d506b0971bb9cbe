"""Constructive small-gain synthesis.

Given a practical output bound with a contracting self-gain and a state
bound driven by the output, :func:`synthesize_certificate` builds a single
KL-practical output bound. The construction follows the decay argument
step by step: an output envelope ``gamma^i(peak(r))`` is reached after a
schedule of waiting times, which yields attractivity times; these, with the
stability gain ``peak^{-1}``, are turned into a KL function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .comparison import (ContractionResult, KLFn, ScalarFn, ComposedKL, compose, fmax, fsum,
                         identity, inverse, is_contraction_above, is_contraction_with_margin,
                         linear, scale)
from .errors import ContractionError, DataError, DepthError, DomainError, PreconditionError, \
    SynthesisError
from .kl_synthesis import (DEFAULT_MARGIN, AttractivityTable, default_eps_grid, default_r_grid,
                           delta_minorant, first_time_below, practical_to_kl)
from .trajectories import InputMeasure, IOSCertificate, MaxOf, ZeroMeasure, gain_of

DEFAULT_DEPTH = 64
MAX_DEPTH = 4096
TIME_CAP = 1e12


@dataclass(frozen=True, eq=False)
class SmallGainData:
    """Output bound ``(beta, gamma, mu_a, C)``, state bound ``(sigma1..3, mu_b, d)`` and floor ``r0``.

    ``time_step`` is the resolution at which waiting times are chosen; use
    ``discrete=True`` for integer time. The contraction of ``gamma`` above
    ``r0`` is checked on construction.
    """

    beta: KLFn
    gamma: ScalarFn
    r0: float = 0.0
    sigma1: ScalarFn = field(default_factory=identity)
    sigma2: ScalarFn = field(default_factory=lambda: linear(0.0))
    sigma3: ScalarFn = field(default_factory=identity)
    d: float = 0.0
    C: float = 0.0
    mu_a: InputMeasure = field(default_factory=ZeroMeasure)
    mu_b: InputMeasure = field(default_factory=ZeroMeasure)
    time_step: float = 1e-2
    discrete: bool = False
    contraction: ContractionResult | None = None

    def __post_init__(self):
        for name in ("r0", "d", "C"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise DataError(f"{name} must be a finite nonnegative number")
        if self.discrete:
            object.__setattr__(self, "time_step", 1.0)
        if not self.time_step > 0:
            raise DataError("time_step must be positive")
        res = self.contraction or is_contraction_above(self.gamma, self.r0)
        if not res.holds:
            raise ContractionError(
                f"gain is not a contraction above r0={self.r0}: gamma({res.witness}) >= "
                f"{res.witness}", witness=res.witness)
        object.__setattr__(self, "contraction", res)


@dataclass(frozen=True)
class DerivedConstants:
    peak: ScalarFn
    floor: float
    state_gain: ScalarFn
    state_offset: float


def derived_constants(data: SmallGainData) -> DerivedConstants:
    """``peak = beta(., 0)``, ``floor = max{C, r0}``,
    ``state_gain = max{sigma1, sigma3 o peak}``, ``state_offset = max{sigma3(floor), d}``."""
    peak = data.beta.at_time(0.0)
    floor = max(data.C, data.r0)
    state_gain = fmax(data.sigma1, compose(data.sigma3, peak))
    state_offset = max(float(data.sigma3(floor)), data.d)
    return DerivedConstants(peak, floor, state_gain, state_offset)


# ---------------------------------------------------------------------------
# decay schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecaySchedule:
    """Waiting times after which the output envelope has shrunk to ``levels[i]``.

    ``levels[i] = gamma^i(peak(r))`` with ``peak = beta(., 0)``;
    ``bounds[i]`` bounds the state at time ``elapsed[i]`` after the start and
    ``waits[i + 1]`` is the first grid time with
    ``beta(bounds[i], waits[i + 1]) <= levels[i + 1]``; ``elapsed`` is the
    running sum of ``waits``. ``clamped`` holds ``max{levels, r0}``.
    """

    r: float
    peak: float
    r0: float
    bounds: np.ndarray
    waits: np.ndarray
    elapsed: np.ndarray
    levels: np.ndarray

    @property
    def clamped(self) -> np.ndarray:
        return np.maximum(self.levels, self.r0)

    @property
    def depth(self) -> int:
        return self.levels.size - 1

    def to_dict(self) -> dict:
        return {"r": self.r, "peak": self.peak, "r0": self.r0,
                "bounds": self.bounds.tolist(), "waits": self.waits.tolist(),
                "elapsed": self.elapsed.tolist(),
                "levels": self.levels.tolist(), "clamped": self.clamped.tolist()}


def build_schedules(data: SmallGainData, r: Sequence[float], depth: int = DEFAULT_DEPTH,
                    eps_floor: float = 0.0) -> list[DecaySchedule]:
    """Decay schedules for every radius in ``r``, built in lockstep.

    A schedule stops early once its level is at most ``r0`` or below
    ``eps_floor``; every later attractivity question is then answered.
    Where the gain vanishes the next level is half the current one.
    """
    if depth < 1:
        raise DataError("depth must be at least 1")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("schedule radii must be positive")
    dc = derived_constants(data)
    n = r.size
    level = np.asarray(dc.peak(r), dtype=float)
    levels = [level.copy()]
    bounds = [r.copy()]
    waits = [np.zeros(n)]
    elapsed = [np.zeros(n)]
    length = np.ones(n, dtype=int)
    active = ~((level <= data.r0) | (level < eps_floor))
    base = np.maximum(np.asarray(dc.state_gain(r), dtype=float), dc.state_offset)
    for i in range(depth):
        if not np.any(active):
            break
        nxt = np.asarray(data.gamma(level), dtype=float)
        # a gain that vanishes at the level leaves a zero target no KL bound
        # reaches in finite time; halving is then a valid decreasing target
        nxt = np.where(nxt > 0, nxt, 0.5 * level)
        t_next, ok = first_time_below(data.beta, nxt, bounds[-1], data.time_step, TIME_CAP)
        if np.any(active & ~ok):
            k = int(np.flatnonzero(active & ~ok)[0])
            raise SynthesisError(
                f"index {i}: beta({bounds[-1][k]:g}, t) stays above {nxt[k]:g} for r={r[k]:g}")
        t_next = np.where(active, t_next, 0.0)
        th = elapsed[-1] + t_next
        m_next = np.maximum(base, np.asarray(data.sigma2(th), dtype=float))
        level = np.where(active, nxt, level)
        levels.append(level.copy())
        waits.append(t_next)
        elapsed.append(th)
        bounds.append(np.where(active, m_next, bounds[-1]))
        length += active
        active = active & ~((level <= data.r0) | (level < eps_floor))
    L = np.vstack(levels)
    Ma, Ta, THa = np.vstack(bounds), np.vstack(waits), np.vstack(elapsed)
    out = []
    for k in range(n):
        m = length[k]
        out.append(DecaySchedule(float(r[k]), float(L[0, k]), data.r0, Ma[:m, k].copy(),
                                 Ta[:m, k].copy(), THa[:m, k].copy(), L[:m, k].copy()))
    return out


def build_schedule(data: SmallGainData, r: float, depth: int = DEFAULT_DEPTH,
                   eps_floor: float = 0.0) -> DecaySchedule:
    return build_schedules(data, [r], depth, eps_floor)[0]


def schedule_violations(data: SmallGainData, sched: DecaySchedule, rtol: float = 1e-9) -> list:
    """Indices ``i`` where ``beta(bounds[i], waits[i + 1]) <= levels[i + 1]`` fails on re-evaluation."""
    bad = []
    for i in range(sched.depth):
        lhs = float(data.beta(sched.bounds[i], sched.waits[i + 1]))
        if lhs > sched.levels[i + 1] * (1 + rtol):
            bad.append(i)
    return bad


def attractivity_time(data: SmallGainData, schedule: DecaySchedule, epsilon: float,
                      max_depth: int = MAX_DEPTH) -> float:
    """``elapsed[i]`` for the smallest ``i`` with ``levels[i] < epsilon``.

    Extends the schedule when it is too short.
    """
    floor = max(data.C, data.r0)
    if not epsilon > floor:
        raise DomainError(f"epsilon={epsilon} must exceed max(C, r0)={floor}")
    sched = schedule
    while True:
        hit = np.flatnonzero(sched.levels < epsilon)
        if hit.size:
            return float(sched.elapsed[hit[0]])
        if sched.levels[-1] <= data.r0 or sched.depth >= max_depth:
            raise DepthError(f"schedule for r={schedule.r:g} never drops below {epsilon:g}")
        sched = build_schedule(data, schedule.r, min(2 * max(sched.depth, 1), max_depth),
                               eps_floor=epsilon)


# ---------------------------------------------------------------------------
# combined measure and synthesis
# ---------------------------------------------------------------------------


def combined_measure(data: SmallGainData) -> InputMeasure:
    """``max{peak(sigma3(mu_a)), peak(mu_b), mu_a}`` with ``peak = beta(., 0)``."""
    peak = data.beta.at_time(0.0)
    return MaxOf(((compose(peak, data.sigma3), data.mu_a), (peak, data.mu_b),
                  (identity(), data.mu_a)))


def synthesize_certificate(data: SmallGainData, r_grid: Sequence[float] | None = None,
                           eps_grid: Sequence[float] | None = None, depth: int = DEFAULT_DEPTH,
                           margin: float = DEFAULT_MARGIN, scale: float = 1.0) -> IOSCertificate:
    """KL-practical output certificate ``(beta_out, combined_measure(data), 3 max{C, r0})``.

    Stability uses ``delta <= peak^{-1}``; attractivity times come from decay
    schedules on ``r_grid``; both are combined by :func:`practical_to_kl`.
    """
    dc = derived_constants(data)
    eps = default_eps_grid(dc.floor, scale) if eps_grid is None else np.asarray(eps_grid, float)
    r = default_r_grid(scale) if r_grid is None else np.asarray(r_grid, float)
    if np.any(eps <= dc.floor):
        raise DomainError("attractivity levels must exceed max(C, r0)")
    notes = []
    if float(data.gamma(dc.floor)) > dc.floor * (1 + 1e-9) + 1e-12:
        notes.append(f"gamma(floor) > floor at floor={dc.floor:g}; the output floor argument "
                     "needs gamma(floor) <= floor")
    delta = delta_minorant(dc.peak, default_r_grid(scale))
    schedules = build_schedules(data, r, depth, eps_floor=float(eps[0]))
    times = np.empty((eps.size, r.size))
    for j, sched in enumerate(schedules):
        for i, e in enumerate(eps):
            times[i, j] = attractivity_time(data, sched, float(e))
    table = AttractivityTable(dc.floor, delta, eps, r, times)
    cert = practical_to_kl(delta, table, combined_measure(data), margin)
    return IOSCertificate(cert.beta, cert.mu, cert.C, tuple(notes))


# ---------------------------------------------------------------------------
# sums to maxima
# ---------------------------------------------------------------------------


def split_sum_holds(a: float, b: float, rho: ScalarFn, rtol: float = 1e-12) -> bool:
    """``a + b <= max{a + rho(a), rho^{-1}(b) + b}``."""
    rhs = max(a + float(rho(a)), float(inverse(rho)(b)) + b)
    return a + b <= rhs * (1 + rtol) + 1e-300


@dataclass(frozen=True, eq=False)
class SumToMax:
    """Max-form data equivalent to a sum-form output bound.

    ``gamma_eff = gamma + rho o gamma``, ``alpha = max{4 rho^{-1}(3 s), 4 s}``,
    ``beta_eff = alpha o beta``, ``C_eff = alpha(C)``.
    """

    gamma_eff: ScalarFn
    alpha: ScalarFn
    beta_eff: KLFn
    C_eff: float
    margin_check: ContractionResult

    def measure(self, mu_a: InputMeasure) -> InputMeasure:
        """``alpha(mu_a)``: the rewritten output-bound input measure."""
        return gain_of(self.alpha, mu_a)

    def small_gain_data(self, r0: float, sigma1: ScalarFn, sigma2: ScalarFn, sigma3: ScalarFn,
                        d: float, mu_a: InputMeasure, mu_b: InputMeasure,
                        time_step: float = 1e-2) -> SmallGainData:
        return SmallGainData(self.beta_eff, self.gamma_eff, r0, sigma1, sigma2, sigma3, d,
                             self.C_eff, self.measure(mu_a), mu_b, time_step)


def sum_to_max_rewrite(beta: KLFn, gamma: ScalarFn, rho: ScalarFn, C: float,
                       r0: float = 0.0, **grid) -> SumToMax:
    """Rewrite ``y <= beta + gamma(|y|) + mu_a + C`` as a max-form bound.

    Requires ``gamma + rho o gamma < id`` above ``r0`` (checked on the grid;
    ``grid`` is passed to the check).
    """
    res = is_contraction_with_margin(gamma, rho, r0, **grid)
    if not res.holds:
        raise PreconditionError(
            f"gamma + rho(gamma) is not below the identity above r0={r0} "
            f"(fails at r={res.witness})", witness=res.witness)
    alpha = fmax(scale(4.0, compose(inverse(rho), linear(3.0))), linear(4.0))
    return SumToMax(fsum(gamma, compose(rho, gamma)), alpha, ComposedKL(beta, outer=alpha),
                    float(alpha(C)), res)
