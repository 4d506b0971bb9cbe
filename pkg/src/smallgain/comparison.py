"""Comparison functions: classes K, K-infinity, L and KL.

Scalar functions are small immutable expression trees. Leaves are
piecewise-linear functions over explicit knots or closed-form parametric
families; interior nodes are composition, pointwise max/min/sum and
inversion. Evaluation is exact for every node except ``InverseOf`` (which
bisects), so composing gains never loses soundness to interpolation. Any
tree can be lowered to a ``PiecewiseLinear`` on a chosen grid with
:func:`lower`.

All pointwise comparisons use ``RTOL`` relative plus ``ATOL`` absolute
tolerance unless a caller overrides them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ClassError, DomainError

RTOL = 1e-9
ATOL = 1e-12

K = "K"
KINF = "Kinf"
L = "L"
MONOTONE = "monotone"
CLASSES = (K, KINF, L, MONOTONE)

# declared class -> classes that satisfy it
_SATISFIES = {
    KINF: {KINF},
    K: {K, KINF},
    MONOTONE: {K, KINF, MONOTONE},
    L: {L},
}


def satisfies(actual: str, declared: str) -> bool:
    """True if a function of class ``actual`` may be declared ``declared``."""
    if declared not in _SATISFIES:
        raise ClassError(f"unknown class {declared!r}")
    return actual in _SATISFIES[declared]


def _nonneg(s) -> np.ndarray:
    arr = np.asarray(s, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError("comparison functions are defined on [0, inf) only")
    return arr


def _is_increasing(cls: str) -> bool:
    return cls in (K, KINF, MONOTONE)


class ScalarFn:
    """A nonnegative function on [0, inf) with a comparison class tag.

    Subclasses implement ``_eval`` on float arrays (which may contain +inf,
    meaning the limit at infinity).
    """

    cls: str = MONOTONE

    def __call__(self, s):
        arr = _nonneg(s)
        out = self._eval(np.atleast_1d(arr)).reshape(arr.shape)
        return float(out) if out.ndim == 0 else out

    def _eval(self, s: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    @property
    def sup(self) -> float:
        """Limit at infinity (the supremum for increasing functions)."""
        return float(self._eval(np.array([np.inf]))[0])

    def breakpoints(self) -> np.ndarray:
        """Points where the function may change slope; used to seed grids."""
        return np.empty(0)

    def _inverse(self) -> "ScalarFn":
        return InverseOf(self)

    def to_dict(self) -> dict:  # pragma: no cover
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


# ---------------------------------------------------------------------------
# leaves
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False, repr=False)
class PiecewiseLinear(ScalarFn):
    """Piecewise-linear interpolant through ``(x[i], y[i])``.

    ``x`` must start at 0 and be strictly increasing. Beyond the last knot
    the function continues according to ``tail``: ``"linear"`` extends the
    final segment, ``"flat"`` holds the last value (a bounded class-K
    function), and ``"exp"`` decays exponentially at the rate implied by the
    final segment (class L only).
    """

    x: np.ndarray
    y: np.ndarray
    cls: str = K
    tail: str | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).copy()
        y = np.asarray(self.y, dtype=float).copy()
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.cls not in CLASSES:
            raise ClassError(f"unknown class {self.cls!r}")
        tail = self.tail or ("exp" if self.cls == L else "linear")
        object.__setattr__(self, "tail", tail)
        if tail not in ("linear", "flat", "exp"):
            raise ClassError(f"unknown tail {tail!r}")
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ClassError("need at least two knots with matching x and y")
        if x[0] != 0.0:
            raise ClassError("first knot must be at s = 0")
        if np.any(np.diff(x) <= 0):
            raise ClassError("knot abscissae must be strictly increasing")
        if np.any(y < 0) or not np.all(np.isfinite(y)):
            raise ClassError("knot values must be finite and nonnegative")
        dy = np.diff(y)
        if self.cls in (K, KINF):
            if y[0] != 0.0:
                raise ClassError("class K function must vanish at 0")
            if np.any(dy <= 0):
                i = int(np.argmax(dy <= 0))
                raise ClassError(f"class K function not strictly increasing at knot {i}")
            if tail == "exp":
                raise ClassError("class K function cannot have a decaying tail")
            if self.cls == KINF and tail != "linear":
                raise ClassError("class K-infinity needs an unbounded (linear) tail")
        elif self.cls == MONOTONE:
            if np.any(dy < 0):
                raise ClassError("monotone function must be nondecreasing")
            if tail == "exp":
                raise ClassError("nondecreasing function cannot have a decaying tail")
        else:
            if np.any(dy > 0):
                raise ClassError("class L function must be nonincreasing")
            if tail != "exp" and y[-1] > 0:
                raise ClassError("class L function needs a decaying tail")
            if tail == "exp" and y[-1] > 0 and y[-2] == y[-1]:
                raise ClassError("class L function: final segment does not decay")

    @property
    def _slope(self) -> float:
        return (self.y[-1] - self.y[-2]) / (self.x[-1] - self.x[-2])

    @property
    def _rate(self) -> float:
        if self.y[-1] == 0.0:
            return math.inf
        return math.log(self.y[-2] / self.y[-1]) / (self.x[-1] - self.x[-2])

    def _eval(self, s):
        out = np.interp(s, self.x, self.y)
        beyond = s > self.x[-1]
        if np.any(beyond):
            ds = s[beyond] - self.x[-1]
            if self.tail == "linear":
                slope = self._slope
                out[beyond] = self.y[-1] + (slope * ds if slope != 0 else 0.0)
            elif self.tail == "flat":
                out[beyond] = self.y[-1]
            else:
                rate = self._rate
                out[beyond] = 0.0 if rate == math.inf else self.y[-1] * np.exp(-rate * ds)
        return out

    def breakpoints(self):
        return self.x

    def _inverse(self):
        if self.cls not in (K, KINF):
            raise ClassError("only class K functions are invertible")
        cls = K if self.tail == "flat" else KINF
        return PiecewiseLinear(self.y, self.x, cls, self.tail)

    def to_dict(self):
        return {
            "kind": "plf",
            "knots": [[float(a), float(b)] for a, b in zip(self.x, self.y)],
            "tail": self.tail,
            "class": self.cls,
        }


@dataclass(frozen=True, eq=False, repr=False)
class PowerLaw(ScalarFn):
    """``a * s**p``."""

    a: float
    p: float = 1.0

    def __post_init__(self):
        if self.a < 0 or self.p <= 0:
            raise ClassError("power law needs a >= 0 and p > 0")

    @property
    def cls(self):
        return KINF if self.a > 0 else MONOTONE

    def _eval(self, s):
        if self.a == 0:
            return np.zeros_like(s)
        if self.p == 1.0:
            return self.a * s
        return self.a * np.power(s, self.p)

    def _inverse(self):
        if self.a == 0:
            raise ClassError("the zero function is not invertible")
        return PowerLaw(self.a ** (-1.0 / self.p), 1.0 / self.p)

    def to_dict(self):
        return {"kind": "power", "params": {"a": self.a, "p": self.p}, "class": self.cls}


@dataclass(frozen=True, eq=False, repr=False)
class LinearSaturation(ScalarFn):
    """``min(a * s, b)``: a bounded gain (class K up to the saturation point)."""

    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ClassError("linear saturation needs a > 0 and b > 0")

    cls = K

    def _eval(self, s):
        return np.minimum(self.a * s, self.b)

    def breakpoints(self):
        return np.array([self.b / self.a])

    def _inverse(self):
        return LinearSaturation(1.0 / self.a, self.b / self.a)

    def to_dict(self):
        return {"kind": "linsat", "params": {"a": self.a, "b": self.b}, "class": K}


@dataclass(frozen=True, eq=False, repr=False)
class LogAffine(ScalarFn):
    """``a * log(1 + b * s)``: an unbounded gain that is affine in log(1 + b s)."""

    a: float
    b: float = 1.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ClassError("log-affine gain needs a > 0 and b > 0")

    cls = KINF

    def _eval(self, s):
        return self.a * np.log1p(self.b * s)

    def to_dict(self):
        return {"kind": "logaffine", "params": {"a": self.a, "b": self.b}, "class": KINF}


@dataclass(frozen=True, eq=False, repr=False)
class ExpDecay(ScalarFn):
    """``a * exp(-rate * s)``: the standard class-L decay."""

    a: float
    rate: float

    def __post_init__(self):
        if self.a < 0 or self.rate <= 0:
            raise ClassError("exponential decay needs a >= 0 and rate > 0")

    cls = L

    def _eval(self, s):
        return self.a * np.exp(-self.rate * s)

    def to_dict(self):
        return {"kind": "exp", "params": {"a": self.a, "rate": self.rate}, "class": L}


# ---------------------------------------------------------------------------
# interior nodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False, repr=False)
class Composed(ScalarFn):
    """``outer(inner(s))``."""

    outer: ScalarFn
    inner: ScalarFn

    @property
    def cls(self):
        a, b = self.outer.cls, self.inner.cls
        if a == KINF and b == KINF:
            return KINF
        if a in (K, KINF) and b in (K, KINF):
            return K
        if _is_increasing(a) and _is_increasing(b):
            return MONOTONE
        if _is_increasing(a) and b == L and self.outer(0.0) == 0.0:
            return L
        raise ClassError("composition is only supported for increasing outer functions")

    def _eval(self, s):
        return self.outer._eval(self.inner._eval(s))

    def breakpoints(self):
        return self.inner.breakpoints()

    def _inverse(self):
        return Composed(inverse(self.inner), inverse(self.outer))

    def to_dict(self):
        return {"kind": "compose", "outer": self.outer.to_dict(), "inner": self.inner.to_dict(),
                "class": self.cls}


def _combined_class(parts, how):
    classes = [p.cls for p in parts]
    if all(c == L for c in classes):
        return L
    if not all(_is_increasing(c) for c in classes):
        raise ClassError(f"pointwise {how} mixes increasing and decreasing functions")
    zero_at_zero = all(float(p(0.0)) == 0.0 for p in parts)
    strict = [c in (K, KINF) for c in classes]
    if how == "min":
        if all(strict):
            return KINF if all(c == KINF for c in classes) else K
    elif any(strict) and zero_at_zero:
        # a strictly increasing part keeps a max or sum strictly increasing
        return KINF if KINF in classes else K
    return MONOTONE


@dataclass(frozen=True, eq=False, repr=False)
class Maximum(ScalarFn):
    """Pointwise maximum of its parts."""

    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ClassError("empty maximum")

    @property
    def cls(self):
        return _combined_class(self.parts, "max")

    def _eval(self, s):
        out = self.parts[0]._eval(s)
        for p in self.parts[1:]:
            out = np.maximum(out, p._eval(s))
        return out

    def breakpoints(self):
        return np.concatenate([p.breakpoints() for p in self.parts])

    def _inverse(self):
        if self.cls not in (K, KINF):
            raise ClassError("only class K functions are invertible")
        if not all(p.cls in (K, KINF) for p in self.parts):
            return InverseOf(self)
        return Minimum(tuple(inverse(p) for p in self.parts))

    def to_dict(self):
        return {"kind": "max", "parts": [p.to_dict() for p in self.parts], "class": self.cls}


@dataclass(frozen=True, eq=False, repr=False)
class Minimum(ScalarFn):
    """Pointwise minimum of its parts."""

    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ClassError("empty minimum")

    @property
    def cls(self):
        return _combined_class(self.parts, "min")

    def _eval(self, s):
        out = self.parts[0]._eval(s)
        for p in self.parts[1:]:
            out = np.minimum(out, p._eval(s))
        return out

    def breakpoints(self):
        return np.concatenate([p.breakpoints() for p in self.parts])

    def _inverse(self):
        if self.cls not in (K, KINF):
            raise ClassError("only class K functions are invertible")
        return Maximum(tuple(inverse(p) for p in self.parts))

    def to_dict(self):
        return {"kind": "min", "parts": [p.to_dict() for p in self.parts], "class": self.cls}


@dataclass(frozen=True, eq=False, repr=False)
class Sum(ScalarFn):
    """Pointwise sum of its parts."""

    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ClassError("empty sum")

    @property
    def cls(self):
        return _combined_class(self.parts, "sum")

    def _eval(self, s):
        out = self.parts[0]._eval(s)
        for p in self.parts[1:]:
            out = out + p._eval(s)
        return out

    def breakpoints(self):
        return np.concatenate([p.breakpoints() for p in self.parts])

    def to_dict(self):
        return {"kind": "sum", "parts": [p.to_dict() for p in self.parts], "class": self.cls}


@dataclass(frozen=True, eq=False, repr=False)
class InverseOf(ScalarFn):
    """Numerical inverse of an increasing function, by vectorized bisection.

    Returns the smallest ``s`` with ``f(s) >= y``. For ``y`` at or above the
    supremum of a bounded ``f`` the result saturates at the smallest point
    where the supremum is attained, or is ``inf`` when it never is.
    """

    f: ScalarFn
    iterations: int = field(default=200, compare=False)

    def __post_init__(self):
        if self.f.cls not in (K, KINF):
            raise ClassError("only class K functions are invertible")

    @property
    def cls(self):
        return KINF if self.f.cls == KINF else K

    def _eval(self, y):
        f = self.f
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        todo = y > 0
        if not np.any(todo):
            return out
        yy = y[todo]
        hi = np.ones_like(yy)
        for _ in range(2100):
            low = f._eval(hi) < yy
            if not np.any(low):
                break
            hi[low] *= 2.0
            if np.all(np.isinf(hi[low])):
                break
        unreachable = f._eval(hi) < yy
        hi[unreachable] = 1.0
        lo = np.where(hi > 1.0, hi / 2.0, 0.0)
        for _ in range(self.iterations):
            mid = 0.5 * (lo + hi)
            up = f._eval(mid) >= yy
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
            if np.all(hi - lo <= 4e-16 * hi):
                break
        hi[unreachable] = np.inf
        out[todo] = hi
        return out

    def _inverse(self):
        return self.f

    def to_dict(self):
        return {"kind": "inverse", "of": self.f.to_dict(), "class": self.cls}


@dataclass(frozen=True, eq=False, repr=False)
class ExtendedInverse(ScalarFn):
    """Inverse of a function bounded by ``top``, set to ``inf`` from ``top`` on."""

    inv: ScalarFn
    top: float

    @property
    def cls(self):
        return KINF

    def _eval(self, s):
        return np.where(s < self.top, self.inv._eval(np.minimum(s, self.top)), np.inf)

    def to_dict(self):
        return {"kind": "extinverse", "of": self.inv.to_dict(), "top": self.top}


# ---------------------------------------------------------------------------
# constructors and algebra
# ---------------------------------------------------------------------------


def identity() -> PowerLaw:
    return PowerLaw(1.0, 1.0)


def zero() -> PowerLaw:
    """The zero function (nondecreasing, not class K)."""
    return PowerLaw(0.0, 1.0)


def linear(a: float) -> PowerLaw:
    return PowerLaw(float(a), 1.0)


def plf(knots: Sequence[Sequence[float]], cls: str = K, tail: str | None = None) -> PiecewiseLinear:
    """Piecewise-linear function from a list of ``(x, y)`` knots."""
    arr = np.asarray(knots, dtype=float)
    return PiecewiseLinear(arr[:, 0], arr[:, 1], cls, tail)


def _is_identity(f: ScalarFn) -> bool:
    return isinstance(f, PowerLaw) and f.a == 1.0 and f.p == 1.0


def compose(f: ScalarFn, g: ScalarFn) -> ScalarFn:
    """Return ``h`` with ``h(s) = f(g(s))``."""
    if _is_identity(f):
        return g
    if _is_identity(g):
        return f
    if isinstance(f, PowerLaw) and isinstance(g, PowerLaw):
        if f.a == 0 or g.a == 0:
            return zero()
        return PowerLaw(f.a * g.a ** f.p, f.p * g.p)
    return Composed(f, g)


def inverse(f: ScalarFn) -> ScalarFn:
    """Inverse of a class-K function.

    Exact for every node type except sums and log-affine leaves, which fall
    back to bisection. Inverses of bounded functions saturate (see
    :class:`InverseOf`).
    """
    if f.cls not in (K, KINF):
        raise ClassError(f"cannot invert a function of class {f.cls!r}")
    return f._inverse()


def iterate(f: ScalarFn, n: int) -> ScalarFn:
    """``n``-fold self-composition; ``iterate(f, 0)`` is the identity."""
    if n < 0:
        raise DomainError("iteration count must be nonnegative")
    out = identity()
    for _ in range(n):
        out = compose(f, out)
    return out


def _is_zero(f):
    return isinstance(f, PowerLaw) and f.a == 0


def fmax(*parts: ScalarFn) -> ScalarFn:
    kept = [p for p in parts if not _is_zero(p)] or [parts[0]]
    return kept[0] if len(kept) == 1 else Maximum(kept)


def fmin(*parts: ScalarFn) -> ScalarFn:
    return parts[0] if len(parts) == 1 else Minimum(parts)


def fsum(*parts: ScalarFn) -> ScalarFn:
    return parts[0] if len(parts) == 1 else Sum(parts)


def scale(c: float, f: ScalarFn) -> ScalarFn:
    """``c * f``."""
    return compose(linear(c), f)


def lower(f: ScalarFn, grid: Sequence[float], tail: str | None = None) -> PiecewiseLinear:
    """Piecewise-linear interpolant of ``f`` on ``grid`` (0 is added if absent)."""
    g = np.unique(np.concatenate([[0.0], np.asarray(grid, dtype=float)]))
    cls = f.cls
    if tail is None:
        tail = "exp" if cls == L else ("flat" if math.isfinite(f.sup) else "linear")
    if cls == KINF and tail != "linear":
        cls = K
    return PiecewiseLinear(g, f(g), cls, tail)


def validate(f: ScalarFn, declared: str, grid: Sequence[float] | None = None) -> None:
    """Check ``f`` against a declared class, structurally and on a grid.

    Raises :class:`ClassError` on failure.
    """
    if not satisfies(f.cls, declared):
        raise ClassError(f"function has class {f.cls!r}, declared {declared!r}")
    if grid is None:
        grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 121)])
    g = np.unique(np.concatenate([[0.0], np.asarray(grid, dtype=float)]))
    v = f(g)
    d = np.diff(v)
    if declared in (K, KINF):
        if v[0] != 0.0:
            raise ClassError("class K function must vanish at 0")
        if np.any(d < 0):
            raise ClassError("class K function decreases on the grid")
        if declared == KINF and math.isfinite(f.sup):
            raise ClassError("class K-infinity function is bounded")
    elif declared == L:
        if np.any(d > ATOL):
            raise ClassError("class L function increases on the grid")
        if f.sup > ATOL:
            raise ClassError("class L function does not tend to 0")
    elif np.any(d < 0):
        raise ClassError("monotone function decreases on the grid")


# ---------------------------------------------------------------------------
# contraction tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContractionResult:
    """Outcome of a grid-based contraction test.

    ``holds`` is certified on the grid only; ``witness`` is the smallest
    failing grid point when ``holds`` is false.
    """

    holds: bool
    witness: float | None
    r0: float
    horizon: float
    n_points: int
    grid_certified: bool = True

    def __bool__(self):
        return self.holds


def contraction_grid(r0: float, fns: Sequence[ScalarFn] = (), points_per_decade: int = 512,
                     horizon: float | None = None, floor: float = 1e-9) -> np.ndarray:
    """Grid of test points ``r > r0`` used by the contraction checks.

    Knots of the functions involved are always included; a geometric
    refinement with ``points_per_decade`` covers ``[max(r0, floor), horizon]``
    with ``horizon = 1e6 * max(r0, 1)`` by default.
    """
    if horizon is None:
        horizon = 1e6 * max(r0, 1.0)
    lo = max(r0, floor)
    decades = max(math.log10(horizon / lo), 1e-3)
    n = max(int(math.ceil(points_per_decade * decades)) + 1, 2)
    pts = [np.geomspace(lo, horizon, n)]
    for f in fns:
        bp = np.asarray(f.breakpoints(), dtype=float)
        pts.append(bp)
        # one point either side of each knot
        pts.append(bp * (1 + 1e-9))
    grid = np.unique(np.concatenate(pts))
    return grid[(grid > r0) & (grid <= horizon) & np.isfinite(grid)]


def _contraction(values, grid, r0, horizon, rtol):
    fails = ~(values < grid * (1 - rtol))
    if np.any(fails):
        return ContractionResult(False, float(grid[np.argmax(fails)]), r0, horizon, grid.size)
    return ContractionResult(True, None, r0, horizon, grid.size)


def is_contraction_above(gamma: ScalarFn, r0: float = 0.0, *, points_per_decade: int = 512,
                         horizon: float | None = None, rtol: float = 0.0) -> ContractionResult:
    """Grid test of ``gamma(r) < r`` for all ``r > r0``."""
    if r0 < 0:
        raise DomainError("r0 must be nonnegative")
    if horizon is None:
        horizon = 1e6 * max(r0, 1.0)
    grid = contraction_grid(r0, (gamma,), points_per_decade, horizon)
    return _contraction(gamma(grid), grid, r0, horizon, rtol)


def is_contraction_with_margin(gamma: ScalarFn, rho: ScalarFn, r0: float = 0.0, *,
                               points_per_decade: int = 512, horizon: float | None = None,
                               rtol: float = 0.0) -> ContractionResult:
    """Grid test of ``gamma(r) + rho(gamma(r)) < r`` for all ``r > r0``."""
    if r0 < 0:
        raise DomainError("r0 must be nonnegative")
    if horizon is None:
        horizon = 1e6 * max(r0, 1.0)
    grid = contraction_grid(r0, (gamma, rho), points_per_decade, horizon)
    g = gamma(grid)
    return _contraction(g + rho(g), grid, r0, horizon, rtol)


# ---------------------------------------------------------------------------
# KL functions
# ---------------------------------------------------------------------------


class KLFn:
    """A function ``beta(s, t)``: class K in ``s``, class L in ``t``."""

    def __call__(self, s, t):
        s_arr = _nonneg(s)
        t_arr = _nonneg(t)
        s_b, t_b = np.broadcast_arrays(s_arr, t_arr)
        out = self._eval(np.atleast_1d(s_b).astype(float), np.atleast_1d(t_b).astype(float))
        out = out.reshape(s_b.shape)
        return float(out) if out.ndim == 0 else out

    def _eval(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def at_time(self, t: float) -> ScalarFn:
        """The slice ``s -> beta(s, t)`` as a scalar function."""
        raise NotImplementedError  # pragma: no cover

    def to_dict(self) -> dict:  # pragma: no cover
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(...)"


@dataclass(frozen=True, eq=False, repr=False)
class SeparableKL(KLFn):
    """``kappa(s) * lam(t)`` with ``kappa`` class K and ``lam`` class L."""

    kappa: ScalarFn
    lam: ScalarFn

    def __post_init__(self):
        if self.kappa.cls not in (K, KINF):
            raise ClassError("separable KL: first factor must be class K")
        if self.lam.cls != L:
            raise ClassError("separable KL: second factor must be class L")

    def _eval(self, s, t):
        return self.kappa._eval(s) * self.lam._eval(t)

    def at_time(self, t):
        return scale(float(self.lam(t)), self.kappa)

    def to_dict(self):
        return {"form": "separable", "kappa": self.kappa.to_dict(), "lam": self.lam.to_dict()}


@dataclass(frozen=True, eq=False, repr=False)
class ComposedKL(KLFn):
    """``outer(inner(s_map(s), t_scale * t))``; missing maps are identities."""

    inner: KLFn
    outer: ScalarFn | None = None
    s_map: ScalarFn | None = None
    t_scale: float = 1.0

    def __post_init__(self):
        if self.t_scale <= 0:
            raise ClassError("time scale must be positive")

    def _eval(self, s, t):
        if self.s_map is not None:
            s = self.s_map._eval(s)
        v = self.inner._eval(s, self.t_scale * t)
        return v if self.outer is None else self.outer._eval(v)

    def at_time(self, t):
        f = self.inner.at_time(self.t_scale * t)
        if self.s_map is not None:
            f = compose(f, self.s_map)
        if self.outer is not None:
            f = compose(self.outer, f)
        return f

    def to_dict(self):
        return {
            "form": "composed",
            "inner": self.inner.to_dict(),
            "outer": None if self.outer is None else self.outer.to_dict(),
            "s_map": None if self.s_map is None else self.s_map.to_dict(),
            "t_scale": self.t_scale,
        }


@dataclass(frozen=True, eq=False, repr=False)
class MaxKL(KLFn):
    """Pointwise maximum of KL functions."""

    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ClassError("empty maximum")

    def _eval(self, s, t):
        out = self.parts[0]._eval(s, t)
        for p in self.parts[1:]:
            out = np.maximum(out, p._eval(s, t))
        return out

    def at_time(self, t):
        return fmax(*(p.at_time(t) for p in self.parts))

    def to_dict(self):
        return {"form": "max", "parts": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True, eq=False, repr=False)
class CappedKL(KLFn):
    """``min{kappa(s), profile(s_ref, t)}``: a class-K cap that decays in time.

    Not strictly increasing in ``s`` on its own; combine with a strict part
    through :class:`MaxKL` when strictness matters.
    """

    kappa: ScalarFn
    profile: KLFn
    s_ref: float

    def __post_init__(self):
        if self.kappa.cls not in (K, KINF):
            raise ClassError("capped KL: cap must be class K")
        if not self.s_ref > 0:
            raise ClassError("capped KL: reference point must be positive")

    def _eval(self, s, t):
        return np.minimum(self.kappa._eval(s), self.profile._eval(np.full(t.shape, self.s_ref), t))

    def at_time(self, t):
        c = float(self.profile(self.s_ref, t))
        return compose(LinearSaturation(1.0, c), self.kappa) if c > 0 else zero()

    def to_dict(self):
        return {"form": "capped", "kappa": self.kappa.to_dict(),
                "profile": self.profile.to_dict(), "s_ref": self.s_ref}


def _bilinear_index(grid, v):
    i = np.clip(np.searchsorted(grid, v, side="right") - 1, 0, grid.size - 2)
    w = (v - grid[i]) / (grid[i + 1] - grid[i])
    return i, w


@dataclass(frozen=True, eq=False, repr=False)
class GriddedKL(KLFn):
    """Bilinear interpolation of samples on a rectilinear ``(s, t)`` grid.

    ``values[i, j]`` must be nondecreasing in ``i`` and nonincreasing in
    ``j`` with ``values[0, :] == 0`` at ``s_grid[0] == 0``. Past the last
    ``s`` knot the final segment is extended linearly; past the last ``t``
    knot values decay like ``exp(-tail_rate * (t - t_max))``. The term
    ``reg * s * exp(-t / reg_time)`` is added everywhere so the result is
    strictly monotone in both arguments.
    """

    s_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray
    tail_rate: float
    reg: float = 0.0
    reg_time: float = 1.0

    def __post_init__(self):
        s = np.asarray(self.s_grid, dtype=float)
        t = np.asarray(self.t_grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        for a in (s, t, v):
            a.setflags(write=False)
        object.__setattr__(self, "s_grid", s)
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "values", v)
        if s.size < 2 or t.size < 2 or v.shape != (s.size, t.size):
            raise ClassError("gridded KL needs at least a 2x2 grid of matching shape")
        if s[0] != 0.0 or t[0] != 0.0:
            raise ClassError("gridded KL grids must start at 0")
        if np.any(np.diff(s) <= 0) or np.any(np.diff(t) <= 0):
            raise ClassError("gridded KL grids must be strictly increasing")
        if np.any(v[0] != 0.0) or np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ClassError("gridded KL values must be finite, nonnegative and 0 at s = 0")
        if np.any(np.diff(v, axis=0) < 0) or np.any(np.diff(v, axis=1) > 0):
            raise ClassError("gridded KL values are not monotone")
        if self.tail_rate <= 0 or self.reg < 0 or self.reg_time <= 0:
            raise ClassError("gridded KL tail parameters must be positive")

    def _eval(self, s, t):
        sg, tg, v = self.s_grid, self.t_grid, self.values
        tc = np.minimum(t, tg[-1])
        i, ws = _bilinear_index(sg, s)
        j, wt = _bilinear_index(tg, tc)
        v00 = v[i, j]
        v01 = v[i, j + 1]
        v10 = v[i + 1, j]
        v11 = v[i + 1, j + 1]
        low = v00 + (v01 - v00) * wt
        high = v10 + (v11 - v10) * wt
        out = low + (high - low) * ws
        over = t > tg[-1]
        if np.any(over):
            out = np.where(over, out * np.exp(-self.tail_rate * (t - tg[-1])), out)
        if self.reg > 0:
            out = out + self.reg * s * np.exp(-t / self.reg_time)
        return out

    def scaled(self, c: float) -> "GriddedKL":
        return GriddedKL(self.s_grid, self.t_grid, c * self.values, self.tail_rate,
                         c * self.reg, self.reg_time)

    def at_time(self, t):
        y = self(self.s_grid, np.full(self.s_grid.shape, float(t)))
        cls = K if y[0] == 0.0 and np.all(np.diff(y) > 0) else MONOTONE
        tail = "linear" if y[-1] > y[-2] else "flat"
        if cls == MONOTONE:
            y = np.maximum.accumulate(y)
        return PiecewiseLinear(self.s_grid, y, cls, tail)

    def to_dict(self):
        return {
            "form": "gridded",
            "s_grid": self.s_grid.tolist(),
            "t_grid": self.t_grid.tolist(),
            "values": self.values.tolist(),
            "tail_rate": self.tail_rate,
            "reg": self.reg,
            "reg_time": self.reg_time,
        }


def scale_kl(c: float, beta: KLFn) -> KLFn:
    """``c * beta``."""
    if isinstance(beta, GriddedKL):
        return beta.scaled(c)
    if isinstance(beta, MaxKL):
        return MaxKL(tuple(scale_kl(c, p) for p in beta.parts))
    if isinstance(beta, CappedKL):
        return CappedKL(scale(c, beta.kappa), scale_kl(c, beta.profile), beta.s_ref)
    return ComposedKL(beta, outer=linear(c))


def exp_kl(k: float = 1.0, rate: float = 1.0) -> SeparableKL:
    """``k * s * exp(-rate * t)``."""
    return SeparableKL(linear(k), ExpDecay(1.0, rate))


def validate_kl(beta: KLFn, s_grid: Sequence[float] | None = None,
                t_grid: Sequence[float] | None = None, atol: float = ATOL) -> None:
    """Check the KL shape of ``beta`` on a grid; raise :class:`ClassError` if it fails.

    Checks ``beta(0, t) = 0``, monotonicity in each argument and that
    ``beta(s, t_last) < beta(s, 0)`` wherever ``beta(s, 0) > 0``. Strict
    increase is not demanded sample-to-sample because regularizing terms may
    sit below floating-point resolution.
    """
    s = np.unique(np.concatenate([[0.0], np.asarray(
        s_grid if s_grid is not None else np.geomspace(1e-3, 1e3, 25), dtype=float)]))
    t = np.unique(np.concatenate([[0.0], np.asarray(
        t_grid if t_grid is not None else np.geomspace(1e-2, 1e4, 25), dtype=float)]))
    S, T = np.meshgrid(s, t, indexing="ij")
    v = beta(S, T)
    tol = atol + RTOL * np.abs(v)
    if np.any(np.abs(v[0]) > atol):
        raise ClassError("KL function does not vanish at s = 0")
    if np.any(np.diff(v, axis=0) < -tol[1:]):
        raise ClassError("KL function decreases in s")
    if np.any(np.diff(v, axis=1) > tol[:, 1:]):
        raise ClassError("KL function increases in t")
    pos = v[:, 0] > atol
    if np.any(v[pos, -1] >= v[pos, 0]):
        raise ClassError("KL function does not decay in t")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def scalar_from_dict(d: dict) -> ScalarFn:
    """Rebuild a scalar function from its tagged record.

    The ``class`` tag, when present, is checked against the rebuilt
    function.
    """
    kind = d.get("kind")
    p = d.get("params", {})
    if kind == "plf":
        f = plf(d["knots"], d.get("class", K), d.get("tail"))
    elif kind == "power":
        f = PowerLaw(float(p["a"]), float(p.get("p", 1.0)))
    elif kind == "linear":
        f = linear(float(p["a"]))
    elif kind == "identity":
        f = identity()
    elif kind == "zero":
        f = zero()
    elif kind == "linsat":
        f = LinearSaturation(float(p["a"]), float(p["b"]))
    elif kind == "logaffine":
        f = LogAffine(float(p["a"]), float(p.get("b", 1.0)))
    elif kind == "exp":
        f = ExpDecay(float(p.get("a", 1.0)), float(p["rate"]))
    elif kind == "compose":
        f = compose(scalar_from_dict(d["outer"]), scalar_from_dict(d["inner"]))
    elif kind in ("max", "min", "sum"):
        parts = tuple(scalar_from_dict(x) for x in d["parts"])
        f = {"max": fmax, "min": fmin, "sum": fsum}[kind](*parts)
    elif kind == "extinverse":
        f = ExtendedInverse(scalar_from_dict(d["of"]), float(d["top"]))
    elif kind == "inverse":
        f = inverse(scalar_from_dict(d["of"]))
    else:
        raise ClassError(f"unknown function kind {kind!r}")
    declared = d.get("class")
    if declared is not None and kind != "plf" and not satisfies(f.cls, declared):
        raise ClassError(f"{kind} function has class {f.cls!r}, declared {declared!r}")
    return f


def kl_from_dict(d: dict) -> KLFn:
    """Rebuild a KL function from its record."""
    form = d.get("form")
    if form == "separable":
        return SeparableKL(scalar_from_dict(d["kappa"]), scalar_from_dict(d["lam"]))
    if form == "exp":
        return exp_kl(float(d.get("k", 1.0)), float(d.get("rate", 1.0)))
    if form == "composed":
        return ComposedKL(
            kl_from_dict(d["inner"]),
            None if d.get("outer") is None else scalar_from_dict(d["outer"]),
            None if d.get("s_map") is None else scalar_from_dict(d["s_map"]),
            float(d.get("t_scale", 1.0)),
        )
    if form == "max":
        return MaxKL(tuple(kl_from_dict(x) for x in d["parts"]))
    if form == "capped":
        return CappedKL(scalar_from_dict(d["kappa"]), kl_from_dict(d["profile"]), float(d["s_ref"]))
    if form == "gridded":
        return GriddedKL(np.array(d["s_grid"]), np.array(d["t_grid"]), np.array(d["values"]),
                         float(d["tail_rate"]), float(d.get("reg", 0.0)),
                         float(d.get("reg_time", 1.0)))
    raise ClassError(f"unknown KL form {form!r}")
