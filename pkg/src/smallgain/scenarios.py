"""Built-in interconnection scenarios.

The coupled linear pair

    x1' = -x1 + a y2 + u1,   x2' = -x2 + b y1 + u2,   y_i = x_i

is the reference case: it is stable iff ``ab < 1`` (eigenvalues
``-1 +- sqrt(ab)``). Its subsystem certificates come from variation of
constants, ``|x(t)| <= s e^-t + a |v| + |u|``, turned into max form by
``p + q <= max{(1 + a/eta) p, (a + eta) q}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .comparison import exp_kl, identity, linear, zero
from .errors import ConfigError
from .interconnection import GainCertificate, SystemSpec


def _slack(a: float) -> float:
    return abs(1.0 - a) / 2 if a != 1.0 else 0.05


def linear_certificate(a: float, with_input: bool = True) -> GainCertificate:
    """Max-form certificate of ``x' = -x + a v + u``, ``y = x``.

    The partner gain is ``(a + eta) r`` with ``eta = |1 - a| / 2``, so that
    for ``a = b`` the loop gain contracts iff ``a < 1``. Without input the
    transient factor is ``1 + a/eta``; with input it doubles and the input
    gain equals the transient factor.
    """
    if a < 0:
        raise ValueError("coupling gain must be nonnegative")
    if a == 0:
        k = 2.0 if with_input else 1.0
        return GainCertificate(exp_kl(k), zero(), linear(k) if with_input else zero(),
                               sigma3=identity())
    eta = _slack(a)
    k = 1.0 + a / eta
    if with_input:
        k *= 2.0
    return GainCertificate(exp_kl(k), linear(a + eta), linear(k) if with_input else zero(),
                           sigma3=identity())


def linear_system(a: float, with_input: bool = True, name: str = "") -> SystemSpec:
    return SystemSpec(
        1,
        lambda x, v, u, a=a: -x + a * v + u,
        lambda x, v, u: x,
        certificate=linear_certificate(a, with_input),
        name=name,
    )


def linear_pair(a: float, b: float, with_input: bool = True):
    return linear_system(a, with_input, "x1"), linear_system(b, with_input, "x2")


@dataclass(frozen=True)
class Scenario:
    """A system pair with default initial states, inputs and run length."""

    name: str
    sys1: SystemSpec
    sys2: SystemSpec
    xi1: np.ndarray
    xi2: np.ndarray
    horizon: float = 20.0
    dt: float = 1e-3
    u1: object = None
    u2: object = None
    notes: tuple = field(default_factory=tuple)


def _linear(name, a, b, horizon=20.0):
    s1, s2 = linear_pair(a, b, with_input=False)
    return Scenario(name, s1, s2, np.ones(1), np.ones(1), horizon)


def _zero(name):
    s1, s2 = linear_pair(0.0, 0.0, with_input=False)
    return Scenario(name, s1, s2, np.zeros(1), np.zeros(1), 5.0)


SCENARIOS = {
    # the name carries the product ab
    "linear-coupled-0.25": lambda: _linear("linear-coupled-0.25", 0.5, 0.5),
    "linear-coupled-4.0": lambda: _linear("linear-coupled-4.0", 2.0, 2.0, 30.0),
    "zero": lambda: _zero("zero"),
}


def get_scenario(name: str, line: int | None = None) -> Scenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        known = ", ".join(sorted(SCENARIOS))
        raise ConfigError(f"unknown scenario {name!r} (known: {known})", line) from None
