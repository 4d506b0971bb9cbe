"""Scenario configuration files.

A config is a TOML file (or JSON with the same structure). Tables:

``[gain]``
    ``gamma`` (function record), ``r0``: single contraction check.
``[pair]``
    ``gamma1``, ``gamma2``, ``r0``, ``mode`` ("both" or "either"): loop check.
``[data]``
    ``beta`` (KL record), ``gamma``, ``C``, ``r0``, optional ``sigma1``,
    ``sigma2``, ``sigma3``, ``d``, ``time_step``, ``discrete``: the data of a
    single system with output and state bounds.
``[grids]``
    ``points`` (synthesis grid size), ``span`` (``[lo, hi]`` of the r-grid
    before scaling), ``scale``, ``depth``, ``points_per_decade``.
``[scenario]``
    ``name``: a built-in system pair (see :mod:`smallgain.scenarios`).
``[system1]``, ``[system2]``
    ``rhs``, ``output`` (expression lists, see :mod:`smallgain.expr`),
    ``input_dim``, ``feedthrough``, ``xi``, ``input`` (expressions in ``t``),
    and a ``certificate`` subtable with ``beta``, ``gamma_y``, ``gamma_u``,
    ``C``, ``sigma1``, ``sigma3``, ``sigma4``, ``d``.
``[simulation]``
    ``horizon``, ``dt``.

Function records are ``{kind = "...", params = {...}}`` or
``{kind = "plf", knots = [[0, 0], ...]}``; KL records are
``{form = "exp", k = 1, rate = 1}`` and the other forms of
:func:`smallgain.comparison.kl_from_dict`. Every function is class-checked
on load. Errors carry the line of the offending key.
"""

from __future__ import annotations

import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .comparison import (K, MONOTONE, ScalarFn, identity, kl_from_dict, linear, scalar_from_dict,
                         validate, validate_kl, zero)
from .errors import ConfigError, SmallGainError
from .expr import compile_input, compile_vector
from .interconnection import GainCertificate, SystemSpec
from .scenarios import Scenario, get_scenario
from .small_gain import SmallGainData

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TABLES = ("gain", "pair", "data", "grids", "scenario", "system1", "system2", "simulation")
TOP_KEYS = ("command", "seed")


class _Locator:
    """Maps ``(table, key)`` to a line of the source text, best effort."""

    def __init__(self, text: str, is_json: bool):
        self.lines = text.splitlines()
        self.is_json = is_json

    def find(self, table: str | None, key: str | None = None) -> int | None:
        if self.is_json:
            for name in (key, table):
                if name is None:
                    continue
                pat = re.compile(rf'"{re.escape(name)}"\s*:')
                for i, ln in enumerate(self.lines):
                    if pat.search(ln):
                        return i + 1
            return None
        current = None
        header = None
        key_pat = None if key is None else re.compile(rf"^\s*{re.escape(key)}\s*=")
        for i, ln in enumerate(self.lines):
            m = re.match(r"^\s*\[+\s*([^\]]+?)\s*\]+", ln)
            if m:
                current = m.group(1)
                if table is not None and current == table and header is None:
                    header = i + 1
                continue
            if key_pat is not None and current == table and key_pat.match(ln):
                return i + 1
        if key_pat is not None and table is None:
            for i, ln in enumerate(self.lines):
                if key_pat.match(ln):
                    return i + 1
        return header


@dataclass
class ScenarioConfig:
    """Parsed config with accessors that build library objects."""

    raw: dict
    path: str = "<config>"
    locator: _Locator = field(default=None, repr=False)

    def line(self, table, key=None):
        return None if self.locator is None else self.locator.find(table, key)

    def error(self, table, key, message):
        return ConfigError(message, self.line(table, key))

    def has(self, table: str) -> bool:
        return table in self.raw

    def table(self, name: str) -> dict:
        t = self.raw.get(name)
        if t is None:
            raise ConfigError(f"missing table [{name}]", None)
        if not isinstance(t, dict):
            raise self.error(None, name, f"[{name}] must be a table")
        return t

    # -- scalars -----------------------------------------------------------

    def number(self, table, key, default=None, *, minimum=None, positive=False):
        t = self.raw.get(table, {})
        if key not in t:
            if default is None:
                raise ConfigError(f"[{table}] is missing key {key!r}", self.line(table))
            return default
        v = t[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(table, key, f"{key} must be a number, got {v!r}")
        v = float(v)
        if not np.isfinite(v):
            raise self.error(table, key, f"{key} must be finite")
        if positive and not v > 0:
            raise self.error(table, key, f"{key} must be positive")
        if minimum is not None and v < minimum:
            raise self.error(table, key, f"{key} must be >= {minimum}")
        return v

    def integer(self, table, key, default, *, minimum=1):
        v = self.raw.get(table, {}).get(key, default)
        if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
            raise self.error(table, key, f"{key} must be an integer >= {minimum}, got {v!r}")
        return v

    # -- functions ---------------------------------------------------------

    def function(self, table, key, default=None, cls=K, where=None) -> ScalarFn:
        t = self.raw.get(table, {}) if where is None else where
        if key not in t:
            if default is None:
                raise ConfigError(f"[{table}] is missing function {key!r}", self.line(table))
            return default
        rec = t[key]
        if not isinstance(rec, dict):
            raise self.error(table, key, f"{key} must be a function record")
        try:
            f = scalar_from_dict(rec)
            validate(f, cls)
        except (SmallGainError, KeyError, TypeError, ValueError) as exc:
            raise self.error(table, key, f"{key}: {_msg(exc)}") from None
        return f

    def kl(self, table, key, where=None):
        t = self.raw.get(table, {}) if where is None else where
        if key not in t:
            raise ConfigError(f"[{table}] is missing KL function {key!r}", self.line(table))
        rec = t[key]
        if not isinstance(rec, dict):
            raise self.error(table, key, f"{key} must be a KL record")
        try:
            b = kl_from_dict(rec)
            validate_kl(b)
        except (SmallGainError, KeyError, TypeError, ValueError) as exc:
            raise self.error(table, key, f"{key}: {_msg(exc)}") from None
        return b

    # -- assembled objects -------------------------------------------------

    def small_gain_data(self, **override) -> SmallGainData:
        tbl = "data"
        self.table(tbl)
        kwargs = dict(
            beta=self.kl(tbl, "beta"),
            gamma=self.function(tbl, "gamma"),
            r0=self.number(tbl, "r0", 0.0, minimum=0.0),
            sigma1=self.function(tbl, "sigma1", identity()),
            sigma2=self.function(tbl, "sigma2", linear(0.0), cls=MONOTONE),
            sigma3=self.function(tbl, "sigma3", identity()),
            d=self.number(tbl, "d", 0.0, minimum=0.0),
            C=self.number(tbl, "C", 0.0, minimum=0.0),
            time_step=self.number(tbl, "time_step", 1e-2, positive=True),
            discrete=bool(self.raw[tbl].get("discrete", False)),
        )
        kwargs.update(override)
        try:
            return SmallGainData(**kwargs)
        except SmallGainError as exc:
            exc.config_line = self.line(tbl, "gamma")
            raise

    def system(self, name) -> tuple[SystemSpec, np.ndarray, object]:
        t = self.table(name)
        for key in ("rhs", "output"):
            if key not in t:
                raise ConfigError(f"[{name}] is missing {key!r}", self.line(name))
        rhs = compile_vector(t["rhs"], self.line(name, "rhs"))
        out = compile_vector(t["output"], self.line(name, "output"))
        input_dim = self.integer(name, "input_dim", 1, minimum=0)
        xi = np.atleast_1d(np.asarray(t.get("xi", [0.0] * rhs.size), dtype=float))
        if xi.size != rhs.size:
            raise self.error(name, "xi", f"xi has {xi.size} entries, rhs has {rhs.size}")
        u = None
        if "input" in t:
            u = compile_input(t["input"], self.line(name, "input"))
            if u.size != input_dim:
                raise self.error(name, "input", f"input has {u.size} entries, "
                                                f"input_dim is {input_dim}")
        cert = None
        c = t.get("certificate")
        if c is not None:
            sub = f"{name}.certificate"
            cert = GainCertificate(
                self.kl(sub, "beta", where=c),
                self.function(sub, "gamma_y", zero(), where=c, cls=MONOTONE),
                self.function(sub, "gamma_u", zero(), where=c, cls=MONOTONE),
                float(c.get("C", 0.0)),
                self.function(sub, "sigma1", zero(), where=c, cls=MONOTONE),
                self.function(sub, "sigma3", zero(), where=c, cls=MONOTONE),
                self.function(sub, "sigma4", zero(), where=c, cls=MONOTONE),
                float(c.get("d", 0.0)),
            )
        sys_ = SystemSpec(rhs.size, lambda x, v, u, f=rhs: f(x, v, u),
                          lambda x, v, u, f=out: f(x, v, u), out.size, input_dim,
                          bool(t.get("feedthrough", False)), cert, name)
        return sys_, xi, u

    def scenario(self, horizon=None, dt=None) -> Scenario:
        if self.has("scenario"):
            name = self.table("scenario").get("name")
            if not isinstance(name, str):
                raise self.error("scenario", "name", "scenario name must be a string")
            sc = get_scenario(name, self.line("scenario", "name"))
        elif self.has("system1") and self.has("system2"):
            s1, xi1, u1 = self.system("system1")
            s2, xi2, u2 = self.system("system2")
            sc = Scenario("custom", s1, s2, xi1, xi2, u1=u1, u2=u2)
        else:
            raise ConfigError("config needs [scenario] or both [system1] and [system2]", None)
        h = self.number("simulation", "horizon", sc.horizon, positive=True)
        step = self.number("simulation", "dt", sc.dt, positive=True)
        return Scenario(sc.name, sc.sys1, sc.sys2, sc.xi1, sc.xi2,
                        horizon if horizon is not None else h, dt if dt is not None else step,
                        sc.u1, sc.u2, sc.notes)


def _msg(exc):
    return exc.args[0] if exc.args else type(exc).__name__


def _toml_line(exc) -> int | None:
    m = re.search(r"line (\d+)", str(exc))
    return int(m.group(1)) if m else None


def parse_config(text: str, path: str = "<config>", fmt: str | None = None) -> ScenarioConfig:
    """Parse TOML (default) or JSON text and check the table names."""
    is_json = fmt == "json" if fmt else text.lstrip().startswith("{")
    try:
        raw = json.loads(text) if is_json else tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {str(exc).split(' (at')[0]}", _toml_line(exc)) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table at top level", 1)
    loc = _Locator(text, is_json)
    for key, val in raw.items():
        if key in TOP_KEYS:
            continue
        if key not in TABLES:
            raise ConfigError(f"unknown table or key {key!r}", loc.find(key) or loc.find(None, key))
        if not isinstance(val, dict):
            raise ConfigError(f"{key!r} must be a table", loc.find(None, key))
    return ScenarioConfig(raw, path, loc)


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", None) from None
    return parse_config(text, str(p), "json" if p.suffix == ".json" else None)

