"""Command-line front end.

Subcommands::

    smallgain check-gain        --config C   contraction of a gain or a loop
    smallgain synthesize        --config C   output certificate (JSON)
    smallgain simulate-certify  --config C   simulate a pair, check the closed-loop bound
    smallgain certify --certificate F --trajectory T

Exit codes: 0 pass, 1 config error, 2 falsified (a witness is in the
report), 3 runtime or simulation failure. Files go to ``--out`` (default
the current directory): ``report.json``, ``certificate.json`` and
``trajectory.csv`` with columns ``t, x, y, u1..uk``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .comparison import is_contraction_above
from .config import ScenarioConfig, load_config
from .errors import ConfigError, ContractionError, CouplingError, SmallGainError
from .interconnection import (certify_interconnection, composite_certificate, simulate,
                              small_gain_condition, verify_subsystem_certificates)
from .small_gain import derived_constants, synthesize_certificate
from .trajectories import check_kl_practical_ios, kl_bound_from, read_csv

EXIT_PASS, EXIT_CONFIG, EXIT_FALSIFIED, EXIT_RUNTIME = 0, 1, 2, 3
DEFAULT_POINTS = 33
DEFAULT_SPAN = (1e-4, 1e4)
DEFAULT_PPD = 512


def _report(args, command, status, code, **fields):
    rec = {"schema": io.REPORT_SCHEMA, "command": command, "status": status, "exit_code": code,
           "seed": args.seed, **fields}
    io.write_json(Path(args.out) / "report.json", rec)
    return code


def _check_report(rep):
    return {"passed": rep.passed, "margin": rep.margin, "worst_pair": rep.worst_pair,
            "first_violation": rep.first_violation, "violations": rep.violations,
            "pairs_checked": rep.pairs_checked}


def _contraction(res):
    return {"holds": res.holds, "witness": res.witness, "r0": res.r0, "horizon": res.horizon,
            "points": res.n_points, "grid_certified": res.grid_certified}


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def _grids(cfg: ScenarioConfig, args, floor):
    points = args.grid_points or cfg.integer("grids", "points", DEFAULT_POINTS, minimum=4)
    span = cfg.raw.get("grids", {}).get("span", list(DEFAULT_SPAN))
    if (not isinstance(span, list) or len(span) != 2
            or not all(isinstance(v, (int, float)) for v in span) or not 0 < span[0] < span[1]):
        raise cfg.error("grids", "span", "span must be [lo, hi] with 0 < lo < hi")
    scale = cfg.number("grids", "scale", 1.0, positive=True)
    base = scale * np.geomspace(span[0], span[1], points)
    return base, floor + base


def _depth(cfg, args):
    return args.depth or cfg.integer("grids", "depth", 4096, minimum=1)


def _ppd(cfg, args):
    return args.grid_points or cfg.integer("grids", "points_per_decade", DEFAULT_PPD, minimum=8)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_check_gain(cfg: ScenarioConfig, args) -> int:
    ppd = _ppd(cfg, args)
    if cfg.has("gain"):
        gamma = cfg.function("gain", "gamma")
        r0 = cfg.number("gain", "r0", 0.0, minimum=0.0)
        res = is_contraction_above(gamma, r0, points_per_decade=ppd)
        holds, witness = res.holds, res.witness
        fields = {"check": "gain", "holds": holds, "witness": witness,
                  "contraction": _contraction(res)}
        if args.strict:
            fine = is_contraction_above(gamma, r0, points_per_decade=2 * ppd,
                                        horizon=10 * res.horizon)
            converged = fine.holds == res.holds
            fields["refinement"] = {"contraction": _contraction(fine), "converged": converged}
            holds = holds and fine.holds and converged
            witness = witness if witness is not None else fine.witness
    elif cfg.has("pair"):
        g1, g2 = cfg.function("pair", "gamma1"), cfg.function("pair", "gamma2")
        r0 = cfg.number("pair", "r0", 0.0, minimum=0.0)
        mode = cfg.raw["pair"].get("mode", "both")
        if mode not in ("both", "either"):
            raise cfg.error("pair", "mode", f"mode must be 'both' or 'either', got {mode!r}")
        res = small_gain_condition(g1, g2, r0, mode, points_per_decade=ppd)
        holds, witness = res.holds, res.witness
        fields = {"check": "pair", "mode": mode, "holds": holds, "witness": witness,
                  "forward": _contraction(res.forward), "backward": _contraction(res.backward)}
        if args.strict:
            fine = small_gain_condition(g1, g2, r0, mode, points_per_decade=2 * ppd)
            converged = fine.holds == res.holds
            fields["refinement"] = {"holds": fine.holds, "witness": fine.witness,
                                    "converged": converged}
            holds = holds and fine.holds and converged
            witness = witness if witness is not None else fine.witness
    else:
        raise ConfigError("check-gain needs a [gain] or [pair] table", None)
    fields.update(holds=holds, witness=witness, points_per_decade=ppd, strict=args.strict)
    code = EXIT_PASS if holds else EXIT_FALSIFIED
    return _report(args, "check-gain", "pass" if holds else "fail", code, **fields)


def _simulate(sc):
    return simulate(sc.sys1, sc.sys2, sc.xi1, sc.xi2, sc.u1, sc.u2, horizon=sc.horizon, dt=sc.dt)


def _escape_report(args, command, run):
    return _report(args, command, "error", EXIT_RUNTIME, error="finite-escape",
                   escape_time=run.tau, last_time=float(run.t[-1]),
                   last_state_norm=float(run.super_trajectory().x[-1]))


def cmd_synthesize(cfg: ScenarioConfig, args) -> int:
    out = Path(args.out)
    if cfg.has("data"):
        data = cfg.small_gain_data()
        floor = derived_constants(data).floor
        r, eps = _grids(cfg, args, floor)
        cert = synthesize_certificate(data, r, eps, depth=_depth(cfg, args))
        io.write_json(out / "certificate.json", io.certificate_record(cert))
        return _report(args, "synthesize", "pass", EXIT_PASS, source="data", constant=cert.C,
                       floor=floor, notes=list(cert.notes), grid_points=int(r.size))
    sc = cfg.scenario(args.horizon, args.dt)
    run = _simulate(sc)
    if run.escaped:
        return _escape_report(args, "synthesize", run)
    comp = composite_certificate(sc.sys1, sc.sys2, conclude=False)
    floor = max(comp.C, comp.r0)
    r, eps = _grids(cfg, args, floor)
    cert = synthesize_certificate(comp.data, r, eps, depth=_depth(cfg, args))
    traj = run.super_trajectory()
    io.write_trajectory(out / "trajectory.csv", traj)
    io.write_json(out / "certificate.json", io.certificate_record(
        cert, {"scenario": sc.name, "composite_constant": comp.C}))
    return _report(args, "synthesize", "pass", EXIT_PASS, source="scenario", scenario=sc.name,
                   constant=cert.C, composite_constant=comp.C, notes=list(cert.notes),
                   grid_points=int(r.size))


def cmd_simulate_certify(cfg: ScenarioConfig, args) -> int:
    out = Path(args.out)
    sc = cfg.scenario(args.horizon, args.dt)
    run = _simulate(sc)
    traj = run.super_trajectory()
    io.write_trajectory(out / "trajectory.csv", traj)
    if run.escaped:
        return _escape_report(args, "simulate-certify", run)
    subs = verify_subsystem_certificates(run, sc.sys1, sc.sys2)
    sub_fields = {k: _check_report(v) for k, v in subs.items()}
    try:
        comp = composite_certificate(sc.sys1, sc.sys2, conclude=False)
    except ContractionError as exc:
        return _report(args, "simulate-certify", "fail", EXIT_FALSIFIED, scenario=sc.name,
                       error="loop gain is not a contraction", witness=exc.witness,
                       subsystems=sub_fields)
    r, eps = _grids(cfg, args, max(comp.C, comp.r0))
    cert = synthesize_certificate(comp.data, r, eps, depth=_depth(cfg, args))
    rep = certify_interconnection(run, cert)
    hyp = all(v.passed for v in subs.values())
    passed = rep.passed and hyp
    margins = kl_bound_from(traj, cert, 0) - traj.y
    io.write_json(out / "certificate.json", io.certificate_record(cert, {"scenario": sc.name}))
    return _report(args, "simulate-certify", "pass" if passed else "fail",
                   EXIT_PASS if passed else EXIT_FALSIFIED, scenario=sc.name,
                   certification=_check_report(rep), hypotheses_hold=hyp, subsystems=sub_fields,
                   constant=cert.C, horizon=sc.horizon, dt=sc.dt,
                   per_t={"t": traj.t, "margin": margins})


def cmd_certify(args) -> int:
    cert = io.load_certificate(args.certificate)
    traj = read_csv(args.trajectory)
    rep = check_kl_practical_ios(traj, cert, starts=None if args.all_starts else [0])
    return _report(args, "certify", "pass" if rep.passed else "fail",
                   EXIT_PASS if rep.passed else EXIT_FALSIFIED, certification=_check_report(rep))


COMMANDS = {
    "check-gain": cmd_check_gain,
    "synthesize": cmd_synthesize,
    "simulate-certify": cmd_simulate_certify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smallgain", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "certify"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="scenario config (TOML or JSON)",
                       required=name != "certify")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--grid-points", type=int, default=None,
                       help="synthesis grid size, or points per decade for check-gain")
        p.add_argument("--depth", type=int, default=None, help="maximum schedule depth")
        p.add_argument("--dt", type=float, default=None, help="integration step")
        p.add_argument("--horizon", type=float, default=None, help="simulation horizon")
        p.add_argument("--seed", type=int, default=0, help="recorded in every report")
        p.add_argument("--strict", action="store_true",
                       help="require the contraction verdict to survive grid refinement")
        if name == "certify":
            p.add_argument("--certificate", required=True,
                           help="certificate JSON written by synthesize")
            p.add_argument("--trajectory", required=True, help="trajectory CSV to check")
            p.add_argument("--all-starts", action="store_true",
                           help="check the bound from every start time, not only t = 0")
    return parser


def _validate_flags(args):
    for flag in ("grid_points", "depth"):
        v = getattr(args, flag)
        if v is not None and v < 1:
            raise ConfigError(f"--{flag.replace('_', '-')} must be positive")
    for flag in ("dt", "horizon"):
        v = getattr(args, flag)
        if v is not None and not v > 0:
            raise ConfigError(f"--{flag} must be positive")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _validate_flags(args)
        if args.command == "certify":
            return cmd_certify(args)
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return _report(args, args.command, "error", EXIT_CONFIG, error=str(exc), line=exc.line)
    except ContractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _report(args, args.command, "fail", EXIT_FALSIFIED, error=str(exc),
                       witness=exc.witness)
    except CouplingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _report(args, args.command, "error", EXIT_RUNTIME, error=str(exc),
                       residual=exc.residual, time=exc.time)
    except (SmallGainError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _report(args, args.command, "error", EXIT_RUNTIME, error=str(exc))


if __name__ == "__main__":
    sys.exit(main())
