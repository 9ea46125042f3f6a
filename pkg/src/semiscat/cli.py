"""Command-line front end: ``semiscat <subcommand> [--config FILE] [--out DIR]``.

Exit codes: 0 when every requested check passes, 1 when a check fails, 2 on
configuration errors or violated assumptions (trapped rays, orbiting,
nonregular directions).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import classical, convergence, quantum, rays, semiclassical, verify
from .errors import (ConfigError, NonregularDirection, OrbitingDetected, ScatteringError,
                     TrappedRay)
from .potential import PotentialError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _config(args) -> convergence.RunConfig:
    if args.config:
        return convergence.load_config(args.config)
    return convergence.RunConfig.reference()


def _out(args, cfg) -> Path:
    p = Path(args.out or cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, complex):
        return [v.real, v.imag]
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _label(theta_deg: float, phi_deg: float) -> str:
    return f"theta{theta_deg:g}_phi{phi_deg:g}".replace(".", "p").replace("-", "m")


# -- subcommands --------------------------------------------------------------------

def cmd_rays(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    pot = cfg.potential
    m = pot.dimension - 1
    ys = args.y or [[0.5 * (pot.support_radius or 1.0)] + [0.0] * (m - 1)]
    summary = {"nontrapping": rays.nontrapping_scan(pot, opts=cfg.integrator).as_dict(), "rays": []}
    if summary["nontrapping"]["trapped"]:
        _dump(out / "rays.json", summary)
        print("trapped rays found; see rays.json", file=sys.stderr)
        return EXIT_CONFIG
    for i, y in enumerate(ys):
        if len(y) != m:
            raise ConfigError(f"launch point {y} must have {m} coordinates")
        ray = rays.variational_flow(pot, np.array(y), cfg.integrator)
        ray.to_csv(out / f"ray_{i}.csv")
        summary["rays"].append({"y": y, "omega": ray.p_inf, "detDJ": ray.detDJ,
                                "maslov": ray.maslov, "F": classical.phase_F(ray),
                                "caustics_before_exit": ray.caustics_before_exit,
                                "caustics_after_exit": ray.caustics_after_exit})
        print(f"y={y}: omega={np.round(ray.p_inf, 10).tolist()} detDJ={ray.detDJ:.6g} nu={ray.maslov}")
    _dump(out / "rays.json", summary)
    return EXIT_OK


def cmd_classical(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    pot = cfg.potential
    result = {"sigma_cl": classical.sigma_cl(pot), "directions": []}
    for th in args.theta_deg:
        om = classical.direction_from_angles(math.radians(th), math.radians(args.phi_deg),
                                             pot.dimension)
        brs = classical.find_branches(pot, om, seed_grid=cfg.grids.seed_grid, opts=cfg.integrator)
        label = _label(th, args.phi_deg)
        classical.branches_to_csv(brs, out / f"branches_{label}.csv", pot.dimension)
        dcs = classical.classical_dcs(brs)
        result["directions"].append({"theta_deg": th, "n_branches": len(brs), "dcs": dcs})
        print(f"theta={th:g}deg: {len(brs)} branches, |f_cl|^2 = {dcs:.8g}")
    if pot.is_radial and not pot.is_free:
        table = classical.deflection_table(pot)
        table.to_csv(out / "deflection.csv")
        result["max_deflection"] = table.max_deflection
    status = EXIT_OK
    if "a2" in args.checks:
        rep = classical.assumption2_check(pot, opts=cfg.integrator)
        result["assumption2"] = rep
        status = max(status, EXIT_FAIL if rep["violation"] else EXIT_OK)
    if "a3" in args.checks:
        oms = [classical.direction_from_angles(math.radians(t), math.radians(args.phi_deg),
                                               pot.dimension) for t in args.theta_deg]
        rep = classical.assumption3_check(pot, oms, opts=cfg.integrator,
                                          seed_grid=cfg.grids.seed_grid)
        result["assumption3"] = rep
        status = max(status, EXIT_FAIL if rep["n_flagged"] else EXIT_OK)
    _dump(out / "classical.json", result)
    print(f"sigma_cl = {result['sigma_cl']:.12g}")
    return status


def cmd_semiclassical(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    pot = cfg.potential
    rows = []
    for th in args.theta_deg:
        om = classical.direction_from_angles(math.radians(th), math.radians(args.phi_deg),
                                             pot.dimension)
        brs = classical.find_branches(pot, om, seed_grid=cfg.grids.seed_grid, opts=cfg.integrator)
        for k in args.k:
            amp = semiclassical.semiclassical_amplitude(brs, k, om)
            rows.append(amp)
            print(f"theta={th:g}deg k={k:g}: f_sc = {amp.value:.8g}, |f_sc|^2 = {amp.dcs:.8g}")
    semiclassical.amplitude_grid_to_csv(rows, out / "semiclassical.csv")
    return EXIT_OK


def cmd_quantum(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    pot = cfg.potential
    thetas = np.radians(np.arange(0.0, 180.0 + 1e-9, args.dtheta_deg))
    result = []
    for k in args.k:
        T = quantum.phase_shifts(pot, k, l_max=args.l_max)
        tag = f"{k:g}".replace(".", "p")
        T.to_csv(out / f"phase_shifts_k{tag}.csv")
        quantum.amplitudes_to_csv(T, thetas, out / f"amplitudes_k{tag}.csv")
        so, sa = quantum.total_xsec_optical(T), quantum.sigma_angular(T)
        result.append({"k": k, "l_max": T.l_max, "sigma_optical": so, "sigma_angular": sa})
        print(f"k={k:g}: l_max={T.l_max} sigma={so:.12g} (angular {sa:.12g})")
    _dump(out / "quantum.json", result)
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    only = [s.strip().upper() for s in args.only.split(",")] if args.only else None
    if only:
        bad = [n for n in only if n not in verify.CHECKS]
        if bad:
            raise ConfigError(f"unknown criteria {bad}; choose from {list(verify.CHECKS)}")
    results = verify.run_acceptance(cfg, only)
    for r in results:
        print(r.line)
    if args.out:
        out = _out(args, cfg)
        _dump(out / "acceptance.json", [{"name": r.name, "passed": r.passed, "summary": r.summary,
                                        "details": r.details} for r in results])
    return EXIT_OK if all(r.passed is not False for r in results) else EXIT_FAIL


def cmd_report(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    exp = convergence.Experiment(cfg)
    dirs = [(_label(t, 0.0), classical.direction_from_angles(math.radians(t), 0.0,
                                                             cfg.potential.dimension))
            for t in args.branch_theta_deg]
    rep = convergence.build_report(exp, dirs)
    for p in rep.write(out):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semiscat", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration (default: reference bump)")
        p.add_argument("--out", help="output directory (default: config output_dir)")
        return p

    p = common(sub.add_parser("rays", help="trace rays and export trajectories"))
    p.add_argument("--y", type=_floats, action="append", help="launch point, e.g. 0.5,0")
    p.set_defaults(func=cmd_rays)

    p = common(sub.add_parser("classical", help="branches, classical cross sections, checkers"))
    p.add_argument("--theta-deg", type=_floats, default=[40.0, 60.0])
    p.add_argument("--phi-deg", type=float, default=0.0)
    p.add_argument("--checks", type=lambda s: [v.strip().lower() for v in s.split(",")],
                   default=[], help="comma list of a2,a3")
    p.set_defaults(func=cmd_classical)

    p = common(sub.add_parser("semiclassical", help="semiclassical amplitude grids"))
    p.add_argument("--theta-deg", type=_floats, default=[40.0, 60.0])
    p.add_argument("--phi-deg", type=float, default=0.0)
    p.add_argument("--k", type=_floats, default=[100.0, 200.0])
    p.set_defaults(func=cmd_semiclassical)

    p = common(sub.add_parser("quantum", help="partial-wave phase shifts and amplitudes"))
    p.add_argument("--k", type=_floats, default=[25.0])
    p.add_argument("--l-max", type=int, default=None)
    p.add_argument("--dtheta-deg", type=float, default=1.0)
    p.set_defaults(func=cmd_quantum)

    p = common(sub.add_parser("verify", help="run the acceptance criteria A1-A9"))
    p.add_argument("--only", help="comma list of criteria, e.g. A1,A6")
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("report", help="write the convergence report CSVs"))
    p.add_argument("--branch-theta-deg", type=_floats, default=[40.0, 60.0])
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PotentialError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrappedRay, OrbitingDetected, NonregularDirection) as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScatteringError as exc:
        print(f"check failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
