"""Command-line interface: config loading, subcommands, CSV/JSON emission.

Exit codes: 0 success, 1 validation error, 2 numerical failure (instability,
non-plateau, contraction failure).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import charge_dynamics, dispersion, greens, kinetics, response, simulator
from .dispersion import UnstableProfileError
from .greens import ContractionError
from .profiles import Profile, build_profile, phi_hat
from .response import PlateauError
from .simulator import CFLError

_NUMERIC_KEYS = {
    "kappa_min": 1e-3,
    "penrose.n_x": 801,
    "greens.t_max": 50.0,
    "greens.n_t": 64,
    "greens.k_min": 0.1,
    "greens.k_max": 10.0,
    "greens.n_k": 64,
    "stopping.n_k": 32,
    "stopping.n_y": 64,
    "stopping.R": 40.0,
    "decel.dt": 0.5,
    "decel.t_end": 1e4,
    "decel.v_threshold": 0.0,      # 0 -> module default
    "decel.log_exponent": 2.0,
    "sim.box_L": 48.0,
    "sim.grid_n": 32,
    "sim.n_markers": 2_000_000,
    "sim.dt": 0.05,
    "sim.record_every": 10,
    "geometry.V0": 10.0,
    "geometry.T": 100.0,
    "geometry.beta": 0.1,
    "geometry.delta": 0.05,
    "seed": 7,
}


@dataclass
class RunConfig:
    profile: Profile
    numerics: dict = field(default_factory=dict)
    outdir: str = "."
    precision: int = 17

    def num(self, key: str):
        return self.numerics.get(key, _NUMERIC_KEYS[key])


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    unknown = set(raw) - {"profile", "numerics", "io"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    prof = build_profile(raw.get("profile", {}))
    numerics = raw.get("numerics", {})
    bad = set(numerics) - set(_NUMERIC_KEYS)
    if bad:
        raise ValueError(f"unknown numerics keys: {sorted(bad)}")
    for key, val in numerics.items():
        if not isinstance(val, (int, float)) or (isinstance(val, bool)):
            raise ValueError(f"numerics.{key} must be numeric")
        if key != "decel.v_threshold" and val <= 0:
            raise ValueError(f"numerics.{key} must be positive")
    io_sec = raw.get("io", {})
    bad = set(io_sec) - {"outdir", "precision"}
    if bad:
        raise ValueError(f"unknown io keys: {sorted(bad)}")
    return RunConfig(profile=prof, numerics=numerics,
                     outdir=io_sec.get("outdir", "."),
                     precision=int(io_sec.get("precision", 17)))


def _write_csv(path: str, header: list, rows, precision: int = 17):
    fmt = f"%.{precision}g"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [c if isinstance(c, str) else fmt % c for c in row]
            fh.write(",".join(cells) + "\n")


def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.outdir, exist_ok=True)
    return os.path.join(cfg.outdir, name)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_penrose(cfg: RunConfig, args) -> int:
    rep = dispersion.default_penrose_report(cfg.profile, kappa_min=cfg.num("kappa_min"),
                                            n_x=int(cfg.num("penrose.n_x")))
    xi_grid = np.concatenate([[1e-4], np.logspace(-3, 1.5, 40)])
    phis = phi_hat(np.abs(xi_grid))
    margin_x = np.min(np.abs(1.0 - np.outer(phis, rep.curve)), axis=0)
    rows = [(x, g.real, g.imag, m) for x, g, m in zip(rep.curve_x, rep.curve, margin_x)]
    _write_csv(args.out or _out_path(cfg, "report.csv"),
               ["x", "re_gamma", "im_gamma", "margin_at_x"], rows, cfg.precision)
    print(f"penrose: kappa={rep.kappa:.6g} winding={rep.winding} stable={rep.stable}")
    return 0


def cmd_greens(cfg: RunConfig, args) -> int:
    t_max = args.tmax if args.tmax is not None else cfg.num("greens.t_max")
    tab = greens.build_green_table(
        cfg.profile, t_max=t_max, n_t=int(cfg.num("greens.n_t")),
        k_min=cfg.num("greens.k_min"), k_max=cfg.num("greens.k_max"),
        n_k=int(cfg.num("greens.n_k")), route="resolvent",
        kappa_min=cfg.num("kappa_min"))
    out = args.out or _out_path(cfg, "greens.csv")
    rows = [(t, k, tab.ghat[i, j]) for i, t in enumerate(tab.t_grid)
            for j, k in enumerate(tab.xi_grid)]
    _write_csv(out, ["t", "k", "ghat"], rows, cfg.precision)
    ts = np.linspace(1.0, min(t_max, 20.0), 8)
    rs = np.linspace(0.0, 20.0, 21)
    rows2 = []
    for t in ts:
        for r in rs:
            g = greens.g_pointwise(cfg.profile, t, np.array([r, 0.0, 0.0]))
            gp = greens.g_pointwise(cfg.profile, t, np.array([r + 1e-3, 0, 0]))
            gm = greens.g_pointwise(cfg.profile, t, np.array([max(r - 1e-3, 0.0), 0, 0]))
            rows2.append((t, r, g, (gp - gm) / 2e-3))
    stem, ext = os.path.splitext(out)
    _write_csv(stem + "_pointwise" + ext, ["t", "r", "G", "gradG"], rows2, cfg.precision)
    print(f"greens: table {tab.ghat.shape} written to {out}")
    return 0


def cmd_stopping(cfg: RunConfig, args) -> int:
    vstar = np.array([float(s) for s in args.vstar.split(",")])
    if vstar.shape != (3,):
        raise ValueError("--vstar needs three comma-separated components")
    routes = ["timedomain", "steadystate"] if args.route == "both" else [args.route]
    rows = []
    for route in routes:
        if route == "steadystate":
            res = response.force_steadystate(cfg.profile, vstar,
                                             n_k=int(cfg.num("stopping.n_k")),
                                             n_y=int(cfg.num("stopping.n_y")),
                                             kappa_min=cfg.num("kappa_min"))
        else:
            res = response.force_timedomain(cfg.profile, cfg.num("stopping.R"), vstar,
                                            n_k=int(cfg.num("stopping.n_k")),
                                            n_y=int(cfg.num("stopping.n_y")))
            if not res.plateau:
                raise PlateauError(f"no plateau by R = {res.R_used:g}")
        rows.append((float(np.linalg.norm(vstar)), res.force[0], res.force[1],
                     res.force[2], res.A_est, res.route))
    _write_csv(args.out or _out_path(cfg, "force.csv"),
               ["Vmag", "Fx", "Fy", "Fz", "A_est", "route"], rows, cfg.precision)
    for row in rows:
        print(f"stopping: route={row[5]} F.e1={row[1]:.6g} A={row[4]:.6g}")
    return 0


def cmd_decelerate(cfg: RunConfig, args) -> int:
    v_thr = cfg.num("decel.v_threshold") or None
    traj = charge_dynamics.decelerate(
        cfg.profile, args.v0, args.tend, cfg.num("decel.dt"),
        v_stop_threshold=v_thr, log_exponent=cfg.num("decel.log_exponent"))
    rows = []
    for i in range(len(traj.t)):
        reason = traj.stop_reason if i == len(traj.t) - 1 else ""
        rows.append((traj.t[i], traj.X[i, 0], traj.V[i, 0], traj.F[i, 0], reason))
    _write_csv(args.out or _out_path(cfg, "traj.csv"),
               ["t", "X1", "V1", "F1", "stop_reason"], rows, cfg.precision)
    print(f"decelerate: stop_reason={traj.stop_reason} final |V|="
          f"{np.linalg.norm(traj.V[-1]):.6g}")
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    rec, state, snaps = simulator.run_deltaf(
        cfg.profile, args.v0, args.tend, box_L=cfg.num("sim.box_L"),
        grid_n=int(cfg.num("sim.grid_n")), n_markers=int(cfg.num("sim.n_markers")),
        seed=args.seed if args.seed is not None else int(cfg.num("seed")),
        dt=cfg.num("sim.dt"), record_every=int(cfg.num("sim.record_every")),
        snapshot_times=args.snapshots or ())
    rows = list(zip(rec["t"], rec["X1"], rec["V1"], rec["F1"], rec["wsum"]))
    _write_csv(args.out or _out_path(cfg, "sim.csv"),
               ["t", "X1", "V1", "F1", "wsum"], rows, cfg.precision)
    for t_snap, sl in snaps:
        step = int(round(t_snap / cfg.num("sim.dt")))
        rows = [(i, j, sl[i, j]) for i in range(sl.shape[0]) for j in range(sl.shape[1])]
        _write_csv(_out_path(cfg, f"rho_{step}.csv"), ["x1", "x2", "rho"],
                   rows, cfg.precision)
    print(f"simulate: V1 {rec['V1'][0]:.6g} -> {rec['V1'][-1]:.6g}")
    return 0


def cmd_geometry(cfg: RunConfig, args) -> int:
    traj = kinetics.ChargeTrajectory.straight(cfg.num("geometry.V0"),
                                              cfg.num("geometry.T"), profile=cfg.profile)
    probes = np.loadtxt(args.probe, delimiter=",", skiprows=1, ndmin=2)
    rows = []
    for row in probes:
        t, x, v = row[0], row[1:4], row[4:7]
        g = kinetics.geometry(traj, cfg.num("geometry.T"), t, x, v,
                              beta=cfg.num("geometry.beta"),
                              delta=cfg.num("geometry.delta"), strict=False)
        xi = g.x_impact if g.x_impact is not None else (math.nan,) * 3
        rows.append((t, *x, *v, g.tau_x, g.tau_check, g.d_check,
                     g.T_coll if g.T_coll is not None else math.nan,
                     xi[0], xi[1], xi[2], g.region))
    _write_csv(args.out or _out_path(cfg, "geo.csv"),
               ["t", "x1", "x2", "x3", "v1", "v2", "v3", "tau", "taucheck",
                "dcheck", "Tcoll", "ximpact1", "ximpact2", "ximpact3", "region"],
               rows, cfg.precision)
    print(f"geometry: {len(rows)} probes classified")
    return 0


def cmd_pipeline(cfg: RunConfig, args) -> int:
    summary = {}
    rep = dispersion.default_penrose_report(cfg.profile, kappa_min=cfg.num("kappa_min"))
    summary["penrose"] = {"kappa": rep.kappa, "winding": rep.winding,
                          "stable": rep.stable}
    if not rep.stable:
        raise UnstableProfileError(f"kappa = {rep.kappa:g}")
    tab = greens.build_green_table(cfg.profile, t_max=20.0, n_t=16, n_k=16,
                                   route="resolvent")
    summary["greens"] = {"ghat_peak": float(np.abs(tab.ghat).max())}
    v0 = args.v0
    ss = response.force_steadystate(cfg.profile, [v0, 0, 0])
    td = response.force_timedomain(cfg.profile, cfg.num("stopping.R"), [v0, 0, 0],
                                   n_k=int(cfg.num("stopping.n_k")),
                                   n_y=int(cfg.num("stopping.n_y")))
    summary["stopping"] = {
        "A_steadystate": ss.A_est, "A_timedomain": td.A_est,
        "route_gap_rel": abs(td.A_est - ss.A_est) / abs(ss.A_est),
        "plateau": td.plateau}
    traj = charge_dynamics.decelerate(cfg.profile, v0, args.tend, cfg.num("decel.dt"),
                                      v_stop_threshold=cfg.num("decel.v_threshold") or None)
    chk = charge_dynamics.envelope_check(traj, traj.A_min, traj.A_max,
                                         alpha=cfg.profile.alpha)
    summary["decelerate"] = {"stop_reason": traj.stop_reason,
                             "envelope_pass": bool(chk["passed"])}
    rec, _, _ = simulator.run_deltaf(
        cfg.profile, v0, min(args.tend, 5.0), box_L=cfg.num("sim.box_L"),
        grid_n=int(cfg.num("sim.grid_n")), n_markers=int(cfg.num("sim.n_markers")),
        seed=args.seed if args.seed is not None else int(cfg.num("seed")),
        dt=cfg.num("sim.dt"))
    summary["simulate"] = {"V1_final": float(rec["V1"][-1]),
                           "monotone": bool(np.all(np.diff(rec["V1"]) <= 1e-12))}
    ctraj = kinetics.ChargeTrajectory.straight(v0, 20.0, profile=cfg.profile)
    g = kinetics.geometry(ctraj, 20.0, 5.0, np.array([20.0, 1.0, 0.0]),
                          np.zeros(3))
    summary["geometry"] = {"example_region": g.region}
    out = args.out or _out_path(cfg, "summary.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"pipeline: summary written to {out}")
    return 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vstop", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int,
                       default=int(os.environ.get("VSTOP_THREADS", "0")) or None)
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("penrose"); common(p)
    p = sub.add_parser("greens"); common(p)
    p.add_argument("--tmax", type=float, default=None)
    p = sub.add_parser("stopping"); common(p)
    p.add_argument("--vstar", required=True)
    p.add_argument("--route", choices=["timedomain", "steadystate", "both"],
                   default="both")
    p = sub.add_parser("decelerate"); common(p)
    p.add_argument("--v0", type=float, required=True)
    p.add_argument("--tend", type=float, required=True)
    p = sub.add_parser("simulate"); common(p)
    p.add_argument("--v0", type=float, required=True)
    p.add_argument("--tend", type=float, required=True)
    p.add_argument("--snapshots", type=float, nargs="*", default=None)
    p = sub.add_parser("geometry"); common(p)
    p.add_argument("--probe", required=True)
    p = sub.add_parser("pipeline"); common(p)
    p.add_argument("--v0", type=float, default=12.0)
    p.add_argument("--tend", type=float, default=200.0)
    return ap


_COMMANDS = {
    "penrose": cmd_penrose,
    "greens": cmd_greens,
    "stopping": cmd_stopping,
    "decelerate": cmd_decelerate,
    "simulate": cmd_simulate,
    "geometry": cmd_geometry,
    "pipeline": cmd_pipeline,
}


def dispatch(argv) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UnstableProfileError, ContractionError, PlateauError, CFLError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
