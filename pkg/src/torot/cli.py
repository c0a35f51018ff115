"""Command line front end.

Every subcommand reads an optional TOML config (defaults apply otherwise),
takes --seed / --threads / --out overrides, and writes its tables into the
output directory together with a manifest carrying checksums. `verify` is
the checking entry point; the other subcommands only report, so they exit
zero whenever they complete.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import numpy as np

from torot import __version__
from torot.concentration import TestFunction, flatness_tail, tail_empirics
from torot.config import ExperimentConfig
from torot.drift import TrigTerm
from torot.geometry import heat_trace, heat_trace_coefficient, weyl_coefficient, weyl_count
from torot.pipeline import (
    DEFAULT_T_GRID,
    RunManifest,
    SUITES,
    run_constant_pipeline,
    run_w2_pipeline,
    verify,
)
from torot.variance import generator_matrix, psi_moment_prediction


def _float_list(text: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML experiment config")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for replicas")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="torot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"torot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("trace", parents=[common], help="heat trace over a time grid")
    p.add_argument("--t-min", type=float, default=1e-3)
    p.add_argument("--t-max", type=float, default=1e-1)
    p.add_argument("--points", type=int, default=7)

    p = sub.add_parser("spectral", parents=[common], help="mode table and Weyl count")
    p.add_argument("--lambda-max", type=float, default=None, help="override modes.lambda_max")

    p = sub.add_parser("simulate", parents=[common], help="replica paths and psi table")
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--record-stride", type=int, default=0, help="write trajectories every N steps")

    p = sub.add_parser("psi", parents=[common], help="occupation moments vs predictions")
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--replicas", type=int, default=None)

    p = sub.add_parser("energy", parents=[common], help="scaled smoothed-energy pipeline")
    p.add_argument("--T-grid", type=_float_list, default=None, metavar="T1,T2,...")
    p.add_argument("--replicas", type=int, default=None, help="0 for prediction-only rows")

    p = sub.add_parser("w2", parents=[common], help="entropic transport pipeline")
    p.add_argument("--T-grid", type=_float_list, default=None, metavar="T1,T2,...")
    p.add_argument("--replicas", type=int, default=None)

    p = sub.add_parser("concentration", parents=[common], help="exceedance tails vs bounds")
    p.add_argument("--xi", type=_float_list, default=None, metavar="XI1,XI2,...")
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--flatness", action="store_true", help="also tabulate flatness failures")
    p.add_argument("--T-grid", type=_float_list, default=None, metavar="T1,T2,...",
                   help="horizons for --flatness")

    p = sub.add_parser("verify", parents=[common], help="run pinned checks, emit a ledger")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--profile", choices=("full", "smoke"), default="full")
    p.add_argument("--limit-constant", type=float, default=None,
                   help="replace the limit constant in pipeline targets")

    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_toml(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> str:
    out = args.out if args.out is not None else cfg.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow(row)


def _emit_json(report, path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_mapping(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_trace(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    g = cfg.geometry
    ts = np.geomspace(args.t_min, args.t_max, args.points)
    rows = []
    for t in ts:
        tf = float(t)
        val = heat_trace(g, tf)
        rows.append([repr(tf), repr(val), repr(tf * tf * val)])
    path = os.path.join(out, "trace.csv")
    _write_rows(path, ["t", "trace", "t_sq_trace"], rows)
    coeff = heat_trace_coefficient(g)
    lead = float(ts[0] ** 2 * heat_trace(g, float(ts[0])))
    print(f"t^2 trace at t = {ts[0]:g}: {lead:.6f} (small-time constant {coeff:.6f})")
    print(f"wrote {path}")
    return 0


def _cmd_spectral(args) -> int:
    cfg = _load_config(args)
    if args.lambda_max is not None:
        cfg = cfg.replace(lambda_max=args.lambda_max)
    out = _out_dir(args, cfg)
    ms = cfg.mode_set()
    rows = []
    for pair in ms.pairs:
        kstr = " ".join(str(int(v)) for v in pair.k)
        rows.append([kstr, pair.parity, repr(pair.lam)])
    path = os.path.join(out, "modes.csv")
    _write_rows(path, ["k_vector", "parity", "lambda"], rows)
    count = weyl_count(ms, cfg.lambda_max)
    print(f"{ms.n_rep} representative pairs with lambda <= {cfg.lambda_max:g}; N = {count}")
    if cfg.d == 4:
        ratio = count / cfg.lambda_max**2
        print(f"N/lambda^2 = {ratio:.4f} (Weyl constant {weyl_coefficient(cfg.geometry):.4f})")
    print(f"wrote {path}")
    return 0


def _cmd_simulate(args) -> int:
    from torot.diffusion import SimConfig, simulate

    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    sim_cfg = cfg.sim_config(T=args.T, replicas=args.replicas)
    if args.record_stride > 0:
        sim_cfg = SimConfig(
            dt=sim_cfg.dt,
            T=sim_cfg.T,
            seed=sim_cfg.seed,
            replicas=sim_cfg.replicas,
            record_stride=args.record_stride,
        )
    result = simulate(
        sim_cfg,
        cfg.drift(),
        cfg.mode_set(),
        threads=args.threads,
        keep_trajectories=args.record_stride > 0,
    )
    manifest = RunManifest.start(cfg, seed=sim_cfg.seed)

    psi_path = os.path.join(out, "psi_replicas.csv")
    result.accumulator.write_csv(psi_path)
    manifest.record("psi_replicas", psi_path)

    pos_rows = [
        [r] + [repr(float(x)) for x in result.final_positions[r]]
        for r in range(sim_cfg.replicas)
    ]
    pos_path = os.path.join(out, "positions.csv")
    _write_rows(pos_path, ["replica"] + [f"x{i}" for i in range(cfg.d)], pos_rows)
    manifest.record("positions", pos_path)

    if result.trajectories is not None:
        for r, traj in enumerate(result.trajectories):
            tpath = os.path.join(out, f"trajectory_{r:04d}.wdif")
            traj.write(tpath)
            manifest.record(f"trajectory_{r:04d}", tpath)

    mpath = os.path.join(out, "simulate_manifest.json")
    manifest.write(mpath)
    print(f"{sim_cfg.replicas} replicas to T = {sim_cfg.T:g}; wrote {psi_path}")
    return 0


def _cmd_psi(args) -> int:
    from torot.diffusion import simulate

    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    sim_cfg = cfg.sim_config(T=args.T, replicas=args.replicas)
    ms = cfg.mode_set()
    drift = cfg.drift()
    result = simulate(sim_cfg, drift, ms, threads=args.threads)
    psi = result.accumulator.psi()
    gen = generator_matrix(ms, drift)
    rows = []
    for i in range(2 * ms.n_rep):
        pair = ms.pairs[i]
        sq = psi[:, i] ** 2
        rows.append(
            [
                " ".join(str(int(v)) for v in pair.k),
                pair.parity,
                repr(pair.lam),
                repr(float(psi[:, i].mean())),
                repr(float(sq.mean())),
                repr(float(sq.std(ddof=1) / math.sqrt(sq.size))),
                repr(psi_moment_prediction(i, gen)),
            ]
        )
    path = os.path.join(out, "psi.csv")
    _write_rows(
        path,
        ["k_vector", "parity", "lambda", "mean_psi", "mean_psi_sq", "stderr_psi_sq", "prediction"],
        rows,
    )
    manifest = RunManifest.start(cfg, seed=sim_cfg.seed)
    manifest.record("psi", path)
    manifest.write(os.path.join(out, "psi_manifest.json"))
    print(f"wrote {path} ({2 * ms.n_rep} mode rows, {sim_cfg.replicas} replicas)")
    return 0


def _cmd_energy(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    report = run_constant_pipeline(cfg, T_grid=args.T_grid, replicas=args.replicas, threads=args.threads)
    manifest = RunManifest.start(cfg)
    path = os.path.join(out, "energy.csv")
    report.write_csv(path)
    manifest.record("energy", path)
    if "json" in cfg.formats:
        jpath = os.path.join(out, "energy.json")
        _emit_json(report, jpath)
        manifest.record("energy_json", jpath)
    manifest.write(os.path.join(out, "energy_manifest.json"))
    for row in report.rows:
        print(
            f"T = {row.T:<8g} scaled mean = {row.mc_mean:.5f}  prediction = {row.prediction:.5f}"
            f"  limit = {row.limit:.4f}"
        )
    print(f"wrote {path}")
    return 0


def _cmd_w2(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    report = run_w2_pipeline(cfg, T_grid=args.T_grid, replicas=args.replicas, threads=args.threads)
    manifest = RunManifest.start(cfg)
    path = os.path.join(out, "w2.csv")
    report.write_csv(path)
    manifest.record("w2", path)
    if "json" in cfg.formats:
        jpath = os.path.join(out, "w2.json")
        _emit_json(report, jpath)
        manifest.record("w2_json", jpath)
    manifest.write(os.path.join(out, "w2_manifest.json"))
    for row in report.rows:
        print(
            f"T = {row.T:<8g} W2^2 mean = {row.w2_sq_mean:.3e}  h1 mean = {row.h1_mean:.3e}"
            f"  ratio = {row.ratio_mean:.3f}"
        )
    print(f"wrote {path}")
    return 0


def _cmd_concentration(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    g = TestFunction(cfg.geometry, [TrigTerm((1,) + (0,) * (cfg.d - 1), "cos", 1.0)])
    sim_cfg = cfg.sim_config(T=args.T, replicas=args.replicas)
    if args.xi is not None:
        xis = list(args.xi)
    else:
        xis = [0.2, 0.3, 0.4]
        xi_star = 2.0 * math.sqrt(g.sigma_sq / sim_cfg.T)
        if all(abs(xi_star - x) > 1e-12 for x in xis):
            xis.append(xi_star)
    report = tail_empirics(g, xis, sim_cfg, cfg.drift(), threads=args.threads)
    manifest = RunManifest.start(cfg, seed=sim_cfg.seed)
    path = os.path.join(out, "concentration.csv")
    report.write_csv(path)
    manifest.record("concentration", path)
    for row in report.rows:
        mark = "<=" if row.ci_upper <= row.bound_c1 else "> "
        print(
            f"xi = {row.xi:<8.4f} count = {row.exceed_count:<6d} ci_upper = {row.ci_upper:.3e}"
            f" {mark} bound = {row.bound_c1:.3e}"
        )
    if args.flatness:
        t_grid = args.T_grid if args.T_grid is not None else DEFAULT_T_GRID
        flat = flatness_tail(
            cfg.mode_set(),
            cfg.drift(),
            t_grid,
            gamma=cfg.gamma,
            replicas=sim_cfg.replicas,
            seed=sim_cfg.seed,
        )
        fpath = os.path.join(out, "flatness.csv")
        flat.write_csv(fpath)
        manifest.record("flatness", fpath)
        trend = "nonincreasing" if flat.trend_nonincreasing() else "increasing"
        print(f"flatness failure trend over T = {tuple(t_grid)}: {trend}")
    manifest.write(os.path.join(out, "concentration_manifest.json"))
    print(f"wrote {path}")
    return 0


def _cmd_verify(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    seed = args.seed if args.seed is not None else cfg.seed
    ledger = verify(
        args.suite,
        seed=seed,
        profile=args.profile,
        out_dir=out,
        limit_constant=args.limit_constant,
        threads=args.threads,
    )
    for check in ledger["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"[{status}] {check['suite']}/{check['name']}: {check['detail']}")
    total = len(ledger["checks"])
    good = sum(1 for c in ledger["checks"] if c["passed"])
    print(f"{good}/{total} checks passed ({args.suite}, {args.profile} profile)")
    print(f"wrote {os.path.join(out, f'verify_{args.suite}.json')}")
    return 0 if ledger["passed"] else 1


_COMMANDS = {
    "trace": _cmd_trace,
    "spectral": _cmd_spectral,
    "simulate": _cmd_simulate,
    "psi": _cmd_psi,
    "energy": _cmd_energy,
    "w2": _cmd_w2,
    "concentration": _cmd_concentration,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
