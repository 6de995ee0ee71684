"""Command line entry point.

    engage [--config PATH] [--seed N] [--profile desk|paper] [--workers N] [--out DIR] COMMAND

Every global flag can also come from an environment variable named
``ENGAGE_<FLAG>`` (ENGAGE_CONFIG, ENGAGE_SEED, ...); flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from ._io import atomic_write_text, derive_seed, write_csv
from .cohort import augment_motivating_action, augmented_reward, save_cohort
from .config import ENV_PREFIX, ConfigError, apply_overrides, parse_config, to_jsonable
from .experiments import (
    Truth,
    _cohort,
    make_policy,
    run_ablation,
    summarize,
    sysid_rate_bench,
)
from .model import reward, step, initial_state
from .planning import build_grid, build_noise_quadrature

log = logging.getLogger("engagement_rl")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="engage", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="experiment config file (INI)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("--profile", choices=("desk", "paper"), help="scale profile")
    p.add_argument("--workers", type=int, help="worker processes (default: number of cores)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="one verbose (patient, algorithm) trajectory")
    s.add_argument("--patient", type=int, default=0)
    s.add_argument("--algorithm", default="UCB-BOLD")
    s.add_argument("--rho2", type=float, help="default: first value of the ablation grid")
    s.add_argument("--c-scale", type=float, help="default: first value of the ablation grid")
    s.add_argument("--quiet", action="store_true", help="only write trajectory.csv")

    sub.add_parser("ablate", help="run the ablation sweep")
    sub.add_parser("sysid", help="identification-rate benchmark")
    c = sub.add_parser("cohort-sample", help="write a sampled cohort as JSON")
    c.add_argument("--output", help="default: OUT/cohort.json")
    m = sub.add_parser("summarize", help="recompute cvar.csv and ecdf.csv from runs.csv")
    m.add_argument("--runs", help="default: OUT/runs.csv")
    return p


def load(args, environ=os.environ):
    path = args.config or environ.get(ENV_PREFIX + "CONFIG")
    if not path:
        raise ConfigError("no config given (use --config or ENGAGE_CONFIG)")
    profile = args.profile or environ.get(ENV_PREFIX + "PROFILE")
    cfg = parse_config(path, profile)
    workers = args.workers
    if workers is None and ENV_PREFIX + "WORKERS" not in environ:
        workers = os.cpu_count() or 1
    return apply_overrides(cfg, args.seed, workers, args.out, environ)


def cmd_simulate(cfg, args) -> int:
    patients = _cohort(cfg)
    if not 0 <= args.patient < len(patients):
        raise ConfigError(f"patient {args.patient} not in cohort of {len(patients)}")
    rho2 = cfg.grid.rho2[0] if args.rho2 is None else args.rho2
    cs = cfg.grid.c_scale[0] if args.c_scale is None else args.c_scale
    gamma, beta, beta0 = cfg.grid.gamma[0], cfg.grid.beta[0], cfg.grid.beta0[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        patient = augment_motivating_action(patients[args.patient], cs, cfg.bounds.c_bar)
    params = patient.params
    spec = augmented_reward((cfg.grid.rho1, rho2), beta, beta0, gamma)
    grid = build_grid(cfg.bounds.c_x, cfg.planning.grid_shrink, cfg.planning.resolution)
    quad = build_noise_quadrature(params.noise, cfg.planning.quad_nodes)
    truth = Truth(params, spec, grid, quad, cfg.planning.vi_tol)
    pol = make_policy(args.algorithm, cfg, params, spec, truth)
    rng = np.random.default_rng(derive_seed(cfg.seed, "simulate", args.patient, args.algorithm))

    print(f"patient {patient.id}: a={params.a:.4g} b={np.round(params.b, 4).tolist()} "
          f"c={np.round(params.c, 4).tolist()} mu={np.round(params.mu, 4).tolist()}")
    rows = []
    x = initial_state(params, rng)
    vf = truth.value_of(pol.grid_policy())
    cum = 0.0
    for t in range(1, cfg.T + 1):
        if pol.evaluation == "cadence" and (t - 1) % cfg.eval_cadence == 0:
            vf = truth.value_of(pol.grid_policy())
        gap = truth.gap(x, vf)
        cum += gap
        u = pol.act(x, rng)
        d, x_next, _ = step(params, x, u, rng)
        r = reward(spec, x, u, d)
        changed = pol.observe(x, u, d, x_next, r)
        rows.append([t, x, u, d, r, gap, cum])
        if not args.quiet:
            flag = "  *new policy" if changed else ""
            print(f"t={t:4d} x={x:+8.3f} u={u} d={d} r={r:+.3f} gap={gap:.4f} R={cum:.3f}{flag}")
        if changed:
            vf = truth.value_of(pol.grid_policy())
        x = x_next
    out = os.path.join(cfg.out, "trajectory.csv")
    write_csv(out, ["t", "x", "u", "d", "reward", "gap", "cum_regret"], rows)
    print(f"{pol.name}: cumulative regret {cum:.4f} over T={cfg.T}; wrote {out}")
    return 0


def cmd_ablate(cfg, args) -> int:
    res = run_ablation(cfg)
    s = res["summary"]
    print(f"{s['records']} runs in {s['wall_time']:.1f}s; outputs in {cfg.out}")
    for row in res["table"].rows:
        if row[1] == 0.5:
            print(f"  {row[0]:<11s} CVaR(0.5) median {row[2]:.3f} [{row[3]:.3f}, {row[4]:.3f}]")
    if s["failed"]:
        print(f"partial outputs: {len(s['failed'])} runs failed, see summary.json",
              file=sys.stderr)
        return 1
    return 0


def cmd_sysid(cfg, args) -> int:
    t0 = time.perf_counter()
    report = sysid_rate_bench(cfg.sysid, cfg.noise, cfg.bounds, cfg.seed)
    report.update({"seed": cfg.seed, "version": __version__, "config_hash": cfg.config_hash(),
                   "wall_time": time.perf_counter() - t0})
    atomic_write_text(os.path.join(cfg.out, "sysid.json"), json.dumps(report, indent=2))
    print(f"theta slope {report['theta_slope']:.3f}  mu slope {report['mu_slope']:.3f}")
    for T, th, mu in zip(report["checkpoints"], report["theta_median"], report["mu_median"]):
        print(f"  T={T:6d}  median theta err {th:.4g}  median mu err {mu:.4g}")
    return 0


def cmd_cohort(cfg, args) -> int:
    path = args.output or os.path.join(cfg.out, "cohort.json")
    patients = _cohort(cfg)
    save_cohort(path, patients)
    print(f"wrote {len(patients)} patients to {path}")
    return 0


def cmd_summarize(cfg, args) -> int:
    runs = args.runs or os.path.join(cfg.out, "runs.csv")
    table = summarize(runs, cfg.out)
    summary_path = os.path.join(cfg.out, "summary.json")
    info = {}
    if os.path.exists(summary_path):
        with open(summary_path) as fh:
            info = json.load(fh)
    info.update({"summarized_from": os.path.abspath(runs), "version": __version__,
                 "config_hash": cfg.config_hash(), "seed": cfg.seed})
    info.setdefault("config", to_jsonable(cfg))
    atomic_write_text(summary_path, json.dumps(info, indent=2))
    print(f"wrote cvar.csv and ecdf.csv ({len(table.rows)} CVaR rows) to {cfg.out}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "ablate": cmd_ablate, "sysid": cmd_sysid,
            "cohort-sample": cmd_cohort, "summarize": cmd_summarize}


def main(argv=None, environ=os.environ) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load(args, environ)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
