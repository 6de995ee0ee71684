"""Regret accounting, population statistics and the sweep/benchmark drivers."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._io import atomic_write_text, derive_seed, fmt, write_csv
from .cohort import (
    SyntheticPatient,
    augment_motivating_action,
    augmented_reward,
    load_cohort,
    sample_cohort,
)
from .estimation import AdherenceEstimator, DynamicsEstimator
from .model import PatientParams, RewardSpec, initial_state, reward, step
from .planning import (
    BellmanContext,
    NoiseQuadrature,
    StateGrid,
    ValueFunction,
    build_grid,
    build_noise_quadrature,
    value_bound,
)
from .policies import (
    ExploratoryConfig,
    FixedPolicy,
    GlmBandit,
    LfaQ,
    OptimalPolicy,
    Policy,
    RandomPolicy,
    RkExploratory,
    TcQ,
    UcbBold,
)

log = logging.getLogger(__name__)

TAILS = (1.0, 0.5, 0.25, 0.1, 0.05)
RUNS_HEADER = ["experiment_id", "rho2_scale", "c_scale", "gamma", "beta", "beta0", "T",
               "patient_id", "replication", "algorithm", "t", "cum_regret", "norm_regret"]


class UndefinedNormalizerError(ValueError):
    pass


class RunError(RuntimeError):
    pass


@dataclass
class RegretSeries:
    gaps: np.ndarray
    eval_times: list = field(default_factory=list)
    cadence: str = "epoch"

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.gaps)

    @property
    def T(self) -> int:
        return len(self.gaps)


class Truth:
    """True-parameter planning context with J* and a cache of evaluated policies."""

    def __init__(self, params: PatientParams, reward_spec: RewardSpec, grid: StateGrid,
                 quad: NoiseQuadrature, tol: float = 1e-6):
        self.params = params
        self.reward = reward_spec
        self.grid = grid
        self.quad = quad
        self.ctx = BellmanContext.from_params(params, reward_spec, grid, quad)
        self.J_star = self.ctx.value_iteration("optimal", tol=tol)
        self.C_J = value_bound(reward_spec)
        self._cache: dict[bytes, ValueFunction] = {}

    def value_of(self, policy) -> ValueFunction:
        arr = np.ascontiguousarray(policy)
        key = arr.dtype.str.encode() + bytes(str(arr.shape), "ascii") + arr.tobytes()
        vf = self._cache.get(key)
        if vf is None:
            vf = self.ctx.evaluate(arr)
            self._cache[key] = vf
        return vf

    def gap(self, x: float, vf: ValueFunction) -> float:
        return self.J_star(x) - vf(x)


def run_trajectory(truth: Truth, policy: Policy, T: int, rng: np.random.Generator,
                   eval_cadence: int = 20, x0: float | None = None) -> RegretSeries:
    """Simulate T steps; gap_t = J*(x_t) - J^{pi_t}(x_t) for the policy enacted at t."""
    params, spec = truth.params, truth.reward
    x = initial_state(params, rng) if x0 is None else float(x0)
    gaps = np.empty(T)
    evals = []
    cadence = policy.evaluation == "cadence"
    vf = None
    changed = True
    try:
        for t in range(T):
            if vf is None or (cadence and t % eval_cadence == 0) or (not cadence and changed):
                vf = truth.value_of(policy.grid_policy())
                evals.append(t + 1)
            gaps[t] = truth.gap(x, vf)
            u = policy.act(x, rng)
            d, x_next, _ = step(params, x, u, rng)
            changed = policy.observe(x, u, d, x_next, reward(spec, x, u, d))
            x = x_next
    except Exception as exc:
        raise RunError(f"{policy.name} failed at t={t + 1}: {exc}") from exc
    return RegretSeries(gaps, evals, "cadence" if cadence else "epoch")


def random_baseline(truth: Truth, T: int, n_reps: int, rng_for_rep) -> np.ndarray:
    """Mean cumulative regret curve of the uniform policy; ``rng_for_rep(j)`` seeds rep j."""
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    total = np.zeros(T)
    for j in range(n_reps):
        pol = RandomPolicy(truth.params.M, truth.grid)
        total += run_trajectory(truth, pol, T, rng_for_rep(j)).cumulative
    return total / n_reps


def normalize(cumulative, baseline) -> np.ndarray:
    cumulative = np.asarray(cumulative, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    if baseline.shape != cumulative.shape:
        raise ValueError("series and baseline lengths differ")
    if not baseline[-1] > 0:
        raise UndefinedNormalizerError(f"baseline final regret {baseline[-1]!r} is not positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = cumulative / baseline
    # before the baseline accrues any regret the ratio is undefined
    return np.where(baseline > 0, out, np.nan)


def empirical_cvar(values, tail: float) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty sample")
    if not 0 < tail <= 1:
        raise ValueError("tail must lie in (0, 1]")
    k = math.ceil(tail * v.size - 1e-9)
    return float(np.sort(v)[::-1][:k].mean())


def ecdf(values) -> list[tuple[float, float]]:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty sample")
    uniq, idx = np.unique(v, return_index=True)
    upto = np.append(idx[1:], v.size)
    return [(float(a), float(b) / v.size) for a, b in zip(uniq, upto)]


# ---------------------------------------------------------------------------
# ablation sweep


@dataclass
class RunRecord:
    experiment_id: str
    cell: tuple  # (rho2_scale, c_scale, gamma, beta, beta0, T)
    patient_id: int
    replication: int
    algorithm: str
    series: RegretSeries | None
    normalized: np.ndarray | None
    wall_time: float
    error: str | None = None


@dataclass
class CvarTable:
    rows: list  # (algorithm, tail, median, q1, q3)
    per_cell: dict  # cell label -> algorithm -> tail -> cvar

    def check_monotone(self):
        for cell, algs in self.per_cell.items():
            for alg, by_tail in algs.items():
                vals = [by_tail[t] for t in sorted(by_tail, reverse=True)]
                if any(b < a - 1e-12 for a, b in zip(vals, vals[1:])):
                    raise AssertionError(f"CVaR not monotone in tail for {alg} at {cell}")


def cell_label(cell: tuple) -> str:
    r2, cs, g, b, b0, T = cell
    return f"rho2={r2!r}|c={cs!r}|gamma={g!r}|beta={b!r}|beta0={b0!r}|T={T}"


def report_points(T: int, every: int) -> list[int]:
    pts = list(range(every, T + 1, every))
    if not pts or pts[-1] != T:
        pts.append(T)
    return pts


def make_policy(name: str, cfg, params: PatientParams, spec: RewardSpec, truth: Truth) -> Policy:
    grid, bounds = truth.grid, cfg.bounds
    q = cfg.qlearn
    g_bound = q.grid_bound if q.grid_bound is not None else bounds.c_x * cfg.planning.grid_shrink
    if name == "UCB-BOLD":
        return UcbBold(bounds, spec, params.noise, grid, truth.quad, cfg.ucb_bold)
    if name == "GLM-Bandit":
        return GlmBandit(bounds, spec, params.noise, grid, cfg.glm_bandit)
    if name == "LFA-Q":
        return LfaQ(bounds.M, spec.gamma, g_bound, grid, q.lfa_centers, q.lfa_alpha,
                    q.eps_decay, q.init)
    if name == "TC-Q":
        return TcQ(bounds.M, spec.gamma, -g_bound, g_bound, grid, q.tc_bin_width, q.tc_tilings,
                   q.tc_alpha, q.eps_decay, q.init)
    if name == "Random":
        return RandomPolicy(bounds.M, grid)
    if name == "Optimal":
        return OptimalPolicy(truth.J_star)
    if name.startswith("Fixed"):
        return FixedPolicy(int(name[5:]), grid)
    raise ValueError(f"unknown algorithm {name!r}")


def _cohort(cfg) -> list[SyntheticPatient]:
    if cfg.cohort_file:
        patients = load_cohort(cfg.cohort_file)
        if len(patients) < cfg.patients:
            raise ValueError(f"cohort file has {len(patients)} patients, need {cfg.patients}")
        return patients[:cfg.patients]
    return sample_cohort(cfg.population, cfg.bounds, cfg.patients, cfg.seed, cfg.noise)


def _run_task(args):
    """All algorithms and replications for one (cell, patient)."""
    cfg, cell, patient = args
    rho2, c_scale, gamma, beta, beta0, T = cell
    exp_id = cfg.experiment_id
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        aug = augment_motivating_action(patient, c_scale, cfg.bounds.c_bar)
    params = aug.params
    spec = augmented_reward((cfg.grid.rho1, rho2), beta, beta0, gamma)
    grid = build_grid(cfg.bounds.c_x, cfg.planning.grid_shrink, cfg.planning.resolution)
    quad = build_noise_quadrature(params.noise, cfg.planning.quad_nodes)
    truth = Truth(params, spec, grid, quad, cfg.planning.vi_tol)

    ident = (exp_id, cell, patient.id)
    baseline = random_baseline(
        truth, T, cfg.baseline_reps,
        lambda j: np.random.default_rng(derive_seed(cfg.seed, *ident, "baseline", j)))
    audit = []
    records = []
    for rep in range(cfg.replications):
        for alg in cfg.algorithms:
            rng = np.random.default_rng(derive_seed(cfg.seed, *ident, rep, alg))
            t0 = time.perf_counter()
            try:
                pol = make_policy(alg, cfg, params, spec, truth)
                series = run_trajectory(truth, pol, T, rng, cfg.eval_cadence)
            except Exception as exc:  # recorded, the sweep carries on
                audit.append(f"run failed {cell_label(cell)} patient={patient.id} rep={rep} "
                             f"{alg}: {exc}")
                records.append(RunRecord(exp_id, cell, patient.id, rep, alg, None, None,
                                         time.perf_counter() - t0, str(exc)))
                continue
            try:
                normed = normalize(series.cumulative, baseline)
            except UndefinedNormalizerError as exc:
                audit.append(f"excluded {cell_label(cell)} patient={patient.id} rep={rep} "
                             f"{alg}: {exc}")
                normed = None
            records.append(RunRecord(exp_id, cell, patient.id, rep, alg, series, normed,
                                     time.perf_counter() - t0))
    return records, audit


def run_records(cfg) -> tuple[list[RunRecord], list[str]]:
    patients = _cohort(cfg)
    tasks = [(cfg, cell, p) for cell in cfg.grid.cells(cfg.T) for p in patients]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_run_task, tasks))  # map preserves task order
    else:
        results = [_run_task(t) for t in tasks]
    records, audit = [], []
    for recs, aud in results:
        records.extend(recs)
        audit.extend(aud)
    for line in audit:
        log.warning(line)
    return records, audit


def runs_rows(records: list[RunRecord], report_every: int) -> list[list]:
    rows = []
    for r in records:
        if r.series is None:
            continue
        cum = r.series.cumulative
        for t in report_points(r.series.T, report_every):
            norm = "nan" if r.normalized is None else r.normalized[t - 1]
            rows.append([r.experiment_id, *r.cell, r.patient_id, r.replication, r.algorithm, t,
                         cum[t - 1], norm])
    return rows


def final_values(rows) -> list[tuple]:
    """(experiment_id, cell, patient, replication, algorithm, norm_regret at T) from runs rows."""
    out = []
    for row in rows:
        cell = tuple(float(v) for v in row[1:6]) + (int(row[6]),)
        if int(row[10]) != cell[-1]:
            continue
        out.append((row[0], cell, int(row[7]), int(row[8]), row[9], float(row[12])))
    return out


def population_tables(finals: list[tuple], tails=TAILS):
    """CVaR and ECDF tables from per-patient replication means of final normalized regret."""
    groups: dict = {}
    for exp_id, cell, pid, rep, alg, v in finals:
        groups.setdefault((exp_id, cell, alg), {}).setdefault(pid, []).append(v)
    per_cell: dict = {}
    ecdf_rows = []
    excluded = []
    for (exp_id, cell, alg) in sorted(groups, key=lambda k: (k[0], k[1], k[2])):
        by_patient = groups[(exp_id, cell, alg)]
        means = []
        for pid in sorted(by_patient):
            vals = np.asarray(by_patient[pid])
            if np.isnan(vals).any():
                excluded.append(f"{cell_label(cell)} patient={pid} {alg}: undefined normalizer")
                continue
            means.append(float(vals.mean()))
        if not means:
            continue
        label = cell_label(cell)
        per_cell.setdefault(label, {})[alg] = {t: empirical_cvar(means, t) for t in tails}
        for value, frac in ecdf(means):
            ecdf_rows.append([exp_id, label, alg, value, frac])
    algs = sorted({a for c in per_cell.values() for a in c})
    cvar_rows = []
    for alg in algs:
        for t in tails:
            vals = [per_cell[c][alg][t] for c in per_cell if alg in per_cell[c]]
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            cvar_rows.append([alg, t, med, q1, q3])
    table = CvarTable(cvar_rows, per_cell)
    table.check_monotone()
    return table, ecdf_rows, excluded


def write_tables(out_dir, table: CvarTable, ecdf_rows) -> None:
    import os

    write_csv(os.path.join(out_dir, "cvar.csv"), ["algorithm", "tail", "median", "q1", "q3"],
              table.rows)
    write_csv(os.path.join(out_dir, "ecdf.csv"),
              ["experiment_id", "cell", "algorithm", "value", "fraction"], ecdf_rows)


def read_runs_csv(path) -> list[list[str]]:
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RUNS_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [row for row in reader]


def summarize(runs_path, out_dir) -> CvarTable:
    """Recompute cvar.csv and ecdf.csv from an existing runs.csv."""
    table, ecdf_rows, _ = population_tables(final_values(read_runs_csv(runs_path)))
    write_tables(out_dir, table, ecdf_rows)
    return table


def run_ablation(cfg, out_dir: str | None = None) -> dict:
    """Full sweep; writes runs.csv, cvar.csv, ecdf.csv and summary.json to ``out_dir``."""
    import os

    from .config import to_jsonable

    out_dir = out_dir or cfg.out
    t0 = time.perf_counter()
    records, audit = run_records(cfg)
    rows = runs_rows(records, cfg.report_every)
    runs_path = os.path.join(out_dir, "runs.csv")
    write_csv(runs_path, RUNS_HEADER, rows)
    # stats go through the serialized rows so summarize() reproduces them exactly
    parsed = [[fmt(v) if not isinstance(v, str) else v for v in row] for row in rows]
    table, ecdf_rows, excluded = population_tables(final_values(parsed))
    write_tables(out_dir, table, ecdf_rows)
    medians = {c: {a: float(np.median(_finals_for(parsed, c, a))) for a in algs}
               for c, algs in table.per_cell.items()}
    summary = {
        "experiment_id": cfg.experiment_id,
        "seed": cfg.seed,
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "config": to_jsonable(cfg),
        "wall_time": time.perf_counter() - t0,
        "records": len(records),
        "failed": [r.error for r in records if r.error],
        "audit": audit + excluded,
        "per_cell_median_norm_regret": medians,
        "per_cell_cvar": {c: {a: {fmt(t): v for t, v in d.items()} for a, d in algs.items()}
                          for c, algs in table.per_cell.items()},
    }
    atomic_write_text(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2))
    return {"records": records, "table": table, "ecdf": ecdf_rows, "summary": summary}


def _finals_for(rows, label, alg):
    groups: dict = {}
    for _, cell, pid, _, a, v in final_values(rows):
        if a == alg and cell_label(cell) == label and not math.isnan(v):
            groups.setdefault(pid, []).append(v)
    return [float(np.mean(v)) for _, v in sorted(groups.items())]


# ---------------------------------------------------------------------------
# identification rate


def sysid_rate_bench(scfg, noise, bounds, seed: int) -> dict:
    """Median estimation errors at checkpoints under an (r, k)-exploratory policy."""
    from dataclasses import replace

    M = len(scfg.b)
    bounds = replace(bounds, M=M) if bounds.M != M else bounds
    params = PatientParams(scfg.a, np.array(scfg.b), np.array(scfg.c), np.array(scfg.mu), noise)
    params.check(bounds)
    cps = sorted(int(t) for t in scfg.checkpoints)
    theta_err = np.empty((scfg.reps, len(cps)))
    mu_err = np.empty((scfg.reps, len(cps)))
    grid = build_grid(bounds.c_x)
    rk = ExploratoryConfig(scfg.r, scfg.k)
    for rep in range(scfg.reps):
        rng = np.random.default_rng(derive_seed(seed, "sysid", rep))
        pol = RkExploratory(FixedPolicy(0, grid), rk, M)
        dyn = DynamicsEstimator(M, scfg.lambda1, bounds)
        adh = AdherenceEstimator(M, scfg.lambda2, bounds.mu_bar)
        x = initial_state(params, rng)
        j = 0
        for t in range(1, cps[-1] + 1):
            u = pol.act(x, rng)
            d, x_next, _ = step(params, x, u, rng)
            dyn.update_sparse(x, u, d, x_next)
            if u:
                adh.update(u, x, d == u)
            x = x_next
            if t == cps[j]:
                th = dyn.project(dyn.solve_rls())
                theta_err[rep, j] = np.linalg.norm(th - params.theta)
                mu_err[rep, j] = np.max(np.abs(adh.solve_all() - params.mu))
                j += 1
    med_th = np.median(theta_err, axis=0)
    med_mu = np.median(mu_err, axis=0)
    logT = np.log(cps)
    return {
        "checkpoints": cps,
        "theta_median": med_th.tolist(),
        "mu_median": med_mu.tolist(),
        "theta_slope": float(np.polyfit(logT, np.log(med_th), 1)[0]),
        "mu_slope": float(np.polyfit(logT, np.log(med_mu), 1)[0]),
        "reps": scfg.reps,
        "r": scfg.r,
        "k": scfg.k,
    }
