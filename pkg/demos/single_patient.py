"""Walk one synthetic patient through the simulator.

Samples a patient from the default population, adds the motivating action,
solves for the optimal value function on the true parameters, then runs a
handful of policies for one simulated year and prints their regret.

    python3 demos/single_patient.py [seed]
"""
import sys

import numpy as np

from engagement_rl.cohort import (PopulationSpec, augment_motivating_action, augmented_reward,
                                 sample_cohort)
from engagement_rl.experiments import Truth, make_policy, run_trajectory
from engagement_rl.config import parse_config_text
from engagement_rl.planning import build_grid, build_noise_quadrature

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 3

cfg = parse_config_text(f"""
[experiment]
experiment_id = demo
seed = {seed}
""")

patient = sample_cohort(PopulationSpec(), cfg.bounds, 1, seed, cfg.noise)[0]
aug = augment_motivating_action(patient, 1.0, cfg.bounds.c_bar)
p = aug.params
print("patient", patient.id)
print("  a  = %.3f" % p.a)
print("  b  =", np.round(p.b, 3))
print("  c  =", np.round(p.c, 3))
print("  mu =", np.round(p.mu, 3))

spec = augmented_reward((1.0, 1.5), 0.0, 0.0, 0.8)
grid = build_grid(cfg.bounds.c_x, cfg.planning.grid_shrink, cfg.planning.resolution)
quad = build_noise_quadrature(p.noise, cfg.planning.quad_nodes)
truth = Truth(p, spec, grid, quad)

# where does the optimal policy switch between actions?
acts = truth.J_star.policy
switches = np.flatnonzero(np.diff(acts)) + 1
print("optimal action at x=0:", truth.J_star.action(0.0))
for i in switches:
    print("  switch to action %d at x=%.2f" % (acts[i], grid.points[i]))

T = 365
print("\ncumulative regret after %d days" % T)
for name in ("Optimal", "UCB-BOLD", "GLM-Bandit", "Fixed1", "Fixed2", "Random"):
    rng = np.random.default_rng(seed)
    pol = make_policy(name, cfg, p, spec, truth)
    series = run_trajectory(truth, pol, T, rng)
    extra = ""
    if name == "UCB-BOLD":
        extra = "  (%d epochs)" % pol.epoch
    print("  %-10s %8.2f%s" % (name, series.cumulative[-1], extra))
