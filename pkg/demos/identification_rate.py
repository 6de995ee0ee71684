"""How fast do the estimators converge under random exploration?

Runs the identification benchmark on the fixed two-treatment patient in
configs/sysid.cfg with fewer replications, and prints the median errors with
their log-log slope. Both should sit near -1/2.

    python3 demos/identification_rate.py [reps]
"""
import os
import sys
from dataclasses import replace

from engagement_rl.config import parse_config
from engagement_rl.experiments import sysid_rate_bench

here = os.path.dirname(os.path.abspath(__file__))
cfg = parse_config(os.path.join(here, "..", "configs", "sysid.cfg"))
reps = int(sys.argv[1]) if len(sys.argv) > 1 else 10
scfg = replace(cfg.sysid, reps=reps, checkpoints=(256, 1024, 4096))

rep = sysid_rate_bench(scfg, cfg.noise, cfg.bounds, cfg.seed)
print("%8s %12s %12s" % ("t", "|theta err|", "max mu err"))
for t, e1, e2 in zip(rep["checkpoints"], rep["theta_median"], rep["mu_median"]):
    print("%8d %12.4f %12.4f" % (t, e1, e2))
print("slopes: theta %.3f  mu %.3f" % (rep["theta_slope"], rep["mu_slope"]))
