import os
import sys

# the demos and the acceptance suite import helpers from here
sys.path.insert(0, os.path.dirname(__file__))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

TINY = """
[experiment]
experiment_id = tiny
seed = 7
T = {T}
patients = {patients}
replications = {reps}
baseline_reps = 3
algorithms = {algorithms}
workers = 1

[ablation]
rho2 = {rho2}
c_scale = {c_scale}

[planning]
grid_shrink = 0.2
resolution = 0.25
quad_nodes = 21
"""


def tiny_config(T=30, patients=1, reps=1, rho2="1.5", c_scale="1.0",
                algorithms="UCB-BOLD, GLM-Bandit, LFA-Q, TC-Q, Fixed1, Fixed2, Random, Optimal"):
    return TINY.format(T=T, patients=patients, reps=reps, rho2=rho2, c_scale=c_scale,
                       algorithms=algorithms)


ACCEPTANCE = {}


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
