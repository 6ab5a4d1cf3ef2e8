"""How many deflation vectors pay off?

theta is the average iteration reduction per deflation vector, measured
from one undeflated and one deflated solve. With the default overhead ratio
the break-even size is k* = 1/c - 1/theta.

    python3 demos/break_even.py
"""

import os

from dpcgnet.krylov import DEFAULT_COST_RATIO, break_even_k, break_even_point, estimate_theta
from dpcgnet.onet import load_model
from dpcgnet.pipeline import run_bench

print(f"overhead ratio c = {DEFAULT_COST_RATIO:.5f} (1/c = {1 / DEFAULT_COST_RATIO:.1f})")
for theta in (0.007, 0.008, 0.01, 0.02):
    print(f"theta = {theta:<5}: k* = {break_even_point(theta):5.1f}, first k past it = {break_even_k(theta)}")

HERE = os.path.dirname(os.path.abspath(__file__))
model = load_model(os.path.join(HERE, "..", "tests", "data", "darcy_model.json"))
rows = run_bench("darcy", 50, "asm", ["none", "rs"], [1, 5, 20], [16], "dd", 3, 0, model)
n_pcg = float(rows[0]["mean_iterations"])
for row in rows[1:]:
    k = int(row["k"])
    theta = estimate_theta(n_pcg, float(row["mean_iterations"]), k)
    print(f"RS k={k:<2d}: {row['mean_iterations']:>6.6} iterations vs {n_pcg:.1f}, theta = {theta:.4f}")
