"""Deflation sources on the channelized Darcy problem.

Solves the 50 x 50 channel problem (K = 1e4 in the channel) with ICC(0)
three ways: plain PCG, DPCG with the constant NICO vector on four clustered
groups, and DPCG with five trunk-basis vectors per group from the checked-in
surrogate.

    python3 demos/jump_darcy_deflation.py
"""

import os

from dpcgnet.onet import load_model
from dpcgnet.pipeline import make_cases, run_solve

HERE = os.path.dirname(os.path.abspath(__file__))
model = load_model(os.path.join(HERE, "..", "tests", "data", "jump_darcy_model.json"))

case = make_cases("jump_darcy", 50, seed=0, model=model, K=1e4)[0]
print(f"n = {case.A.n}, K_channel = {case.params['K_channel']:g}")

for source, k in (("none", 0), ("nico", 0), ("tb", 5)):
    rep = run_solve(case, "icc", source, k, "cl", 4, model, init_seed=1000)
    extra = "" if source == "none" else f", coarse dim {rep.coarse_dim}"
    print(f"{source:>5}: {rep.iterations:3d} iterations, "
          f"true residual {rep.relative_residual:.1e}{extra}")
