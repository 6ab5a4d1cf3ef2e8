"""Train a small 1-D Poisson surrogate and look at its trunk basis.

The singular values of the trunk matrix fall off over many decades, so only
a few trunk functions carry most of the information. Deflating with those
functions cuts the CG iteration count on a new right-hand side.

    python3 demos/poisson_trunk_spectrum.py   (about a minute)
"""

import numpy as np

from dpcgnet.datasets import make_dataset
from dpcgnet.onet import DeepONetModel, deeponet_eval, train, trunk_singular_values
from dpcgnet.pipeline import make_cases, run_solve

data = make_dataset("poisson1d", 200, seed=0)
model = DeepONetModel.create([32], 1, p=64, hidden=(32, 32), seed=0,
                             branch_input_distribution=data.meta["distribution"])
model, hist = train(model, data, lr=3e-4, max_epochs=30000, patience=30000)

held = make_dataset("poisson1d", 100, seed=1)
pred = deeponet_eval(model, held.branch_inputs, held.coords)
err = np.linalg.norm(pred - held.targets) / np.linalg.norm(held.targets)
print(f"held-out relative L2 error: {err:.2%}")

sig = trunk_singular_values(model, held.coords)
for i in (0, 4, 9, 19, 39, 63):
    print(f"sigma_{i + 1:<2d} / sigma_1 = {sig[i] / sig[0]:.1e}")

case = make_cases("poisson1d", 100, seed=7, model=model)[0]
for source, k in (("none", 0), ("tb", 4), ("tb", 8), ("rs", 4)):
    rep = run_solve(case, "jacobi", source, k, "dd", 1, model)
    print(f"{source:>4} k={k}: {rep.iterations} iterations")
