"""Rebuild the pre-trained surrogates stored in tests/data.

    python3 scripts/train_fixtures.py [name ...]

Each fixture is trained from a seeded dataset, so rerunning the script on
the same platform reproduces the files.
"""

import os
import sys
import time

from dpcgnet.datasets import make_dataset
from dpcgnet.onet import DeepONetModel, save_model, train

HERE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "tests", "data")

FIXTURES = {
    # name: (dataset kind, samples, dataset kwargs, lr, epochs, patience)
    "jump_darcy": ("jump_darcy", 100, {"nx": 50}, 1e-3, 2000, 500),
    "darcy": ("darcy", 1000, {"nx": 25}, 1e-3, 2000, 300),
    "heat": ("heat", 40, {"nx": 15}, 1e-3, 500, 200),
}


def build(name):
    kind, n_samples, kw, lr, epochs, patience = FIXTURES[name]
    t0 = time.time()
    data = make_dataset(kind, n_samples, seed=1, **kw)
    model = DeepONetModel.create(
        [y.shape[1] for y in data.branch_inputs], data.meta["d"],
        time_augmented=data.meta["time_augmented"], seed=0,
        branch_input_distribution=data.meta["distribution"])
    model, hist = train(model, data, lr=lr, max_epochs=epochs, patience=patience, seed=0)
    path = os.path.join(HERE, f"{name}_model.json")
    save_model(model, path)
    best = hist["best_epoch"]
    print(f"{name}: best epoch {best}, val loss {hist['val_loss'][best]:.3e}, "
          f"{time.time() - t0:.0f} s -> {os.path.relpath(path)}")


if __name__ == "__main__":
    for name in sys.argv[1:] or FIXTURES:
        build(name)
