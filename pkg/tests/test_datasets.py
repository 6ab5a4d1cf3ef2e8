import zipfile

import numpy as np
import pytest

from dpcgnet.datasets import Dataset, make_dataset, nearest_nodes, sensor_grid
from dpcgnet.problems import Grid2D, build_jump_darcy, build_poisson_1d


def test_deterministic_and_byte_stable(tmp_path):
    a, b = make_dataset("poisson1d", 5, seed=3), make_dataset("poisson1d", 5, seed=3)
    assert np.array_equal(a.targets, b.targets)
    a.save(tmp_path / "a.npz")
    b.save(tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    assert not np.array_equal(a.targets, make_dataset("poisson1d", 5, seed=4).targets)


def test_poisson_targets_solve_the_system():
    data = make_dataset("poisson1d", 1, seed=0, n=50)
    x = data.coords[:, 0]
    dist = data.meta["distribution"]["params"]
    # recover the forcing at the nodes from the sensor series
    sens = np.asarray(dist["sensors"])
    m = np.arange(1, dist["modes"] + 1)
    c = np.linalg.lstsq(np.sin(np.pi * np.outer(sens, m)), data.branch_inputs[0][0], rcond=None)[0]
    prob = build_poisson_1d(50, np.sin(np.pi * np.outer(x, m)) @ c)
    u = data.targets[0]
    assert np.linalg.norm(prob.A @ u - prob.f) <= 1e-10 * np.linalg.norm(prob.f)


def test_jump_darcy_targets():
    data = make_dataset("jump_darcy", 2, seed=1, nx=10)
    for logk, u in zip(data.branch_inputs[0][:, 0], data.targets):
        prob = build_jump_darcy(Grid2D.unit_square(10), None, 10.0 ** logk)
        assert np.linalg.norm(prob.A @ u - prob.f) <= 1e-10 * np.linalg.norm(prob.f)
    assert 0 <= data.branch_inputs[0].min() and data.branch_inputs[0].max() <= 5


def test_darcy_and_heat_shapes():
    d = make_dataset("darcy", 2, seed=0, nx=10)
    assert [y.shape for y in d.branch_inputs] == [(2, 256), (2, 256)]
    assert d.targets.shape == (2, 100) and d.coords.shape == (100, 2)
    h = make_dataset("heat", 2, seed=0, nx=5, n_steps=3)
    assert h.coords.shape == (75, 3) and h.targets.shape == (2, 75)
    assert np.allclose(np.unique(h.coords[:, 2]), [0.02, 0.04, 0.06])
    assert h.meta["time_augmented"]


def test_sensors():
    s = sensor_grid(4)
    assert s.shape == (16, 2) and s.min() == 0.125 and s.max() == 0.875
    coords = Grid2D.unit_square(3).coords
    assert nearest_nodes(coords, coords).tolist() == list(range(9))


def test_subset_and_roundtrip(tmp_path):
    data = make_dataset("darcy", 3, seed=2, nx=6)
    sub = data.subset([0, 2])
    assert np.array_equal(sub.targets, data.targets[[0, 2]])
    assert np.array_equal(sub.branch_inputs[1], data.branch_inputs[1][[0, 2]])
    data.save(tmp_path / "d.npz")
    back = Dataset.load(tmp_path / "d.npz")
    assert back.meta == data.meta
    for a, b in zip(back.branch_inputs, data.branch_inputs):
        assert np.array_equal(a, b)


def test_errors(tmp_path):
    with pytest.raises(ValueError, match="unknown"):
        make_dataset("wave", 2)
    with pytest.raises(ValueError):
        make_dataset("poisson1d", 0)
    with pytest.raises(ValueError):
        Dataset([np.ones((2, 3))], np.ones((4, 1)), np.ones((3, 4)))
    with pytest.raises(ValueError):
        Dataset([np.ones((2, 3))], np.ones((4, 1)), np.ones((2, 5)))
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(ValueError, match="cannot read"):
        Dataset.load(tmp_path / "junk.npz")
    with zipfile.ZipFile(tmp_path / "empty.npz", "w") as zf:
        zf.writestr("x.txt", "1")
    with pytest.raises(ValueError, match="not a dataset"):
        Dataset.load(tmp_path / "empty.npz")
