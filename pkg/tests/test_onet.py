import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from dpcgnet.datasets import Dataset, make_dataset
from dpcgnet.onet import (
    FFN,
    DeepONetModel,
    ModelFormatError,
    deeponet_eval,
    ffn_forward,
    grad_check,
    load_model,
    model_to_json,
    sample_branch_inputs,
    save_model,
    train,
    trunk_singular_values,
)


def tiny_model(activation="tanh", seed=0, n_branches=1, time_augmented=False, d=1, p=6):
    return DeepONetModel.create([4] * n_branches, d, p=p, hidden=(5, 5), activation=activation,
                                time_augmented=time_augmented, seed=seed)


def tiny_sample(model, seed=0, m=7):
    r = np.random.default_rng(seed)
    ys = [r.standard_normal(b.n_in) for b in model.branches]
    coords = r.uniform(-1, 1, (m, model.trunk.n_in))
    return ys, coords, r.standard_normal(m)


def with_branch_output(model, outputs):
    """Copy whose branches are single linear layers returning fixed vectors."""
    m = model.copy()
    m.branches = [FFN([b.n_in, m.p], "identity", [np.zeros((b.n_in, m.p))], [np.asarray(o, float)])
                  for b, o in zip(m.branches, outputs)]
    return m


class TestFFN:
    def test_identity_weights_tanh(self):
        net = FFN([3, 3, 3], "tanh", [np.eye(3), np.eye(3)], [np.zeros(3), np.zeros(3)])
        x = np.array([0.3, -1.2, 2.0])
        assert_allclose(ffn_forward(net, x), np.tanh(x))

    def test_zero_net(self):
        assert_allclose(ffn_forward(FFN([4, 8, 2]), np.ones(4)), 0.0)

    def test_matches_straight_line(self, rng):
        net = FFN.xavier([3, 7, 2], "tanh", rng)
        net.biases = [rng.standard_normal(7), rng.standard_normal(2)]
        x = rng.standard_normal(3)
        (W0, W1), (b0, b1) = net.weights, net.biases
        h = [np.tanh(sum(x[i] * W0[i, j] for i in range(3)) + b0[j]) for j in range(7)]
        out = [sum(h[i] * W1[i, j] for i in range(7)) + b1[j] for j in range(2)]
        assert np.abs(ffn_forward(net, x) - out).max() <= 1e-15 * max(1.0, np.abs(out).max())

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ffn_forward(FFN([3, 2]), np.ones(4))

    def test_bad_chain(self):
        with pytest.raises(ValueError):
            FFN([2, 3], weights=[np.zeros((3, 2))])

    def test_non_finite(self):
        net = FFN([1, 1], "identity", [np.array([[np.inf]])], [np.zeros(1)])
        with pytest.raises(FloatingPointError):
            ffn_forward(net, np.ones(1))


class TestEval:
    def test_scalar_product(self):
        m = DeepONetModel.create([1], 1, p=1, hidden=(2,))
        m.branches = [FFN([1, 1], "identity", [np.zeros((1, 1))], [np.array([2.0])])]
        m.trunk = FFN([1, 1], "identity", [np.zeros((1, 1))], [np.array([3.0])])
        assert deeponet_eval(m, [np.zeros(1)], np.array([[0.4]])) == pytest.approx([6.0])

    def test_mode_selection(self):
        m = tiny_model(n_branches=2)
        e = np.zeros(m.p)
        e[0] = 1.0
        m1 = with_branch_output(m, [e, e])
        ys, x, _ = tiny_sample(m1)
        assert_allclose(deeponet_eval(m1, ys, x), m1.trunk_basis(x)[:, 0], atol=1e-15)

    def test_mode_permutation(self, rng):
        m = tiny_model(n_branches=2, seed=4)
        ys, x, _ = tiny_sample(m)
        perm = rng.permutation(m.p)
        q = m.copy()
        for net in q.branches + [q.trunk]:
            net.weights[-1] = net.weights[-1][:, perm]
            net.biases[-1] = net.biases[-1][perm]
        a, b = deeponet_eval(m, ys, x), deeponet_eval(q, ys, x)
        assert np.abs(a - b).max() < 1e-13 * max(1.0, np.abs(a).max())

    def test_dimension_checks(self):
        m = tiny_model(n_branches=2)
        with pytest.raises(ValueError):
            deeponet_eval(m, [np.zeros(4)], np.zeros((2, 1)))
        with pytest.raises(ValueError):
            deeponet_eval(m, [np.zeros(4), np.zeros(3)], np.zeros((2, 1)))
        with pytest.raises(ValueError):
            deeponet_eval(m, [np.zeros(4)] * 2, np.zeros((2, 2)))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), nb=st.integers(1, 3))
    def test_bilinear_in_branch_outputs(self, seed, nb):
        r = np.random.default_rng(seed)
        m = tiny_model(n_branches=nb, seed=seed % 1000)
        ys, x, _ = tiny_sample(m, seed)
        outs = [r.standard_normal(m.p) for _ in range(nb)]
        a, b = r.standard_normal((2, m.p))
        j = int(r.integers(nb))
        def ev(o):
            return deeponet_eval(with_branch_output(m, outs[:j] + [o] + outs[j + 1:]), ys, x)
        lhs, rhs = ev(a + b), ev(a) + ev(b)
        assert np.abs(lhs - rhs).max() < 1e-12 * max(1.0, np.abs(lhs).max())

    def test_resolution_independence(self):
        from dpcgnet.problems import Grid2D

        m = tiny_model(d=2, seed=2)
        ys, _, _ = tiny_sample(m)
        coarse, fine = Grid2D(5, 5, 1 / 6), Grid2D(11, 11, 1 / 12)
        fc = fine.coords
        shared = [fine.node_id(2 * i + 1, 2 * j + 1) for j in range(5) for i in range(5)]
        assert_allclose(fc[shared], coarse.coords, atol=1e-15)
        assert np.array_equal(deeponet_eval(m, ys, fc[shared]), deeponet_eval(m, ys, coarse.coords))
        out = deeponet_eval(m, ys, fc)
        assert np.array_equal(out[shared], deeponet_eval(m, ys, coarse.coords))


class TestGradCheck:
    def test_linear_model(self):
        # dyadic weights, inputs and step keep every float operation exact,
        # so only the quadratic structure of the loss is being tested
        m = tiny_model("identity", seed=1)
        r = np.random.default_rng(1)
        for net in m.nets():
            net.weights = [r.integers(-8, 9, W.shape) / 8.0 for W in net.weights]
            net.biases = [r.integers(-8, 9, b.shape) / 8.0 for b in net.biases]
        ys = [r.integers(-4, 5, 4) / 4.0]
        coords = r.integers(-4, 5, (8, 1)) / 4.0
        target = r.integers(-4, 5, 8) / 4.0
        assert grad_check(m, (ys, coords, target), 2.0**-14) < 1e-9

    def test_linear_model_generic(self):
        m = tiny_model("identity", seed=1)
        assert grad_check(m, tiny_sample(m), 1e-4) < 1e-7

    @pytest.mark.parametrize("nb,ta", [(1, False), (2, False), (1, True), (3, False)])
    def test_tanh(self, nb, ta):
        m = tiny_model("tanh", seed=2, n_branches=nb, time_augmented=ta, d=2)
        assert grad_check(m, tiny_sample(m), 1e-5) < 1e-4

    def test_relu(self):
        m = tiny_model("relu", seed=5)
        assert grad_check(m, tiny_sample(m), 1e-6) < 1e-4

    def test_zero_weights(self):
        m = tiny_model()
        for net in m.nets():
            for W in net.weights:
                W[...] = 0.0
        assert grad_check(m, tiny_sample(m), 1e-5) < 1e-6

    def test_default_architecture(self):
        m = DeepONetModel.create([32], 1, seed=0)
        assert grad_check(m, tiny_sample(m), 1e-5, n_weights=200) < 1e-4


class TestTraining:
    def _data(self, n=1, seed=0):
        return make_dataset("poisson1d", n, seed=seed, n=20, n_sensors=8)

    def test_overfit_single_sample(self):
        data = make_dataset("poisson1d", 1, seed=0, n=8, n_sensors=4)
        m = DeepONetModel.create([4], 1, p=8, hidden=(16, 16), seed=0)
        _, hist = train(m, data, lr=1e-3, max_epochs=10000, patience=10000)
        assert min(hist["train_loss"]) < 1e-6

    def test_zero_targets(self):
        data = self._data(4)
        data = Dataset(data.branch_inputs, data.coords, np.zeros_like(data.targets))
        m = DeepONetModel.create([8], 1, p=8, hidden=(8,), seed=0)
        trained, hist = train(m, data, lr=1e-3, max_epochs=50, patience=50)
        m0 = m.copy()
        m0.fit_normalization(data)
        assert m0.normalization["output_scale"] == 1.0
        pred = deeponet_eval(m0, [data.branch_inputs[0][hist["split"]["train"]]], data.coords)
        assert hist["train_loss"][0] == pytest.approx(np.mean(pred**2), rel=1e-12)
        assert hist["train_loss"][hist["best_epoch"]] < hist["train_loss"][0]

    def test_deterministic(self):
        data = self._data(10)
        m = DeepONetModel.create([8], 1, p=8, hidden=(8,), seed=0)
        _, h1 = train(m, data, lr=1e-3, max_epochs=40, seed=3)
        _, h2 = train(m, data, lr=1e-3, max_epochs=40, seed=3)
        assert h1["train_loss"] == h2["train_loss"] and h1["val_loss"] == h2["val_loss"]

    def test_best_not_worse_than_start(self):
        data = self._data(20)
        m = DeepONetModel.create([8], 1, p=8, hidden=(8,), seed=0)
        _, hist = train(m, data, lr=1e-3, max_epochs=200)
        b = hist["best_epoch"]
        assert hist["val_loss"][b] <= hist["val_loss"][0]
        assert len(hist["split"]["val"]) == 2

    def test_nan_aborts(self):
        data = self._data(3)
        data.targets[0, 0] = np.nan
        m = DeepONetModel.create([8], 1, p=4, hidden=(4,), seed=0)
        with pytest.raises(FloatingPointError, match="epoch 0"):
            train(m, data, fit_normalization=False, max_epochs=5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            train(DeepONetModel.create([5], 1, p=4, hidden=(4,)), self._data(2))


class TestSingularValues:
    def test_orthonormal(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((10, 10)))
        m = DeepONetModel.create([2], 1, p=10, hidden=(10,))
        # trunk maps node index j (one-hot coordinate) to row j of Q
        m.trunk = FFN([10, 10], "identity", [Q], [np.zeros(10)])
        m.d = 10
        m.normalization["coord_low"] = [-1.0] * 10
        m.normalization["coord_high"] = [1.0] * 10
        assert_allclose(trunk_singular_values(m, np.eye(10)), 1.0, atol=1e-12)

    def test_rank_one(self):
        m = DeepONetModel.create([2], 1, p=6, hidden=(6,))
        W = np.zeros((6, 6))
        b = np.linspace(1, 2, 6)
        m.trunk = FFN([1, 6, 6], "tanh", [np.ones((1, 6)), W + np.outer(np.ones(6), b)], [np.zeros(6), np.zeros(6)])
        s = trunk_singular_values(m, np.linspace(0.1, 1, 30)[:, None])
        assert np.all(s[1:] < 1e-10 * s[0])

    def test_descending(self):
        m = DeepONetModel.create([2], 1, seed=0)
        s = trunk_singular_values(m, np.linspace(0, 1, 100)[:, None])
        assert np.all(np.diff(s) <= 0) and s.size == m.p


class TestIO:
    def test_roundtrip(self, tmp_path):
        m = DeepONetModel.create([3, 2], 2, p=5, hidden=(4,), seed=9, time_augmented=True,
                                 branch_input_distribution={"kind": "uniform",
                                                            "params": {"low": [0.0], "high": [1.0]}})
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_model(m, a)
        loaded = load_model(a)
        save_model(loaded, b)
        assert a.read_bytes() == b.read_bytes()
        ys = [np.arange(3.0), np.ones(2)]
        x = np.random.default_rng(0).uniform(0, 1, (9, 3))
        assert np.array_equal(deeponet_eval(m, ys, x), deeponet_eval(loaded, ys, x))
        for w1, w2 in zip(m.params(), loaded.params()):
            assert np.array_equal(w1, w2)

    def test_fields(self):
        d = json.loads(model_to_json(tiny_model()))
        for key in ("format_version", "p", "d", "time_augmented", "branches", "trunk",
                    "normalization", "branch_input_distribution"):
            assert key in d
        assert set(d["trunk"]) == {"widths", "activation", "weights", "biases"}

    def test_truncated(self, tmp_path):
        p = tmp_path / "m.json"
        save_model(tiny_model(), p)
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(ModelFormatError, match="byte offset"):
            load_model(p)

    def test_version(self, tmp_path):
        d = json.loads(model_to_json(tiny_model()))
        d["format_version"] = 99
        p = tmp_path / "m.json"
        p.write_text(json.dumps(d))
        with pytest.raises(ModelFormatError, match="version"):
            load_model(p)

    def test_inconsistent(self, tmp_path):
        d = json.loads(model_to_json(tiny_model()))
        d["trunk"]["widths"][-1] = 3
        p = tmp_path / "m.json"
        p.write_text(json.dumps(d))
        with pytest.raises(ModelFormatError):
            load_model(p)


class TestSampler:
    def test_kinds(self):
        r = np.random.default_rng(0)
        u = sample_branch_inputs({"kind": "uniform", "params": {"low": [1.0], "high": [2.0]}}, r, 50)
        assert u[0].shape == (50, 1) and u[0].min() >= 1 and u[0].max() <= 2
        s = sample_branch_inputs({"kind": "sine_series",
                                  "params": {"modes": 3, "decay": 2, "sensors": [0.0, 0.5, 1.0]}}, r, 4)
        assert_allclose(s[0][:, [0, 2]], 0.0, atol=1e-14)
        g = sample_branch_inputs({"kind": "grf", "params": {
            "sensors": [[0.1, 0.1], [0.5, 0.5]],
            "branches": [{"mean": 0.0, "sigma": 1.0, "ell": 0.1},
                         {"mean": 0.0, "sigma": 1.0, "ell": 0.1, "transform": "exp"}]}}, r, 3)
        assert len(g) == 2 and np.all(g[1] > 0)

    def test_matches_dataset_distribution(self):
        data = make_dataset("poisson1d", 3, seed=5, n=20, n_sensors=8)
        r = np.random.default_rng(5)
        y = sample_branch_inputs(data.meta["distribution"], r, 3)[0]
        assert_allclose(y, data.branch_inputs[0])

    def test_errors(self):
        with pytest.raises(ValueError):
            sample_branch_inputs(None, 0, 1)
        with pytest.raises(ValueError):
            sample_branch_inputs({"kind": "poisson", "params": {}}, 0, 1)
