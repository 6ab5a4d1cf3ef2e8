"""A small multi-input DeepONet in plain numpy.

The model combines ``N_b`` branch networks with one trunk network::

    u(xi) = s * sum_q  B^1_q(y^1) * ... * B^Nb_q(y^Nb) * T_q(xi)

where ``s`` is a stored output scale. Coordinates are mapped to ``[-1, 1]``
and branch inputs standardized before entering the networks; both maps are
part of the model and travel with it in the JSON file.

Backpropagation is written out by hand for the fixed FFN topology and is
covered by :func:`grad_check`.
"""

import copy
import json

import numpy as np

from .sparse import dense_sym_eig

__all__ = [
    "FFN",
    "DeepONetModel",
    "ModelFormatError",
    "ffn_forward",
    "deeponet_eval",
    "train",
    "grad_check",
    "trunk_singular_values",
    "save_model",
    "load_model",
    "sample_branch_inputs",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1

_ACT = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(np.float64)),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}


class ModelFormatError(ValueError):
    """Malformed or incompatible model file."""


class FFN:
    """Fully connected network, ``x @ W + b`` per layer, linear last layer.

    Parameters
    ----------
    widths : list of int
        Layer widths including input and output, e.g. ``[2, 64, 64, 64]``.
    activation : {"tanh", "relu", "identity"}
        Hidden-layer activation.
    weights, biases : list of ndarray
        ``weights[l]`` has shape ``(widths[l], widths[l+1])``.
    """

    def __init__(self, widths, activation="tanh", weights=None, biases=None):
        self.widths = [int(w) for w in widths]
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"invalid FFN widths {widths}")
        if activation not in _ACT:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        if weights is None:
            weights = [np.zeros((a, b)) for a, b in zip(self.widths[:-1], self.widths[1:])]
        if biases is None:
            biases = [np.zeros(b) for b in self.widths[1:]]
        self.weights = [np.array(W, dtype=np.float64) for W in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.widths[l], self.widths[l + 1]) or b.shape != (self.widths[l + 1],):
                raise ValueError(f"layer {l} shape does not chain with widths {self.widths}")

    @classmethod
    def xavier(cls, widths, activation="tanh", rng=None):
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(rng)
        weights = []
        for a, b in zip(widths[:-1], widths[1:]):
            lim = np.sqrt(6.0 / (a + b))
            weights.append(rng.uniform(-lim, lim, size=(a, b)))
        return cls(widths, activation, weights)

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, X, keep=False):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_in:
            raise ValueError(f"FFN expects input width {self.n_in}, got {X.shape[-1]}")
        act = _ACT[self.activation][0]
        a = X
        cache = [(None, a)]
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = z if l == last else act(z)
            if keep:
                cache.append((z, a))
        return (a, cache) if keep else a

    def backward(self, cache, dout):
        """Gradients ``[dW0, db0, dW1, db1, ...]`` and the input gradient."""
        dact = _ACT[self.activation][1]
        grads = [None] * (2 * len(self.weights))
        delta = dout
        for l in range(len(self.weights) - 1, -1, -1):
            a_prev = cache[l][1]
            grads[2 * l] = a_prev.T @ delta
            grads[2 * l + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[l].T
            if l > 0:
                z_prev, a_prev_act = cache[l]
                delta = delta * dact(z_prev, a_prev_act)
        return grads, delta

    def to_dict(self):
        return {
            "widths": self.widths,
            "activation": self.activation,
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        widths = d["widths"]
        weights = [
            np.array(w, dtype=np.float64).reshape(widths[l], widths[l + 1])
            for l, w in enumerate(d["weights"])
        ]
        return cls(widths, d["activation"], weights, d["biases"])


def ffn_forward(net, x):
    """Evaluate ``net`` on a single input vector (or a batch of rows)."""
    x = np.asarray(x, dtype=np.float64)
    out = net.forward(x)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite FFN output")
    return out


class DeepONetModel:
    """Branch/trunk networks plus the input maps that feed them.

    ``normalization`` holds ``coord_low``/``coord_high`` (trunk input box),
    ``branch_mean``/``branch_std`` (one list per branch) and ``output_scale``.
    ``branch_input_distribution`` describes how training branch inputs were
    drawn; :func:`sample_branch_inputs` reproduces it.
    """

    def __init__(self, branches, trunk, d, time_augmented=False, normalization=None,
                 branch_input_distribution=None):
        self.branches = list(branches)
        self.trunk = trunk
        self.d = int(d)
        self.time_augmented = bool(time_augmented)
        p = trunk.n_out
        if any(b.n_out != p for b in self.branches):
            raise ValueError("every branch must end with the trunk's width p")
        if self.d not in (1, 2, 3):
            raise ValueError("spatial dimension must be 1, 2 or 3")
        if trunk.n_in != self.d + int(self.time_augmented):
            raise ValueError(
                f"trunk input width {trunk.n_in} does not match d={self.d}"
                f"{' + time' if self.time_augmented else ''}"
            )
        norm = {} if normalization is None else dict(normalization)
        dim = trunk.n_in
        norm.setdefault("coord_low", [-1.0] * dim)
        norm.setdefault("coord_high", [1.0] * dim)
        norm.setdefault("branch_mean", [[0.0] * b.n_in for b in self.branches])
        norm.setdefault("branch_std", [[1.0] * b.n_in for b in self.branches])
        norm.setdefault("output_scale", 1.0)
        self.normalization = norm
        self.branch_input_distribution = branch_input_distribution

    @classmethod
    def create(cls, sensor_counts, d, p=64, hidden=(64, 64), time_augmented=False,
               activation="tanh", seed=0, **kw):
        """Xavier-initialized model: branches ``[ny_b, *hidden, p]``, trunk
        ``[d (+1), *hidden, p]``."""
        rng = np.random.default_rng(seed)
        branches = [FFN.xavier([ny, *hidden, p], activation, rng) for ny in sensor_counts]
        trunk = FFN.xavier([d + int(time_augmented), *hidden, p], activation, rng)
        return cls(branches, trunk, d, time_augmented, **kw)

    @property
    def p(self):
        return self.trunk.n_out

    @property
    def n_branches(self):
        return len(self.branches)

    @property
    def sensor_counts(self):
        return [b.n_in for b in self.branches]

    def nets(self):
        return self.branches + [self.trunk]

    def params(self):
        out = []
        for net in self.nets():
            out += net.params()
        return out

    def copy(self):
        return copy.deepcopy(self)

    # input maps
    def normalize_coords(self, coords):
        coords = np.asarray(coords, dtype=np.float64)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.shape[1] != self.trunk.n_in:
            raise ValueError(f"coordinates must have {self.trunk.n_in} columns, got {coords.shape[1]}")
        lo = np.asarray(self.normalization["coord_low"])
        hi = np.asarray(self.normalization["coord_high"])
        span = np.where(hi > lo, hi - lo, 1.0)
        return 2.0 * (coords - lo) / span - 1.0

    def normalize_branch(self, b, y):
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if y.shape[1] != self.branches[b].n_in:
            raise ValueError(
                f"branch {b} expects {self.branches[b].n_in} inputs, got {y.shape[1]}"
            )
        mu = np.asarray(self.normalization["branch_mean"][b])
        sd = np.asarray(self.normalization["branch_std"][b])
        return (y - mu) / sd

    def fit_normalization(self, data):
        """Set the input maps and output scale from a dataset."""
        c = np.asarray(data.coords, dtype=np.float64)
        c = c[:, None] if c.ndim == 1 else c
        self.normalization["coord_low"] = c.min(axis=0).tolist()
        self.normalization["coord_high"] = c.max(axis=0).tolist()
        means, stds = [], []
        for y in data.branch_inputs:
            mu = y.mean(axis=0)
            sd = y.std(axis=0)
            sd = np.where(sd > 1e-12 * max(1.0, np.abs(mu).max()), sd, 1.0)
            means.append(mu.tolist())
            stds.append(sd.tolist())
        self.normalization["branch_mean"] = means
        self.normalization["branch_std"] = stds
        scale = float(np.sqrt(np.mean(np.asarray(data.targets) ** 2)))
        self.normalization["output_scale"] = scale if scale > 0 else 1.0

    # evaluation
    def trunk_basis(self, coords):
        """Trunk outputs ``T_q(xi)`` at every coordinate, shape ``(m, p)``."""
        return self.trunk.forward(self.normalize_coords(coords))

    def branch_coefficients(self, branch_inputs):
        """Mode coefficients ``prod_b B^b(y^b)``, shape ``(N, p)``."""
        if len(branch_inputs) != self.n_branches:
            raise ValueError(f"model has {self.n_branches} branches, got {len(branch_inputs)} inputs")
        coef = None
        for b, (net, y) in enumerate(zip(self.branches, branch_inputs)):
            out = net.forward(self.normalize_branch(b, y))
            coef = out if coef is None else coef * out
        return coef

    def predict(self, branch_inputs, coords):
        """Batched prediction, shape ``(N, m)``."""
        T = self.trunk_basis(coords)
        C = self.branch_coefficients(branch_inputs)
        return self.normalization["output_scale"] * (C @ T.T)


def deeponet_eval(model, branch_inputs, coords):
    """DeepONet output at ``coords`` for one set of branch inputs.

    Returns a vector of length ``len(coords)``; a batch of branch inputs
    (2-D arrays) gives a matrix with one row per sample.
    """
    single = all(np.ndim(y) <= 1 for y in branch_inputs)
    out = model.predict(branch_inputs, coords)
    return out[0] if single else out


# ---------------------------------------------------------------- training

def _loss_and_grads(model, branch_inputs, T_cache, targets_n):
    """Mean squared misfit on normalized targets and its parameter gradients."""
    T, t_cache = T_cache
    outs, caches = [], []
    for b, (net, y) in enumerate(zip(model.branches, branch_inputs)):
        o, c = net.forward(model.normalize_branch(b, y), keep=True)
        outs.append(o)
        caches.append(c)
    C = outs[0].copy()
    for o in outs[1:]:
        C = C * o
    R = C @ T.T - targets_n
    N, m = R.shape
    loss = float(np.sum(R * R) / (N * m))
    G = 2.0 * R / (N * m)
    dC = G @ T
    dT = G.T @ C
    grads = []
    for b, net in enumerate(model.branches):
        others = np.ones_like(C)
        for bb, o in enumerate(outs):
            if bb != b:
                others = others * o
        g, _ = net.backward(caches[b], dC * others)
        grads += g
    g, _ = model.trunk.backward(t_cache, dT)
    grads += g
    return loss, grads


def _batch_loss(model, branch_inputs, T, targets_n):
    C = model.branch_coefficients(branch_inputs)
    R = C @ T.T - targets_n
    return float(np.mean(R * R))


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(model, data, lr=1e-4, batch=None, patience=2000, max_epochs=10000, seed=0,
          val_fraction=0.1, fit_normalization=True, verbose=False):
    """Fit ``model`` to ``data`` with Adam on the mean squared misfit.

    Samples are split ``1 - val_fraction`` / ``val_fraction`` (seeded); with a
    single sample the training set doubles as validation set. Training stops
    after ``max_epochs`` or when the validation loss has not improved for
    ``patience`` epochs, and the weights of the best validation epoch are
    returned.

    Returns
    -------
    model : DeepONetModel
        A trained copy; the input model is not modified.
    history : dict
        ``train_loss`` and ``val_loss`` per epoch, ``best_epoch``, ``split``.
    """
    if data.n_samples < 1:
        raise ValueError("empty dataset")
    if [y.shape[1] for y in data.branch_inputs] != model.sensor_counts:
        raise ValueError("dataset branch inputs do not match the model's branches")
    model = model.copy()
    if fit_normalization:
        model.fit_normalization(data)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n_samples)
    n_val = int(round(val_fraction * data.n_samples)) if data.n_samples > 1 else 0
    val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    if n_val == 0:
        val_idx = tr_idx
    scale = model.normalization["output_scale"]
    Y = np.asarray(data.targets, dtype=np.float64) / scale
    Xc = model.normalize_coords(data.coords)
    ys = data.branch_inputs
    batch = min(1000, tr_idx.size) if batch is None else min(int(batch), tr_idx.size)

    params = model.params()
    opt = _Adam(params, lr)
    history = {"train_loss": [], "val_loss": [], "best_epoch": 0,
               "split": {"train": tr_idx.tolist(), "val": val_idx.tolist()}}
    best = (np.inf, [p.copy() for p in params], 0)
    for epoch in range(max_epochs):
        order = tr_idx[rng.permutation(tr_idx.size)]
        epoch_loss = 0.0
        for start in range(0, order.size, batch):
            idx = order[start:start + batch]
            T, tc = model.trunk.forward(Xc, keep=True)
            loss, grads = _loss_and_grads(model, [y[idx] for y in ys], (T, tc), Y[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            opt.step(grads)
            epoch_loss += loss * idx.size
        T = model.trunk.forward(Xc)
        val = _batch_loss(model, [y[val_idx] for y in ys], T, Y[val_idx])
        history["train_loss"].append(epoch_loss / order.size)
        history["val_loss"].append(val)
        if val < best[0]:
            best = (val, [p.copy() for p in params], epoch)
        elif epoch - best[2] >= patience:
            break
        if verbose and epoch % 1000 == 0:
            print(f"epoch {epoch:6d}  train {history['train_loss'][-1]:.3e}  val {val:.3e}")
    for p, b in zip(params, best[1]):
        p[...] = b
    history["best_epoch"] = best[2]
    return model, history


def grad_check(model, sample, epsilon=1e-5, n_weights=200, seed=0):
    """Compare backprop gradients with central differences.

    ``sample`` is ``(branch_inputs, coords, target)`` for a single sample;
    the loss is the mean squared misfit against the target (in model output
    units divided by the output scale). The relative error of each checked
    weight uses ``max(|g|, 1e-8)`` as denominator.

    Returns
    -------
    float
        Largest relative error over the checked weights.
    """
    branch_inputs, coords, target = sample
    branch_inputs = [np.atleast_2d(np.asarray(y, dtype=np.float64)) for y in branch_inputs]
    target = np.atleast_2d(np.asarray(target, dtype=np.float64)) / model.normalization["output_scale"]
    Xc = model.normalize_coords(coords)
    params = model.params()

    def loss():
        T = model.trunk.forward(Xc)
        return _batch_loss(model, branch_inputs, T, target)

    T, tc = model.trunk.forward(Xc, keep=True)
    _, grads = _loss_and_grads(model, branch_inputs, (T, tc), target)
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = np.arange(total) if total <= n_weights else rng.choice(total, n_weights, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in np.sort(picks):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        j = flat - offsets[k]
        p = params[k].reshape(-1)
        old = p[j]
        p[j] = old + epsilon
        lp = loss()
        p[j] = old - epsilon
        lm = loss()
        p[j] = old
        num = (lp - lm) / (2.0 * epsilon)
        ana = grads[k].reshape(-1)[j]
        worst = max(worst, abs(ana - num) / max(abs(ana), 1e-8))
    return worst


def trunk_singular_values(model, coords):
    """Singular values of the ``(m, p)`` trunk matrix, descending.

    The Gram matrix ``T^T T`` squares the condition number, so values below
    about ``sqrt(eps) sigma_1`` drown in roundoff. Instead ``T`` is reduced
    to its triangular QR factor ``R`` and the cyclic Jacobi solver is run on
    the symmetric augmented matrix ``[[0, R], [R^T, 0]]``, whose eigenvalues
    are ``+-sigma`` (plus zeros). The ``p`` largest are returned, clipped at
    0, so the spectrum is resolved down to ``eps sigma_1``.
    """
    T = model.trunk_basis(coords)
    R = np.linalg.qr(T, mode="r")
    q, p = R.shape
    B = np.zeros((q + p, q + p))
    B[:q, q:] = R
    B[q:, :q] = R.T
    w, _ = dense_sym_eig(B)
    return np.clip(np.sort(w)[::-1][:p], 0.0, None)


# -------------------------------------------------------------- branch sampler

def sample_branch_inputs(dist, rng, size):
    """Draw ``size`` branch-input sets from a stored distribution description.

    Supported ``dist["kind"]`` values:

    ``uniform``
        ``params = {"low": [...], "high": [...]}``; one branch whose inputs
        are independent uniforms.
    ``sine_series``
        ``params = {"modes": M, "decay": a, "sensors": [...]}``; one branch
        holding ``f(x) = sum_m c_m sin(m pi x)`` at the sensors with
        ``c_m ~ N(0, m^-a)``.
    ``grf``
        ``params = {"sensors": [[x, y], ...], "branches": [{"mean", "sigma",
        "ell", "transform"}, ...]}``; one branch per field, each a Gaussian
        random field at the sensor points, optionally exponentiated.

    Returns a list with one ``(size, ny_b)`` array per branch.
    """
    if dist is None:
        raise ValueError("model carries no branch-input distribution metadata")
    kind, params = dist["kind"], dist["params"]
    rng = np.random.default_rng(rng)
    if kind == "uniform":
        lo, hi = np.asarray(params["low"], float), np.asarray(params["high"], float)
        return [rng.uniform(lo, hi, size=(size, lo.size))]
    if kind == "sine_series":
        x = np.asarray(params["sensors"], float)
        m = np.arange(1, int(params["modes"]) + 1)
        c = rng.standard_normal((size, m.size)) * m ** (-0.5 * float(params["decay"]))
        return [c @ np.sin(np.pi * np.outer(m, x))]
    if kind == "grf":
        from .problems import sample_grf

        sensors = np.asarray(params["sensors"], float)
        out = []
        for spec in params["branches"]:
            vals = sample_grf(sensors, spec["mean"], spec["sigma"], spec["ell"], rng, size=size)
            if spec.get("transform", "identity") == "exp":
                vals = np.exp(vals)
            out.append(vals)
        return out
    raise ValueError(f"unknown branch-input distribution {kind!r}")


# ------------------------------------------------------------------- file I/O

def _model_dict(model):
    return {
        "format_version": FORMAT_VERSION,
        "p": model.p,
        "d": model.d,
        "time_augmented": model.time_augmented,
        "branches": [b.to_dict() for b in model.branches],
        "trunk": model.trunk.to_dict(),
        "normalization": model.normalization,
        "branch_input_distribution": model.branch_input_distribution,
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def model_to_json(model):
    return json.dumps(_jsonable(_model_dict(model)), separators=(",", ":"))


def model_from_json(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model file at byte offset {exc.pos}: {exc.msg}") from exc
    if not isinstance(d, dict) or "format_version" not in d:
        raise ModelFormatError("model file lacks format_version")
    if d["format_version"] != FORMAT_VERSION:
        raise ModelFormatError(
            f"model format version {d['format_version']} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        branches = [FFN.from_dict(b) for b in d["branches"]]
        trunk = FFN.from_dict(d["trunk"])
        model = DeepONetModel(branches, trunk, d["d"], d["time_augmented"], d["normalization"],
                              d.get("branch_input_distribution"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"inconsistent model file: {exc}") from exc
    if model.p != d["p"]:
        raise ModelFormatError(f"declared p={d['p']} but networks end with width {model.p}")
    return model


def save_model(model, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(model_to_json(model))


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"model file is not ASCII JSON (byte offset {exc.start})") from exc
    return model_from_json(text)
