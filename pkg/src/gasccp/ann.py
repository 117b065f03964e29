"""Feedforward ReLU network trained with RMSprop, written against numpy only.

Layer ``l`` maps ``x -> x @ W[l] + b[l]`` with ``W[l]`` of shape
(N_{l-1}, N_l); hidden layers apply ReLU, the output layer is affine. Inputs
and targets are standardized with statistics of the training split, which are
stored with the model so :meth:`Mlp.predict` works in physical units.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Mlp",
    "TrainConfig",
    "Dataset",
    "TrainingDiverged",
    "forward",
    "backward",
    "rmsprop_step",
    "train",
    "evaluate_mae",
    "dummy_mean_predictor",
    "save_models",
    "load_models",
]

FORMAT_TAG = "gasccp-mlp"
FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_mean: np.ndarray | None = None
    y_scale: np.ndarray | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("one bias vector per weight matrix")
        if len(self.weights) < 2:
            raise ValueError("need at least one hidden layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {k}: weight {W.shape} and bias {b.shape} disagree")
            if k and W.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k} input width does not match layer {k - 1} output")
        n_in, n_out = self.layer_sizes[0], self.layer_sizes[-1]
        self.x_mean = np.zeros(n_in) if self.x_mean is None else np.asarray(self.x_mean, float)
        self.x_scale = np.ones(n_in) if self.x_scale is None else np.asarray(self.x_scale, float)
        self.y_mean = np.zeros(n_out) if self.y_mean is None else np.asarray(self.y_mean, float)
        self.y_scale = np.ones(n_out) if self.y_scale is None else np.asarray(self.y_scale, float)

    @classmethod
    def init(cls, layer_sizes: Sequence[int], seed: int = 0) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (n_in + n_out))
            weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "Mlp":
        return Mlp(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases],
            self.x_mean.copy(), self.x_scale.copy(), self.y_mean.copy(), self.y_scale.copy(),
        )

    def normalize_inputs(self, x):
        return (np.asarray(x, float) - self.x_mean) / self.x_scale

    def denormalize_inputs(self, z):
        return np.asarray(z, float) * self.x_scale + self.x_mean

    def normalize_targets(self, y):
        return (np.asarray(y, float) - self.y_mean) / self.y_scale

    def denormalize_targets(self, z):
        return np.asarray(z, float) * self.y_scale + self.y_mean

    def predict(self, x) -> np.ndarray:
        return self.denormalize_targets(forward(self, self.normalize_inputs(x)))

    __call__ = predict

    def fit_normalization(self, inputs, targets) -> None:
        def stats(a):
            mu = a.mean(axis=0)
            sd = a.std(axis=0)
            return mu, np.where(sd > 1e-12, sd, 1.0)

        self.x_mean, self.x_scale = stats(np.asarray(inputs, float))
        self.y_mean, self.y_scale = stats(np.asarray(targets, float))


def _relu(z):
    return np.maximum(z, 0.0)


def _check_input(model: Mlp, x: np.ndarray):
    if x.shape[-1] != model.layer_sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} != {model.layer_sizes[0]}")


def forward(model: Mlp, x) -> np.ndarray:
    """Raw network output for (normalized) input ``x``; vector or batch."""
    a = np.asarray(x, float)
    _check_input(model, a)
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ W + b
        if k < last:
            a = _relu(a)
    return a


def backward(model: Mlp, x, target) -> list[np.ndarray]:
    """Gradients of 0.5 * mean squared error, ordered like :meth:`Mlp.params`.

    The mean runs over samples and output components. The ReLU derivative at
    exactly zero is taken as 0.
    """
    x = np.atleast_2d(np.asarray(x, float))
    target = np.atleast_2d(np.asarray(target, float))
    _check_input(model, x)
    if target.shape != (x.shape[0], model.layer_sizes[-1]):
        raise ValueError(f"target shape {target.shape} does not match the output layer")
    acts, pre = [x], []
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ W + b
        pre.append(z)
        acts.append(_relu(z) if k < last else z)
    delta = (acts[-1] - target) / target.size
    gW, gb = [None] * len(model.weights), [None] * len(model.weights)
    for k in range(last, -1, -1):
        gW[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ model.weights[k].T) * (pre[k - 1] > 0)
    return [*gW, *gb]


def loss(model: Mlp, x, target) -> float:
    """0.5 * mean squared error of raw outputs."""
    r = forward(model, x) - np.asarray(target, float)
    return 0.5 * float(np.mean(r**2))


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 1e-2
    epsilon: float = 1e-8
    decay: float = 0.9
    epochs: int = 300
    batch_size: int = 32
    seed: int = 0
    hidden: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def rmsprop_step(params, grads, state, config: TrainConfig):
    """One RMSprop update; returns (new params, new state), inputs untouched.

    v <- decay * v + (1 - decay) * g^2
    p <- p - eta * g / sqrt(v + epsilon)
    """
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, state):
        v = config.decay * v + (1.0 - config.decay) * g * g
        new_v.append(v)
        new_p.append(p - config.eta * g / np.sqrt(v + config.epsilon))
    return new_p, new_v


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, float))
        self.targets = np.atleast_2d(np.asarray(self.targets, float))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets need the same number of rows")
        if self.train_idx is None:
            self.train_idx = np.arange(len(self))
        if self.test_idx is None:
            self.test_idx = np.arange(0)

    def __len__(self):
        return self.inputs.shape[0]

    def split(self, test_fraction: float = 0.2, seed: int = 0) -> "Dataset":
        n = len(self)
        n_test = int(round(test_fraction * n))
        if n_test < 1 or n_test >= n:
            raise ValueError(f"a {test_fraction:.0%} split of {n} rows leaves an empty side")
        perm = np.random.default_rng(seed).permutation(n)
        return Dataset(self.inputs, self.targets, np.sort(perm[n_test:]), np.sort(perm[:n_test]), dict(self.meta))

    def columns(self, cols) -> "Dataset":
        return Dataset(self.inputs, self.targets[:, cols], self.train_idx, self.test_idx, dict(self.meta))

    @property
    def train(self):
        return self.inputs[self.train_idx], self.targets[self.train_idx]

    @property
    def test(self):
        return self.inputs[self.test_idx], self.targets[self.test_idx]


def train(model: Mlp, data: Dataset, config: TrainConfig) -> tuple[Mlp, list[float]]:
    """Minibatch RMSprop on standardized data; returns (trained copy, per-epoch MSE)."""
    if len(data.train_idx) == 0:
        raise ValueError("empty training split")
    x, y = data.train
    if x.shape[1] != model.layer_sizes[0] or y.shape[1] != model.layer_sizes[-1]:
        raise ValueError("model dimensions do not match the dataset")
    model = model.copy()
    if config.epochs == 0:
        return model, []
    model.fit_normalization(x, y)
    xn, yn = model.normalize_inputs(x), model.normalize_targets(y)
    params = model.params()
    state = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(config.seed)
    n_layers = len(model.weights)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(xn))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            grads = backward(model, xn[batch], yn[batch])
            params, state = rmsprop_step(params, grads, state, config)
            model.weights, model.biases = params[:n_layers], params[n_layers:]
        mse = float(np.mean((forward(model, xn) - yn) ** 2))
        if not np.isfinite(mse):
            raise TrainingDiverged(f"training loss became {mse} after {len(history) + 1} epochs")
        history.append(mse)
    return model, history


def evaluate_mae(predictor: Callable, data: Dataset) -> tuple[np.ndarray, float]:
    """Mean absolute error on the test split, per output and averaged."""
    if len(data.test_idx) == 0:
        raise ValueError("empty test split")
    x, y = data.test
    pred = np.atleast_2d(predictor(x))
    per_output = np.mean(np.abs(pred - y), axis=0)
    return per_output, float(per_output.mean())


def dummy_mean_predictor(network, horizon: int = 1) -> Callable:
    """Always predicts the midpoint of each node's pressure bounds."""
    mid = np.tile(0.5 * (network.pi_min + network.pi_max), horizon)

    def predict(x):
        x = np.atleast_2d(np.asarray(x, float))
        return np.broadcast_to(mid, (x.shape[0], mid.size)).copy()

    return predict


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_models(models: Sequence[Mlp]) -> str:
    """Text serialization: header, then per model its layer sizes,
    normalization constants and row-major weights/biases in decimal."""
    out = io.StringIO()
    out.write(f"{FORMAT_TAG} {FORMAT_VERSION}\n")
    out.write(f"models {len(models)}\n")
    for m in models:
        out.write("layers " + " ".join(str(s) for s in m.layer_sizes) + "\n")
        out.write(f"x_mean {_fmt(m.x_mean)}\n")
        out.write(f"x_scale {_fmt(m.x_scale)}\n")
        out.write(f"y_mean {_fmt(m.y_mean)}\n")
        out.write(f"y_scale {_fmt(m.y_scale)}\n")
        for k, (W, b) in enumerate(zip(m.weights, m.biases)):
            for row in W:
                out.write(f"W{k} {_fmt(row)}\n")
            out.write(f"b{k} {_fmt(b)}\n")
    return out.getvalue()


def load_models(text: str) -> list[Mlp]:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != [FORMAT_TAG, str(FORMAT_VERSION)]:
        raise ValueError("not a gasccp model file (or unsupported version)")
    pos = 1

    def take(tag):
        nonlocal pos
        if pos >= len(lines) or lines[pos][0] != tag:
            raise ValueError(f"expected '{tag}' at line {pos + 1}")
        vals = lines[pos][1:]
        pos += 1
        return vals

    count = int(take("models")[0])
    models = []
    for _ in range(count):
        sizes = [int(v) for v in take("layers")]
        stats = [np.array(take(tag), float) for tag in ("x_mean", "x_scale", "y_mean", "y_scale")]
        weights, biases = [], []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            weights.append(np.array([take(f"W{k}") for _ in range(n_in)], float).reshape(n_in, n_out))
            biases.append(np.array(take(f"b{k}"), float))
        models.append(Mlp(weights, biases, *stats))
    return models
