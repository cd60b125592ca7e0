"""Logistic GLM and tanh/softmax MLP with exact gradients, plus the weighted mixed losses.

Both model classes share one small protocol used by the trainers:

``forward(X) -> (out, cache)``, ``hard_nll(out, labels)``, ``soft_nll(out, Y)``,
``backward(cache, dout) -> flat grad`` and ``flat()`` / ``set_flat(v)``.

``hard_nll`` and ``soft_nll`` return the per-sample loss together with its
derivative with respect to ``out``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

LOG_FLOOR = -745.0


class LossGrad(NamedTuple):
    value: float
    grad: np.ndarray


# Logistic log-partition A(z) = log(1 + e^z) and its derivatives.

def log_partition(z):
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def log_partition_dd(z):
    s = sigmoid(z)
    return s * (1.0 - s)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    return np.maximum(out, LOG_FLOOR)


class GlmModel:
    """Binary logistic GLM, loss A(theta.x) - y theta.x with y in [0, 1]."""

    kind = "glm"

    def __init__(self, theta, intercept: bool = False):
        self.theta = np.array(theta, dtype=np.float64)
        self.intercept = bool(intercept)
        if self.theta.ndim != 1:
            raise ValueError("theta must be a vector")

    @classmethod
    def zeros(cls, d: int, intercept: bool = False) -> "GlmModel":
        return cls(np.zeros(d + int(intercept)), intercept)

    @property
    def n_classes(self) -> int:
        return 2

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def d(self) -> int:
        return self.theta.size - int(self.intercept)

    def flat(self) -> np.ndarray:
        return self.theta.copy()

    def set_flat(self, v) -> None:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != self.theta.shape:
            raise ValueError(f"expected {self.theta.size} parameters, got {v.shape}")
        self.theta = v.copy()

    def copy(self) -> "GlmModel":
        return GlmModel(self.theta, self.intercept)

    def _design(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.d:
            raise ValueError(f"expected {self.d} features, got {X.shape[1]}")
        if self.intercept:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        return X

    def forward(self, X):
        Xd = self._design(X)
        return Xd @ self.theta, Xd

    def hard_nll(self, z, labels):
        y = np.asarray(labels, dtype=np.float64)
        return log_partition(z) - y * z, sigmoid(z) - y

    def soft_nll(self, z, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        # A(z) - y z is linear in the label, so a soft label over {0,1}
        # enters through its total mass and its class-1 mass.
        mass = Y.sum(axis=1)
        y1 = Y[:, 1]
        return mass * log_partition(z) - y1 * z, mass * sigmoid(z) - y1

    def backward(self, Xd, dz) -> np.ndarray:
        return Xd.T @ np.asarray(dz, dtype=np.float64)

    def scores(self, X) -> np.ndarray:
        """Class scores [0, z]; argmax reproduces the logistic threshold at z > 0."""
        z, _ = self.forward(X)
        return np.stack([np.zeros_like(z), z], axis=1)

    def proba(self, X) -> np.ndarray:
        z, _ = self.forward(X)
        p1 = sigmoid(z)
        return np.stack([1.0 - p1, p1], axis=1)

    def to_dict(self) -> dict:
        return {"kind": "glm", "intercept": self.intercept, "params": self.theta.tolist()}


class MlpModel:
    """Fully connected tanh network with a softmax output layer."""

    kind = "mlp"

    def __init__(self, sizes: Sequence[int], params=None, rng: np.random.Generator | None = None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        self._shapes = list(zip(self.sizes[:-1], self.sizes[1:]))
        self.n_params = sum(a * b + b for a, b in self._shapes)
        if params is not None:
            self.set_flat(params)
        else:
            if rng is None:
                raise ValueError("either params or rng is required")
            self.weights, self.biases = [], []
            for fan_in, fan_out in self._shapes:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.biases.append(np.zeros(fan_out))

    @property
    def n_classes(self) -> int:
        return self.sizes[-1]

    @property
    def d(self) -> int:
        return self.sizes[0]

    def flat(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts += [W.ravel(), b]
        return np.concatenate(parts)

    def set_flat(self, v) -> None:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {v.shape}")
        self.weights, self.biases = [], []
        pos = 0
        for a, b in self._shapes:
            self.weights.append(v[pos:pos + a * b].reshape(a, b).copy())
            pos += a * b
            self.biases.append(v[pos:pos + b].copy())
            pos += b

    def copy(self) -> "MlpModel":
        return MlpModel(self.sizes, self.flat())

    def forward(self, X):
        h = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if h.shape[1] != self.d:
            raise ValueError(f"expected {self.d} features, got {h.shape[1]}")
        acts = [h]
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W + b
            h = a if k == last else np.tanh(a)
            acts.append(h)
        return h, acts

    def hard_nll(self, logits, labels):
        labels = np.asarray(labels, dtype=np.int64)
        logp = log_softmax(logits)
        rows = np.arange(len(labels))
        dout = np.exp(logp)
        dout[rows, labels] -= 1.0
        return -logp[rows, labels], dout

    def soft_nll(self, logits, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        logp = log_softmax(logits)
        p = np.exp(logp)
        return -np.sum(Y * logp, axis=1), Y.sum(axis=1, keepdims=True) * p - Y

    def backward(self, acts, dout) -> np.ndarray:
        grads_w, grads_b = [None] * len(self.weights), [None] * len(self.weights)
        delta = np.asarray(dout, dtype=np.float64)
        for k in range(len(self.weights) - 1, -1, -1):
            grads_w[k] = acts[k].T @ delta
            grads_b[k] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.weights[k].T) * (1.0 - acts[k] ** 2)
        parts = []
        for gW, gb in zip(grads_w, grads_b):
            parts += [gW.ravel(), gb]
        return np.concatenate(parts)

    def scores(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def proba(self, X) -> np.ndarray:
        return np.exp(log_softmax(self.scores(X)))

    def to_dict(self) -> dict:
        return {"kind": "mlp", "sizes": self.sizes, "params": self.flat().tolist()}


Model = GlmModel | MlpModel


def build_model(spec: dict, d: int, n_classes: int, rng: np.random.Generator) -> Model:
    kind = spec.get("kind", "mlp")
    if kind == "glm":
        if n_classes != 2:
            raise ValueError("the GLM supports binary labels only")
        return GlmModel.zeros(d, intercept=spec.get("intercept", True))
    if kind == "mlp":
        return MlpModel([d, *spec.get("hidden", [32]), n_classes], rng=rng)
    raise ValueError(f"unknown model kind {kind!r}")


def model_from_dict(d: dict) -> Model:
    if d["kind"] == "glm":
        return GlmModel(d["params"], d.get("intercept", False))
    if d["kind"] == "mlp":
        return MlpModel(d["sizes"], d["params"])
    raise ValueError(f"unknown model kind {d['kind']!r}")


def save_checkpoint(model: Model, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")


def load_checkpoint(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))


# Single-sample operations ------------------------------------------------------

def _soft_vector(model: Model, y) -> np.ndarray:
    """Class index or probability vector -> probability vector of length K."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 0:
        out = np.zeros(model.n_classes)
        out[int(y)] = 1.0
        return out
    if y.shape != (model.n_classes,):
        raise ValueError(f"label vector must have {model.n_classes} entries, got {y.shape}")
    return y


def glm_loss_grad(model: GlmModel, x, y: float, w: float = 1.0) -> LossGrad:
    z, Xd = model.forward(x)
    value = w * (log_partition(z[0]) - y * z[0])
    grad = w * (sigmoid(z[0]) - y) * Xd[0]
    return LossGrad(float(value), grad)


def mlp_forward(model: MlpModel, x) -> np.ndarray:
    return model.proba(x)[0]


def mlp_loss_grad(model: MlpModel, x, y_soft, w: float = 1.0) -> LossGrad:
    """Weighted soft-label cross-entropy -w * sum_k y_k log p_k(x)."""
    logits, acts = model.forward(x)
    nll, dout = model.soft_nll(logits, _soft_vector(model, y_soft)[None, :])
    return LossGrad(float(w * nll[0]), model.backward(acts, w * dout))


def soft_loss_grad(model: Model, x, y_soft, w: float = 1.0) -> LossGrad:
    out, cache = model.forward(x)
    nll, dout = model.soft_nll(out, _soft_vector(model, y_soft)[None, :])
    return LossGrad(float(w * nll[0]), model.backward(cache, w * dout))


def rmix_loss_grad(model: Model, x_tilde, y_i, y_j, lam: float, w_i: float, w_j: float) -> LossGrad:
    """w_i * lam * l(x~, y_i) + w_j * (1 - lam) * l(x~, y_j) at one mixed input."""
    out, cache = model.forward(x_tilde)
    li, di = model.soft_nll(out, _soft_vector(model, y_i)[None, :])
    lj, dj = model.soft_nll(out, _soft_vector(model, y_j)[None, :])
    a = w_i * lam
    b = w_j * (1.0 - lam)
    value = a * li[0] + b * lj[0]
    return LossGrad(float(value), model.backward(cache, a * di + b * dj))


def prop1_weights(lam: float, w_i: float, w_j: float, y_i, y_j, k: int):
    """Combined weight w_bar and reweighted soft label y_bar of the equivalent single loss."""
    yi = np.asarray(y_i, dtype=np.float64)
    yj = np.asarray(y_j, dtype=np.float64)
    if yi.ndim == 0:
        yi = np.eye(k)[int(yi)]
    if yj.ndim == 0:
        yj = np.eye(k)[int(yj)]
    w_bar = w_i * lam + w_j * (1.0 - lam)
    y_bar = (w_i * lam / w_bar) * yi + (w_j * (1.0 - lam) / w_bar) * yj
    return w_bar, y_bar


def prop1_loss_grad(model: Model, x_tilde, y_i, y_j, lam: float, w_i: float, w_j: float) -> LossGrad:
    w_bar, y_bar = prop1_weights(lam, w_i, w_j, y_i, y_j, model.n_classes)
    return soft_loss_grad(model, x_tilde, y_bar, w_bar)


def predict(model: Model, X) -> np.ndarray | int:
    """Argmax class; ties go to the lower class index."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    pred = np.argmax(model.scores(X), axis=1)  # argmax returns the first maximum
    return int(pred[0]) if single else pred


def per_sample_loss(model: Model, X, labels) -> np.ndarray:
    out, _ = model.forward(X)
    return model.hard_nll(out, labels)[0]


# Batched form used by the trainers -------------------------------------------------

def batch_rmix_loss_grad(model: Model, X_tilde, y_i, y_j, lam, w_i, w_j):
    """Mean over the batch of the per-pair weighted mixed loss; ``lam`` may be per-sample."""
    out, cache = model.forward(X_tilde)
    li, di = model.hard_nll(out, y_i)
    lj, dj = model.hard_nll(out, y_j)
    n = len(li)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    a = np.broadcast_to(np.asarray(w_i, dtype=np.float64), (n,)) * lam
    b = np.broadcast_to(np.asarray(w_j, dtype=np.float64), (n,)) * (1.0 - lam)
    value = float(np.sum(a * li + b * lj) / n)
    if di.ndim == 2:
        dout = a[:, None] * di + b[:, None] * dj
    else:
        dout = a * di + b * dj
    return value, model.backward(cache, dout / n)
