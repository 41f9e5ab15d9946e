"""Small fully-connected networks with hand-rolled reverse-mode gradients.

Used by the toy lab for prediction and latent extraction, and reused by the
flow module for its optimizer and initialization helpers.  Hidden layers are
ReLU; the head is either an identity map (regression) or softmax over K
classes (classification).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadLayerIndexError, DivergedError
from .linalg import FeatureMatrix, as_matrix

REGRESSION = "regression"
CLASSIFICATION = "classification"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Adam:
    """Adam with decoupled weight decay, updating parameters in place."""

    def __init__(self, params, learning_rate, weight_decay=0.0,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = learning_rate
        self.wd = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.wd:
                p *= 1.0 - self.lr * self.wd
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class MlpModel:
    """Feed-forward ReLU network with stored per-layer weights."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str = REGRESSION

    @property
    def n_hidden(self) -> int:
        return len(self.layer_dims) - 2

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head=self.head,
        )


def mlp_init(layer_dims, head=REGRESSION, seed=0) -> MlpModel:
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    rng = np.random.default_rng(seed)
    weights = [glorot_uniform(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return MlpModel(layer_dims=dims, weights=weights, biases=biases, head=head)


def _forward(model: MlpModel, x: np.ndarray):
    """Returns (raw output, list of post-activation hidden layers)."""
    acts = []
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
        acts.append(a)
    out = a @ model.weights[-1] + model.biases[-1]
    return out, acts


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def mlp_predict(model: MlpModel, x) -> np.ndarray:
    """Network output: raw values (regression) or softmax probabilities."""
    out, _ = _forward(model, as_matrix(x))
    if model.head == CLASSIFICATION:
        return softmax(out)
    return out


def latent_extract(model: MlpModel, layer_index: int, inputs, source: str = "") -> FeatureMatrix:
    """Post-activation outputs of hidden layer ``layer_index``, one row per
    input.  The penultimate layer is ``model.n_hidden - 1``."""
    if not 0 <= layer_index < model.n_hidden:
        raise BadLayerIndexError(
            f"layer_index {layer_index} outside [0, {model.n_hidden})"
        )
    _, acts = _forward(model, as_matrix(inputs))
    return FeatureMatrix(acts[layer_index], layer=layer_index, source=source)


def _loss_and_grad_out(model, out, y):
    """Head loss and its gradient w.r.t. the raw network output."""
    n = out.shape[0]
    if model.head == CLASSIFICATION:
        probs = softmax(out)
        picked = probs[np.arange(n), y]
        loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
        grad = probs
        grad[np.arange(n), y] -= 1.0
        return loss, grad / n
    diff = out - y
    loss = float(np.mean(diff**2))
    return loss, 2.0 * diff / diff.size


def _backward(model, x, acts, grad_out):
    """Gradients of the loss w.r.t. every weight and bias."""
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    upstream = grad_out
    for l in range(len(model.weights) - 1, -1, -1):
        a_in = acts[l - 1] if l > 0 else x
        grads_w[l] = a_in.T @ upstream
        grads_b[l] = upstream.sum(axis=0)
        if l > 0:
            upstream = (upstream @ model.weights[l].T) * (acts[l - 1] > 0)
    return grads_w, grads_b


def mlp_loss_gradients(model: MlpModel, x, y):
    """(loss, weight grads, bias grads) for a batch; reverse mode."""
    x = as_matrix(x)
    out, acts = _forward(model, x)
    loss, grad_out = _loss_and_grad_out(model, out, y)
    grads_w, grads_b = _backward(model, x, acts, grad_out)
    return loss, grads_w, grads_b


@dataclass
class MlpTrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    max_epochs: int = 5000
    batch_size: int | None = None  # None = full batch
    improvement_tol: float = 1e-7
    improvement_window: int = 100
    target_loss: float | None = None
    seed: int = 0


def _prepare_targets(head, y):
    if head == CLASSIFICATION:
        return np.asarray(y).astype(np.int64).ravel()
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    return y


def _window_stalled(bests, loss, window, tol) -> bool:
    """Track the running best loss; true once the best has improved by
    less than ``tol`` over the last ``window`` epochs.

    Comparing running bests instead of raw losses keeps the criterion
    cumulative but immune to step-to-step oscillation.
    """
    bests.append(loss if not bests else min(bests[-1], loss))
    return len(bests) > window and bests[-window - 1] - bests[-1] < tol


def mlp_train(x, y, layer_dims, head=REGRESSION, cfg: MlpTrainConfig | None = None):
    """Train an MLP with Adam; returns (model, per-epoch loss log).

    Stops early once the loss improves by less than ``improvement_tol``
    over ``improvement_window`` epochs, or when ``target_loss`` is reached.
    Deterministic for a fixed seed.
    """
    cfg = cfg or MlpTrainConfig()
    x = as_matrix(x)
    y = _prepare_targets(head, y)
    n = x.shape[0]
    if n == 0:
        raise ValueError("mlp_train needs data")
    model = mlp_init(layer_dims, head=head, seed=cfg.seed)
    params = model.weights + model.biases
    opt = Adam(params, cfg.learning_rate, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)
    batch = cfg.batch_size or n
    losses = []
    bests = []
    for _ in range(cfg.max_epochs):
        if batch >= n:
            loss, gw, gb = mlp_loss_gradients(model, x, y)
            opt.step(gw + gb)
        else:
            order = rng.permutation(n)
            loss = 0.0
            for start in range(0, n, batch):
                sel = order[start : start + batch]
                part, gw, gb = mlp_loss_gradients(model, x[sel], y[sel])
                opt.step(gw + gb)
                loss += part * len(sel)
            loss /= n
        if not np.isfinite(loss):
            raise DivergedError(f"loss became {loss!r}; lower the learning rate")
        losses.append(loss)
        if cfg.target_loss is not None and loss <= cfg.target_loss:
            break
        if _window_stalled(bests, loss, cfg.improvement_window, cfg.improvement_tol):
            break
    return model, np.asarray(losses)


def mlp_train_many(x, y, layer_dims, head, cfg: MlpTrainConfig, seeds):
    """Train several same-architecture models in lockstep.

    Member parameters are stacked on a leading axis so one numpy pass per
    epoch trains the whole collection; gradients are independent per member
    because the loss separates.  Equivalent to training each member alone
    for the same number of epochs (no early stopping across members).
    """
    x = as_matrix(x)
    y = _prepare_targets(head, y)
    dims = tuple(int(d) for d in layer_dims)
    m = len(seeds)
    inits = [mlp_init(dims, head=head, seed=s) for s in seeds]
    weights = [np.stack([init.weights[i] for init in inits]) for i in range(len(dims) - 1)]
    biases = [np.stack([init.biases[i] for init in inits]) for i in range(len(dims) - 1)]
    params = weights + biases
    opt = Adam(params, cfg.learning_rate, cfg.weight_decay)

    x_stacked = np.ascontiguousarray(np.broadcast_to(x, (m,) + x.shape))

    def stacked_loss_grads():
        acts = []
        a = x_stacked
        for w, b in zip(weights[:-1], biases[:-1]):
            a = np.maximum(a @ w + b[:, None, :], 0.0)
            acts.append(a)
        out = (acts[-1] if acts else a) @ weights[-1] + biases[-1][:, None, :]
        n = x.shape[0]
        if head == CLASSIFICATION:
            shifted = out - out.max(axis=2, keepdims=True)
            e = np.exp(shifted)
            probs = e / e.sum(axis=2, keepdims=True)
            picked = probs[:, np.arange(n), y]
            loss = -np.log(np.maximum(picked, 1e-300)).mean()
            grad = probs
            grad[:, np.arange(n), y] -= 1.0
            grad /= n
        else:
            diff = out - y[None, :, :]
            loss = float(np.mean(diff**2))
            grad = 2.0 * diff / (n * y.shape[1])
        gw = [None] * len(weights)
        gb = [None] * len(biases)
        upstream = grad
        for l in range(len(weights) - 1, -1, -1):
            a_in = acts[l - 1] if l > 0 else x_stacked
            gw[l] = a_in.transpose(0, 2, 1) @ upstream
            gb[l] = upstream.sum(axis=1)
            if l > 0:
                upstream = (upstream @ weights[l].transpose(0, 2, 1)) * (acts[l - 1] > 0)
        return loss, gw + gb

    losses = []
    bests = []
    for _ in range(cfg.max_epochs):
        loss, grads = stacked_loss_grads()
        if not np.isfinite(loss):
            raise DivergedError("ensemble training diverged")
        opt.step(grads)
        losses.append(loss)
        if cfg.target_loss is not None and loss <= cfg.target_loss:
            break
        if _window_stalled(bests, loss, cfg.improvement_window, cfg.improvement_tol):
            break

    members = []
    for j in range(m):
        members.append(
            MlpModel(
                layer_dims=dims,
                weights=[w[j].copy() for w in weights],
                biases=[b[j].copy() for b in biases],
                head=head,
            )
        )
    return members, np.asarray(losses)
