"""A small dense-network trainer with analytic backprop.

Hidden layers are ``affine -> [batch norm] -> ReLU``; the output layer is a
plain affine map whose width matches whatever head consumes it (a Gaussian
mixture head in :mod:`dietcrt.cdf`, a scalar regressor in the HRT).

Batch normalization uses batch statistics (biased variance) in train mode and
running statistics in eval mode; running statistics are updated as
``running = 0.9 * running + 0.1 * batch``.
"""

from __future__ import annotations

import hashlib
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import RngStream
from .errors import InvalidInputError, StateError, TrainingError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

_fit_lock = threading.Lock()
_fit_total = 0


def total_fits() -> int:
    """Number of :func:`train` calls made by this process so far."""
    return _fit_total


class FitCounter:
    def __init__(self):
        self._start = total_fits()

    @property
    def fits(self) -> int:
        return total_fits() - self._start


@contextmanager
def count_fits():
    """Count model fits inside a ``with`` block (process-wide counter)."""
    yield FitCounter()


def _record_fit():
    global _fit_total
    with _fit_lock:
        _fit_total += 1


@dataclass(frozen=True)
class NetworkSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"
    normalization: str = "batch_norm"
    init_seed: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2 or min(widths) < 1:
            raise InvalidInputError("layer_widths needs an input and an output width, all positive")
        if self.activation != "relu":
            raise InvalidInputError(f"unsupported activation {self.activation!r}")
        if self.normalization not in ("batch_norm", "none"):
            raise InvalidInputError(f"unsupported normalization {self.normalization!r}")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_widths) - 2


@dataclass
class NetworkParams:
    weights: list
    biases: list
    gammas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    running_mean: list = field(default_factory=list)
    running_var: list = field(default_factory=list)

    def trainable(self) -> list[np.ndarray]:
        """Trainable arrays in canonical order (layer by layer: W, b, [gamma, beta])."""
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [w, b]
            if i < len(self.gammas):
                out += [self.gammas[i], self.betas[i]]
        return out

    def layer_index(self) -> list[int]:
        idx = []
        for i in range(len(self.weights)):
            idx += [i, i] + ([i, i] if i < len(self.gammas) else [])
        return idx

    def copy(self) -> "NetworkParams":
        cp = lambda xs: [a.copy() for a in xs]  # noqa: E731
        return NetworkParams(
            cp(self.weights), cp(self.biases), cp(self.gammas), cp(self.betas),
            cp(self.running_mean), cp(self.running_var),
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in self.trainable() + self.running_mean + self.running_var:
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {k: [a.tolist() for a in getattr(self, k)] for k in
                ("weights", "biases", "gammas", "betas", "running_mean", "running_var")}

    @classmethod
    def from_dict(cls, payload: dict) -> "NetworkParams":
        return cls(**{k: [np.asarray(a, dtype=float) for a in v] for k, v in payload.items()})


def init_params(spec: NetworkSpec) -> NetworkParams:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases, unit BN scale."""
    rng = spec.init_seed.generator()
    widths = spec.layer_widths
    p = NetworkParams([], [])
    for i in range(len(widths) - 1):
        bound = np.sqrt(6.0 / widths[i])
        p.weights.append(rng.uniform(-bound, bound, size=(widths[i], widths[i + 1])))
        p.biases.append(np.zeros(widths[i + 1]))
        if spec.normalization == "batch_norm" and i < len(widths) - 2:
            p.gammas.append(np.ones(widths[i + 1]))
            p.betas.append(np.zeros(widths[i + 1]))
            p.running_mean.append(np.zeros(widths[i + 1]))
            p.running_var.append(np.ones(widths[i + 1]))
    return p


class MLP:
    """Feed-forward network with cached activations for one backward pass."""

    def __init__(self, spec: NetworkSpec, params: NetworkParams | None = None):
        self.spec = spec
        self.params = params if params is not None else init_params(spec)
        self._cache = None

    @property
    def uses_bn(self) -> bool:
        return self.spec.normalization == "batch_norm"

    def forward(self, inputs, mode: str = "eval") -> np.ndarray:
        h = np.asarray(inputs, dtype=float)
        if h.ndim != 2 or h.shape[1] != self.spec.layer_widths[0]:
            raise InvalidInputError(
                f"expected inputs of shape (B, {self.spec.layer_widths[0]}), got {h.shape}"
            )
        if mode not in ("train", "eval"):
            raise InvalidInputError(f"unknown mode {mode!r}")
        p = self.params
        train = mode == "train"
        cache = [] if train else None
        n_layers = len(p.weights)
        for i in range(n_layers):
            a = h @ p.weights[i] + p.biases[i]
            if i == n_layers - 1:
                if train:
                    cache.append((h, None, None))
                h = a
                break
            bn = None
            if self.uses_bn:
                if train:
                    mu = a.mean(axis=0)
                    var = a.var(axis=0)
                    p.running_mean[i] = BN_MOMENTUM * p.running_mean[i] + (1 - BN_MOMENTUM) * mu
                    p.running_var[i] = BN_MOMENTUM * p.running_var[i] + (1 - BN_MOMENTUM) * var
                else:
                    mu, var = p.running_mean[i], p.running_var[i]
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (a - mu) * inv_std
                a = xhat * p.gammas[i] + p.betas[i]
                bn = (xhat, inv_std)
            mask = a > 0
            if train:
                cache.append((h, bn, mask))
            h = a * mask
        self._cache = (np.asarray(inputs), cache) if train else None
        return h

    def backward(self, grad_out, inputs=None) -> list[np.ndarray]:
        """Gradients of the loss w.r.t. ``params.trainable()``, same order and shapes.

        Must follow a train-mode :meth:`forward` on the same batch.
        """
        if self._cache is None:
            raise StateError("backward() requires a preceding train-mode forward()")
        cached_inputs, cache = self._cache
        if inputs is not None and (
            np.shape(inputs) != cached_inputs.shape or not np.array_equal(inputs, cached_inputs)
        ):
            raise StateError("backward() inputs differ from the cached forward batch")
        p = self.params
        g = np.asarray(grad_out, dtype=float)
        n_layers = len(p.weights)
        per_layer = [None] * n_layers
        for i in range(n_layers - 1, -1, -1):
            h_in, bn, mask = cache[i]
            grads = []
            if mask is not None:
                g = g * mask
                if bn is not None:
                    xhat, inv_std = bn
                    dgamma = (g * xhat).sum(axis=0)
                    dbeta = g.sum(axis=0)
                    dx = g * p.gammas[i]
                    b = dx.shape[0]
                    g = inv_std / b * (b * dx - dx.sum(axis=0) - xhat * (dx * xhat).sum(axis=0))
                    grads = [dgamma, dbeta]
            dw = h_in.T @ g
            db = g.sum(axis=0)
            per_layer[i] = [dw, db] + grads
            if i > 0:
                g = g @ p.weights[i].T
        return [a for layer in per_layer for a in layer]


def forward(params: NetworkParams, spec: NetworkSpec, inputs, mode: str = "eval"):
    return MLP(spec, params).forward(inputs, mode)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              layer_index: Sequence[int] | None = None) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise InvalidInputError("params and grads differ in length")
    for k, g in enumerate(grads):
        if g.shape != params[k].shape:
            raise InvalidInputError(f"gradient {k} has shape {g.shape}, expected {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient", layer=layer_index[k] if layer_index else k)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


def gd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    for p, g in zip(params, grads):
        p -= lr * g


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    early_stop_patience: int = 20
    validation_fraction: float = 0.1
    shuffle: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.early_stop_patience < 0:
            raise InvalidInputError("epochs/patience must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidInputError("validation_fraction must lie in [0, 1)")


LossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def squared_loss(outputs, targets):
    """Mean squared error over the batch and its gradient w.r.t. ``outputs``."""
    t = np.asarray(targets, dtype=float).reshape(outputs.shape)
    r = outputs - t
    return float(np.mean(np.sum(r * r, axis=1))), 2.0 * r / outputs.shape[0]


def train(net: MLP, config: TrainConfig, loss: LossFn, inputs, targets,
          resample_targets: Callable[[int], np.ndarray] | None = None) -> MLP:
    """Minimize ``loss`` with mini-batch Adam; early-stop on a held-out slice.

    With ``early_stop_patience > 0`` a ``validation_fraction`` slice of the rows
    is held out, and the parameters with the best validation loss are restored
    at the end. ``resample_targets(epoch)``, if given, replaces the targets at
    the start of every epoch after the first.
    """
    _record_fit()
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = inputs.shape[0]
    if n < 1:
        raise InvalidInputError("empty training set")
    if config.epochs == 0:
        return net
    rng = config.shuffle.generator()
    order = rng.permutation(n)
    n_val = int(round(config.validation_fraction * n)) if config.early_stop_patience > 0 else 0
    if n - n_val < 2:
        n_val = 0
    val_idx, fit_idx = order[:n_val], order[n_val:]
    n_fit = fit_idx.shape[0]
    batch = min(config.batch_size, n_fit)
    if net.uses_bn and batch < 2:
        raise InvalidInputError("batch normalization needs batches of at least 2 rows")
    n_batches = max(1, n_fit // batch)
    state = AdamState(learning_rate=config.learning_rate)
    trainable = net.params.trainable()
    layer_index = net.params.layer_index()
    best = (np.inf, net.params.copy())
    stale = 0
    for epoch in range(config.epochs):
        if resample_targets is not None and epoch > 0:
            targets = np.asarray(resample_targets(epoch), dtype=float)
        perm = fit_idx[rng.permutation(n_fit)]
        for idx in np.array_split(perm, n_batches):
            xb = inputs[idx]
            out = net.forward(xb, mode="train")
            value, grad = loss(out, targets[idx])
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            adam_step(trainable, net.backward(grad), state, layer_index)
        if n_val:
            value, _ = loss(net.forward(inputs[val_idx]), targets[val_idx])
            if not np.isfinite(value):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
            if value < best[0]:
                best = (value, net.params.copy())
                stale = 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    if n_val:
        net.params = best[1]
    return net
