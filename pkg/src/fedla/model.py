"""Numpy multilayer perceptron with cross-entropy, a proximal penalty and Adam.

All model weights live in one flat float64 vector.  ``MlpArchitecture.layout``
maps that vector onto per-layer weight matrices and bias vectors, so the server
can average whole models with plain vector arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import ConfigError, InvalidInputError, NumericalError


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int = 16
    hidden_dims: tuple = (32,)
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigError("must be positive", key="model.input_dim")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("entries must be positive", key="model.hidden_dims")
        if self.num_classes < 2:
            raise ConfigError("must be at least 2", key="model.num_classes")

    @property
    def layer_dims(self):
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        return list(zip(dims[:-1], dims[1:]))

    @cached_property
    def layout(self):
        """List of ``(weight_slice, weight_shape, bias_slice)`` per layer."""
        out = []
        offset = 0
        for fan_in, fan_out in self.layer_dims:
            w = slice(offset, offset + fan_in * fan_out)
            offset = w.stop
            b = slice(offset, offset + fan_out)
            offset = b.stop
            out.append((w, (fan_in, fan_out), b))
        return out

    @cached_property
    def num_params(self):
        return sum(i * o + o for i, o in self.layer_dims)



def check_params(params, arch):
    if params.ndim != 1 or params.shape[0] != arch.num_params:
        raise ConfigError(
            f"parameter vector has shape {params.shape}, architecture needs ({arch.num_params},)"
        )


def init_params(arch: MlpArchitecture, rng: np.random.Generator, std: float = 0.1) -> np.ndarray:
    return rng.normal(0.0, std, size=arch.num_params)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logits(params, arch, X):
    check_params(params, arch)
    layers = _views(params, arch)
    h = X
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
    W, b = layers[-1]
    return h @ W + b


def forward(params: np.ndarray, arch: MlpArchitecture, features: np.ndarray) -> np.ndarray:
    """Class probabilities for one sample (1-D input) or a batch (2-D input)."""
    X = np.asarray(features, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise ConfigError(f"features have shape {np.shape(features)}, expected input_dim={arch.input_dim}")
    logits = _logits(params, arch, X)
    probs = _softmax(logits)
    return probs[0] if single else probs


def proximal_penalty(params, global_params):
    diff = params - global_params
    return 0.5 * float(diff @ diff)


def _views(vec, arch):
    return [(vec[w].reshape(shape), vec[b]) for w, shape, b in arch.layout]


def _cross_entropy_grad(layers, grads, X, y):
    """Mean cross-entropy of the batch; writes its gradient into the ``grads`` views."""
    n = y.shape[0]
    acts = [X]
    h = X
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = h @ W
        z += b
        if i < last:
            h = np.tanh(z, out=z)
            acts.append(h)
        else:
            h = z
    z = h - h.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -float(log_probs[rows, y].sum()) / n

    delta = np.exp(log_probs, out=log_probs)
    delta[rows, y] -= 1.0
    delta *= 1.0 / n
    for i in range(last, -1, -1):
        gW, gb = grads[i]
        np.matmul(acts[i].T, delta, out=gW)
        delta.sum(axis=0, out=gb)
        if i > 0:
            a = acts[i]
            delta = delta @ layers[i][0].T
            delta *= 1.0 - a * a
    return loss


def loss_and_gradient(
    params: np.ndarray,
    arch: MlpArchitecture,
    features: np.ndarray,
    labels: np.ndarray,
    global_params: Optional[np.ndarray] = None,
    mu: float = 0.0,
):
    """Mean cross-entropy over the batch plus ``mu * 0.5 * ||params - global_params||^2``.

    Returns ``(loss, gradient)``.  With ``mu == 0`` the proximal branch is skipped
    entirely, so the result is bit-identical to plain cross-entropy.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    n = y.shape[0]
    if n == 0:
        raise InvalidInputError("empty batch")
    if X.ndim != 2 or X.shape != (n, arch.input_dim):
        raise ConfigError(f"batch features have shape {X.shape}, expected ({n}, {arch.input_dim})")
    _check_mu(params, global_params, mu)
    check_params(params, arch)
    grad = np.empty_like(params, dtype=float)
    loss = _cross_entropy_grad(_views(params, arch), _views(grad, arch), X, y)
    if mu > 0:
        loss += mu * proximal_penalty(params, global_params)
        grad += mu * (params - global_params)
    return loss, grad


def _check_mu(params, global_params, mu):
    if mu < 0:
        raise ConfigError("mu must be non-negative", key="mu")
    if mu > 0:
        if global_params is None:
            raise ConfigError("mu > 0 requires global_params")
        if global_params.shape != params.shape:
            raise ConfigError("global_params length differs from params")


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, size, lr=0.01, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(np.zeros(size), np.zeros(size), 0, lr, beta1, beta2, epsilon)


def _adam_update(params, grad, m, v, t, lr, b1, b2, eps, tmp):
    """In-place bias-corrected Adam step on ``params``, ``m`` and ``v``."""
    m *= b1
    m += (1.0 - b1) * grad
    np.multiply(grad, grad, out=tmp)
    tmp *= 1.0 - b2
    v *= b2
    v += tmp
    # bias corrections folded into the step size and epsilon (exact rearrangement)
    c2 = np.sqrt(1.0 - b2**t)
    step = lr * c2 / (1.0 - b1**t)
    np.sqrt(v, out=tmp)
    tmp += eps * c2
    np.divide(m, tmp, out=tmp)
    tmp *= step
    params -= tmp


def adam_step(params: np.ndarray, gradient: np.ndarray, state: AdamState):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if not (params.shape == gradient.shape == state.first_moment.shape == state.second_moment.shape):
        raise ConfigError("params, gradient and Adam moments must have the same length")
    if not np.isfinite(gradient).all():
        raise NumericalError("non-finite gradient")
    new_params = np.array(params, dtype=float, copy=True)
    m = np.array(state.first_moment, dtype=float, copy=True)
    v = np.array(state.second_moment, dtype=float, copy=True)
    t = state.step_count + 1
    _adam_update(new_params, gradient, m, v, t, state.lr, state.beta1, state.beta2, state.epsilon, np.empty_like(m))
    if not np.isfinite(new_params).all():
        raise NumericalError("non-finite parameters after Adam step")
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)


@dataclass(frozen=True)
class TrainConfig:
    """Local optimizer settings.

    ``lr_schedule="linear"`` interpolates from ``lr`` to ``lr_final`` over the
    steps of one local run; ``"constant"`` ignores ``lr_final``.
    """

    lr: float = 0.01
    lr_final: float = 0.01
    lr_schedule: str = "constant"
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.lr_final <= 0:
            raise ConfigError("learning rates must be positive", key="optimizer.lr")
        if self.lr_schedule not in ("constant", "linear"):
            raise ConfigError("must be 'constant' or 'linear'", key="optimizer.lr_schedule")
        if self.batch_size < 1:
            raise ConfigError("must be positive", key="optimizer.batch_size")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)", key="optimizer.beta1")
        if self.epsilon <= 0:
            raise ConfigError("must be positive", key="optimizer.epsilon")


def run_adam_epochs(params, anchor, arch, features, labels, epochs, mu, rng, state, config, total_steps=None):
    """Minibatch Adam for ``epochs`` passes; returns ``(params, state)``.

    Neither ``params`` nor ``state`` is modified.  ``total_steps`` is the horizon
    for the linear learning-rate schedule (defaults to this call's step count).
    """
    _check_mu(params, anchor, mu)
    check_params(params, arch)
    n = len(labels)
    if total_steps is None:
        total_steps = epochs * -(-n // config.batch_size)
    params = np.array(params, dtype=float, copy=True)
    m = np.array(state.first_moment, dtype=float, copy=True)
    v = np.array(state.second_moment, dtype=float, copy=True)
    grad = np.empty_like(params)
    tmp = np.empty_like(params)
    layers, grads = _views(params, arch), _views(grad, arch)
    features = np.asarray(features, dtype=float)
    t, lr = state.step_count, state.lr
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            if config.lr_schedule == "linear" and total_steps > 1:
                lr = config.lr + (config.lr_final - config.lr) * min(t / (total_steps - 1), 1.0)
            idx = order[start : start + config.batch_size]
            _cross_entropy_grad(layers, grads, features[idx], labels[idx])
            if mu > 0:
                np.subtract(params, anchor, out=tmp)
                tmp *= mu
                grad += tmp
            if not np.isfinite(grad.sum()):
                raise NumericalError("non-finite gradient")
            t += 1
            _adam_update(params, grad, m, v, t, lr, b1, b2, eps, tmp)
    if not np.isfinite(params).all():
        raise NumericalError("non-finite parameters after local training")
    return params, AdamState(m, v, t, lr, b1, b2, eps)


def train_local(
    global_params: np.ndarray,
    arch: MlpArchitecture,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    mu: float = 0.0,
    seed=0,
    config: TrainConfig = TrainConfig(),
) -> np.ndarray:
    """Minibatch Adam on one client's data, anchored to ``global_params``.

    Adam moments start from zero on every call.  ``seed`` may be an int or a
    ``numpy.random.SeedSequence``; it drives only the per-epoch shuffles.
    """
    if len(labels) == 0:
        raise InvalidInputError("client dataset is empty")
    params = np.array(global_params, dtype=float, copy=True)
    if epochs <= 0:
        return params
    anchor = params.copy()
    state = AdamState.zeros(params.shape[0], config.lr, config.beta1, config.beta2, config.epsilon)
    params, _ = run_adam_epochs(
        params, anchor, arch, features, labels, epochs, mu, np.random.default_rng(seed), state, config
    )
    return params


def cross_entropy(params, arch, features, labels) -> float:
    logits = _logits(params, arch, np.asarray(features, dtype=float))
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(labels)), labels].mean())
