"""Float64 layer kernels, weighted cross-entropy and optimizers.

Tensors are plain ``numpy.ndarray`` objects in float64, row-major.  Each
layer comes as a forward function returning ``(output, cache)`` and a
backward function consuming the upstream gradient and that cache.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import rng as rngmod


class ShapeError(ValueError):
    """Raised when tensor extents do not fit an operation."""


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} produced non-finite values")


# ---------------------------------------------------------------------------
# parameters and optimizer configuration
# ---------------------------------------------------------------------------


@dataclass
class ParamState:
    """A trainable tensor together with its gradient and optimizer moments."""

    value: np.ndarray
    grad: np.ndarray = None
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    velocity: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        self.value = _as_f64(self.value)
        for name in ("grad", "adam_m", "adam_v", "velocity"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.value))

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "Adam"
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    sgd_momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in ("Adam", "SGD"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 <= self.sgd_momentum < 1:
            raise ValueError("sgd_momentum must lie in [0, 1)")


def adam_step(param: ParamState, config: OptimizerConfig) -> ParamState:
    """Bias-corrected Adam update, in place."""
    if config.kind != "Adam":
        raise ValueError("adam_step needs an Adam config")
    g = param.grad
    param.step_count += 1
    t = param.step_count
    param.adam_m *= config.beta1
    param.adam_m += (1.0 - config.beta1) * g
    param.adam_v *= config.beta2
    param.adam_v += (1.0 - config.beta2) * g * g
    m_hat = param.adam_m / (1.0 - config.beta1**t)
    v_hat = param.adam_v / (1.0 - config.beta2**t)
    param.value -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return param


def sgd_step(param: ParamState, config: OptimizerConfig) -> ParamState:
    """SGD with classical (heavy-ball) momentum, in place."""
    if config.kind != "SGD":
        raise ValueError("sgd_step needs an SGD config")
    param.step_count += 1
    if config.sgd_momentum > 0:
        param.velocity *= config.sgd_momentum
        param.velocity += param.grad
        param.value -= config.learning_rate * param.velocity
    else:
        param.value -= config.learning_rate * param.grad
    return param


def optimizer_step(params: Iterable[ParamState], config: OptimizerConfig) -> None:
    step = adam_step if config.kind == "Adam" else sgd_step
    for p in params:
        step(p, config)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def conv2d_forward(x, kernels, bias):
    """3x3 cross-correlation, zero padding 1, stride 1.

    ``x`` is NxCxHxW, ``kernels`` OxCx3x3, ``bias`` O.  Output is NxOxHxW.
    """
    x = _as_f64(x)
    kernels = _as_f64(kernels)
    bias = _as_f64(bias)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NxCxHxW, got shape {x.shape}")
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d kernels must be OxCx3x3, got shape {kernels.shape}")
    if kernels.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input has {x.shape[1]}, kernels expect {kernels.shape[1]}"
        )
    if bias.shape != (kernels.shape[0],):
        raise ShapeError(f"conv2d bias must have shape ({kernels.shape[0]},), got {bias.shape}")
    n, c, h, w = x.shape
    o = kernels.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    # rows: (n, h, w); columns: (c, ki, kj)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)
    out = cols @ kernels.reshape(o, c * 9).T + bias
    out = np.ascontiguousarray(out.reshape(n, h, w, o).transpose(0, 3, 1, 2))
    return out, (x.shape, cols, kernels)


def conv2d_backward(dout, cache, need_input_grad=True):
    """Returns ``(dx, dkernels, dbias)``; ``dx`` is None when not requested."""
    (n, c, h, w), cols, kernels = cache
    o = kernels.shape[0]
    d = dout.transpose(0, 2, 3, 1).reshape(n * h * w, o)
    dk = (d.T @ cols).reshape(kernels.shape)
    db = d.sum(axis=0)
    dx = None
    if need_input_grad:
        # columns ordered (ki, kj, c) so each tap's slice is contiguous in c
        k_hwc = kernels.transpose(0, 2, 3, 1).reshape(o, 9 * c)
        dcols = (d @ k_hwc).reshape(n, h, w, 3, 3, c)
        dxp = np.zeros((n, h + 2, w + 2, c))
        for i in range(3):
            for j in range(3):
                dxp[:, i : i + h, j : j + w] += dcols[:, :, :, i, j]
        dx = np.ascontiguousarray(dxp[:, 1:-1, 1:-1].transpose(0, 3, 1, 2))
    return dx, dk, db


def maxpool2x2_forward(x):
    """Non-overlapping 2x2 max pooling with stride 2."""
    x = _as_f64(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool input must be NxCxHxW, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool needs even H and W, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximum in (0,0),(0,1),(1,0),(1,1) scan order
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2x2_backward(dout, cache):
    (n, c, h, w), arg = cache
    dwin = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def relu_forward(x):
    x = _as_f64(x)
    return np.maximum(x, 0.0), x


def relu_backward(dout, cache):
    return dout * (cache > 0)


def linear_forward(x, weight, bias):
    """Row-wise affine map ``x @ weight + bias`` (x: NxD, weight: DxU)."""
    x = _as_f64(x)
    weight = _as_f64(weight)
    bias = _as_f64(bias)
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear inner extents differ: input {x.shape}, weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear bias must have shape ({weight.shape[1]},), got {bias.shape}")
    return x @ weight + bias, (x, weight)


def linear_backward(dout, cache):
    x, weight = cache
    return dout @ weight.T, x.T @ dout, dout.sum(axis=0)


def conv2d(x, kernels, bias):
    return conv2d_forward(x, kernels, bias)[0]


def maxpool2x2(x):
    return maxpool2x2_forward(x)[0]


def relu(x):
    return relu_forward(x)[0]


def linear(x, weight, bias):
    return linear_forward(x, weight, bias)[0]


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def weighted_softmax_ce(logits, labels, class_weights):
    """Class-weighted softmax cross-entropy.

    The loss is the weighted mean of per-sample negative log-likelihoods,
    normalized by the sum of the weights actually applied, so scaling all
    class weights by a positive constant changes nothing.

    Returns ``(loss, dloss/dlogits)``.
    """
    logits = _as_f64(logits)
    labels = np.asarray(labels, dtype=np.int64)
    class_weights = _as_f64(class_weights)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be NxM, got shape {logits.shape}")
    n, m = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if class_weights.shape != (m,):
        raise ShapeError(f"expected {m} class weights, got shape {class_weights.shape}")
    if n == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= m:
        raise ValueError(f"labels must lie in [0, {m})")
    if np.any(class_weights < 0):
        raise ValueError("class weights must be non-negative")
    w = class_weights[labels]
    total = w.sum()
    if not total > 0:
        raise ValueError("degenerate batch: all applied sample weights are zero")

    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    nll = -log_probs[np.arange(n), labels]
    loss = float((w * nll).sum() / total)

    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    grad *= (w / total)[:, None]
    _check_finite(grad, "weighted_softmax_ce")
    return loss, grad


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def gradient_check(
    loss_fn: Callable[[], float],
    params: Sequence[ParamState],
    probe_count: int,
    seed: int = 0,
    h: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` evaluates the scalar loss at the current parameter values and
    fills every ``param.grad``.  Coordinates are drawn uniformly over the
    concatenation of all parameters.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss_fn()
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.value.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    gen = rngmod.substream(seed, 99)
    flat_ids = gen.integers(0, offsets[-1], size=probe_count)

    worst = 0.0
    for fid in flat_ids:
        k = int(np.searchsorted(offsets, fid, side="right") - 1)
        idx = np.unravel_index(int(fid - offsets[k]), params[k].shape)
        value = params[k].value
        orig = value[idx]
        value[idx] = orig + h
        f_plus = loss_fn()
        value[idx] = orig - h
        f_minus = loss_fn()
        value[idx] = orig
        numeric = (f_plus - f_minus) / (2 * h)
        a = analytic[k][idx]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    # leave grads as the analytic values at the unperturbed point
    for p, g in zip(params, analytic):
        p.grad[...] = g
    return worst
