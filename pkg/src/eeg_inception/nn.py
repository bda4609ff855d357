"""Minimal differentiable layer library for 1-D convolutional networks.

Every primitive comes as a pair of plain functions (``*_forward`` /
``*_backward``) operating on numpy arrays shaped ``(batch, channels, time)``,
plus a small stateful layer class that caches what the backward pass needs.
Layers expose their trainable arrays as :class:`Parameter` objects so a
model can hand them to :class:`Adam` in a fixed order.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sp_fft

from .errors import NumericError

__all__ = [
    "Parameter", "Conv1d", "MaxPool1d", "BatchNorm1d", "ReLU", "Linear",
    "GlobalAvgPool", "conv1d_forward", "conv1d_backward", "maxpool1d_forward",
    "maxpool1d_backward", "batchnorm1d_forward", "batchnorm1d_backward",
    "relu_forward", "relu_backward", "concat_channels", "split_channels",
    "global_avg_pool_forward", "global_avg_pool_backward", "linear_forward",
    "linear_backward", "softmax", "softmax_cross_entropy", "AdamState",
    "adam_step", "Adam", "grad_check",
]


class Parameter:
    """A trainable array and its accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Parameter(shape={self.value.shape}, dtype={self.value.dtype})"


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _check_3d(x: np.ndarray, what: str) -> None:
    if x.ndim != 3:
        raise ValueError(f"{what}: expected (batch, channels, time), got shape {x.shape}")


# --------------------------------------------------------------------------
# convolution


def conv1d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 cross-correlation with zero "same" padding.

    ``y[b, o, t] = bias[o] + sum_{c, j} weight[o, c, j] * x[b, c, t + j - (K-1)/2]``

    Kernels longer than one tap go through a real FFT, which keeps the
    K=125 (and four-class K=225) branches cheap.
    """
    _check_3d(x, "conv1d")
    n_out, n_in, k = weight.shape
    if x.shape[1] != n_in:
        raise ValueError(f"conv1d: input has {x.shape[1]} channels, kernel expects {n_in}")
    if k % 2 == 0:
        raise ValueError(f"conv1d: kernel size must be odd, got {k}")
    if k == 1:
        y = np.matmul(weight[:, :, 0], x)
    else:
        t = x.shape[2]
        pad = (k - 1) // 2
        n = sp_fft.next_fast_len(t + k - 1, real=True)
        xf = sp_fft.rfft(x, n, axis=-1).transpose(2, 0, 1)              # (F, B, C)
        wf = sp_fft.rfft(weight[:, :, ::-1], n, axis=-1).transpose(2, 1, 0)  # (F, C, O)
        y = sp_fft.irfft(np.matmul(xf, wf).transpose(1, 2, 0), n, axis=-1)
        y = np.ascontiguousarray(y[:, :, pad:pad + t])
    y += bias[None, :, None]
    return y.astype(x.dtype, copy=False)


def conv1d_backward(grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
    """Return ``(grad_x, grad_weight, grad_bias)`` for :func:`conv1d_forward`."""
    n_out, n_in, k = weight.shape
    grad_bias = grad_out.sum(axis=(0, 2))
    if k == 1:
        w2 = weight[:, :, 0]
        grad_x = np.matmul(w2.T, grad_out)
        grad_w = np.einsum("bot,bct->oc", grad_out, x)[:, :, None]
        return grad_x, grad_w.astype(weight.dtype, copy=False), grad_bias
    b, _, t = x.shape
    pad = (k - 1) // 2
    n = sp_fft.next_fast_len(t + k - 1, real=True)
    placed = np.zeros((b, n_out, n), dtype=grad_out.dtype)
    placed[:, :, pad:pad + t] = grad_out
    gf = sp_fft.rfft(placed, axis=-1).transpose(2, 0, 1)               # (F, B, O)
    xf = sp_fft.rfft(x, n, axis=-1).transpose(2, 0, 1)                  # (F, B, C)
    wf = sp_fft.rfft(weight[:, :, ::-1], n, axis=-1).transpose(2, 0, 1)  # (F, O, C)
    grad_x = sp_fft.irfft(np.matmul(gf, wf.conj()).transpose(1, 2, 0), n, axis=-1)[:, :, :t]
    gw = np.matmul(gf.transpose(0, 2, 1), xf.conj())                    # (F, O, C)
    grad_w = sp_fft.irfft(gw.transpose(1, 2, 0), n, axis=-1)[:, :, :k][:, :, ::-1]
    return (
        np.ascontiguousarray(grad_x).astype(x.dtype, copy=False),
        np.ascontiguousarray(grad_w).astype(weight.dtype, copy=False),
        grad_bias,
    )


class Conv1d:
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError(f"Conv1d kernel size must be a positive odd integer, got {kernel_size}")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.weight = Parameter(_uniform_fan_in(rng, (out_channels, in_channels, kernel_size), fan_in, dtype))
        self.bias = Parameter(_uniform_fan_in(rng, (out_channels,), fan_in, dtype))
        self._x = None

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return conv1d_forward(x, self.weight.value, self.bias.value)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        gx, gw, gb = conv1d_backward(grad_out, self._x, self.weight.value)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


# --------------------------------------------------------------------------
# max pooling


def maxpool1d_forward(x: np.ndarray, kernel_size: int = 25):
    """Stride-1 max pooling with -inf "same" padding.

    Returns ``(y, argmax)`` where ``argmax[b, c, t]`` is the input time index
    that won window ``t``. Ties go to the lowest index.
    """
    _check_3d(x, "maxpool1d")
    t = x.shape[2]
    if t < 1:
        raise ValueError("maxpool1d: empty time axis")
    if kernel_size < 1:
        raise ValueError(f"maxpool1d: kernel size must be >= 1, got {kernel_size}")
    left = (kernel_size - 1) // 2
    right = kernel_size - 1 - left
    vals = np.pad(x, ((0, 0), (0, 0), (left, right)), constant_values=-np.inf)
    idx = np.broadcast_to(np.arange(-left, t + right, dtype=np.int32), vals.shape)
    # doubling: after each round vals[..., i] is the max over [i, i + span);
    # the right half wins only when strictly larger, so ties keep the lowest index
    span = 1
    while 2 * span <= kernel_size:
        take = vals[:, :, span:] > vals[:, :, :-span]
        vals = np.where(take, vals[:, :, span:], vals[:, :, :-span])
        idx = np.where(take, idx[:, :, span:], idx[:, :, :-span])
        span *= 2
    if span < kernel_size:
        shift = kernel_size - span
        take = vals[:, :, shift:shift + t] > vals[:, :, :t]
        vals = np.where(take, vals[:, :, shift:shift + t], vals[:, :, :t])
        idx = np.where(take, idx[:, :, shift:shift + t], idx[:, :, :t])
    return np.ascontiguousarray(vals[:, :, :t]), np.ascontiguousarray(idx[:, :, :t])


def maxpool1d_backward(grad_out: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    b, c, t = grad_out.shape
    flat = (np.arange(b * c).reshape(b, c, 1) * t + argmax).ravel()
    gx = np.bincount(flat, weights=grad_out.ravel(), minlength=b * c * t)
    return gx.reshape(b, c, t).astype(grad_out.dtype, copy=False)


class MaxPool1d:
    def __init__(self, kernel_size: int = 25):
        self.kernel_size = kernel_size
        self._arg = None

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._arg = maxpool1d_forward(x, self.kernel_size)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return maxpool1d_backward(grad_out, self._arg)


# --------------------------------------------------------------------------
# batch normalisation


def batchnorm1d_forward(x, gamma, beta, running_mean, running_var, *, training: bool,
                        eps: float = 1e-5, momentum: float = 0.1):
    """Per-channel normalisation over the (batch, time) axes.

    In training mode ``running_mean``/``running_var`` are updated in place
    (running variance uses the unbiased batch estimate). Returns ``(y, cache)``.
    """
    _check_3d(x, "batchnorm1d")
    if x.shape[1] != gamma.shape[0]:
        raise ValueError(f"batchnorm1d: input has {x.shape[1]} channels, layer has {gamma.shape[0]}")
    if training:
        n = x.shape[0] * x.shape[2]
        if n < 2:
            raise ValueError("batchnorm1d: training mode needs at least two values per channel")
        mean = x.mean(axis=(0, 2))
        centered = x - mean[None, :, None]
        var = (centered * centered).mean(axis=(0, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
    else:
        mean = running_mean
        var = running_var
        centered = x - mean[None, :, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std[None, :, None]
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    return y.astype(x.dtype, copy=False), (xhat, inv_std, training)


def batchnorm1d_backward(grad_out, gamma, cache):
    """Return ``(grad_x, grad_gamma, grad_beta)``."""
    xhat, inv_std, training = cache
    grad_beta = grad_out.sum(axis=(0, 2))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2))
    scale = (gamma * inv_std)[None, :, None]
    if not training:
        return grad_out * scale, grad_gamma, grad_beta
    n = grad_out.shape[0] * grad_out.shape[2]
    gx = scale / n * (n * grad_out - grad_beta[None, :, None] - xhat * grad_gamma[None, :, None])
    return gx.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


class BatchNorm1d:
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        # state, not parameters
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.training = True
        self._cache = None

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> list[np.ndarray]:
        return [self.running_mean, self.running_var]

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._cache = batchnorm1d_forward(
            x, self.gamma.value, self.beta.value, self.running_mean, self.running_var,
            training=self.training, eps=self.eps, momentum=self.momentum)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        gx, gg, gb = batchnorm1d_backward(grad_out, self.gamma.value, self._cache)
        self.gamma.grad += gg
        self.beta.grad += gb
        return gx


# --------------------------------------------------------------------------
# elementwise, reshaping and head layers


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient 0 at x == 0
    return grad_out * (x > 0)


class ReLU:
    def __init__(self):
        self._x = None

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x):
        self._x = x
        return relu_forward(x)

    def backward(self, grad_out):
        return relu_backward(grad_out, self._x)


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ValueError("concat_channels: nothing to concatenate")
    b, _, t = parts[0].shape
    for p in parts[1:]:
        if p.shape[0] != b or p.shape[2] != t:
            raise ValueError(f"concat_channels: part shape {p.shape} does not match batch {b}, time {t}")
    return np.concatenate(parts, axis=1)


def split_channels(x: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    """Inverse of :func:`concat_channels` (also its backward pass)."""
    if sum(sizes) != x.shape[1]:
        raise ValueError(f"split_channels: sizes {list(sizes)} do not add up to {x.shape[1]} channels")
    return np.split(x, np.cumsum(sizes)[:-1], axis=1)


def global_avg_pool_forward(x: np.ndarray) -> np.ndarray:
    _check_3d(x, "global_avg_pool")
    return x.mean(axis=2)


def global_avg_pool_backward(grad_out: np.ndarray, time_len: int) -> np.ndarray:
    g = grad_out[:, :, None] / time_len
    return np.repeat(g, time_len, axis=2)


class GlobalAvgPool:
    def __init__(self):
        self._t = None

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x):
        self._t = x.shape[2]
        return global_avg_pool_forward(x)

    def backward(self, grad_out):
        return global_avg_pool_backward(grad_out, self._t)


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input shape {x.shape} incompatible with weight {weight.shape}")
    return x @ weight.T + bias


def linear_backward(grad_out, x, weight):
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


class Linear:
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(_uniform_fan_in(rng, (out_features, in_features), in_features, dtype))
        self.bias = Parameter(_uniform_fan_in(rng, (out_features,), in_features, dtype))
        self._x = None

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x):
        self._x = x
        return linear_forward(x, self.weight.value, self.bias.value)

    def backward(self, grad_out):
        gx, gw, gb = linear_backward(grad_out, self._x, self.weight.value)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


# --------------------------------------------------------------------------
# loss


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``.

    Returns ``(loss, grad_logits)``. For two classes this is the usual binary
    cross-entropy with p = softmax probability of class 1.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError(f"softmax_cross_entropy: need a non-empty (batch, classes) array, got {logits.shape}")
    b, n_classes = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"softmax_cross_entropy: labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"softmax_cross_entropy: labels must lie in [0, {n_classes})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    grad /= b
    return max(loss, 0.0), grad.astype(logits.dtype, copy=False)


# --------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 0.005
    eps_inside_sqrt: bool = False

    @classmethod
    def like(cls, param: np.ndarray, **kw) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), **kw)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update applied to ``param`` in place.

    The denominator is ``sqrt(v_hat) + eps`` unless ``state.eps_inside_sqrt``
    selects ``sqrt(v_hat + eps)``.
    """
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ValueError(f"adam_step: shape mismatch param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"adam_step: non-finite gradient at step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * (grad * grad)
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    if state.eps_inside_sqrt:
        denom = np.sqrt(v_hat + state.eps)
    else:
        denom = np.sqrt(v_hat) + state.eps
    param -= (state.lr * m_hat / denom).astype(param.dtype, copy=False)
    return param


class Adam:
    """Adam over an ordered list of :class:`Parameter` objects."""

    def __init__(self, params: Sequence[Parameter], lr: float = 0.005, betas=(0.9, 0.999),
                 eps: float = 1e-8, eps_inside_sqrt: bool = False):
        self.params = list(params)
        self.states = [
            AdamState.like(p.value, beta1=betas[0], beta2=betas[1], eps=eps, lr=lr,
                           eps_inside_sqrt=eps_inside_sqrt)
            for p in self.params
        ]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        # all-or-nothing: validate every gradient before touching any weight
        for i, p in enumerate(self.params):
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"Adam: non-finite gradient in parameter #{i} {p.shape}")
        for p, s in zip(self.params, self.states):
            adam_step(p.value, p.grad, s)


# --------------------------------------------------------------------------
# gradient checking


def grad_check(layer, x: np.ndarray, h: float = 1e-5, n_coords: int = 50, seed: int = 0,
               loss: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``layer`` needs ``forward``, ``backward`` and ``parameters``. The scalar
    checked is ``loss(layer.forward(x))``, by default a fixed random
    projection of the output. Up to ``n_coords`` coordinates of the input and
    of each parameter are probed. The layer is deep-copied so running
    statistics of the caller's instance are untouched.
    """
    layer = copy.deepcopy(layer)
    x = np.array(x, dtype=np.float64, copy=True)
    rng = np.random.default_rng(seed)
    if loss is None:
        probe = layer.forward(x)
        weights = rng.standard_normal(probe.shape)

        def loss(y):
            return float(np.sum(y * weights)), weights

    for p in layer.parameters():
        p.zero_grad()
    _, g_out = loss(layer.forward(x))
    analytic_x = layer.backward(g_out)

    def evaluate() -> float:
        return loss(layer.forward(x))[0]

    worst = 0.0
    targets = [(x, analytic_x)] + [(p.value, p.grad.copy()) for p in layer.parameters()]
    for arr, analytic in targets:
        flat = arr.reshape(-1)
        grad_flat = np.asarray(analytic).reshape(-1)
        if flat.size <= n_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=n_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate()
            flat[i] = orig - h
            down = evaluate()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = float(grad_flat[i])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
