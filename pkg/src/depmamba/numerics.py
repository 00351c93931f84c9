"""Dense numeric core: forward ops, their hand-written gradients, Adam and a
finite-difference gradient checker.

Arrays are plain ``numpy.ndarray`` objects laid out as ``(..., features, time)``.
Every ``*_backward`` function takes the upstream gradient plus whatever the
forward pass returned and gives back the gradients of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, InferenceError, TrainingAbort

LAYER_NORM_EPS = 1e-5


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise InferenceError(f"non-finite values produced by {where}")
    return x


# ---------------------------------------------------------------------------
# linear


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """out[..., f, t] = sum_k w[f, k] x[..., k, t] + b[f]."""
    if x.ndim < 2 or w.ndim != 2 or x.shape[-2] != w.shape[1]:
        raise DimensionError(
            f"linear: input shape {x.shape} incompatible with weight shape {w.shape}"
        )
    out = np.matmul(w, x)
    if b is not None:
        if b.shape != (w.shape[0],):
            raise DimensionError(f"linear: bias shape {b.shape} vs weight {w.shape}")
        out += b[:, None]
    return out


def _flatten_features(x: np.ndarray) -> np.ndarray:
    # (..., F, T) -> (F, prod(...) * T)
    return np.moveaxis(x, -2, 0).reshape(x.shape[-2], -1)


def linear_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Returns ``(dx, dw, db)``."""
    dx = np.matmul(w.T, dout)
    dw = _flatten_features(dout) @ _flatten_features(x).T
    db = _flatten_features(dout).sum(axis=1)
    return dx, dw, db


# ---------------------------------------------------------------------------
# conv1d


def _pad_amounts(width: int, mode: str) -> tuple[int, int]:
    if mode == "causal":
        return width - 1, 0
    if mode == "same":
        left = (width - 1) // 2
        return left, width - 1 - left
    raise ValueError(f"unknown conv mode {mode!r}")


def conv1d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    mode: str = "causal",
    depthwise: bool = True,
) -> np.ndarray:
    """Length-preserving 1-D convolution (cross-correlation) over the last axis.

    Depthwise kernels have shape ``(C, W)``; dense kernels ``(C_out, C_in, W)``.
    """
    width = kernel.shape[-1]
    if width < 1:
        raise DimensionError("conv1d: kernel width must be >= 1")
    channels = kernel.shape[0] if depthwise else kernel.shape[1]
    if (depthwise and kernel.ndim != 2) or (not depthwise and kernel.ndim != 3):
        raise DimensionError(f"conv1d: bad kernel rank for shape {kernel.shape}")
    if x.ndim < 2 or x.shape[-2] != channels:
        raise DimensionError(f"conv1d: input shape {x.shape} vs kernel shape {kernel.shape}")
    T = x.shape[-1]
    left, right = _pad_amounts(width, mode)
    if T < 1 or T + left + right < width:
        raise DimensionError(f"conv1d: kernel width {width} exceeds padded input length")
    pad = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    xp = np.pad(x, pad)
    if depthwise:
        out = kernel[:, 0:1] * xp[..., 0:T]
        for k in range(1, width):
            out += kernel[:, k : k + 1] * xp[..., k : k + T]
    else:
        out = np.matmul(kernel[:, :, 0], xp[..., 0:T])
        for k in range(1, width):
            out += np.matmul(kernel[:, :, k], xp[..., k : k + T])
    if bias is not None:
        out += bias[:, None]
    return out


def conv1d_backward(dout, x, kernel, mode="causal", depthwise=True):
    """Returns ``(dx, dkernel, dbias)``."""
    width = kernel.shape[-1]
    T = x.shape[-1]
    left, right = _pad_amounts(width, mode)
    pad = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    xp = np.pad(x, pad)
    dxp = np.zeros_like(xp)
    dkernel = np.zeros_like(kernel)
    lead = tuple(range(x.ndim - 2))
    if depthwise:
        for k in range(width):
            dxp[..., k : k + T] += kernel[:, k : k + 1] * dout
            dkernel[:, k] = (dout * xp[..., k : k + T]).sum(axis=lead + (-1,))
    else:
        d2 = _flatten_features(dout)
        for k in range(width):
            dxp[..., k : k + T] += np.matmul(kernel[:, :, k].T, dout)
            dkernel[:, :, k] = d2 @ _flatten_features(xp[..., k : k + T]).T
    dbias = dout.sum(axis=lead + (-1,))
    return dxp[..., left : left + T], dkernel, dbias


# ---------------------------------------------------------------------------
# element-wise and axis-wise activations


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_backward(dout, y):
    return dout * y * (1.0 - y)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_backward(dout, x):
    return dout * sigmoid(x)


def hadamard(a, b):
    return a * b


def _check_axis(x, axis):
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")


def softmax(x, axis=-1):
    _check_axis(x, axis)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dout, y, axis=-1):
    return y * (dout - (dout * y).sum(axis=axis, keepdims=True))


def _along(v, ndim, axis):
    shape = [1] * ndim
    shape[axis] = -1
    return v.reshape(shape)


def layer_norm(x, axis=-2, gain=None, bias=None, eps=LAYER_NORM_EPS):
    """Normalise over ``axis``; returns ``(out, cache)``."""
    _check_axis(x, axis)
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gain is not None:
        out = out * _along(gain, x.ndim, axis)
    if bias is not None:
        out = out + _along(bias, x.ndim, axis)
    return out, (xhat, inv, gain, axis)


def layer_norm_backward(dout, cache):
    """Returns ``(dx, dgain, dbias)``."""
    xhat, inv, gain, axis = cache
    others = tuple(i for i in range(xhat.ndim) if i != axis % xhat.ndim)
    dgain = (dout * xhat).sum(axis=others)
    dbias = dout.sum(axis=others)
    dxhat = dout * _along(gain, xhat.ndim, axis) if gain is not None else dout
    n = xhat.shape[axis]
    dx = inv / n * (
        n * dxhat
        - dxhat.sum(axis=axis, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=axis, keepdims=True)
    )
    return dx, dgain, dbias


def avg_pool(x, axis=-1):
    """Global average over ``axis`` (kept as a length-1 axis)."""
    _check_axis(x, axis)
    return x.mean(axis=axis, keepdims=True)


def avg_pool_backward(dout, shape, axis=-1):
    return np.broadcast_to(dout / shape[axis], shape).copy()


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# parameters and optimisation


class ParamStore:
    """Named parameters with gradient accumulators and Adam moments."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=self.dtype)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def set(self, name: str, value) -> None:
        """Overwrite a parameter in place (shape must match)."""
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != self.params[name].shape:
            raise DimensionError(
                f"{name}: shape {value.shape} != {self.params[name].shape}"
            )
        self.params[name][...] = value

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        g = self.grads[name]
        if grad.shape != g.shape:
            raise DimensionError(f"gradient for {name}: {grad.shape} != {g.shape}")
        g += grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = store.grad_norm()
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in store.grads.values():
            g *= scale
    return norm


def adam_step(store: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingAbort(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = store.grads[name]
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.zero_grad()


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def relative_error(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _central(f, store, flat, i, epsilon):
    orig = flat[i]
    flat[i] = orig + epsilon
    fp = f(store)
    flat[i] = orig - epsilon
    fm = f(store)
    flat[i] = orig
    return (fp - fm) / (2 * epsilon)


def _ladder(f, store, flat, i, epsilon, rungs):
    """Central difference at the step where neighbouring rungs agree best.

    Steps shrink by sqrt(10) per rung from ``epsilon``. Large steps straddle
    kinks and small ones drown in rounding noise; where two adjacent estimates
    agree closely neither effect is active. The choice never looks at the
    analytic gradient.
    """
    est = [_central(f, store, flat, i, epsilon * 10.0 ** (-k / 2)) for k in range(rungs)]
    gaps = [relative_error(a, b) for a, b in zip(est, est[1:])]
    k = int(np.argmin(gaps))
    return 0.5 * (est[k] + est[k + 1])


def grad_check(
    f: Callable[[ParamStore], float],
    store: ParamStore,
    epsilon: float = 1e-6,
    tolerance: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    richardson: bool = False,
    rungs: int = 1,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``f(store)`` must return the scalar loss and, as a side effect, accumulate
    its analytic gradient into ``store.grads``. When ``max_entries`` is set,
    that many coordinates per parameter are sampled instead of all of them.
    ``richardson`` combines steps ``epsilon`` and ``epsilon / 2`` to cancel the
    second-order truncation term, which allows a larger, less noisy step.
    ``rungs > 1`` instead picks a step per coordinate from a descending ladder
    (see ``_ladder``), for losses with ReLU kinks and widely spread gradients.
    """
    store.zero_grad()
    f(store)
    analytic = {k: g.copy() for k, g in store.grads.items()}
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, p in store.params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for i in idx:
            if rungs > 1:
                numeric = _ladder(f, store, flat, i, epsilon, rungs)
            else:
                numeric = _central(f, store, flat, i, epsilon)
            if richardson and rungs == 1:
                numeric = (4 * _central(f, store, flat, i, epsilon / 2) - numeric) / 3
            worst = max(worst, float(relative_error(analytic[name].reshape(-1)[i], numeric)))
        report.errors[name] = worst
        report.checked[name] = len(idx)
    store.zero_grad()
    return report
