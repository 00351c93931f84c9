"""Regression head: conv/ReLU stack, global average pool, two FC layers."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InferenceError
from .numerics import (
    avg_pool,
    avg_pool_backward,
    conv1d,
    conv1d_backward,
    linear,
    linear_backward,
    relu,
    relu_backward,
    uniform_init,
)

BDI_MIN, BDI_MAX = 0.0, 63.0


def clamp_report(score: float) -> float:
    """Clamp a raw prediction to the BDI-II range for reporting."""
    return float(min(max(score, BDI_MIN), BDI_MAX))


class PredictionHead:
    def __init__(self, store, name, features, width=3, hidden=32, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.store, self.name = store, name
        self.features = features
        self.width = width
        c1, c2 = max(1, features // 2), max(1, features // 4)
        self.channels = (features, c1, c2)
        dt = store.dtype
        store.add(f"{name}.conv1.w", uniform_init(rng, (c1, features, width), features * width, dt))
        store.add(f"{name}.conv1.b", uniform_init(rng, (c1,), features * width, dt))
        store.add(f"{name}.conv2.w", uniform_init(rng, (c2, c1, width), c1 * width, dt))
        store.add(f"{name}.conv2.b", uniform_init(rng, (c2,), c1 * width, dt))
        store.add(f"{name}.fc1.w", uniform_init(rng, (hidden, c2), c2, dt))
        store.add(f"{name}.fc1.b", uniform_init(rng, (hidden,), c2, dt))
        store.add(f"{name}.fc2.w", uniform_init(rng, (1, hidden), hidden, dt))
        store.add(f"{name}.fc2.b", uniform_init(rng, (1,), hidden, dt))

    def p(self, key):
        return self.store[f"{self.name}.{key}"]

    def _finite(self, x, layer):
        if not np.all(np.isfinite(x)):
            raise InferenceError(f"non-finite activation in {self.name}.{layer}")
        return x

    def forward(self, Z):
        if Z.ndim != 2 or Z.shape[0] != self.features:
            raise DimensionError(f"head expects ({self.features}, L), got {Z.shape}")
        p1 = self._finite(conv1d(Z, self.p("conv1.w"), self.p("conv1.b"), "same", False), "conv1")
        a1 = relu(p1)
        p2 = self._finite(conv1d(a1, self.p("conv2.w"), self.p("conv2.b"), "same", False), "conv2")
        a2 = relu(p2)
        pooled = avg_pool(a2, axis=-1)  # (c2, 1)
        f1 = self._finite(linear(pooled, self.p("fc1.w"), self.p("fc1.b")), "fc1")
        h1 = relu(f1)
        out = self._finite(linear(h1, self.p("fc2.w"), self.p("fc2.b")), "fc2")
        return float(out[0, 0]), (Z, p1, a1, p2, a2, pooled, f1, h1)

    def backward(self, dscore, cache):
        Z, p1, a1, p2, a2, pooled, f1, h1 = cache
        s, n = self.store, self.name
        dout = np.full((1, 1), dscore, dtype=Z.dtype)
        dh1, dw, db = linear_backward(dout, h1, self.p("fc2.w"))
        s.accumulate(f"{n}.fc2.w", dw)
        s.accumulate(f"{n}.fc2.b", db)
        dpooled, dw, db = linear_backward(relu_backward(dh1, f1), pooled, self.p("fc1.w"))
        s.accumulate(f"{n}.fc1.w", dw)
        s.accumulate(f"{n}.fc1.b", db)
        da2 = avg_pool_backward(dpooled, a2.shape, axis=-1)
        da1, dk, db = conv1d_backward(relu_backward(da2, p2), a1, self.p("conv2.w"), "same", False)
        s.accumulate(f"{n}.conv2.w", dk)
        s.accumulate(f"{n}.conv2.b", db)
        dZ, dk, db = conv1d_backward(relu_backward(da1, p1), Z, self.p("conv1.w"), "same", False)
        s.accumulate(f"{n}.conv1.w", dk)
        s.accumulate(f"{n}.conv1.b", db)
        return dZ
