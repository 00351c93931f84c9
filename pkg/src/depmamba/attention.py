"""Temporal external attention over an (N, L) sequence.

The key map is ``relu(L_K(Y))``; its element-wise interaction with Y gives
attention logits. The logits are softmax-normalised along one axis and used
to take a convex combination of Y along that axis, which is broadcast back
to (N, L) and added to Y.

``softmax_placement="time"``: weights over time, the per-feature context
vector then passes through ``L_V``.

``softmax_placement="features"``: ``L_V`` is applied to the logits first and
the weights run over features, giving one context value per time step.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (
    linear,
    linear_backward,
    relu,
    relu_backward,
    softmax,
    softmax_backward,
    uniform_init,
)

PLACEMENTS = ("time", "features")


class ExternalAttention:
    def __init__(self, store, name, features, softmax_placement="time", residual=True, rng=None):
        if softmax_placement not in PLACEMENTS:
            raise ConfigError(f"softmax_placement must be one of {PLACEMENTS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.store, self.name = store, name
        self.features = features
        self.placement = softmax_placement
        self.residual = residual
        for key in ("key", "value"):
            store.add(f"{name}.{key}.w", uniform_init(rng, (features, features), features, store.dtype))
            store.add(f"{name}.{key}.b", uniform_init(rng, (features,), features, store.dtype))

    def p(self, key):
        return self.store[f"{self.name}.{key}"]

    def attention_weights(self, Y):
        """Returns ``(weights, cache)``; weights sum to one along the attended axis."""
        pk = linear(Y, self.p("key.w"), self.p("key.b"))
        mk = relu(pk)
        logits = Y * mk
        if self.placement == "time":
            return softmax(logits, axis=-1), (pk, mk, logits)
        u = linear(logits, self.p("value.w"), self.p("value.b"))
        return softmax(u, axis=-2), (pk, mk, logits)

    def forward(self, Y):
        if Y.ndim < 2 or Y.shape[-2] != self.features:
            raise DimensionError(f"attention expects {self.features} features, got {Y.shape}")
        A, wc = self.attention_weights(Y)
        if self.placement == "time":
            ctx = (A * Y).sum(axis=-1, keepdims=True)  # (N, 1)
            mv = linear(ctx, self.p("value.w"), self.p("value.b"))
        else:
            ctx = (A * Y).sum(axis=-2, keepdims=True)  # (1, L)
            mv = ctx
        Z = Y + mv if self.residual else np.broadcast_to(mv, Y.shape).copy()
        return Z, (Y, A, wc, ctx)

    def backward(self, dZ, cache):
        Y, A, (pk, mk, logits), ctx = cache
        s, n = self.store, self.name
        dY = dZ.copy() if self.residual else np.zeros_like(Y)
        if self.placement == "time":
            dmv = dZ.sum(axis=-1, keepdims=True)
            dctx, dw, db = linear_backward(dmv, ctx, self.p("value.w"))
            s.accumulate(f"{n}.value.w", dw)
            s.accumulate(f"{n}.value.b", db)
            dA = dctx * Y
            dY += dctx * A
            dlogits = softmax_backward(dA, A, axis=-1)
        else:
            dctx = dZ.sum(axis=-2, keepdims=True)
            dA = dctx * Y
            dY += dctx * A
            du = softmax_backward(dA, A, axis=-2)
            dlogits, dw, db = linear_backward(du, logits, self.p("value.w"))
            s.accumulate(f"{n}.value.w", dw)
            s.accumulate(f"{n}.value.b", db)
        dY += dlogits * mk
        dpk = relu_backward(dlogits * Y, pk)
        dx, dw, db = linear_backward(dpk, Y, self.p("key.w"))
        s.accumulate(f"{n}.key.w", dw)
        s.accumulate(f"{n}.key.b", db)
        return dY + dx
