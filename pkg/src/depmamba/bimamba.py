"""Bidirectional Mamba block.

Input and output are ``(B, N, V)``: a batch of N-feature sequences of
length V. The anterior path runs forward in time, the posterior path runs on
the time-reversed stream and is swapped back before the two are averaged.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .numerics import (
    conv1d,
    conv1d_backward,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    sigmoid,
    sigmoid_backward,
    uniform_init,
)
from .ssm import SelectiveSSM

DIRECTIONS = ("fwd", "bwd")


def swap(x):
    """Reverse the time (last) axis."""
    return x[..., ::-1]


class BiMambaBlock:
    def __init__(self, store, name, features, state_size=16, conv_width=4, rng=None,
                 residual=True, use_scan=True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.store = store
        self.name = name
        self.features = N = features
        self.expanded = E = 2 * features
        self.conv_width = conv_width
        self.residual = residual
        dtype = store.dtype
        for key in ("in_i", "in_z"):
            store.add(f"{name}.{key}.w", uniform_init(rng, (E, N), N, dtype))
            store.add(f"{name}.{key}.b", uniform_init(rng, (E,), N, dtype))
        self.ssm = {}
        for d in DIRECTIONS:
            store.add(f"{name}.conv_{d}.w", uniform_init(rng, (E, conv_width), conv_width, dtype))
            store.add(f"{name}.conv_{d}.b", uniform_init(rng, (E,), conv_width, dtype))
            self.ssm[d] = SelectiveSSM(store, f"{name}.ssm_{d}", E, state_size, rng, use_scan)
        store.add(f"{name}.out.w", uniform_init(rng, (N, E), E, dtype))
        store.add(f"{name}.out.b", uniform_init(rng, (N,), E, dtype))
        store.add(f"{name}.norm.gain", np.ones(N))
        store.add(f"{name}.norm.bias", np.zeros(N))

    def p(self, key):
        return self.store[f"{self.name}.{key}"]

    def forward(self, I):
        if I.ndim < 2 or I.shape[-2] != self.features:
            raise DimensionError(
                f"{self.name}: expected {self.features} features, got shape {I.shape}"
            )
        c = {"I": I}
        i = linear(I, self.p("in_i.w"), self.p("in_i.b"))
        z = linear(I, self.p("in_z.w"), self.p("in_z.b"))
        c["i"], c["z"] = i, z
        sz = sigmoid(z)
        c["sz"] = sz
        streams = {"fwd": i, "bwd": swap(i)}
        gates = {"fwd": sz, "bwd": swap(sz)}
        merged = None
        for d in DIRECTIONS:
            g = sigmoid(conv1d(streams[d], self.p(f"conv_{d}.w"), self.p(f"conv_{d}.b")))
            y, c[f"ssm_{d}"] = self.ssm[d].forward(g)
            c[f"g_{d}"], c[f"y_{d}"] = g, y
            j = gates[d] * y
            j = j if d == "fwd" else swap(j)
            merged = j if merged is None else merged + j
        m = 0.5 * merged
        c["m"] = m
        o = linear(m, self.p("out.w"), self.p("out.b"))
        c["o"] = o
        out, c["ln"] = layer_norm(o, axis=-2, gain=self.p("norm.gain"), bias=self.p("norm.bias"))
        if self.residual:
            out = out + I
        return out, c

    def backward(self, dout, c):
        s, n = self.store, self.name
        dln = dout
        do, dgain, dbias = layer_norm_backward(dln, c["ln"])
        s.accumulate(f"{n}.norm.gain", dgain)
        s.accumulate(f"{n}.norm.bias", dbias)
        dm, dw, db = linear_backward(do, c["m"], self.p("out.w"))
        s.accumulate(f"{n}.out.w", dw)
        s.accumulate(f"{n}.out.b", db)
        dj_total = 0.5 * dm
        dsz = np.zeros_like(c["sz"])
        di = np.zeros_like(c["i"])
        for d in DIRECTIONS:
            dj = dj_total if d == "fwd" else swap(dj_total)
            gate = c["sz"] if d == "fwd" else swap(c["sz"])
            dgate = dj * c[f"y_{d}"]
            dsz += dgate if d == "fwd" else swap(dgate)
            dg = self.ssm[d].backward(dj * gate, c[f"ssm_{d}"])
            dpre = sigmoid_backward(dg, c[f"g_{d}"])
            stream = c["i"] if d == "fwd" else swap(c["i"])
            dstream, dk, dcb = conv1d_backward(dpre, stream, self.p(f"conv_{d}.w"))
            s.accumulate(f"{n}.conv_{d}.w", dk)
            s.accumulate(f"{n}.conv_{d}.b", dcb)
            di += dstream if d == "fwd" else swap(dstream)
        dz = sigmoid_backward(dsz, c["sz"])
        dI = dout.copy() if self.residual else np.zeros_like(c["I"])
        for key, dx_in in (("in_i", di), ("in_z", dz)):
            dx, dw, db = linear_backward(dx_in, c["I"], self.p(f"{key}.w"))
            s.accumulate(f"{n}.{key}.w", dw)
            s.accumulate(f"{n}.{key}.b", db)
            dI += dx
        return dI


class IdentityBlock:
    """Pass-through sequence backend used for plumbing checks."""

    def __init__(self, store, name, features, **_):
        self.features = features

    def forward(self, I):
        return I, None

    def backward(self, dout, cache):
        return dout


SEQUENCE_BACKENDS = {
    "bimamba": BiMambaBlock,
    "identity": IdentityBlock,
}
