"""Selective state-space kernel.

Two evaluation paths share the same discretised recurrence
``h_t = a_t * h_{t-1} + b_t`` (diagonal state, ``h_{-1} = 0``):

* :func:`linear_recurrence` walks the sequence one step at a time and is kept
  as the reference oracle;
* :func:`linear_scan` composes ``(a, b)`` pairs associatively block by block
  (reduce, scan the block aggregates, replay) and is what the model uses.

The generic recurrences run along axis 0; the selective layer works on
(batch, channel, time) arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DimensionError, ParameterError
from .numerics import (
    linear,
    linear_backward,
    softplus,
    softplus_backward,
    uniform_init,
)

# Upper bound on elements of one (time, batch, channel, state) work array.
SCAN_BUDGET = 1 << 21
SCAN_BLOCK = 64


def discretize(a, b, delta):
    """Zero-order-hold discretisation of a diagonal system.

    Returns ``(a_bar, b_bar)`` with ``a_bar = exp(delta * a)`` and
    ``b_bar = (exp(delta * a) - 1) / a * b``, using ``delta * b`` where a == 0.
    """
    a = np.asarray(a, dtype=np.float64) if not isinstance(a, np.ndarray) else a
    delta = np.asarray(delta, dtype=a.dtype)
    if np.any(delta <= 0):
        raise ParameterError("step size delta must be strictly positive")
    da = delta * a
    a_bar = np.exp(da)
    zero = a == 0
    safe = np.where(zero, 1.0, a)
    q = np.where(zero, delta, np.expm1(da) / safe)
    return a_bar, q * b


def combine(left, right):
    """Associative composition of two recurrence steps ``(a, b)``.

    Applying ``left`` then ``right`` maps h to ``a_r * (a_l * h + b_l) + b_r``.
    """
    a_l, b_l = left
    a_r, b_r = right
    return a_r * a_l, a_r * b_l + b_r


def linear_recurrence(a, b):
    """Sequential evaluation of ``h_t = a_t h_{t-1} + b_t`` along axis 0."""
    h = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=b.dtype)
    prev = np.zeros(h.shape[1:], dtype=b.dtype)
    for t in range(h.shape[0]):
        prev = a[t] * prev + b[t]
        h[t] = prev
    return h


@njit(cache=True)
def _scan_1d(a, b, h, block):
    # Reduce-then-scan: per-block aggregates, an exclusive scan of the
    # aggregates with ``combine``, then each block replayed from its carry.
    T = b.shape[0]
    nblocks = (T + block - 1) // block
    carry_a = np.ones(nblocks)
    carry_b = np.zeros(nblocks)
    for k in range(nblocks):
        pa, pb = 1.0, 0.0
        for t in range(k * block, min(T, (k + 1) * block)):
            pa, pb = a[t] * pa, a[t] * pb + b[t]
        carry_a[k], carry_b[k] = pa, pb
    acc = 0.0
    for k in range(nblocks):
        hb = acc
        acc = carry_a[k] * acc + carry_b[k]
        carry_b[k] = hb
    for k in range(nblocks):
        hh = carry_b[k]
        for t in range(k * block, min(T, (k + 1) * block)):
            hh = a[t] * hh + b[t]
            h[t] = hh


def linear_scan(a, b, block=SCAN_BLOCK):
    """Same result as :func:`linear_recurrence` via a blocked associative scan.

    The sequence is cut into blocks, each block is reduced to one ``(a, b)``
    pair, the pairs are scanned with :func:`combine`, and every block is then
    replayed from its incoming state.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    T = b.shape[0]
    a2 = np.ascontiguousarray(a.reshape(T, -1).T)
    b2 = np.ascontiguousarray(b.reshape(T, -1).T)
    h2 = np.empty_like(b2)
    for m in range(b2.shape[0]):
        _scan_1d(a2[m], b2[m], h2[m], block)
    return h2.T.reshape(b.shape)


def _reverse_solve(a, g):
    # G_t = g_t + a_{t+1} G_{t+1}, i.e. the forward recurrence run backwards in time.
    shifted = np.empty_like(a)
    shifted[:-1] = a[1:]
    shifted[-1] = 0.0
    return linear_recurrence(shifted[::-1], g[::-1])[::-1]


# ---------------------------------------------------------------------------
# single-channel reference API


@dataclass
class SsmParams:
    """Diagonal state-space parameters for one input channel.

    ``a`` has shape (H,). ``b`` and ``c`` are (T, H) per-step projections (or
    (H,) for a time-invariant system) and ``delta`` is (T,).
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    delta: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.a.shape[0]

    def expanded(self, T: int):
        H = self.hidden_size
        if H < 1:
            raise DimensionError("hidden size must be >= 1")
        b = np.broadcast_to(self.b, (T, H))
        c = np.broadcast_to(self.c, (T, H))
        delta = np.broadcast_to(np.asarray(self.delta, dtype=np.float64), (T,))
        return b, c, delta


def _single_channel(u, params: SsmParams, solve):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1:
        raise DimensionError(f"expected a 1-D input sequence, got shape {u.shape}")
    b, c, delta = params.expanded(u.shape[0])
    a_bar, b_bar = discretize(params.a[None, :], b, delta[:, None])
    h = solve(a_bar, b_bar * u[:, None])
    return (h * c).sum(axis=1)


def ssm_recurrence(u, params: SsmParams) -> np.ndarray:
    """y_t = C_t h_t with h_t evaluated step by step."""
    return _single_channel(u, params, linear_recurrence)


def ssm_scan(u, params: SsmParams) -> np.ndarray:
    """Same as :func:`ssm_recurrence`, evaluated with the associative scan."""
    return _single_channel(u, params, linear_scan)


# ---------------------------------------------------------------------------
# multi-channel selective layer


def _batch_slices(batch: int, per_item: int):
    step = max(1, SCAN_BUDGET // max(per_item, 1))
    for start in range(0, batch, step):
        yield slice(start, min(batch, start + step))


def _reference_forward(u, delta, A, bt, ct):
    # Vectorised over (batch, channel, state), stepping through time.
    B, E, T = u.shape
    H = A.shape[1]
    solve = linear_recurrence
    y = np.empty_like(u)
    for sl in _batch_slices(B, T * E * H):
        ut = np.moveaxis(u[sl], -1, 0)  # (T, b, E)
        dt = np.moveaxis(delta[sl], -1, 0)
        bb = np.moveaxis(bt[sl], -1, 0)[:, :, None, :]  # (T, b, 1, H)
        cc = np.moveaxis(ct[sl], -1, 0)[:, :, None, :]
        da = dt[..., None] * A
        a_bar = np.exp(da)
        bx = np.expm1(da) / A * bb * ut[..., None]
        h = solve(a_bar, bx)
        y[sl] = np.moveaxis((h * cc).sum(axis=-1), 0, -1)
    return y


def _reference_backward(dy, u, delta, A, bt, ct):
    # Back-propagation through time for _reference_forward; the (T, B, E, H)
    # intermediates are recomputed slice by slice.
    B, E, T = u.shape
    H = A.shape[1]
    solve = linear_recurrence
    du = np.empty_like(u)
    ddelta = np.empty_like(u)
    dbt = np.empty_like(bt)
    dct = np.empty_like(ct)
    dA = np.zeros_like(A)
    for sl in _batch_slices(B, T * E * H):
        ut = np.moveaxis(u[sl], -1, 0)[..., None]  # (T, b, E, 1)
        dt = np.moveaxis(delta[sl], -1, 0)[..., None]
        bb = np.moveaxis(bt[sl], -1, 0)[:, :, None, :]  # (T, b, 1, H)
        cc = np.moveaxis(ct[sl], -1, 0)[:, :, None, :]
        g = np.moveaxis(dy[sl], -1, 0)[..., None]
        da = dt * A
        a_bar = np.exp(da)
        em1 = np.expm1(da)
        q = em1 / A
        h = solve(a_bar, q * bb * ut)
        dct[sl] = np.moveaxis((g * h).sum(axis=2), 0, -1)
        G = _reverse_solve(a_bar, g * cc)  # dL/d(bx_t), total through time
        dabar = np.zeros_like(G)
        dabar[1:] = G[1:] * h[:-1]
        del h
        dq = G * bb * ut
        du[sl] = np.moveaxis((G * q * bb).sum(axis=-1), 0, -1)
        dbt[sl] = np.moveaxis((G * q * ut).sum(axis=2), 0, -1)
        del G
        t1 = dabar * a_bar
        ddelta[sl] = np.moveaxis((t1 * A + dq * a_bar).sum(axis=-1), 0, -1)
        dA += (t1 * dt + dq * (da * a_bar - em1) / (A * A)).sum(axis=(0, 1))
    return du, ddelta, dA, dbt, dct


def _expm1_delta_a(delta, A):
    # expm1(delta * a) for every (batch, channel, state, time); numpy's
    # vectorised expm1 is several times faster than the scalar call in a kernel.
    x = delta[:, :, None, :] * A[None, :, :, None]
    return np.expm1(x, out=x)


@njit(cache=True)
def _fused_forward(u, em1, A, bt, ct, block, y):
    B, E, T = u.shape
    H = A.shape[1]
    ab = np.empty(T)
    bx = np.empty(T)
    h = np.empty(T)
    for b in range(B):
        for e in range(E):
            for t in range(T):
                y[b, e, t] = 0.0
            for n in range(H):
                inv_a = 1.0 / A[e, n]
                for t in range(T):
                    m = em1[b, e, n, t]
                    ab[t] = m + 1.0
                    bx[t] = m * inv_a * bt[b, n, t] * u[b, e, t]
                _scan_1d(ab, bx, h, block)
                for t in range(T):
                    y[b, e, t] += ct[b, n, t] * h[t]


@njit(cache=True)
def _fused_backward(dy, u, delta, em1, A, bt, ct, block, du, ddelta, dA, dbt, dct):
    B, E, T = u.shape
    H = A.shape[1]
    ab = np.empty(T)
    q = np.empty(T)
    bx = np.empty(T)
    h = np.empty(T)
    ra = np.empty(T)
    rg = np.empty(T)
    rG = np.empty(T)
    for b in range(B):
        for e in range(E):
            for n in range(H):
                a = A[e, n]
                inv_a = 1.0 / a
                for t in range(T):
                    m = em1[b, e, n, t]
                    ab[t] = m + 1.0
                    q[t] = m * inv_a
                    bx[t] = q[t] * bt[b, n, t] * u[b, e, t]
                _scan_1d(ab, bx, h, block)
                # adjoint recurrence G_t = g_t + ab_{t+1} G_{t+1}, scanned in reversed time
                ra[0] = 0.0
                for s in range(T):
                    if s > 0:
                        ra[s] = ab[T - s]
                    rg[s] = dy[b, e, T - 1 - s] * ct[b, n, T - 1 - s]
                _scan_1d(ra, rg, rG, block)
                acc = 0.0
                hprev = 0.0
                for t in range(T):
                    G = rG[T - 1 - t]
                    dct[b, n, t] += dy[b, e, t] * h[t]
                    gb = G * bt[b, n, t]
                    dq = gb * u[b, e, t]
                    du[b, e, t] += gb * q[t]
                    dbt[b, n, t] += G * q[t] * u[b, e, t]
                    t1 = G * hprev * ab[t]
                    d = delta[b, e, t]
                    ddelta[b, e, t] += t1 * a + dq * ab[t]
                    # d/da of q = expm1(d a) / a is (d ab - q) / a
                    acc += t1 * d + dq * (d * ab[t] - q[t]) * inv_a
                    hprev = h[t]
                dA[e, n] += acc


def selective_scan(u, delta, A, bt, ct, use_scan=True):
    """Run the discretised selective system on a batch.

    u, delta: (B, E, T); A: (E, H); bt, ct: (B, H, T). Returns y: (B, E, T).
    Unbatched (E, T) inputs are accepted as well.
    ``use_scan=False`` selects the step-by-step reference implementation.
    """
    if u.ndim == 2:
        return selective_scan(u[None], delta[None], A, bt[None], ct[None], use_scan)[0]
    if not use_scan:
        return _reference_forward(u, delta, A, bt, ct)
    y = np.empty_like(u)
    _fused_forward(u, _expm1_delta_a(delta, A), A, bt, ct, SCAN_BLOCK, y)
    return y


def selective_scan_backward(dy, u, delta, A, bt, ct, use_scan=True):
    """Gradients of :func:`selective_scan`: ``(du, ddelta, dA, dbt, dct)``."""
    if u.ndim == 2:
        du, ddelta, dA, dbt, dct = selective_scan_backward(
            dy[None], u[None], delta[None], A, bt[None], ct[None], use_scan)
        return du[0], ddelta[0], dA, dbt[0], dct[0]
    if not use_scan:
        return _reference_backward(dy, u, delta, A, bt, ct)
    du = np.zeros_like(u)
    ddelta = np.zeros_like(u)
    dA = np.zeros_like(A)
    dbt = np.zeros_like(bt)
    dct = np.zeros_like(ct)
    _fused_backward(np.ascontiguousarray(dy), u, delta, _expm1_delta_a(delta, A), A, bt, ct,
                    SCAN_BLOCK, du, ddelta, dA, dbt, dct)
    return du, ddelta, dA, dbt, dct


class SelectiveSSM:
    """Input-selective diagonal SSM applied channel-wise to an (E, T) stream.

    Parameters: ``dt_w``/``dt_b`` produce the step size through softplus,
    ``b_w``/``c_w`` project the input to per-step B and C, and ``a_log``
    stores the state matrix as ``A = -exp(a_log)``.
    """

    def __init__(self, store, name, channels, state_size, rng, use_scan=True):
        self.store = store
        self.name = name
        self.channels = channels
        self.state_size = state_size
        self.use_scan = use_scan
        E, H = channels, state_size
        dtype = store.dtype
        store.add(f"{name}.dt_w", uniform_init(rng, (E, E), E, dtype))
        dt0 = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=E))
        store.add(f"{name}.dt_b", np.log(np.expm1(dt0)))
        store.add(f"{name}.b_w", uniform_init(rng, (H, E), E, dtype))
        store.add(f"{name}.c_w", uniform_init(rng, (H, E), E, dtype))
        store.add(f"{name}.a_log", np.tile(np.log(np.arange(1, H + 1, dtype=np.float64)), (E, 1)))

    def p(self, key):
        return self.store[f"{self.name}.{key}"]

    @property
    def A(self):
        return -np.exp(self.p("a_log"))

    def forward(self, u):
        pre = linear(u, self.p("dt_w"), self.p("dt_b"))
        delta = softplus(pre)
        bt = linear(u, self.p("b_w"))
        ct = linear(u, self.p("c_w"))
        y = selective_scan(u, delta, self.A, bt, ct, self.use_scan)
        return y, (u, pre, delta, bt, ct)

    def backward(self, dy, cache):
        u, pre, delta, bt, ct = cache
        A = self.A
        du, ddelta, dA, dbt, dct = selective_scan_backward(dy, u, delta, A, bt, ct, self.use_scan)
        s, n = self.store, self.name
        s.accumulate(f"{n}.a_log", dA * A)
        dpre = softplus_backward(ddelta, pre)
        dx, dw, db = linear_backward(dpre, u, self.p("dt_w"))
        s.accumulate(f"{n}.dt_w", dw)
        s.accumulate(f"{n}.dt_b", db)
        du += dx
        dx, dw, _ = linear_backward(dbt, u, self.p("b_w"))
        s.accumulate(f"{n}.b_w", dw)
        du += dx
        dx, dw, _ = linear_backward(dct, u, self.p("c_w"))
        s.accumulate(f"{n}.c_w", dw)
        du += dx
        return du
