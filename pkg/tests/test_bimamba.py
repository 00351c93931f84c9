import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depmamba.bimamba import SEQUENCE_BACKENDS, BiMambaBlock, IdentityBlock, swap
from depmamba.errors import DimensionError
from depmamba.numerics import ParamStore


def make_block(N=3, H=4, seed=0, **kw):
    store = ParamStore()
    block = BiMambaBlock(store, "blk", N, state_size=H, rng=np.random.default_rng(seed), **kw)
    return store, block


def tie_directions(store):
    for key in list(store.params):
        if "_bwd" in key:
            store.set(key, store[key.replace("_bwd", "_fwd")].copy())


def test_swap_examples():
    np.testing.assert_array_equal(swap(np.array([1, 2, 3])), [3, 2, 1])
    np.testing.assert_array_equal(swap(np.array([[4.0]])), [[4.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 12), st.integers(0, 1000))
def test_swap_is_an_involution(rows, cols, seed):
    x = np.random.default_rng(seed).normal(size=(rows, cols))
    np.testing.assert_array_equal(swap(swap(x)), x)


def test_expanded_width_and_independent_paths():
    store, block = make_block(N=5)
    assert block.expanded == 10
    assert store["blk.in_i.w"].shape == (10, 5)
    assert store["blk.out.w"].shape == (5, 10)
    assert not np.array_equal(store["blk.conv_fwd.w"], store["blk.conv_bwd.w"])
    assert not np.array_equal(store["blk.ssm_fwd.dt_w"], store["blk.ssm_bwd.dt_w"])


def test_zero_input_single_feature_hand_oracle():
    store, block = make_block(N=1, H=1, seed=3)
    for key in store.params:
        if key.endswith(".b") and "dt_b" not in key:
            store.params[key][...] = 0.0
    V = 3
    out, cache = block.forward(np.zeros((1, V)))
    # a single feature normalises to zero, so the zero-bias block returns exactly zero
    np.testing.assert_array_equal(out, 0.0)

    def direction(d):
        ys = []
        for e in range(2):
            g = 0.5  # sigmoid of a zero convolution
            pre = sum(store[f"blk.ssm_{d}.dt_w"][e, k] * g for k in range(2))
            delta = math.log1p(math.exp(pre + store[f"blk.ssm_{d}.dt_b"][e]))
            b = sum(store[f"blk.ssm_{d}.b_w"][0, k] * g for k in range(2))
            c = sum(store[f"blk.ssm_{d}.c_w"][0, k] * g for k in range(2))
            a = -math.exp(store[f"blk.ssm_{d}.a_log"][e, 0])
            h, row = 0.0, []
            for _ in range(V):
                h = math.exp(delta * a) * h + (math.exp(delta * a) - 1) / a * b * g
                row.append(0.5 * c * h)  # gate sigmoid(0) = 0.5
            ys.append(row)
        return np.array(ys)

    jf, jb = direction("fwd"), direction("bwd")
    m = 0.5 * (jf + jb[:, ::-1])
    expected = store["blk.out.w"] @ m
    np.testing.assert_allclose(cache["o"], expected, rtol=1e-12, atol=1e-15)


def test_tied_parameters_give_reversal_equivariance():
    store, block = make_block(N=3, H=4, seed=1)
    tie_directions(store)
    x = np.random.default_rng(2).normal(size=(2, 3, 17))
    out, _ = block.forward(x)
    out_rev, _ = block.forward(swap(x))
    np.testing.assert_allclose(out_rev, swap(out), rtol=1e-10, atol=1e-12)


def test_length_one_collapses_to_anterior_path():
    store, block = make_block(N=2, H=3, seed=4)
    tie_directions(store)
    x = np.random.default_rng(5).normal(size=(2, 1))
    _, cache = block.forward(x)
    j = cache["sz"] * cache["y_fwd"]
    np.testing.assert_allclose(cache["m"], j, rtol=1e-14)
    np.testing.assert_allclose(cache["o"], store["blk.out.w"] @ j + store["blk.out.b"][:, None],
                               rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 20), st.integers(1, 3), st.booleans())
def test_shape_preserved(N, V, batch, residual):
    _, block = make_block(N=N, H=2, residual=residual)
    x = np.random.default_rng(V).normal(size=(batch, N, V))
    out, _ = block.forward(x)
    assert out.shape == x.shape
    assert np.all(np.isfinite(out))


def test_residual_flag():
    store, block = make_block(N=3, residual=False)
    store_r, block_r = make_block(N=3, residual=True)
    x = np.random.default_rng(6).normal(size=(3, 8))
    np.testing.assert_allclose(block_r.forward(x)[0] - x, block.forward(x)[0], rtol=1e-14)


def test_width_mismatch():
    _, block = make_block(N=3)
    with pytest.raises(DimensionError, match="expected 3 features"):
        block.forward(np.zeros((4, 5)))


def test_identity_backend_passes_through():
    x = np.arange(6.0).reshape(2, 3)
    block = SEQUENCE_BACKENDS["identity"](ParamStore(), "id", 2)
    assert isinstance(block, IdentityBlock)
    out, cache = block.forward(x)
    np.testing.assert_array_equal(out, x)
    np.testing.assert_array_equal(block.backward(x, cache), x)
