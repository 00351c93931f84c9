"""Finite-difference gradient suites for every differentiable module.

Each suite builds a small 64-bit fixture, wraps the module's forward and
backward into a scalar loss ``sum(out * R)`` with a fixed random projection
``R``, and hands it to :func:`numerics.grad_check`. Inputs are registered as
parameters so input gradients are checked alongside weight gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import ExternalAttention
from .bimamba import BiMambaBlock
from .config import ModelConfig, build
from .head import PredictionHead
from .model import DepressionEstimator
from .numerics import (
    GradCheckReport,
    ParamStore,
    avg_pool,
    avg_pool_backward,
    conv1d,
    conv1d_backward,
    grad_check,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
    softplus,
    softplus_backward,
)
from .ssm import SelectiveSSM

MODULE_TOLERANCE = 1e-5
FULL_TOLERANCE = 1e-3
# Plain central differences sit between cancellation noise (small steps) and
# truncation error (large steps) near 1e-5 relative for the SSM chain and for
# coordinates with tiny gradients. A Richardson-extrapolated step of 1e-3
# clears both by an order of magnitude.
EPSILON = 1e-3
# The composed model has ReLU kinks (need small steps) and gradients spread
# over five decades on a loss near 400 (small ones need large steps), so each
# coordinate gets its step from a ladder running 1e-3 down to 1e-6.
FULL_EPSILON = 1e-3
FULL_RUNGS = 7


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed

    def row(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{self.name:<20} {self.report.max_error:.3e} "
                f"< {self.report.tolerance:.0e} {verdict}")


def _condition_ssm(store: ParamStore, rng) -> None:
    """Move every SSM step-size bias into a range where finite differences resolve."""
    for key in store.params:
        if key.endswith(".dt_b"):
            store.params[key][...] = rng.uniform(-1.5, 0.5, size=store.params[key].shape)


def _projection(rng, shape):
    return rng.normal(size=shape)


def check_ops(seed: int = 0) -> SuiteResult:
    """Chain of every elementary op: linear, both convs, activations, norm, softmax, pool."""
    rng = np.random.default_rng(seed)
    s = ParamStore()
    s.add("x", rng.normal(size=(3, 7)))
    s.add("lin.w", rng.normal(size=(4, 3)))
    s.add("lin.b", rng.normal(size=4))
    s.add("dw.w", rng.normal(size=(4, 3)))
    s.add("dw.b", rng.normal(size=4))
    s.add("conv.w", rng.normal(size=(3, 4, 3)))
    s.add("conv.b", rng.normal(size=3))
    s.add("ln.gain", rng.normal(size=3))
    s.add("ln.bias", rng.normal(size=3))
    R = _projection(rng, (3, 1))

    def f(st):
        a = linear(st["x"], st["lin.w"], st["lin.b"])
        b = sigmoid(conv1d(a, st["dw.w"], st["dw.b"], mode="causal"))
        c = softplus(conv1d(b, st["conv.w"], st["conv.b"], mode="same", depthwise=False))
        d, ln_cache = layer_norm(c, -2, st["ln.gain"], st["ln.bias"])
        e = softmax(d, axis=-1)
        out = avg_pool(e * d, axis=-1)
        # backward
        dprod = avg_pool_backward(R, (e * d).shape, axis=-1)
        dd = dprod * e + softmax_backward(dprod * d, e, axis=-1)
        dc, dg, dbias = layer_norm_backward(dd, ln_cache)
        st.accumulate("ln.gain", dg)
        st.accumulate("ln.bias", dbias)
        dpre = softplus_backward(dc, conv1d(b, st["conv.w"], st["conv.b"], "same", False))
        db_, dk, dcb = conv1d_backward(dpre, b, st["conv.w"], "same", False)
        st.accumulate("conv.w", dk)
        st.accumulate("conv.b", dcb)
        dpre = sigmoid_backward(db_, b)
        da, dk, dcb = conv1d_backward(dpre, a, st["dw.w"], "causal")
        st.accumulate("dw.w", dk)
        st.accumulate("dw.b", dcb)
        dx, dw, dlb = linear_backward(da, st["x"], st["lin.w"])
        st.accumulate("lin.w", dw)
        st.accumulate("lin.b", dlb)
        st.accumulate("x", dx)
        return float((out * R).sum())

    return SuiteResult("tensor_numerics", grad_check(f, s, EPSILON, MODULE_TOLERANCE, richardson=True))


def _module_suite(name, build_module, input_shape, seed, max_entries=None,
                  epsilon=EPSILON, tolerance=MODULE_TOLERANCE,
                  richardson=True) -> SuiteResult:
    rng = np.random.default_rng(seed)
    s = ParamStore()
    module = build_module(s, rng)
    _condition_ssm(s, rng)
    s.add("input", rng.normal(size=input_shape))
    out0, _ = module.forward(s["input"])
    R = _projection(rng, np.shape(out0))

    def f(st):
        out, cache = module.forward(st["input"])
        st.accumulate("input", module.backward(R, cache))
        return float((np.asarray(out) * R).sum())

    return SuiteResult(name, grad_check(f, s, epsilon, tolerance, max_entries, seed, richardson))


def check_ssm(seed: int = 0, use_scan: bool = True) -> SuiteResult:
    label = "ssm_core" if use_scan else "ssm_core/recurrence"
    return _module_suite(
        label, lambda s, rng: SelectiveSSM(s, "ssm", 3, 4, rng, use_scan), (2, 3, 9), seed
    )


def check_bimamba(seed: int = 0) -> SuiteResult:
    return _module_suite(
        "bimamba",
        lambda s, rng: BiMambaBlock(s, "blk", 3, state_size=4, conv_width=4, rng=rng),
        (2, 3, 10), seed,
    )


def check_attention(seed: int = 0, placement: str = "time") -> SuiteResult:
    label = "external_attention" if placement == "time" else "external_attention/features"
    return _module_suite(
        label, lambda s, rng: ExternalAttention(s, "ea", 4, placement, True, rng), (4, 9),
        seed,
    )


def check_head(seed: int = 0) -> SuiteResult:
    class _Head(PredictionHead):
        def forward(self, Z):
            score, cache = super().forward(Z)
            return np.array(score), cache

    return _module_suite(
        "prediction_head", lambda s, rng: _Head(s, "head", 8, 3, 6, rng), (8, 7), seed,
    )


def check_model(cfg: ModelConfig | None = None, seconds: float = 1.0, seed: int = 0,
                max_entries: int = 3) -> SuiteResult:
    """Composed model, squared-error loss on one synthetic clip, sampled coordinates."""
    cfg = cfg or build(preset="tiny")[0]
    if cfg.precision != "float64":
        cfg = ModelConfig(**{**cfg.__dict__, "precision": "float64"})
    rng = np.random.default_rng(seed)
    model = DepressionEstimator(cfg)
    _condition_ssm(model.store, rng)
    wave = rng.normal(size=int(seconds * cfg.sample_rate))
    target = 20.0

    def f(st):
        loss, _ = model.loss_and_grad(wave, target)
        return loss

    report = grad_check(f, model.store, FULL_EPSILON, FULL_TOLERANCE, max_entries, seed,
                        rungs=FULL_RUNGS)
    return SuiteResult("full_model", report)


def run_all(cfg: ModelConfig | None = None, full: bool = True, seed: int = 0) -> list[SuiteResult]:
    results = [
        check_ops(seed),
        check_ssm(seed),
        check_ssm(seed, use_scan=False),
        check_bimamba(seed),
        check_attention(seed),
        check_attention(seed, "features"),
        check_head(seed),
    ]
    if full:
        results.append(check_model(cfg, seed=seed))
    return results
