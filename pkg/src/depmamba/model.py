"""Full estimator: encoder -> dual-path Bi-Mamba -> external attention -> head."""

from __future__ import annotations

import numpy as np

from .attention import ExternalAttention
from .config import ModelConfig
from .dualpath import DualPath, Encoder
from .head import PredictionHead
from .numerics import ParamStore


def standardize(wave):
    """Zero-mean, unit-RMS copy of a waveform (silent input is returned centred)."""
    centred = wave - wave.mean()
    rms = np.sqrt(np.mean(centred * centred))
    return centred / rms if rms > 0 else centred


class DepressionEstimator:
    def __init__(self, cfg: ModelConfig, store: ParamStore | None = None):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(cfg.precision)
        self.store = store if store is not None else ParamStore(self.dtype)
        rng = np.random.default_rng(cfg.seed)
        N = cfg.features
        self.encoder = Encoder(self.store, "encoder", N, cfg.encoder_width, cfg.encoder_stride, rng)
        self.dualpath = DualPath(
            self.store, "dualpath", N, cfg.chunk_size, cfg.repeats, cfg.backend, rng,
            state_size=cfg.state_size, conv_width=cfg.conv_width, residual=cfg.residual,
        )
        self.attention = (
            ExternalAttention(self.store, "attention", N, cfg.softmax_placement,
                              cfg.attention_residual, rng)
            if cfg.attention else None
        )
        self.head = PredictionHead(self.store, "head", N, cfg.head_width, cfg.head_hidden, rng)

    def forward(self, wave):
        wave = np.asarray(wave, dtype=self.dtype)
        if self.cfg.normalize_input:
            wave = standardize(wave)
        x, ce = self.encoder.forward(wave)
        y, cd = self.dualpath.forward(x)
        ca = None
        if self.attention is not None:
            y, ca = self.attention.forward(y)
        score, ch = self.head.forward(y)
        return score, (ce, cd, ca, ch)

    def backward(self, dscore, cache):
        ce, cd, ca, ch = cache
        d = self.head.backward(dscore, ch)
        if self.attention is not None:
            d = self.attention.backward(d, ca)
        d = self.dualpath.backward(d, cd)
        self.encoder.backward(d, ce)

    def predict(self, wave) -> float:
        return self.forward(wave)[0]

    def loss_and_grad(self, wave, target: float) -> tuple[float, float]:
        """Squared error on the raw score; accumulates gradients. Returns (loss, score)."""
        score, cache = self.forward(wave)
        err = score - float(target)
        self.backward(2.0 * err, cache)
        return err * err, score

    def init_output_bias(self, value: float) -> None:
        self.store.params["head.fc2.b"][...] = value
