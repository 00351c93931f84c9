"""Wall-time scaling of the dual-path core against sequence length."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .dualpath import DualPath
from .numerics import ParamStore

DEFAULT_LENGTHS = tuple(2**k for k in range(12, 18))  # 4096 .. 131072
MAX_EXPONENT = 1.3


@dataclass
class BenchResult:
    lengths: list[int]
    seconds: list[float]
    exponent: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["length", "seconds"])
        for L, sec in zip(self.lengths, self.seconds):
            w.writerow([L, f"{sec:.6f}"])
        w.writerow(["exponent", f"{self.exponent:.4f}"])
        return buf.getvalue()


def parse_lengths(text: str) -> list[int]:
    """``"4096..131072"`` (doubling) or a comma-separated list."""
    if ".." in text:
        lo, hi = (int(v) for v in text.split("..", 1))
        if lo < 1 or hi < lo:
            raise ValueError(f"bad length range {text!r}")
        out = []
        L = lo
        while L <= hi:
            out.append(L)
            L *= 2
        return out
    return [int(v) for v in text.split(",") if v.strip()]


def scaling_exponent(lengths, seconds) -> float:
    """Slope of the least-squares line through (log L, log t)."""
    slope, _ = np.polyfit(np.log(lengths), np.log(seconds), 1)
    return float(slope)


def run(cfg: ModelConfig, lengths=DEFAULT_LENGTHS, repeats: int = 2, seed: int = 0) -> BenchResult:
    """Best-of-``repeats`` forward time of the dual-path module at each length."""
    if len(lengths) < 2:
        raise ValueError("need at least two lengths to fit an exponent")
    rng = np.random.default_rng(seed)
    store = ParamStore(np.dtype(cfg.precision))
    core = DualPath(store, "dualpath", cfg.features, cfg.chunk_size, cfg.repeats, cfg.backend,
                    rng, state_size=cfg.state_size, conv_width=cfg.conv_width,
                    residual=cfg.residual)
    core.forward(rng.normal(size=(cfg.features, 2 * cfg.chunk_size)))  # compile kernels
    seconds = []
    for L in lengths:
        x = rng.normal(size=(cfg.features, L)).astype(store.dtype)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            core.forward(x)
            best = min(best, time.perf_counter() - t0)
        seconds.append(best)
    return BenchResult(list(lengths), seconds, scaling_exponent(lengths, seconds))
