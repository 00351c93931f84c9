"""Waveform encoder and the chunked intra/inter long-sequence module."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bimamba import SEQUENCE_BACKENDS
from .errors import ConfigError, DimensionError, StructureError
from .numerics import relu, relu_backward, uniform_init


@dataclass
class ChunkedTensor:
    """(N, K, S) view of an (N, L) sequence cut into half-overlapping chunks."""

    data: np.ndarray
    chunk_size: int
    hop: int
    length: int
    pad: int

    @property
    def num_chunks(self) -> int:
        return self.data.shape[2]


def _layout(length: int, chunk_size: int) -> tuple[int, int]:
    # Returns (num_chunks, padded_length) for hop = chunk_size / 2.
    hop = chunk_size // 2
    if length <= chunk_size:
        return 1, chunk_size
    S = -(-(length - chunk_size) // hop) + 1
    return S, (S - 1) * hop + chunk_size


def segment(x: np.ndarray, chunk_size: int, hop: int | None = None) -> ChunkedTensor:
    """Cut an (N, L) sequence into chunks; chunk s covers ``[s*P, s*P + K)``."""
    K = chunk_size
    if K < 2 or K % 2:
        raise ConfigError(f"chunk size must be even and >= 2, got {K}")
    P = K // 2 if hop is None else hop
    if P != K // 2:
        raise ConfigError("only 50% overlap (hop = chunk_size / 2) is supported")
    if x.ndim != 2:
        raise DimensionError(f"segment expects an (N, L) array, got {x.shape}")
    N, L = x.shape
    S, padded = _layout(L, K)
    xp = np.zeros((N, padded), dtype=x.dtype)
    xp[:, :L] = x
    blocks = xp.reshape(N, S + 1, P)  # hop-sized blocks
    data = np.concatenate([blocks[:, :S, :], blocks[:, 1:, :]], axis=2)  # (N, S, K)
    return ChunkedTensor(np.ascontiguousarray(data.transpose(0, 2, 1)), K, P, L, padded - L)


def _check(c: ChunkedTensor):
    N, K, S = c.data.shape if c.data.ndim == 3 else (None, None, None)
    if K is None or K != c.chunk_size or c.hop * 2 != K:
        raise StructureError(f"chunk metadata (K={c.chunk_size}, P={c.hop}) does not match data {c.data.shape}")
    S_expected, padded = _layout(c.length, K)
    if S != S_expected or padded - c.length != c.pad:
        raise StructureError(
            f"chunk count {S} / pad {c.pad} inconsistent with length {c.length}"
        )


def merge(c: ChunkedTensor) -> np.ndarray:
    """Overlap-add the chunks, divide by coverage count, strip the padding."""
    _check(c)
    N, K, S = c.data.shape
    P = c.hop
    chunks = c.data.transpose(0, 2, 1)  # (N, S, K)
    blocks = np.zeros((N, S + 1, P), dtype=c.data.dtype)
    blocks[:, :S] += chunks[:, :, :P]
    blocks[:, 1:] += chunks[:, :, P:]
    blocks[:, 1:S] *= 0.5
    return blocks.reshape(N, -1)[:, : c.length]


def merge_backward(dout: np.ndarray, like: ChunkedTensor) -> np.ndarray:
    """Gradient of :func:`merge` with respect to the chunk data."""
    N, K, S = like.data.shape
    P = like.hop
    d = np.zeros((N, (S + 1) * P), dtype=dout.dtype)
    d[:, : like.length] = dout
    blocks = d.reshape(N, S + 1, P)
    blocks[:, 1:S] *= 0.5
    g = np.concatenate([blocks[:, :S], blocks[:, 1:]], axis=2)  # (N, S, K)
    return np.ascontiguousarray(g.transpose(0, 2, 1))


def segment_backward(dchunks: np.ndarray, like: ChunkedTensor) -> np.ndarray:
    """Gradient of :func:`segment` with respect to the (N, L) input."""
    N, K, S = dchunks.shape
    P = like.hop
    g = dchunks.transpose(0, 2, 1)
    blocks = np.zeros((N, S + 1, P), dtype=dchunks.dtype)
    blocks[:, :S] += g[:, :, :P]
    blocks[:, 1:] += g[:, :, P:]
    return blocks.reshape(N, -1)[:, : like.length]


class Encoder:
    """Strided 1-channel convolution + ReLU: (samples,) -> (N, ceil(samples / stride))."""

    def __init__(self, store, name, features=64, width=16, stride=8, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.store, self.name = store, name
        self.features, self.width, self.stride = features, width, stride
        store.add(f"{name}.w", uniform_init(rng, (features, width), width, store.dtype))
        store.add(f"{name}.b", uniform_init(rng, (features,), width, store.dtype))

    def frames(self, wave):
        n = wave.shape[0]
        if wave.ndim != 1 or n < 1:
            raise DimensionError(f"encoder expects a non-empty 1-D waveform, got {wave.shape}")
        L = -(-n // self.stride)
        padded = np.zeros((L - 1) * self.stride + self.width, dtype=self.store.dtype)
        m = min(n, padded.shape[0])
        padded[:m] = wave[:m]
        # Materialise the overlapping view: matmul on it would bypass BLAS.
        return np.ascontiguousarray(
            np.lib.stride_tricks.sliding_window_view(padded, self.width)[:: self.stride]
        )

    def forward(self, wave):
        fr = self.frames(wave)  # (L, W)
        pre = self.store[f"{self.name}.w"] @ fr.T + self.store[f"{self.name}.b"][:, None]
        return relu(pre), (fr, pre)

    def backward(self, dout, cache):
        fr, pre = cache
        dpre = relu_backward(dout, pre)
        self.store.accumulate(f"{self.name}.w", dpre @ fr)
        self.store.accumulate(f"{self.name}.b", dpre.sum(axis=1))


class DualPath:
    """Alternating intra-chunk and inter-chunk sequence blocks over an (N, L) input."""

    def __init__(self, store, name, features, chunk_size, repeats=1, backend="bimamba",
                 rng=None, **block_kwargs):
        if repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if chunk_size < 2 or chunk_size % 2:
            raise ConfigError(f"chunk size must be even and >= 2, got {chunk_size}")
        if backend not in SEQUENCE_BACKENDS:
            raise ConfigError(f"unknown sequence backend {backend!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        cls = SEQUENCE_BACKENDS[backend]
        self.features = features
        self.chunk_size = chunk_size
        self.intra = []
        self.inter = []
        for r in range(repeats):
            self.intra.append(cls(store, f"{name}.intra{r}", features, rng=rng, **block_kwargs))
            self.inter.append(cls(store, f"{name}.inter{r}", features, rng=rng, **block_kwargs))

    def forward(self, x):
        if x.ndim != 2 or x.shape[0] != self.features:
            raise DimensionError(f"dual-path expects ({self.features}, L), got {x.shape}")
        chunked = segment(x, self.chunk_size)
        h = chunked.data  # (N, K, S)
        caches = []
        for intra, inter in zip(self.intra, self.inter):
            out, ci = intra.forward(h.transpose(2, 0, 1))  # S sequences of (N, K)
            h = out.transpose(1, 2, 0)
            out, ce = inter.forward(h.transpose(1, 0, 2))  # K sequences of (N, S)
            h = out.transpose(1, 0, 2)
            caches.append((ci, ce))
        result = ChunkedTensor(np.ascontiguousarray(h), chunked.chunk_size, chunked.hop,
                               chunked.length, chunked.pad)
        return merge(result), (chunked, caches)

    def backward(self, dout, cache):
        chunked, caches = cache
        dh = merge_backward(dout, chunked)
        for (intra, inter), (ci, ce) in reversed(list(zip(zip(self.intra, self.inter), caches))):
            d = inter.backward(np.ascontiguousarray(dh.transpose(1, 0, 2)), ce)
            dh = d.transpose(1, 0, 2)
            d = intra.backward(np.ascontiguousarray(dh.transpose(2, 0, 1)), ci)
            dh = d.transpose(1, 2, 0)
        return segment_backward(dh, chunked)
