"""Audio ingestion, fixed-window segmentation, manifests, synthetic corpora."""

from __future__ import annotations

import csv
import os
import logging
import wave
from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DataError, FormatError

log = logging.getLogger(__name__)

TARGET_RATE = 8000
WINDOWS = (15, 30, 50)
SPLITS = ("train", "dev", "test")
MANIFEST_FIELDS = ["id", "path", "subject", "split", "bdi", "duration_s"]
SEGMENT_FIELDS = MANIFEST_FIELDS + ["parent", "start", "length"]

KAISER_BETA = 8.6
TAPS_PER_PHASE = 64


@dataclass
class Recording:
    id: str
    path: str
    subject: str
    split: str
    bdi: int
    sample_rate: int = TARGET_RATE
    duration_s: float = 0.0

    def __post_init__(self):
        if not 0 <= int(self.bdi) <= 63:
            raise DataError(f"{self.id}: BDI-II score {self.bdi} outside [0, 63]")
        if self.split not in SPLITS:
            raise DataError(f"{self.id}: unknown split {self.split!r}")
        self.bdi = int(self.bdi)


@dataclass
class Segment:
    parent: str
    start: int
    length: int
    bdi: int

    @property
    def id(self) -> str:
        return f"{self.parent}_{self.start}"


# ---------------------------------------------------------------------------
# WAV I/O


def read_wav(path) -> tuple[np.ndarray, int]:
    """Decode 16-bit PCM to float in [-1, 1); stereo is averaged to mono."""
    if Path(path).stat().st_size == 0:
        raise DataError(f"{path}: empty file")
    try:
        with wave.open(str(path), "rb") as w:
            if w.getsampwidth() != 2:
                raise FormatError(f"{path}: only 16-bit PCM is supported")
            channels = w.getnchannels()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    data = np.frombuffer(raw, dtype="<i2")
    if data.size == 0:
        raise DataError(f"{path}: no audio samples")
    samples = data.reshape(-1, channels).astype(np.float64) / 32768.0
    return samples.mean(axis=1) if channels > 1 else samples[:, 0], rate


def write_wav(path, samples, rate=TARGET_RATE) -> None:
    """Write mono float samples as 16-bit PCM (values scaled by 32768, clipped)."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(rate))
        w.writeframes(pcm.tobytes())


def resample(x, rate_in: int, rate_out: int = TARGET_RATE) -> np.ndarray:
    """Polyphase windowed-sinc resampling (Kaiser window, 64 taps per phase)."""
    if rate_in == rate_out:
        return np.asarray(x, dtype=np.float64)
    g = gcd(int(rate_in), int(rate_out))
    up, down = rate_out // g, rate_in // g
    span = max(up, down)
    taps = signal.firwin(TAPS_PER_PHASE * span + 1, 1.0 / span, window=("kaiser", KAISER_BETA))
    return signal.resample_poly(np.asarray(x, dtype=np.float64), up, down, window=taps)


def ingest(path, rate: int = TARGET_RATE) -> np.ndarray:
    """Read a WAV file as mono float samples at ``rate``."""
    samples, sr = read_wav(path)
    return resample(samples, sr, rate) if sr != rate else samples


# ---------------------------------------------------------------------------
# segmentation


def segmentize(rec: Recording, num_samples: int, window_s: int, rate: int = TARGET_RATE):
    """Non-overlapping windows; the short tail is dropped, labels are inherited."""
    if window_s <= 0:
        raise DataError("window length must be positive")
    length = int(window_s * rate)
    count = num_samples // length
    if count == 0:
        log.warning("%s: %d samples is shorter than one %ss window; skipped",
                    rec.id, num_samples, window_s)
    return [Segment(rec.id, k * length, length, rec.bdi) for k in range(count)]


# ---------------------------------------------------------------------------
# manifests


def read_manifest(path) -> list[dict]:
    """Rows of a recording or segment manifest; paths are resolved against its directory."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: manifest missing columns {sorted(missing)}")
        rows = []
        for row in reader:
            rec = Recording(row["id"], row["path"], row["subject"], row["split"],
                            int(row["bdi"]), duration_s=float(row["duration_s"]))
            item = dict(row)
            item["bdi"] = rec.bdi
            item["abspath"] = str((path.parent / row["path"]).resolve())
            if "start" in row and row.get("start", "") != "":
                item["start"] = int(row["start"])
                item["length"] = int(row["length"])
            else:
                item["parent"] = row["id"]
                item["start"] = 0
                item["length"] = None
            rows.append(item)
    return rows


def write_manifest(path, rows, fields=MANIFEST_FIELDS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def segment_manifest(manifest, window_s: int, out, rate: int = TARGET_RATE) -> list[dict]:
    """Expand a recording manifest into a segment manifest written to ``out``."""
    out = Path(out)
    rows = []
    for row in read_manifest(manifest):
        rec = Recording(row["id"], row["path"], row["subject"], row["split"], row["bdi"])
        n = ingest(row["abspath"], rate).shape[0]
        rel = Path(os.path.relpath(row["abspath"], out.parent.resolve()))
        for seg in segmentize(rec, n, window_s, rate):
            rows.append({
                "id": seg.id, "path": rel.as_posix(), "subject": rec.subject,
                "split": rec.split, "bdi": seg.bdi, "duration_s": f"{seg.length / rate:g}",
                "parent": seg.parent, "start": seg.start, "length": seg.length,
            })
    write_manifest(out, rows, SEGMENT_FIELDS)
    return rows


# ---------------------------------------------------------------------------
# synthetic corpus


def synth_recording(score: int, seconds: float, rng: np.random.Generator, rate=TARGET_RATE):
    """Speech-like noise bursts whose statistics are driven by the BDI score.

    Higher scores give a larger pause fraction, slower amplitude modulation
    and a darker (more low-passed) spectrum.
    """
    n = int(round(seconds * rate))
    severity = score / 63.0
    pause_fraction = 0.1 + 0.6 * severity
    am_rate = 6.0 - 3.0 * severity
    pole = 0.2 + 0.7 * severity  # one-pole low-pass coefficient

    mean_burst = 0.6  # seconds of speech per burst
    mean_pause = mean_burst * pause_fraction / (1.0 - pause_fraction)
    active = np.zeros(n, dtype=bool)
    pos = int(rng.exponential(mean_pause) * rate)
    while pos < n:
        burst = max(1, int(rng.exponential(mean_burst) * rate))
        active[pos : pos + burst] = True
        pos += burst + max(1, int(rng.exponential(mean_pause) * rate))

    carrier = signal.lfilter([1.0 - pole], [1.0, -pole], rng.standard_normal(n))
    carrier /= np.std(carrier) + 1e-12
    t = np.arange(n) / rate
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    x = 0.25 * carrier * envelope * active
    x += 1e-3 * rng.standard_normal(n)
    return np.clip(x, -1.0, 32767 / 32768)


def synth_corpus(out, subjects=10, recordings=1, seconds=60.0, seed=0,
                 dev_subjects=0, test_subjects=0, rate=TARGET_RATE) -> list[dict]:
    """Write ``subjects * recordings`` WAV files plus ``manifest.csv`` into ``out``."""
    out = Path(out)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    if dev_subjects + test_subjects > subjects:
        raise DataError("more dev/test subjects than subjects")
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 64, size=subjects)
    rows = []
    for s in range(subjects):
        if s < subjects - dev_subjects - test_subjects:
            split = "train"
        elif s < subjects - test_subjects:
            split = "dev"
        else:
            split = "test"
        for r in range(recordings):
            rid = f"s{s:03d}_r{r:02d}"
            x = synth_recording(int(scores[s]), seconds, np.random.default_rng([seed, s, r]), rate)
            rel = f"wav/{rid}.wav"
            write_wav(out / rel, x, rate)
            rows.append({"id": rid, "path": rel, "subject": f"s{s:03d}", "split": split,
                         "bdi": int(scores[s]), "duration_s": f"{x.shape[0] / rate:g}"})
    write_manifest(out / "manifest.csv", rows)
    return rows

