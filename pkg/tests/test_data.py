import hashlib
import logging
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depmamba.data import (
    MANIFEST_FIELDS,
    Recording,
    ingest,
    read_manifest,
    read_wav,
    resample,
    segment_manifest,
    segmentize,
    synth_corpus,
    synth_recording,
    write_manifest,
    write_wav,
)
from depmamba.errors import DataError, FormatError


def write_raw(path, frames: bytes, channels=1, width=2, rate=8000):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(frames)


def zero_crossing_frequency(x, rate):
    # crossings per unit time between the first and last crossing, with each
    # crossing located by linear interpolation between its two samples
    idx = np.flatnonzero(np.signbit(x[1:]) != np.signbit(x[:-1]))
    times = (idx + x[idx] / (x[idx] - x[idx + 1])) / rate
    return (len(times) - 1) / 2 / (times[-1] - times[0])


def pause_ratio(x, rate, frame_s=0.02, threshold=0.01):
    n = int(frame_s * rate)
    frames = x[: len(x) // n * n].reshape(-1, n)
    rms = np.sqrt((frames**2).mean(axis=1))
    return float(np.mean(rms < threshold))


# ---------------------------------------------------------------------------
# WAV


def test_pcm_scaling_convention(tmp_path):
    p = tmp_path / "a.wav"
    write_raw(p, np.array([32767, -32768, 0], dtype="<i2").tobytes())
    x, rate = read_wav(p)
    assert rate == 8000
    np.testing.assert_array_equal(x, [32767 / 32768, -1.0, 0.0])


def test_pass_through_at_target_rate(tmp_path):
    p = tmp_path / "a.wav"
    pcm = np.random.default_rng(0).integers(-32768, 32768, size=1000).astype("<i2")
    write_raw(p, pcm.tobytes())
    x = ingest(p)
    assert x.shape == (1000,)
    assert np.abs(x).max() <= 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 500), st.integers(0, 2**31))
def test_write_read_round_trip_is_sample_exact(tmp_path_factory, n, seed):
    p = tmp_path_factory.mktemp("wav") / "x.wav"
    pcm = np.random.default_rng(seed).integers(-32768, 32768, size=n)
    x = pcm / 32768.0
    write_wav(p, x)
    y, _ = read_wav(p)
    np.testing.assert_array_equal(y, x)


def test_stereo_is_averaged(tmp_path):
    p = tmp_path / "s.wav"
    write_raw(p, np.array([100, 300, -50, 50], dtype="<i2").tobytes(), channels=2)
    x, _ = read_wav(p)
    np.testing.assert_array_equal(x, np.array([200, 0]) / 32768)


def test_unsupported_sample_width(tmp_path):
    p = tmp_path / "u8.wav"
    write_raw(p, bytes([128] * 10), width=1)
    with pytest.raises(FormatError, match="16-bit"):
        read_wav(p)


def test_not_a_wav(tmp_path):
    p = tmp_path / "junk.wav"
    p.write_bytes(b"not a riff file at all")
    with pytest.raises(FormatError):
        read_wav(p)


def test_empty_inputs(tmp_path):
    empty = tmp_path / "empty.wav"
    empty.write_bytes(b"")
    with pytest.raises(DataError):
        read_wav(empty)
    silent = tmp_path / "zero.wav"
    write_raw(silent, b"")
    with pytest.raises(DataError):
        read_wav(silent)


def test_resample_preserves_sine_frequency(tmp_path):
    rate = 16000
    t = np.arange(rate * 4) / rate
    p = tmp_path / "sine.wav"
    write_wav(p, 0.5 * np.sin(2 * np.pi * 440 * t + 0.1), rate)
    y = ingest(p)
    assert y.shape == (32000,)
    # trim the filter transients at both ends
    assert zero_crossing_frequency(y[800:-800], 8000) == pytest.approx(440, abs=0.1)


def test_resample_identity_when_rates_match():
    x = np.arange(5.0)
    np.testing.assert_array_equal(resample(x, 8000, 8000), x)


# ---------------------------------------------------------------------------
# segmentation


def rec(bdi=25, rid="r"):
    return Recording(rid, "r.wav", "s", "train", bdi)


def test_segmentize_drops_tail():
    segs = segmentize(rec(), 65 * 8000, 30)
    assert [(s.start, s.length) for s in segs] == [(0, 240000), (240000, 240000)]
    assert all(s.bdi == 25 for s in segs)


def test_segmentize_exact_fit():
    assert len(segmentize(rec(), 30 * 8000, 30)) == 1


def test_segmentize_short_recording_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert segmentize(rec(rid="short"), 10 * 8000, 15) == []
    assert "short" in caplog.text


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 3_000_000), st.sampled_from([15, 30, 50]), st.integers(0, 63))
def test_segmentize_properties(n, window, bdi):
    segs = segmentize(rec(bdi), n, window)
    assert len(segs) == n // (window * 8000)
    assert sum(s.length for s in segs) <= n
    assert all(s.length == window * 8000 and s.bdi == bdi for s in segs)


@pytest.mark.parametrize("bdi,split", [(64, "train"), (-1, "train"), (3, "val")])
def test_recording_validation(bdi, split):
    with pytest.raises(DataError):
        Recording("r", "p", "s", split, bdi)


# ---------------------------------------------------------------------------
# manifests and synthetic corpus


def test_manifest_format(tmp_path):
    rows = [{"id": "a", "path": "a.wav", "subject": "s1", "split": "dev", "bdi": 4,
             "duration_s": "1.5"}]
    p = tmp_path / "m.csv"
    write_manifest(p, rows)
    raw = p.read_bytes()
    assert raw.startswith(b"id,path,subject,split,bdi,duration_s\n")
    assert b"\r" not in raw
    back = read_manifest(p)
    assert back[0]["bdi"] == 4
    assert back[0]["abspath"] == str((tmp_path / "a.wav").resolve())


def test_manifest_missing_column(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("id,path\nx,y\n")
    with pytest.raises(DataError, match="missing"):
        read_manifest(p)


def test_synth_corpus_counts(tmp_path):
    rows = synth_corpus(tmp_path, subjects=3, recordings=2, seconds=2.0, seed=1,
                        dev_subjects=1, test_subjects=1)
    assert len(rows) == 6
    assert [r["split"] for r in rows] == ["train"] * 2 + ["dev"] * 2 + ["test"] * 2
    for r in read_manifest(tmp_path / "manifest.csv"):
        assert read_wav(r["abspath"])[0].shape == (16000,)


def dir_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synth_is_deterministic(tmp_path):
    synth_corpus(tmp_path / "a", subjects=2, seconds=1.0, seed=7)
    synth_corpus(tmp_path / "b", subjects=2, seconds=1.0, seed=7)
    synth_corpus(tmp_path / "c", subjects=2, seconds=1.0, seed=8)
    assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")
    assert dir_digest(tmp_path / "a") != dir_digest(tmp_path / "c")


def test_synth_score_drives_pause_ratio():
    low = pause_ratio(synth_recording(0, 60.0, np.random.default_rng(0)), 8000)
    high = pause_ratio(synth_recording(63, 60.0, np.random.default_rng(0)), 8000)
    assert high >= 3 * low


def test_segment_manifest_inherits_labels(tmp_path):
    synth_corpus(tmp_path / "c", subjects=2, seconds=35.0, seed=3)
    out = tmp_path / "seg" / "segments.csv"
    out.parent.mkdir()
    rows = segment_manifest(tmp_path / "c" / "manifest.csv", 15, out)
    parents = {r["id"]: r["bdi"] for r in read_manifest(tmp_path / "c" / "manifest.csv")}
    assert len(rows) == 4
    segs = read_manifest(out)
    assert all(s["bdi"] == parents[s["parent"]] for s in segs)
    assert all(s["length"] == 120000 for s in segs)
    assert set(MANIFEST_FIELDS) <= set(segs[0])
