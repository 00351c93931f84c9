"""Training loop, metrics and evaluation reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ModelConfig, TrainConfig
from .data import TARGET_RATE, ingest, read_manifest
from .errors import ConfigError, DataError, InferenceError, TrainingAbort
from .head import clamp_report
from .model import DepressionEstimator
from .numerics import adam_step, clip_grad_norm

log = logging.getLogger(__name__)

CURVE_FIELDS = ["epoch", "train_mse", "dev_rmse", "dev_mae"]


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise DataError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise DataError("metrics need at least one sample")
    return y, y_hat


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


# ---------------------------------------------------------------------------
# data access


class AudioCache:
    """Decoded recordings keyed by absolute path."""

    def __init__(self, rate=TARGET_RATE):
        self.rate = rate
        self._cache: dict[str, np.ndarray] = {}

    def samples(self, row) -> np.ndarray:
        path = row["abspath"]
        if path not in self._cache:
            self._cache[path] = ingest(path, self.rate)
        x = self._cache[path]
        if row.get("length") is None:
            return x
        start, length = row["start"], row["length"]
        if start + length > x.shape[0]:
            raise DataError(f"{row['id']}: segment runs past the end of {path}")
        return x[start : start + length]


def split_rows(rows, split):
    return [r for r in rows if r["split"] == split]


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    rows: list[dict]
    rmse: float
    mae: float
    level: str
    config_fingerprint: str
    checkpoint_hash: str = ""
    segment_predictions: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["id", "true", "predicted", "raw"], lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow(r)
        return buf.getvalue()

    def write(self, out_prefix) -> None:
        out_prefix = Path(out_prefix)
        out_prefix.parent.mkdir(parents=True, exist_ok=True)
        out_prefix.with_suffix(".json").write_text(self.to_json(), encoding="utf-8")
        out_prefix.with_suffix(".csv").write_text(self.to_csv(), encoding="utf-8")


def evaluate(model: DepressionEstimator, rows, audio: AudioCache | None = None,
             level="recording", checkpoint_hash="") -> EvalReport:
    """Score every row; per-recording prediction is the mean of its segments."""
    if not rows:
        raise DataError("nothing to evaluate")
    if level not in ("recording", "segment"):
        raise ConfigError(f"unknown evaluation level {level!r}")
    audio = audio or AudioCache(model.cfg.sample_rate)
    seg_preds = []
    groups: dict[str, list] = {}
    for row in rows:
        raw = model.predict(audio.samples(row))
        seg_preds.append({"id": row["id"], "true": row["bdi"], "raw": raw})
        key = row["id"] if level == "segment" else row.get("parent", row["id"])
        groups.setdefault(key, [row["bdi"], []])[1].append(raw)
    out_rows = []
    for key, (true, preds) in groups.items():
        raw = float(np.mean(preds))
        out_rows.append({"id": key, "true": true, "predicted": clamp_report(raw), "raw": raw})
    y = [r["true"] for r in out_rows]
    y_hat = [r["predicted"] for r in out_rows]
    return EvalReport(out_rows, rmse(y, y_hat), mae(y, y_hat), level,
                      model.cfg.fingerprint().hex(), checkpoint_hash, seg_preds)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    curve: list[dict]
    best_path: Path
    last_path: Path
    best_epoch: int


def write_config(path, model_cfg: ModelConfig, train_cfg: TrainConfig) -> None:
    Path(path).write_text(model_cfg.serialize() + train_cfg.serialize(), encoding="utf-8")


def train(manifest, model_cfg: ModelConfig, train_cfg: TrainConfig, out,
          audio: AudioCache | None = None) -> TrainResult:
    """Batch-size-1 Adam training with per-epoch checkpoints and a loss curve."""
    train_cfg.validate()
    rows = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    train_rows = split_rows(rows, "train")
    dev_rows = split_rows(rows, "dev")
    if not train_rows:
        raise ConfigError("training split is empty")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.txt", model_cfg, train_cfg)
    audio = audio or AudioCache(model_cfg.sample_rate)

    model = DepressionEstimator(model_cfg)
    store = model.store
    model.init_output_bias(float(np.mean([r["bdi"] for r in train_rows])))
    fingerprint = model_cfg.fingerprint()

    curve = []
    best_score, best_epoch, stale = np.inf, 0, 0
    best_path, last_path = out / "best.ckpt", out / "last.ckpt"
    for epoch in range(1, train_cfg.epochs + 1):
        order = np.random.default_rng([train_cfg.train_seed, epoch]).permutation(len(train_rows))
        losses, abs_err = [], []
        for idx in order:
            row = train_rows[idx]
            try:
                loss, score = model.loss_and_grad(audio.samples(row), row["bdi"])
            except InferenceError as exc:
                raise TrainingAbort(f"segment {row['id']} (epoch {epoch}): {exc}") from exc
            if not np.isfinite(loss):
                raise TrainingAbort(f"non-finite loss on segment {row['id']} (epoch {epoch})")
            if train_cfg.clip_norm > 0:
                clip_grad_norm(store, train_cfg.clip_norm)
            adam_step(store, train_cfg.lr)
            losses.append(loss)
            abs_err.append(abs(score - row["bdi"]))
        entry = {"epoch": epoch, "train_mse": float(np.mean(losses)), "dev_rmse": "", "dev_mae": "",
                 "train_mae": float(np.mean(abs_err))}
        if dev_rows:
            rep = evaluate(model, dev_rows, audio, train_cfg.eval_level)
            entry["dev_rmse"], entry["dev_mae"] = rep.rmse, rep.mae
            score = rep.rmse
        else:
            score = entry["train_mse"]
        curve.append(entry)
        checkpoint.save(last_path, store, fingerprint)
        if score < best_score:
            best_score, best_epoch, stale = score, epoch, 0
            checkpoint.save(best_path, store, fingerprint)
        else:
            stale += 1
        _write_curve(out / "loss_curve.csv", curve)
        train_mae = entry["train_mae"]
        log.info("epoch %d train_mse %.4f train_mae %.4f dev_rmse %s",
                 epoch, entry["train_mse"], train_mae, entry["dev_rmse"])
        if train_cfg.patience and dev_rows and stale >= train_cfg.patience:
            log.info("early stop: dev RMSE has not improved for %d epochs", stale)
            break
        if train_cfg.target_mae > 0 and train_mae < train_cfg.target_mae:
            log.info("train MAE %.4f below target %.4f", train_mae, train_cfg.target_mae)
            break
    return TrainResult(curve, best_path, last_path, best_epoch)


def _write_curve(path, curve):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, lineterminator="\n",
                           extrasaction="ignore")
        w.writeheader()
        for entry in curve:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in entry.items()})
