"""Command-line entry point: ``depmamba <command> [options]``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import bench, checkpoint, config, data, gradcheck
from .errors import DepMambaError
from .model import DepressionEstimator
from .training import AudioCache, evaluate, split_rows, train

log = logging.getLogger("depmamba")


def _cmd_synth(args) -> int:
    rows = data.synth_corpus(args.out, args.subjects, args.recordings, args.seconds, args.seed,
                             args.dev_subjects, args.test_subjects)
    print(Path(args.out) / "manifest.csv")
    log.info("wrote %d recordings", len(rows))
    return 0


def _cmd_segment(args) -> int:
    rows = data.segment_manifest(args.manifest, args.window, args.out)
    print(args.out)
    log.info("wrote %d segments", len(rows))
    return 0


def _cmd_train(args) -> int:
    model_cfg, train_cfg = config.load(args.config)
    result = train(args.manifest, model_cfg, train_cfg, args.out)
    print(result.best_path)
    log.info("best epoch %d of %d", result.best_epoch, len(result.curve))
    return 0


def _eval_config(args):
    if args.config is not None:
        return config.load(args.config)[0]
    beside = Path(args.checkpoint).with_name("config.txt")
    return config.load(beside if beside.is_file() else None)[0]


def _cmd_eval(args) -> int:
    model_cfg = _eval_config(args)
    model = DepressionEstimator(model_cfg)
    digest = checkpoint.load(args.checkpoint, model.store, model_cfg.fingerprint())
    rows = data.read_manifest(args.manifest)
    if args.split != "all":
        rows = split_rows(rows, args.split)
    report = evaluate(model, rows, AudioCache(model_cfg.sample_rate), args.level, digest)
    report.write(args.out)
    print(f"rmse={report.rmse:.6f} mae={report.mae:.6f} n={len(report.rows)}")
    return 0


def _cmd_gradcheck(args) -> int:
    model_cfg = config.load(args.config)[0]
    results = gradcheck.run_all(model_cfg, full=args.full, seed=args.seed)
    for r in results:
        print(r.row())
    return 0 if all(r.passed for r in results) else 1


def _cmd_bench(args) -> int:
    model_cfg = config.load(args.config)[0]
    lengths = bench.parse_lengths(args.lengths)
    result = bench.run(model_cfg, lengths, args.repeats, model_cfg.seed)
    text = result.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depmamba", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1,
                   help="cap on BLAS/OpenMP worker threads (1 = bit-reproducible)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic corpus and manifest")
    s.add_argument("--subjects", type=int, default=10)
    s.add_argument("--recordings", type=int, default=1)
    s.add_argument("--seconds", type=float, default=60.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dev-subjects", type=int, default=0)
    s.add_argument("--test-subjects", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(run=_cmd_synth)

    s = sub.add_parser("segment", help="cut recordings into fixed windows")
    s.add_argument("--manifest", required=True)
    s.add_argument("--window", type=int, choices=data.WINDOWS, required=True)
    s.add_argument("--out", required=True, help="segment manifest path")
    s.set_defaults(run=_cmd_segment)

    s = sub.add_parser("train", help="train and write checkpoints and a loss curve")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help="key=value file or preset name")
    s.add_argument("--out", required=True, help="run directory")
    s.set_defaults(run=_cmd_train)

    s = sub.add_parser("eval", help="score a manifest and write a JSON/CSV report")
    s.add_argument("--manifest", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", help="defaults to config.txt beside the checkpoint")
    s.add_argument("--split", choices=data.SPLITS + ("all",), default="all")
    s.add_argument("--level", choices=("recording", "segment"), default="recording")
    s.add_argument("--out", required=True, help="report path prefix")
    s.set_defaults(run=_cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient table per module")
    s.add_argument("--config", default="tiny")
    s.add_argument("--full", action="store_true", help="include the composed model")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(run=_cmd_gradcheck)

    s = sub.add_parser("bench", help="dual-path wall time against sequence length")
    s.add_argument("--lengths", default="4096..131072")
    s.add_argument("--config", default="tiny")
    s.add_argument("--repeats", type=int, default=2)
    s.add_argument("--out", help="also write the CSV here")
    s.set_defaults(run=_cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("depmamba: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=args.threads):
            return args.run(args)
    except (DepMambaError, OSError, ValueError) as exc:
        print(f"depmamba: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
