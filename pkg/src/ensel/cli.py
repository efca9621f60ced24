"""Command-line front: dataset generation, training, evaluation, single-image
diagnosis, latency benchmarking, and serving.

Exit codes: 0 on success, 1 for usage errors (bad flags, missing arguments),
2 for runtime failures (unreadable files, undecodable images, bad configs).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from . import imaging
from .classify import load_registry, save_model
from .ensemble import diagnose, load_config
from .errors import EnselError
from .evaluation import compare_models, standard_entries
from .timing import StageTimer, summarize
from .train import (
    SyntheticSpec,
    TrainConfig,
    early_stopping,
    generate_synthetic,
    load_dataset,
    save_dataset,
    train_classifier,
    train_detector,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(f"{self.prog}: error: {message}")


class SystemExit2(Exception):
    """Internal marker for usage errors raised by the parser."""


def _build_parser() -> _Parser:
    parser = _Parser(prog="ensel", description="ensemble skin-lesion diagnosis")
    sub = parser.add_subparsers(dest="command", metavar="command",
                                parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data",
                       help="write a synthetic labeled dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--per-class", type=int, default=25)
    p.add_argument("--size", type=int, default=96, help="square image side")
    p.add_argument("--noise", type=int, default=20,
                   help="background noise half-width")

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--task", choices=("classifier", "detector"), required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--model-id", default=None)

    p = sub.add_parser("evaluate",
                       help="score ensemble members and the ensemble")
    p.add_argument("--config", required=True, help="ensemble config JSON")
    p.add_argument("--models", required=True, help="model registry directory")
    p.add_argument("--data", required=True, help="labeled dataset directory")
    p.add_argument("--out", required=True, help="comparison CSV to write")

    p = sub.add_parser("diagnose",
                       help="diagnose one image and print JSON")
    p.add_argument("--image", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--overlay", default=None, help="write the overlay PNG here")

    p = sub.add_parser("bench",
                       help="measure per-stage latency over a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--limit", type=int, default=None,
                   help="use only the first N samples")
    p.add_argument("--out", required=True, help="JSONL file of breakdowns")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")

    return parser


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(height=args.size, width=args.size,
                         per_class=args.per_class, noise=args.noise)
    samples = generate_synthetic(spec, args.seed)
    save_dataset(samples, args.out)
    counts = {}
    for s in samples:
        counts[s.label] = counts.get(s.label, 0) + 1
    print(json.dumps({"written": len(samples), "dir": args.out,
                      "classes": counts}, sort_keys=True))
    return EXIT_OK


def _cmd_train(args) -> int:
    samples = load_dataset(args.data)
    config = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                         batch_size=args.batch_size, patience=args.patience,
                         seed=args.seed)
    model_id = args.model_id or args.task
    if args.task == "classifier":
        model, curve = train_classifier(samples, config, model_id=model_id)
    else:
        model, curve = train_detector(samples, config, model_id=model_id)
    save_model(model, args.out)
    curve_path = os.path.splitext(args.out)[0] + ".loss.csv"
    curve.to_csv(curve_path)
    stop = early_stopping(curve.val, config.patience)
    print(json.dumps({
        "model": args.out,
        "loss_curve": curve_path,
        "best_epoch": stop.best_epoch,
        "stop_epoch": stop.stop_epoch,
        "best_val_loss": curve.val[stop.best_epoch - 1],
    }, sort_keys=True))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    registry = load_registry(args.models)
    config = load_config(args.config)
    config.validate(registry)
    samples = load_dataset(args.data)
    report = compare_models(standard_entries(config), samples, registry)
    report.write_csv(args.out)
    print(report.to_json())
    return EXIT_OK


def _read_image(path: str):
    with open(path, "rb") as fh:
        raw = fh.read()
    fmt = imaging.sniff_format(raw)
    if fmt is None:
        raise EnselError(f"{path}: not a PNG or PPM image")
    return raw, imaging.decode(raw, fmt)


def _cmd_diagnose(args) -> int:
    registry = load_registry(args.models)
    config = load_config(args.config)
    config.validate(registry)
    raw, img = _read_image(args.image)

    # Deterministic id: same image bytes and config give the same output,
    # byte for byte, across runs.
    digest = hashlib.sha256()
    digest.update(raw)
    digest.update(json.dumps(config.to_dict(), sort_keys=True).encode("utf-8"))
    request_id = digest.hexdigest()[:32]

    diag = diagnose(img, config, registry, request_id=request_id)
    label, prob = diag.final
    payload = {
        "id": request_id,
        "final": {"label": label, "probability": prob},
        "distribution": diag.fused.to_dict(),
        "per_model": {mid: d.to_dict() for mid, d in diag.per_model.items()},
        "boxes": [{"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1,
                   "score": b.score} for b in diag.boxes],
    }
    if args.overlay:
        with open(args.overlay, "wb") as fh:
            fh.write(imaging.encode(diag.overlay, "png"))
        payload["overlay"] = args.overlay
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _cmd_bench(args) -> int:
    registry = load_registry(args.models)
    config = load_config(args.config)
    config.validate(registry)
    samples = load_dataset(args.data)
    if args.limit is not None:
        samples = samples[:args.limit]
    if not samples:
        raise EnselError("no samples to benchmark")
    if args.repeats < 1:
        raise EnselError("--repeats must be at least 1")

    breakdowns = []
    with open(args.out, "w", encoding="utf-8") as fh:
        for _ in range(args.repeats):
            for sample in samples:
                ppm = imaging.encode(sample.image, "ppm")
                timer = StageTimer()
                with timer.stage("decode"):
                    img = imaging.decode(ppm, "ppm")
                diag = diagnose(img, config, registry, timer=timer)
                with timer.stage("encode"):
                    imaging.encode(diag.overlay, "png")
                b = timer.breakdown(f"{img.width}x{img.height}")
                breakdowns.append(b)
                fh.write(json.dumps(b.to_dict(), sort_keys=True) + "\n")
    print(summarize(breakdowns).to_json())
    return EXIT_OK


def _cmd_serve(args) -> int:
    from . import service

    service.run(port=args.port, host=args.host)
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "diagnose": _cmd_diagnose,
    "bench": _cmd_bench,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit2 as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except SystemExit2 as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (EnselError, OSError, json.JSONDecodeError) as exc:
        print(f"ensel: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
