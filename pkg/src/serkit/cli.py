"""Command-line entry point.

Commands: synth, extract, train, eval, fuse, plot. Every command exits 0 on
success; failures print one machine-parsable line to stderr in the form
``error: <Kind>: <message>`` and exit 2 (input/contract errors) or 1
(unexpected errors).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

from . import pipeline
from .core import load_manifest
from .errors import ToolkitError
from .pipeline import RunConfig, run_config_from_json
from .synth import SynthSpec, generate_dataset


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    if "manifest" in names:
        p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    if "out" in names:
        p.add_argument("--out", required=True, help="output directory")
    if "seed" in names:
        p.add_argument("--seed", type=int, default=None)
    if "feature-set" in names:
        p.add_argument("--feature-set", dest="feature_set", default=None)
    if "dimension" in names:
        p.add_argument("--dimension", default=None)


def _parse_layer_units(text: str) -> tuple[int, ...]:
    try:
        units = tuple(int(u) for u in text.split(",") if u.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer units {text!r}")
    if not units:
        raise argparse.ArgumentTypeError("layer units must be non-empty")
    return units


def _parse_reducer(text: str):
    if text.lower() in ("none", "off"):
        return None
    return int(text)


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_train=args.train,
        n_dev=args.dev,
        n_test=args.test,
        duration_range_ms=(args.duration_min, args.duration_max),
        segment_ms=args.segment_ms,
        seed=args.seed if args.seed is not None else 0,
        acoustic_dim=args.acoustic_dim,
        linguistic_dim=args.linguistic_dim,
    )
    manifest = generate_dataset(spec, args.out)
    print(f"manifest={manifest}")
    return 0


def cmd_extract(args) -> int:
    manifest = load_manifest(args.manifest, check_paths=False)
    stats = pipeline.extract_features(manifest, args.feature_set, args.out)
    print(f"extracted={stats.written} skipped={stats.skipped}")
    if stats.errors:
        for conv_id, message in stats.errors:
            print(f"error: extract: {conv_id}: {message}", file=sys.stderr)
        return 2
    return 0


def cmd_train(args) -> int:
    values = run_config_from_json(args.config) if args.config else {}
    for name, flag in [
        ("manifest", args.manifest),
        ("feature_set", args.feature_set),
        ("dimension", args.dimension),
        ("out", args.out),
        ("seed", args.seed),
        ("epochs", args.epochs),
        ("batch_size", args.batch_size),
        ("learning_rate", args.learning_rate),
    ]:
        if flag is not None:
            values[name] = flag
    model = dict(values.get("model", {}))
    if args.layer_units is not None:
        model["layer_units"] = list(args.layer_units)
    if args.reducer_dim is not None:
        model["reducer_dim"] = _parse_reducer(args.reducer_dim)
    if model:
        values["model"] = model
    required = ("manifest", "feature_set", "dimension", "out")
    missing = [n for n in required if n not in values]
    if missing:
        raise ToolkitError(f"missing required settings: {missing}")
    allowed = {f.name for f in fields(RunConfig)}
    run = RunConfig(**{k: v for k, v in values.items() if k in allowed})
    artifacts = pipeline.train_run(run, log=lambda m: print(m, file=sys.stderr))
    print(f"best={artifacts.best_checkpoint}")
    print(f"last={artifacts.last_checkpoint}")
    print(f"history={artifacts.history}")
    print(f"best_dev_ccc={artifacts.best_dev_ccc!r}")
    return 0


def cmd_eval(args) -> int:
    artifacts = pipeline.eval_run(args.checkpoint, args.manifest, args.subset, args.out)
    print(f"report={artifacts.report}")
    print(f"predictions={artifacts.predictions_dir}")
    print(f"ccc_concat={artifacts.ccc_concat!r}")
    return 0


def cmd_fuse(args) -> int:
    artifacts = pipeline.fuse_run(
        args.preds_a, args.preds_b, args.manifest, args.dimension or "", args.out
    )
    print(f"report={artifacts.report}")
    print(f"w_a={artifacts.w_a:.2f}")
    print(f"dev_ccc={artifacts.dev_ccc!r}")
    return 0


def cmd_plot(args) -> int:
    out = pipeline.plot_run(args.gold, args.predictions, args.out, args.title)
    print(f"svg={out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="serkit",
        description="Continuous speech emotion regression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p, "out", "seed")
    p.add_argument("--train", type=int, default=10)
    p.add_argument("--dev", type=int, default=3)
    p.add_argument("--test", type=int, default=3)
    p.add_argument("--duration-min", type=int, default=60_000)
    p.add_argument("--duration-max", type=int, default=120_000)
    p.add_argument("--segment-ms", type=int, default=250)
    p.add_argument("--acoustic-dim", type=int, default=512)
    p.add_argument("--linguistic-dim", type=int, default=768)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="build per-segment feature caches")
    _add_common(p, "manifest", "out")
    p.add_argument("--feature-set", dest="feature_set", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a sequence regressor")
    _add_common(p, "seed", "feature-set", "dimension")
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="RunConfig JSON file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.add_argument(
        "--layer-units", type=_parse_layer_units, default=None,
        help="comma-separated biLSTM units, e.g. 200,64,32,32",
    )
    p.add_argument(
        "--reducer-dim", default=None,
        help="dense reducer width, or 'none' to disable",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a subset")
    _add_common(p, "manifest", "out")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", required=True, choices=("train", "dev", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="late fusion of two prediction sets")
    _add_common(p, "manifest", "out", "dimension")
    p.add_argument("--preds-a", required=True, help="directory of prediction CSVs")
    p.add_argument("--preds-b", required=True, help="directory of prediction CSVs")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("plot", help="render tracks as an SVG line chart")
    p.add_argument("--gold", required=True, help="reference CSV")
    p.add_argument("--out", required=True, help="output SVG path")
    p.add_argument("--title", default="")
    p.add_argument("predictions", nargs="+", help="prediction CSVs")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
