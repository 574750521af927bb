"""Command-line entry points: export-acoustic and export-linguistic."""

from __future__ import annotations

import argparse
import sys

from .errors import ExporterError
from .export import ExportJob, export_acoustic, export_linguistic


def _run(fn, job: ExportJob) -> int:
    try:
        out = fn(job)
    except ExporterError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"out={out}")
    return 0


def main_acoustic(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-acoustic",
        description="Export frame-level speech embeddings to an EMB1 file",
    )
    parser.add_argument("--wav", required=True)
    parser.add_argument("--model", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--target-rate", type=int, default=None)
    args = parser.parse_args(argv)
    job = ExportJob(args.wav, args.model, args.out, args.target_rate)
    return _run(export_acoustic, job)


def main_linguistic(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-linguistic",
        description="Export sub-word text embeddings to a TEMB file",
    )
    parser.add_argument("--transcript", required=True)
    parser.add_argument("--model", required=True)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    job = ExportJob(args.transcript, args.model, args.out)
    return _run(export_linguistic, job)


if __name__ == "__main__":
    sys.exit(main_acoustic())
