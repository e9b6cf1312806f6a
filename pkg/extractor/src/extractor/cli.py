"""Command line for the embedding extractor."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .encoders import make_encoder
from .extract import ExtractionJob, extract
from .templates import load_templates


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsar-extract",
        description="Embed frame-sampled videos and class-name prompts into "
        "FSE1/FSP1 containers plus a manifest",
    )
    parser.add_argument("--input-root", required=True, help="per-class video directories")
    parser.add_argument("--out-frames", required=True)
    parser.add_argument("--out-prompts", required=True)
    parser.add_argument("--out-manifest", required=True)
    parser.add_argument("--frames", type=int, default=8, help="frames sampled per video")
    parser.add_argument("--templates-file", help="newline-separated [CLS] templates")
    parser.add_argument("--splits-file", help="JSON {split: [class names]}")
    parser.add_argument(
        "--encoder", default="stub", choices=["stub", "clip"],
        help="stub is offline and deterministic; clip needs torch+transformers",
    )
    parser.add_argument("--dim", type=int, default=64, help="stub embedding width")
    parser.add_argument("--clip-model", help="huggingface model id for --encoder clip")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        encoder = make_encoder(args.encoder, dim=args.dim, model_name=args.clip_model)
        job = ExtractionJob(
            input_root=Path(args.input_root),
            out_frames=Path(args.out_frames),
            out_prompts=Path(args.out_prompts),
            out_manifest=Path(args.out_manifest),
            frames_per_video=args.frames,
            templates=load_templates(args.templates_file),
            splits_file=Path(args.splits_file) if args.splits_file else None,
        )
        summary = extract(job, encoder)
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
