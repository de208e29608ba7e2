"""Command line wrapper: ``embed-extract extract --manifest ... --out ...``."""

import argparse
import logging
import sys

from .errors import ExtractError
from .extract import extract
from .manifest import read_manifest


def _build_parser():
    parser = argparse.ArgumentParser(prog="embed-extract")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="embed a manifest of images into a CSEB table")
    p.add_argument("--manifest", required=True, help="CSV with header id,path")
    p.add_argument("--backbone", required=True)
    p.add_argument("--out", required=True, help="CSEB output path")
    p.add_argument("--batch", type=int, default=8,
                   help="file loading group size; never changes output values")
    p.add_argument("--skip-bad", action="store_true",
                   help="skip undecodable images instead of aborting")
    p.add_argument("--weights", choices=("pretrained", "none"),
                   default="pretrained",
                   help="'none' uses a fixed-seed random init, for offline use")
    p.add_argument("--device", default="cpu")
    return parser


def entry(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse prints its own message; fold --help into success
        return 1 if exc.code else 0
    try:
        entries = read_manifest(args.manifest)
        kept, skipped = extract(
            entries, args.backbone, args.out, batch=args.batch,
            skip_bad=args.skip_bad, weights=args.weights, device=args.device)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # unexpected: torch/IO failures
        print(f"error: {exc}", file=sys.stderr)
        return 2
    suffix = f" ({len(skipped)} skipped)" if skipped else ""
    print(f"wrote {len(kept)} embeddings to {args.out}{suffix}")
    return 0
