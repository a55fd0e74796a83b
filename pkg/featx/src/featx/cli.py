"""The featx command."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from featx.backbone import BackboneError
from featx.extract import ExtractionError, extract
from featx.fixture import make_fixture
from featx.manifest import ManifestError, load_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featx", description="Extract image features into HCVF stores."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run a manifest through the backbone")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--weights", type=Path, help="torch state dict for the backbone")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("make-fixture", help="generate the synthetic image fixture")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--images", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backbone", default="vgg16")
    p.add_argument("--layer", default="fc7")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            if not args.manifest.exists():
                print(f"error: missing input: {args.manifest}", file=sys.stderr)
                return 2
            manifest = load_manifest(args.manifest)
            result = extract(
                manifest,
                weights=args.weights,
                seed=args.seed,
                batch_size=args.batch_size,
                threads=args.threads,
            )
            print(
                f"wrote {result.output} ({result.written} rows, "
                f"{len(result.skipped)} skipped)"
            )
        else:
            path = make_fixture(
                args.out,
                n_images=args.images,
                seed=args.seed,
                backbone=args.backbone,
                layer=args.layer,
            )
            print(f"wrote {path}")
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, BackboneError, ExtractionError, ValueError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


def entrypoint() -> None:
    sys.exit(main())
