"""`clip-export` command line: images | concepts."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import DEFAULT_BACKBONE
from .export import ExportJob, export_concepts, export_images


def _add_job_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, required=True,
                   help="image folder (class subdirectories) or concept list")
    p.add_argument("--out", type=Path, required=True,
                   help="output EMBD file path")
    p.add_argument("--backbone", default=DEFAULT_BACKBONE)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--device", default="cpu")


def cli_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="clip-export",
        description="Embed images or concept texts with a CLIP encoder pair "
                    "and write EMBD files.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_job_flags(sub.add_parser("images", help="embed an image dataset"))
    _add_job_flags(sub.add_parser("concepts", help="embed a concept list"))

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    job = ExportJob(data=args.data, out=args.out, backbone=args.backbone,
                    batch_size=args.batch_size, device=args.device)
    try:
        run = export_images if args.command == "images" else export_concepts
        path = run(job)
    except Exception as exc:  # CLI boundary: report, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
