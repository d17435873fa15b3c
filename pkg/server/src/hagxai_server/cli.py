"""Command-line entry points: ``serve`` and ``export``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import ExportJob, export_bundles
from .models import REGISTRY

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hagxai-server", description="Model host: bundle export and scoring endpoints")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="serve /health, /score, /detect")
    p_serve.add_argument("--model", required=True, choices=sorted(REGISTRY))
    p_serve.add_argument("--layer", default=None, help="captured layer (reserved; export-side setting)")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8008)
    p_serve.add_argument("--seed", type=int, default=0)

    p_export = sub.add_parser("export", help="write explanation-bundle archives for a directory of images")
    p_export.add_argument("--model", required=True, choices=sorted(REGISTRY))
    p_export.add_argument("--layer", default=None, help="captured layer name (defaults to the model preset)")
    p_export.add_argument("--images", required=True, help="directory of input images")
    p_export.add_argument("--out", required=True, help="output directory for bundle archives")
    p_export.add_argument("--conf", type=float, default=0.25, help="detection confidence threshold")
    p_export.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .app import create_app

        uvicorn.run(create_app(args.model, seed=args.seed), host=args.host, port=args.port, log_level="warning")
        return 0

    images = [p for p in sorted(Path(args.images).iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES]
    if not images:
        print(f"no images found under {args.images}", file=sys.stderr)
        return 2
    job = ExportJob(
        model_id=args.model,
        layer_name=args.layer,
        image_paths=images,
        out_dir=Path(args.out),
        confidence=args.conf,
        seed=args.seed,
    )
    written = export_bundles(job)
    print(f"exported {len(written)} bundle(s) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
