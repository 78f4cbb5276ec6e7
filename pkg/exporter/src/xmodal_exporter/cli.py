"""xmodal-export: run a manifest, or assemble one from flags."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ExporterError
from .export import export_bundle
from .manifest import ExportManifest, read_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xmodal-export",
        description="Encode an image folder and a prompt list into an XMB1 bundle",
    )
    parser.add_argument("--manifest", type=Path, help="key=value manifest file")
    parser.add_argument("--model", type=str, help="toy:<seed> or clip:<hub id>")
    parser.add_argument("--image-root", type=Path)
    parser.add_argument("--prompt-file", type=Path)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--recipe", choices=["train", "eval"])
    parser.add_argument("--views", type=int)
    parser.add_argument("--input-size", type=int)
    parser.add_argument("--input-pixels", type=int)
    parser.add_argument("--embed-dim", type=int)
    parser.add_argument("--seed", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.manifest:
            manifest = read_manifest(args.manifest)
            for name in ("model", "image_root", "prompt_file", "out", "recipe",
                         "views", "input_size", "input_pixels", "embed_dim", "seed"):
                value = getattr(args, name)
                if value is not None:
                    setattr(manifest, name, value)
            manifest.__post_init__()
        else:
            required = ("model", "image_root", "prompt_file", "out")
            missing = [name for name in required if getattr(args, name) is None]
            if missing:
                build_parser().error(
                    f"without --manifest these flags are required: {missing}"
                )
            overrides = {
                name: getattr(args, name)
                for name in ("recipe", "views", "input_size", "input_pixels",
                             "embed_dim", "seed")
                if getattr(args, name) is not None
            }
            manifest = ExportManifest(
                model=args.model,
                image_root=args.image_root,
                prompt_file=args.prompt_file,
                out=args.out,
                **overrides,
            )
        report = export_bundle(manifest)
    except ExporterError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(
        f"wrote {report.bundle_path}: {report.rows} rows from {report.images} images, "
        f"{report.anchors} anchors, {len(report.skipped)} skipped",
        file=sys.stderr,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
