"""The export run: images + prompts -> one XMB1 bundle plus a report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backends import load_encoder
from .errors import ImageDecodeError, ManifestError
from .manifest import ExportManifest
from .recipes import eval_view, student_input, train_view
from .writer import write_bundle

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp", ".tiff"}


@dataclass
class ExportReport:
    bundle_path: str
    images: int = 0
    rows: int = 0
    anchors: int = 0
    skipped: list[str] = field(default_factory=list)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=2) + "\n", encoding="utf-8")


def _list_images(root: Path) -> list[Path]:
    if not root.is_dir():
        raise ManifestError(f"image root is not a directory: {root}")
    return sorted(
        p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def _decode(path: Path) -> Image.Image:
    try:
        with Image.open(path) as img:
            img.load()
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(path) from exc


def export_bundle(manifest: ExportManifest) -> ExportReport:
    """Encode every decodable image under the root and write the bundle.

    Undecodable images are skipped and listed in the report.  Embeddings
    are written unnormalized; normalizing is the engine's job.
    """
    prompts = manifest.prompts()
    encoder = load_encoder(manifest.model, manifest.embed_dim)
    paths = _list_images(manifest.image_root)
    report = ExportReport(bundle_path=str(manifest.out), anchors=len(prompts))

    ids: list[str] = []
    views: list[np.ndarray] = []
    for path in paths:
        try:
            image = _decode(path)
        except ImageDecodeError as exc:
            report.skipped.append(exc.path)
            continue
        rel = path.relative_to(manifest.image_root).as_posix()
        for view_idx in range(manifest.views):
            if manifest.recipe == "train":
                rng = np.random.default_rng(
                    np.random.SeedSequence([manifest.seed, report.images, view_idx])
                )
                view = train_view(
                    image, manifest.input_size, rng,
                    manifest.normalize_mean, manifest.normalize_std,
                )
            else:
                view = eval_view(
                    image, manifest.input_size,
                    manifest.normalize_mean, manifest.normalize_std,
                )
            views.append(view)
            ids.append(rel if manifest.views == 1 else f"{rel}#v{view_idx}")
        report.images += 1
    if not views:
        raise ManifestError(f"no decodable images under {manifest.image_root}")

    teacher = encoder.encode_images(views)
    anchors = encoder.encode_texts(prompts)
    inputs = np.stack(
        [student_input(v, manifest.input_pixels, manifest.input_gray) for v in views]
    )
    # class names: the prompt with template scaffolding stripped is not
    # recoverable here, so the prompt itself doubles as the class name
    write_bundle(
        manifest.out,
        inputs=inputs,
        teacher=teacher,
        anchors=anchors,
        ids=ids,
        prompts=prompts,
        class_names=prompts,
    )
    report.rows = len(ids)
    report.write(Path(str(manifest.out) + ".report.json"))
    return report
