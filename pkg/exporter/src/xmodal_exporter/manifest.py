"""Export manifest: what to encode, how, and where to write it."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ManifestError


@dataclass
class ExportManifest:
    model: str                      # "toy:<seed>" or "clip:<hub model id>"
    image_root: Path
    prompt_file: Path
    out: Path
    recipe: str = "eval"            # "train" (stochastic) or "eval" (deterministic)
    views: int = 1                  # teacher-embedding views per image
    input_size: int = 64            # side length the recipe crops/resizes to
    input_pixels: int = 8           # downsample grid for the raw student inputs
    input_gray: bool = True         # grayscale the student inputs
    embed_dim: int = 64             # toy backend embedding width
    normalize_mean: float = 0.5
    normalize_std: float = 0.5
    seed: int = 0                   # drives all train-recipe randomness

    def __post_init__(self):
        self.image_root = Path(self.image_root)
        self.prompt_file = Path(self.prompt_file)
        self.out = Path(self.out)
        if self.views < 1:
            raise ManifestError("views must be >= 1")
        if self.recipe not in ("train", "eval"):
            raise ManifestError(f"unknown recipe {self.recipe!r}")
        if self.input_size < 8 or self.input_pixels < 1:
            raise ManifestError("input_size must be >= 8 and input_pixels >= 1")

    def prompts(self) -> list[str]:
        if not self.prompt_file.exists():
            raise ManifestError(f"prompt file not found: {self.prompt_file}")
        lines = [
            line for line in self.prompt_file.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        if not lines:
            raise ManifestError(f"prompt file is empty: {self.prompt_file}")
        return lines


_BOOLS = {"true": True, "false": False, "1": True, "0": False}


def read_manifest(path: str | Path) -> ExportManifest:
    """Parse a key=value manifest file."""
    values: dict = {}
    known = {f.name: f.type for f in fields(ExportManifest)}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ManifestError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ManifestError(f"{path}:{lineno}: unknown manifest key {key!r}")
        values[key] = value
    missing = {"model", "image_root", "prompt_file", "out"} - set(values)
    if missing:
        raise ManifestError(f"manifest is missing required keys: {sorted(missing)}")
    kwargs: dict = {}
    for key, value in values.items():
        if key in ("views", "input_size", "input_pixels", "embed_dim", "seed"):
            kwargs[key] = int(value)
        elif key in ("normalize_mean", "normalize_std"):
            kwargs[key] = float(value)
        elif key == "input_gray":
            if value.lower() not in _BOOLS:
                raise ManifestError(f"input_gray must be a boolean, got {value!r}")
            kwargs[key] = _BOOLS[value.lower()]
        else:
            kwargs[key] = value
    return ExportManifest(**kwargs)
