"""Teacher encoder backends.

Two families are understood by :func:`load_encoder`:

    toy:<seed>          hermetic random-projection encoder, no downloads;
                        useful for tests and format plumbing
    clip:<hub id>       a real vision-language model through transformers
                        (requires the `clip` extra and downloadable weights)

Both expose encode_images(list of CHW float arrays) -> N x D and
encode_texts(list of str) -> M x D, returning unnormalized float32 rows.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ModelLoadError

_TEXT_BINS = 1024


class ToyEncoder:
    """Deterministic stand-in teacher.

    Images go through a seeded gaussian projection of their pixels; texts
    are hashed character trigrams through a second projection.  The same
    (seed, dim) pair always produces the same encoder.
    """

    def __init__(self, seed: int, dim: int):
        self.seed = int(seed)
        self.dim = int(dim)
        self._image_proj: dict[int, np.ndarray] = {}
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1]))
        self._text_proj = rng.normal(size=(_TEXT_BINS, self.dim)).astype(np.float64)

    def _projection_for(self, length: int) -> np.ndarray:
        if length not in self._image_proj:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0, length]))
            self._image_proj[length] = rng.normal(size=(length, self.dim)) / np.sqrt(length)
        return self._image_proj[length]

    def encode_images(self, views: list[np.ndarray]) -> np.ndarray:
        rows = []
        for view in views:
            flat = np.asarray(view, dtype=np.float64).ravel()
            rows.append(flat @ self._projection_for(flat.shape[0]))
        return np.asarray(rows, dtype=np.float32)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            counts = np.zeros(_TEXT_BINS)
            padded = f"  {text.lower()}  "
            for i in range(len(padded) - 2):
                gram = padded[i : i + 3].encode("utf-8")
                digest = hashlib.md5(gram).digest()
                counts[int.from_bytes(digest[:4], "little") % _TEXT_BINS] += 1.0
            norm = np.linalg.norm(counts)
            if norm > 0:
                counts /= norm
            rows.append(counts @ self._text_proj)
        return np.asarray(rows, dtype=np.float32)


class ClipEncoder:
    """A pretrained vision-language teacher via transformers."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ModelLoadError(f"transformers/torch unavailable: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise ModelLoadError(f"cannot load {model_id!r}: {exc}") from exc
        self._torch = torch
        self._model.eval()

    def encode_images(self, views: list[np.ndarray]) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            pixel_values = torch.from_numpy(np.stack(views)).float()
            feats = self._model.get_image_features(pixel_values=pixel_values)
        return feats.cpu().numpy().astype(np.float32)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        tokens = self._processor(text=texts, return_tensors="pt", padding=True)
        with torch.no_grad():
            feats = self._model.get_text_features(**tokens)
        return feats.cpu().numpy().astype(np.float32)


def load_encoder(model: str, embed_dim: int):
    """Build the encoder named by a manifest `model` string."""
    scheme, _, rest = model.partition(":")
    if scheme == "toy":
        try:
            seed = int(rest) if rest else 0
        except ValueError as exc:
            raise ModelLoadError(f"toy backend expects an integer seed, got {rest!r}") from exc
        return ToyEncoder(seed=seed, dim=embed_dim)
    if scheme == "clip":
        if not rest:
            raise ModelLoadError("clip backend needs a model id, e.g. clip:openai/clip-vit-base-patch32")
        return ClipEncoder(rest)
    raise ModelLoadError(f"unknown backend scheme {scheme!r} in {model!r}")
