"""Image preprocessing recipes.

The train recipe applies the usual stochastic stack (random resized crop,
horizontal flip, color jitter, gaussian blur); the eval recipe is the
deterministic resize-to-1.1x-then-center-crop.  Both end in a mean/std
normalization and return channel-first float32 arrays in [-mean/std, ...].

All randomness flows from the numpy generator handed in by the caller, so
a (seed, image, view) triple always produces the same view.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image, ImageEnhance, ImageFilter


def _to_array(image: Image.Image, mean: float, std: float) -> np.ndarray:
    arr = np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
    arr = (arr - mean) / std
    return np.transpose(arr, (2, 0, 1))


def _random_resized_crop(
    image: Image.Image, size: int, rng: np.random.Generator
) -> Image.Image:
    width, height = image.size
    area = width * height
    for _ in range(10):
        target_area = area * rng.uniform(0.08, 1.0)
        aspect = math.exp(rng.uniform(math.log(3 / 4), math.log(4 / 3)))
        crop_w = int(round(math.sqrt(target_area * aspect)))
        crop_h = int(round(math.sqrt(target_area / aspect)))
        if 0 < crop_w <= width and 0 < crop_h <= height:
            left = int(rng.integers(0, width - crop_w + 1))
            top = int(rng.integers(0, height - crop_h + 1))
            box = (left, top, left + crop_w, top + crop_h)
            return image.resize((size, size), Image.BILINEAR, box=box)
    return _center_crop(image, min(width, height)).resize((size, size), Image.BILINEAR)


def _center_crop(image: Image.Image, size: int) -> Image.Image:
    width, height = image.size
    left = (width - size) // 2
    top = (height - size) // 2
    return image.crop((left, top, left + size, top + size))


def train_view(
    image: Image.Image,
    size: int,
    rng: np.random.Generator,
    mean: float = 0.5,
    std: float = 0.5,
) -> np.ndarray:
    out = _random_resized_crop(image, size, rng)
    if rng.random() < 0.5:
        out = out.transpose(Image.FLIP_LEFT_RIGHT)
    if rng.random() < 0.8:
        for enhancer in (ImageEnhance.Brightness, ImageEnhance.Contrast, ImageEnhance.Color):
            out = enhancer(out).enhance(float(rng.uniform(0.6, 1.4)))
    if rng.random() < 0.5:
        out = out.filter(ImageFilter.GaussianBlur(radius=float(rng.uniform(0.1, 2.0))))
    return _to_array(out, mean, std)


def eval_view(
    image: Image.Image, size: int, mean: float = 0.5, std: float = 0.5
) -> np.ndarray:
    resized_side = int(round(size + 0.1 * size))
    width, height = image.size
    scale = resized_side / min(width, height)
    out = image.resize(
        (max(1, int(round(width * scale))), max(1, int(round(height * scale)))),
        Image.BILINEAR,
    )
    out = _center_crop(out, size)
    return _to_array(out, mean, std)


def student_input(view: np.ndarray, pixels: int, grayscale: bool) -> np.ndarray:
    """Downsampled pixel vector of an already-transformed view.

    Block-averages the channel-first view down to a pixels x pixels grid;
    grayscale collapses channels first.  Flattened float32 output.
    """
    arr = view.mean(axis=0, keepdims=True) if grayscale else view
    channels, height, width = arr.shape
    ys = np.linspace(0, height, pixels + 1, dtype=int)
    xs = np.linspace(0, width, pixels + 1, dtype=int)
    out = np.empty((channels, pixels, pixels), dtype=np.float32)
    for i in range(pixels):
        for j in range(pixels):
            block = arr[:, ys[i] : max(ys[i + 1], ys[i] + 1), xs[j] : max(xs[j + 1], xs[j] + 1)]
            out[:, i, j] = block.mean(axis=(1, 2))
    return out.ravel()
