"""Desk-scale bundle generator with known ground-truth geometry.

Anchors are near-orthogonal unit vectors, teacher embeddings are noisy
copies of their class anchor re-projected to the sphere, and raw inputs
are an invertible linear mixing of the pre-normalization teacher vector.
A linear student can therefore solve the transfer exactly, which makes
the generated bundles usable as end-to-end oracles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import AnchorSet, DatasetBundle, EmbeddingSet
from .errors import DimensionTooSmall
from .prompts import LabelRecord, PromptTemplate, render_prompt


@dataclass
class SynthSpec:
    """Geometry and noise parameters of a generated bundle."""

    num_classes: int = 10
    embed_dim: int = 16
    samples_per_class: int = 200
    noise_sigma: float = 0.1
    input_dim: int = 32
    input_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.embed_dim < 2:
            raise ValueError("embedding dim must be at least 2")
        if self.input_dim < self.embed_dim:
            raise ValueError("input dim must be at least the embedding dim")
        if self.noise_sigma < 0 or self.input_noise_sigma < 0:
            raise ValueError("noise levels must be >= 0")
        if self.samples_per_class < 1:
            raise ValueError("need at least one sample per class")


def _orthonormal_anchors(m: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """M unit anchor rows; exactly orthogonal when m <= d, spread otherwise."""
    if m <= d:
        gauss = rng.standard_normal((d, m))
        q, _ = np.linalg.qr(gauss)
        return q.T.copy()
    warnings.warn(
        f"{m} anchors in {d} dimensions cannot be orthogonal; "
        "falling back to maximally-spread vectors",
        DimensionTooSmall,
    )
    vecs = rng.standard_normal((m, d))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    # a few rounds of pairwise repulsion on the sphere
    for _ in range(200):
        gram = vecs @ vecs.T
        np.fill_diagonal(gram, 0.0)
        push = (gram**3) @ vecs  # odd power keeps antipodal pairs apart
        vecs -= 0.1 * push
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs


def _mixing_map(f: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Well-conditioned F x D map with full column rank."""
    gauss = rng.standard_normal((f, d))
    q, _ = np.linalg.qr(gauss)
    scales = rng.uniform(0.75, 1.5, size=d)
    return q * scales


def generate(spec: SynthSpec) -> tuple[DatasetBundle, np.ndarray]:
    """Bundle plus ground-truth labels, deterministic under spec.seed."""
    rng = np.random.default_rng(spec.seed)
    m, d, f = spec.num_classes, spec.embed_dim, spec.input_dim
    anchors = _orthonormal_anchors(m, d, rng)
    mixing = _mixing_map(f, d, rng)

    n = m * spec.samples_per_class
    labels = np.repeat(np.arange(m), spec.samples_per_class)
    noise = rng.standard_normal((n, d)) * spec.noise_sigma
    pre_norm = anchors[labels] + noise
    teacher = pre_norm / np.linalg.norm(pre_norm, axis=1, keepdims=True)
    inputs = pre_norm @ mixing.T
    if spec.input_noise_sigma > 0:
        inputs = inputs + rng.standard_normal((n, f)) * spec.input_noise_sigma

    names = [f"class_{c:02d}" for c in range(m)]
    template = PromptTemplate.of("basic")
    prompts = [render_prompt(template, LabelRecord(fine_label=name)) for name in names]

    teacher_set = EmbeddingSet(
        ids=[f"sample_{i:05d}" for i in range(n)],
        data=teacher.astype(np.float32),
        labels=labels.tolist(),
        normalized=True,
    )
    anchor_set = AnchorSet(
        prompts=prompts,
        class_names=names,
        data=anchors.astype(np.float32),
        normalized=True,
    )
    bundle = DatasetBundle(
        inputs=inputs.astype(np.float32),
        teacher_embeddings=teacher_set,
        anchors=anchor_set,
        eval_labels=labels.tolist(),
    )
    return bundle, labels


def write_truth_csv(path: str | Path, bundle: DatasetBundle) -> None:
    """id,label rows for the generated bundle."""
    lines = ["id,label"]
    for rid, label in zip(bundle.teacher_embeddings.ids, bundle.eval_labels):
        lines.append(f"{rid},{label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
