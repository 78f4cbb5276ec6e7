"""In-memory embedding containers and the on-disk bundle format.

A bundle file packages everything one transfer run consumes: raw student
input features, frozen teacher image embeddings, text-anchor embeddings,
and optional evaluation labels.  The layout is a single little-endian
binary file:

    magic   4 bytes  b"XMB1"
    header  5 x u32  N (rows), F (input dim), D (embedding dim),
                     M (anchor count), flags
    blocks  float32, row-major: inputs N x F, teacher N x D, anchors M x D
    labels  N x i32, present iff flags bit 0
    strings length-prefixed UTF-8 (u32 byte count each):
            N row ids, M prompts, M class names

flags bit 1 marks the teacher block as row-normalized, bit 2 the anchor
block.  Embeddings are conventionally written unnormalized; normalization
is an explicit, testable step on the loaded containers.

Containers are immutable after construction and safe to share read-only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    MalformedHeader,
    NonFiniteValue,
    ZeroVector,
)

MAGIC = b"XMB1"

_FLAG_LABELS = 1
_FLAG_TEACHER_NORMALIZED = 2
_FLAG_ANCHORS_NORMALIZED = 4

#: rows with L2 norm at or below this cannot be normalized
ZERO_NORM_THRESHOLD = 1e-12

#: tolerance on |norm - 1| for the `normalized` flag to be truthful
UNIT_NORM_TOL = 1e-6


def _as_matrix(data, name: str) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-d matrix, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def _check_finite(data: np.ndarray, section: str) -> None:
    bad = ~np.isfinite(data)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0])
        raise NonFiniteValue(f"non-finite value in {section} at row {row}", row=row)


def _check_unit_rows(data: np.ndarray, section: str) -> None:
    norms = np.linalg.norm(data.astype(np.float64), axis=1)
    off = np.abs(norms - 1.0)
    if off.size and off.max() > UNIT_NORM_TOL:
        row = int(np.argmax(off))
        raise DimensionMismatch(
            f"{section} marked normalized but row {row} has norm {norms[row]:.9f}"
        )


def normalize_whitespace(text: str) -> str:
    """Collapse runs of whitespace and strip the ends (prompt dedup key)."""
    return " ".join(text.split())


@dataclass(eq=False)
class EmbeddingSet:
    """N embeddings with string ids and optional integer class labels."""

    ids: list[str]
    data: np.ndarray
    labels: list[int] | None = None
    normalized: bool = False

    def __post_init__(self):
        self.data = _as_matrix(self.data, "embeddings")
        _check_finite(self.data, "embeddings")
        if len(self.ids) != self.data.shape[0]:
            raise DimensionMismatch(
                f"{len(self.ids)} ids for {self.data.shape[0]} embedding rows"
            )
        if self.labels is not None:
            self.labels = [int(x) for x in self.labels]
            if len(self.labels) != self.data.shape[0]:
                raise DimensionMismatch(
                    f"{len(self.labels)} labels for {self.data.shape[0]} rows"
                )
            if self.labels and min(self.labels) < 0:
                raise DimensionMismatch("labels must be non-negative")
        if self.normalized:
            _check_unit_rows(self.data, "embeddings")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(eq=False)
class AnchorSet:
    """M text-anchor embeddings with the prompts that produced them."""

    prompts: list[str]
    class_names: list[str]
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.data = _as_matrix(self.data, "anchors")
        _check_finite(self.data, "anchors")
        m = self.data.shape[0]
        if m < 2:
            raise DimensionMismatch(
                f"an anchor set needs at least 2 anchors, got {m}"
            )
        if len(self.prompts) != m or len(self.class_names) != m:
            raise DimensionMismatch(
                f"{len(self.prompts)} prompts / {len(self.class_names)} class names "
                f"for {m} anchor rows"
            )
        keys = [normalize_whitespace(p) for p in self.prompts]
        if len(set(keys)) != len(keys):
            dup = next(k for k in keys if keys.count(k) > 1)
            raise DimensionMismatch(f"duplicate prompt after whitespace folding: {dup!r}")
        if self.normalized:
            _check_unit_rows(self.data, "anchors")

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def subset(self, indices) -> "AnchorSet":
        """Anchor set restricted to `indices` (original order preserved)."""
        idx = sorted(int(i) for i in indices)
        return AnchorSet(
            prompts=[self.prompts[i] for i in idx],
            class_names=[self.class_names[i] for i in idx],
            data=self.data[idx].copy(),
            normalized=self.normalized,
        )


@dataclass(eq=False)
class DatasetBundle:
    """Raw inputs + teacher embeddings + anchors for one transfer run."""

    inputs: np.ndarray
    teacher_embeddings: EmbeddingSet
    anchors: AnchorSet
    eval_labels: list[int] | None = None

    def __post_init__(self):
        self.inputs = _as_matrix(self.inputs, "inputs")
        _check_finite(self.inputs, "inputs")
        if self.inputs.shape[0] != self.teacher_embeddings.n:
            raise DimensionMismatch(
                f"{self.inputs.shape[0]} input rows vs "
                f"{self.teacher_embeddings.n} teacher embeddings"
            )
        if self.anchors.dim != self.teacher_embeddings.dim:
            raise DimensionMismatch(
                f"anchor dim {self.anchors.dim} vs teacher dim "
                f"{self.teacher_embeddings.dim}"
            )
        if self.eval_labels is not None:
            self.eval_labels = [int(x) for x in self.eval_labels]
            if len(self.eval_labels) != self.inputs.shape[0]:
                raise DimensionMismatch(
                    f"{len(self.eval_labels)} labels for {self.inputs.shape[0]} rows"
                )
            if self.eval_labels and not all(
                0 <= y < self.anchors.m for y in self.eval_labels
            ):
                raise DimensionMismatch(
                    f"labels must lie in [0, {self.anchors.m})"
                )

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.teacher_embeddings.dim


def l2_normalize(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Row-normalize to unit L2 norm (float64), preserving direction.

    Raises ZeroVector naming the first row whose norm is at or below
    ``ZERO_NORM_THRESHOLD``.  Idempotent up to float64 rounding.
    """
    data = embeddings.data.astype(np.float64)
    norms = np.linalg.norm(data, axis=1)
    tiny = norms <= ZERO_NORM_THRESHOLD
    if tiny.any():
        row = int(np.argmax(tiny))
        raise ZeroVector(f"row {row} has norm {norms[row]:.3e}", row=row)
    return EmbeddingSet(
        ids=list(embeddings.ids),
        data=data / norms[:, None],
        labels=None if embeddings.labels is None else list(embeddings.labels),
        normalized=True,
    )


def normalize_anchors(anchors: AnchorSet) -> AnchorSet:
    """Same as :func:`l2_normalize` for anchor sets."""
    data = anchors.data.astype(np.float64)
    norms = np.linalg.norm(data, axis=1)
    tiny = norms <= ZERO_NORM_THRESHOLD
    if tiny.any():
        row = int(np.argmax(tiny))
        raise ZeroVector(f"anchor row {row} has norm {norms[row]:.3e}", row=row)
    return replace(anchors, data=data / norms[:, None], normalized=True)


# ---------------------------------------------------------------------------
# binary i/o
# ---------------------------------------------------------------------------


def _write_block(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _write_string(fh, text: str) -> None:
    raw = text.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def save_bundle(bundle: DatasetBundle, path: str | Path) -> None:
    """Write the bundle in the self-describing binary format above.

    Float data is stored as little-endian float32; callers holding float64
    containers lose the extra bits on disk.
    """
    path = Path(path)
    teacher = bundle.teacher_embeddings
    anchors = bundle.anchors
    flags = 0
    if bundle.eval_labels is not None:
        flags |= _FLAG_LABELS
    if teacher.normalized:
        flags |= _FLAG_TEACHER_NORMALIZED
    if anchors.normalized:
        flags |= _FLAG_ANCHORS_NORMALIZED
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(
            struct.pack(
                "<5I",
                bundle.n,
                bundle.input_dim,
                bundle.embed_dim,
                anchors.m,
                flags,
            )
        )
        _write_block(fh, bundle.inputs)
        _write_block(fh, teacher.data)
        _write_block(fh, anchors.data)
        if bundle.eval_labels is not None:
            fh.write(np.asarray(bundle.eval_labels, dtype="<i4").tobytes())
        for rid in teacher.ids:
            _write_string(fh, rid)
        for prompt in anchors.prompts:
            _write_string(fh, prompt)
        for name in anchors.class_names:
            _write_string(fh, name)


def _read_exact(fh, count: int, what: str) -> bytes:
    raw = fh.read(count)
    if len(raw) != count:
        raise MalformedHeader(f"truncated file while reading {what}")
    return raw


def _read_block(fh, rows: int, cols: int, what: str) -> np.ndarray:
    raw = _read_exact(fh, rows * cols * 4, what)
    return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).copy()


def _read_string(fh, what: str) -> str:
    (length,) = struct.unpack("<I", _read_exact(fh, 4, what))
    if length > 1 << 20:
        raise MalformedHeader(f"implausible string length {length} in {what}")
    return _read_exact(fh, length, what).decode("utf-8")


def load_bundle(path: str | Path, prompts_override: str | Path | None = None) -> DatasetBundle:
    """Load and validate a bundle file.

    `prompts_override` points at a plain-text sidecar with one prompt per
    line, replacing the embedded prompt strings (used by the random-prompt
    experiments).  The sidecar must supply exactly M lines.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise MalformedHeader(
                f"{path.name}: expected magic {MAGIC!r}, found {magic!r}"
            )
        n, f, d, m, flags = struct.unpack("<5I", _read_exact(fh, 20, "header"))
        inputs = _read_block(fh, n, f, "input block")
        teacher = _read_block(fh, n, d, "teacher block")
        anchors = _read_block(fh, m, d, "anchor block")
        labels = None
        if flags & _FLAG_LABELS:
            raw = _read_exact(fh, n * 4, "label block")
            labels = np.frombuffer(raw, dtype="<i4").tolist()
        ids = [_read_string(fh, f"id {i}") for i in range(n)]
        prompts = [_read_string(fh, f"prompt {j}") for j in range(m)]
        class_names = [_read_string(fh, f"class name {j}") for j in range(m)]
        trailing = fh.read(1)
        if trailing:
            raise MalformedHeader(f"{path.name}: trailing bytes after string table")

    if prompts_override is not None:
        lines = Path(prompts_override).read_text(encoding="utf-8").splitlines()
        lines = [ln for ln in lines if ln.strip()]
        if len(lines) != m:
            raise DimensionMismatch(
                f"prompt sidecar has {len(lines)} lines for {m} anchors"
            )
        prompts = lines

    teacher_set = EmbeddingSet(
        ids=ids,
        data=teacher,
        labels=labels,
        normalized=bool(flags & _FLAG_TEACHER_NORMALIZED),
    )
    anchor_set = AnchorSet(
        prompts=prompts,
        class_names=class_names,
        data=anchors,
        normalized=bool(flags & _FLAG_ANCHORS_NORMALIZED),
    )
    return DatasetBundle(
        inputs=inputs,
        teacher_embeddings=teacher_set,
        anchors=anchor_set,
        eval_labels=labels,
    )


def split_bundle(
    bundle: DatasetBundle, holdout_fraction: float, seed: int
) -> tuple[DatasetBundle, DatasetBundle]:
    """Deterministic train/holdout split by seeded permutation.

    Stratified by label when labels are present, so small holdouts keep
    every class represented.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError(f"holdout fraction must be in (0,1), got {holdout_fraction}")
    n = bundle.n
    rng = np.random.default_rng(seed)
    if bundle.eval_labels is not None:
        labels = np.asarray(bundle.eval_labels)
        hold: list[int] = []
        for cls in np.unique(labels):
            members = np.flatnonzero(labels == cls)
            members = members[rng.permutation(len(members))]
            take = max(1, int(round(holdout_fraction * len(members))))
            hold.extend(members[:take].tolist())
        hold_idx = np.sort(np.asarray(hold))
    else:
        perm = rng.permutation(n)
        hold_idx = np.sort(perm[: max(1, int(round(holdout_fraction * n)))])
    mask = np.zeros(n, dtype=bool)
    mask[hold_idx] = True
    train_idx = np.flatnonzero(~mask)

    def take(indices: np.ndarray) -> DatasetBundle:
        teacher = bundle.teacher_embeddings
        labels = None
        if bundle.eval_labels is not None:
            labels = [bundle.eval_labels[i] for i in indices]
        sub_teacher = EmbeddingSet(
            ids=[teacher.ids[i] for i in indices],
            data=teacher.data[indices].copy(),
            labels=labels,
            normalized=teacher.normalized,
        )
        return DatasetBundle(
            inputs=bundle.inputs[indices].copy(),
            teacher_embeddings=sub_teacher,
            anchors=bundle.anchors,
            eval_labels=labels,
        )

    return take(train_idx), take(hold_idx)
