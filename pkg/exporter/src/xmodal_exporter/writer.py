"""Standalone XMB1 bundle writer.

Byte-for-byte mirror of the engine's bundle layout, kept dependency-free
on purpose: the exporter talks to the engine only through this file
format.

    magic   b"XMB1"
    header  u32 x5: N, F, D, M, flags (bit 0: labels present)
    blocks  float32 LE row-major: inputs N x F, teacher N x D, anchors M x D
    labels  i32 x N when flagged
    strings u32 byte-length prefixed UTF-8: N ids, M prompts, M class names
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"XMB1"


def write_bundle(
    path: str | Path,
    inputs: np.ndarray,
    teacher: np.ndarray,
    anchors: np.ndarray,
    ids: list[str],
    prompts: list[str],
    class_names: list[str],
    labels: list[int] | None = None,
) -> None:
    inputs = np.ascontiguousarray(inputs, dtype="<f4")
    teacher = np.ascontiguousarray(teacher, dtype="<f4")
    anchors = np.ascontiguousarray(anchors, dtype="<f4")
    n, f = inputs.shape
    d = teacher.shape[1]
    m = anchors.shape[0]
    if teacher.shape[0] != n or anchors.shape[1] != d:
        raise ValueError(
            f"inconsistent shapes: inputs {inputs.shape}, teacher {teacher.shape}, anchors {anchors.shape}"
        )
    if len(ids) != n or len(prompts) != m or len(class_names) != m:
        raise ValueError("id/prompt/class-name counts do not match the data blocks")
    flags = 1 if labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<5I", n, f, d, m, flags))
        fh.write(inputs.tobytes())
        fh.write(teacher.tobytes())
        fh.write(anchors.tobytes())
        if labels is not None:
            fh.write(np.asarray(labels, dtype="<i4").tobytes())
        for text in (*ids, *prompts, *class_names):
            raw = text.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
