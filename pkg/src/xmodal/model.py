"""Trainable student encoder, its EMA shadow, and the contrastive head.

Architectures are deliberately small (linear, or one-hidden-layer MLP with
relu) and the backward pass is written by hand; there is no autograd here.
Layer convention: z = x @ W + b with W of shape (fan_in, fan_out), all
parameters float64.

Checkpoints use the same binary container conventions as bundles (magic +
little-endian u32 header + raw blocks) under the magic "XMS1"; parameter
blocks are stored as float64 so a reloaded model is bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BatchTooSmall, MalformedHeader, ShapeMismatch
from .losses import (
    Reduction,
    _reduction_weight,
    normalize_rows,
    normalize_rows_backward,
    softmax_rows,
)

CHECKPOINT_MAGIC = b"XMS1"


@dataclass
class StudentModel:
    """Encoder mapping raw inputs to embeddings through dense relu layers."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i > 0 and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeMismatch(
                    f"layer {i} fan-in {w.shape[0]} vs previous fan-out "
                    f"{self.weights[i - 1].shape[1]}"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def clone(self) -> "StudentModel":
        return StudentModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def assert_finite(self) -> None:
        for p in self.parameters():
            if not np.isfinite(p).all():
                raise ShapeMismatch("model parameters became non-finite")


@dataclass
class MomentumStudent:
    """EMA shadow of a student, updated as theta <- m*theta + (1-m)*source."""

    model: StudentModel
    momentum: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0,1], got {self.momentum}")


@dataclass
class ProjectionHead:
    """Single dense layer mapping embeddings into the contrastive space."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeMismatch(
                f"head weight {self.weight.shape} vs bias {self.bias.shape}"
            )
        if self.weight.shape[1] < 2:
            raise ShapeMismatch("projection dim must be at least 2")

    def clone(self) -> "ProjectionHead":
        return ProjectionHead(self.weight.copy(), self.bias.copy())


def _uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return w, b


def init_student(
    input_dim: int,
    embed_dim: int,
    arch: str = "linear",
    hidden_dim: int = 64,
    seed: int = 0,
) -> StudentModel:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    rng = np.random.default_rng(seed)
    if arch == "linear":
        dims = [input_dim, embed_dim]
    elif arch == "mlp":
        dims = [input_dim, hidden_dim, embed_dim]
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w, b = _uniform_init(rng, fan_in, fan_out)
        weights.append(w)
        biases.append(b)
    return StudentModel(weights=weights, biases=biases)


def init_projection_head(
    embed_dim: int, proj_dim: int = 128, seed: int = 0
) -> ProjectionHead:
    rng = np.random.default_rng(seed)
    w, b = _uniform_init(rng, embed_dim, proj_dim)
    return ProjectionHead(weight=w, bias=b)


def forward(model: StudentModel, inputs: np.ndarray) -> np.ndarray:
    """Raw (pre-normalization) embeddings for a batch of inputs."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeMismatch(
            f"inputs {x.shape} incompatible with input dim {model.input_dim}"
        )
    if not np.isfinite(x).all():
        raise ShapeMismatch("inputs contain non-finite values")
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        x = x @ w + b
        if i < last:
            x = np.maximum(x, 0.0)
    return x


def _forward_cached(model: StudentModel, inputs: np.ndarray):
    """Forward pass keeping each layer's input for the backward sweep."""
    x = np.asarray(inputs, dtype=np.float64)
    layer_inputs = []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        layer_inputs.append(x)
        x = x @ w + b
        if i < last:
            x = np.maximum(x, 0.0)
    return x, layer_inputs


def backward(
    model: StudentModel, inputs: np.ndarray, grad_embeddings: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Chain-rule parameter gradients given dL/d(raw embeddings).

    Pure chain rule: any batch reduction must already live inside
    `grad_embeddings`.  Returns one (dW, db) pair per layer.
    """
    grad_embeddings = np.asarray(grad_embeddings, dtype=np.float64)
    out, layer_inputs = _forward_cached(model, inputs)
    if grad_embeddings.shape != out.shape:
        raise ShapeMismatch(
            f"upstream gradient {grad_embeddings.shape} vs embeddings {out.shape}"
        )
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.weights)
    g = grad_embeddings
    for i in reversed(range(len(model.weights))):
        x_in = layer_inputs[i]
        pre = x_in @ model.weights[i] + model.biases[i]
        if i < len(model.weights) - 1:
            g = g * (pre > 0.0)
        grads[i] = (x_in.T @ g, g.sum(axis=0))
        if i > 0:
            g = g @ model.weights[i].T
    return grads


def ema_update(shadow: MomentumStudent, source: StudentModel, m: float | None = None):
    """In-place theta_hat <- m*theta_hat + (1-m)*theta, elementwise."""
    m = shadow.momentum if m is None else m
    src = source.parameters()
    dst = shadow.model.parameters()
    if len(src) != len(dst):
        raise ShapeMismatch("shadow and source have different parameter counts")
    for p_dst, p_src in zip(dst, src):
        if p_dst.shape != p_src.shape:
            raise ShapeMismatch(f"shadow {p_dst.shape} vs source {p_src.shape}")
        p_dst *= m
        p_dst += (1.0 - m) * p_src


# ---------------------------------------------------------------------------
# contrastive pretraining
# ---------------------------------------------------------------------------


class FeatureViewAugmenter:
    """Two stochastic feature-space views: gaussian noise + coordinate dropout.

    Deterministic per (seed, step): the same call always produces the same
    pair of views.
    """

    def __init__(self, noise_sigma: float = 0.1, dropout_rate: float = 0.1, seed: int = 0):
        self.noise_sigma = float(noise_sigma)
        self.dropout_rate = float(dropout_rate)
        self.seed = int(seed)

    def views(self, inputs: np.ndarray, step: int) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(inputs, dtype=np.float64)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(step)]))
        out = []
        for _ in range(2):
            noise = rng.normal(0.0, self.noise_sigma, size=x.shape)
            keep = rng.random(x.shape) >= self.dropout_rate
            out.append((x + noise) * keep)
        return out[0], out[1]


def infonce_loss(
    projections_raw: np.ndarray, tau: float = 0.1, reduction: Reduction = "mean"
) -> tuple[float, np.ndarray]:
    """Contrastive agreement loss over 2B stacked projections.

    Rows [0, B) and [B, 2B) are the two views; row i's positive is
    (i + B) mod 2B.  Projections are unit-normalized internally and the
    gradient is returned w.r.t. the raw projection matrix.
    """
    raw = np.asarray(projections_raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] % 2 != 0:
        raise ShapeMismatch(f"expected 2B x P projections, got {raw.shape}")
    two_b = raw.shape[0]
    if two_b < 4:
        raise BatchTooSmall(f"need batch size >= 2, got {two_b // 2}")
    if tau <= 0:
        raise ValueError(f"temperature {tau} <= 0")
    h, norms = normalize_rows(raw)
    b = two_b // 2
    pos = (np.arange(two_b) + b) % two_b

    sims = (h @ h.T) / tau
    np.fill_diagonal(sims, -np.inf)  # the indicator k != i
    weights = softmax_rows(sims)
    logits_pos = sims[np.arange(two_b), pos]
    logsumexp = sims.max(axis=1)
    logsumexp += np.log(np.exp(sims - logsumexp[:, None]).sum(axis=1))
    per_anchor = logsumexp - logits_pos

    w = _reduction_weight(two_b, reduction)
    loss = w * float(per_anchor.sum())

    grad_s = weights.copy()
    grad_s[np.arange(two_b), pos] -= 1.0
    grad_s *= w
    # sims is symmetric in h: row i and column i both touch h_i
    grad_h = ((grad_s + grad_s.T) @ h) / tau
    return loss, normalize_rows_backward(h, norms, grad_h)


def project(head: ProjectionHead, embeddings_unit: np.ndarray) -> np.ndarray:
    return embeddings_unit @ head.weight + head.bias


def infonce_pretrain_step(
    model: StudentModel,
    head: ProjectionHead,
    batch: np.ndarray,
    augmenter: FeatureViewAugmenter,
    tau: float = 0.1,
    step: int = 0,
    reduction: Reduction = "mean",
):
    """Loss and parameter gradients for one contrastive pretraining step.

    Returns (loss, model gradients, head gradients) where gradients mirror
    the layouts of `backward` and (dW, db) for the head.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] < 2:
        raise BatchTooSmall(f"need batch size >= 2, got {batch.shape[0]}")
    v1, v2 = augmenter.views(batch, step)
    stacked = np.vstack([v1, v2])

    z = forward(model, stacked)
    q, q_norms = normalize_rows(z)
    h_raw = project(head, q)
    loss, grad_h_raw = infonce_loss(h_raw, tau=tau, reduction=reduction)

    grad_w_head = q.T @ grad_h_raw
    grad_b_head = grad_h_raw.sum(axis=0)
    grad_q = grad_h_raw @ head.weight.T
    grad_z = normalize_rows_backward(q, q_norms, grad_q)
    model_grads = backward(model, stacked, grad_z)
    return loss, model_grads, (grad_w_head, grad_b_head)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    model: StudentModel,
    shadow: MomentumStudent | None = None,
    step: int = 0,
) -> None:
    """Write model (and optional shadow) parameters under magic XMS1."""
    path = Path(path)
    flags = 1 if shadow is not None else 0
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<3I", len(model.weights), step, flags))
        for w in model.weights:
            fh.write(struct.pack("<2I", *w.shape))
        models = [model] + ([shadow.model] if shadow is not None else [])
        for m in models:
            for w, b in zip(m.weights, m.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        if shadow is not None:
            fh.write(struct.pack("<d", shadow.momentum))


def load_checkpoint(
    path: str | Path,
) -> tuple[StudentModel, MomentumStudent | None, int]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise MalformedHeader(
                f"{path.name}: expected magic {CHECKPOINT_MAGIC!r}, found {magic!r}"
            )
        raw = fh.read(12)
        if len(raw) != 12:
            raise MalformedHeader("truncated checkpoint header")
        n_layers, step, flags = struct.unpack("<3I", raw)
        shapes = []
        for _ in range(n_layers):
            raw = fh.read(8)
            if len(raw) != 8:
                raise MalformedHeader("truncated layer shape table")
            shapes.append(struct.unpack("<2I", raw))

        def read_model() -> StudentModel:
            weights, biases = [], []
            for fan_in, fan_out in shapes:
                wn = fan_in * fan_out * 8
                w_raw = fh.read(wn)
                b_raw = fh.read(fan_out * 8)
                if len(w_raw) != wn or len(b_raw) != fan_out * 8:
                    raise MalformedHeader("truncated parameter block")
                weights.append(
                    np.frombuffer(w_raw, dtype="<f8").reshape(fan_in, fan_out).copy()
                )
                biases.append(np.frombuffer(b_raw, dtype="<f8").copy())
            return StudentModel(weights=weights, biases=biases)

        model = read_model()
        shadow = None
        if flags & 1:
            shadow_model = read_model()
            m_raw = fh.read(8)
            if len(m_raw) != 8:
                raise MalformedHeader("truncated momentum value")
            (momentum,) = struct.unpack("<d", m_raw)
            shadow = MomentumStudent(model=shadow_model, momentum=momentum)
        if fh.read(1):
            raise MalformedHeader(f"{path.name}: trailing bytes")
    return model, shadow, step
