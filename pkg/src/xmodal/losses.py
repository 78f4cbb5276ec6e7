"""Loss terms and their analytic gradients.

All losses see the student through its raw (pre-normalization) embedding
matrix and differentiate through the row-normalization map, so a trainer
can chain the returned gradient straight into the encoder backward pass.
Teacher embeddings and anchors are constants: no gradient ever flows to
them.

Sign conventions, with r(x) = mean or sum over the batch per `reduction`:

    instance term      -r_i(q_i . k_i)                       (cosine, negated)
    matching term      r_i[ -sum_j t_ij log p_ij ]           (cross entropy)
    entropy term       r_i[ -sum_j p_ij log p_ij ]           (entropy of student)
    kl variant         r_i[ sum_j t_ij log(t_ij / p_ij) ]
    total              match + ent_weight * entropy + lambda_ism * instance

where p_i = softmax((q_i . a)/tau) over anchors a and t_i is the teacher's
distribution (optionally label-smoothed).  Probabilities are clamped at
1e-12 inside logs purely as a numerical guard.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .bundle import AnchorSet
from .errors import NonPositiveTemperature, ShapeMismatch

LOG_CLAMP = 1e-12

Reduction = Literal["mean", "sum"]


def _reduction_weight(n: int, reduction: Reduction) -> float:
    if reduction == "mean":
        return 1.0 / n
    if reduction == "sum":
        return 1.0
    raise ValueError(f"unknown reduction {reduction!r}")


def _require_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: {a.shape} vs {b.shape}")


def normalize_rows(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit rows and their original norms; raw must have no zero rows.

    Non-finite rows are passed through as NaN (the training loop turns a
    NaN loss into a fatal error with the step index).
    """
    raw = np.asarray(raw, dtype=np.float64)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if (norms <= 1e-12).any():
        row = int(np.argmax(norms[:, 0] <= 1e-12))
        raise ShapeMismatch(f"cannot normalize zero row {row}")
    with np.errstate(invalid="ignore"):
        return raw / norms, norms


def normalize_rows_backward(
    unit: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray
) -> np.ndarray:
    """Chain dL/d(unit rows) back to dL/d(raw rows).

    d(z/|z|)/dz = (I - qq^T)/|z|, applied row-wise.
    """
    radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
    return (grad_unit - radial * unit) / norms


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row softmax with max subtraction for overflow safety."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def softmax_rows_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """dL/dlogits from dL/dprobs: p * (g - sum_k p_k g_k) row-wise."""
    inner = np.sum(probs * grad_probs, axis=1, keepdims=True)
    return probs * (grad_probs - inner)


@dataclass(frozen=True)
class SimilarityDistribution:
    """A softmax distribution over anchors at a given temperature."""

    probs: np.ndarray
    temperature: float

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1:
            raise ShapeMismatch(f"distribution must be a vector, got {probs.shape}")
        if self.temperature <= 0:
            raise NonPositiveTemperature(f"temperature {self.temperature} <= 0")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ShapeMismatch(f"probabilities sum to {probs.sum()!r}, not 1")
        # float64 endpoints are reachable: a sharp softmax rounds its top
        # entry to exactly 1.0 and underflows the tail to 0.0
        if (probs < 0).any() or (probs > 1).any():
            raise ShapeMismatch("probabilities must lie in [0, 1]")


def anchor_logits(unit_rows: np.ndarray, anchors: np.ndarray, tau: float) -> np.ndarray:
    if tau <= 0:
        raise NonPositiveTemperature(f"temperature {tau} <= 0")
    return (unit_rows @ anchors.T) / tau


def cross_modal_similarity(
    embedding: np.ndarray, anchors: AnchorSet | np.ndarray, tau: float
) -> SimilarityDistribution:
    """Softmax over anchor similarities for a single unit embedding."""
    data = anchors.data if isinstance(anchors, AnchorSet) else np.asarray(anchors)
    e = np.asarray(embedding, dtype=np.float64).reshape(1, -1)
    if e.shape[1] != data.shape[1]:
        raise ShapeMismatch(f"embedding dim {e.shape[1]} vs anchor dim {data.shape[1]}")
    probs = softmax_rows(anchor_logits(e, np.asarray(data, dtype=np.float64), tau))
    return SimilarityDistribution(probs=probs[0], temperature=tau)


def similarity_profiles(
    unit_rows: np.ndarray, anchors: np.ndarray, tau: float
) -> np.ndarray:
    """N x M matrix of anchor-softmax distributions, one row per embedding."""
    return softmax_rows(anchor_logits(unit_rows, anchors, tau))


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------


def ism_loss(
    student_raw: np.ndarray,
    teacher_unit: np.ndarray,
    reduction: Reduction = "mean",
) -> tuple[float, np.ndarray]:
    """Negative cosine between student and teacher rows.

    Student rows are normalized internally; the returned gradient is with
    respect to the raw student matrix.
    """
    student_raw = np.asarray(student_raw, dtype=np.float64)
    teacher_unit = np.asarray(teacher_unit, dtype=np.float64)
    _require_same_shape(student_raw, teacher_unit, "ism operands")
    w = _reduction_weight(student_raw.shape[0], reduction)
    q, norms = normalize_rows(student_raw)
    loss = -w * float(np.sum(q * teacher_unit))
    grad_q = -w * teacher_unit
    return loss, normalize_rows_backward(q, norms, grad_q)


class CsmLossResult(NamedTuple):
    value: float
    grad: np.ndarray
    cross_entropy: float
    entropy: float


def csm_loss(
    q_dist: np.ndarray,
    k_dist: np.ndarray,
    ent_weight: float = 1.0,
    reduction: Reduction = "mean",
) -> CsmLossResult:
    """Cross entropy toward the teacher distribution plus student entropy.

    Operates on distribution matrices; the gradient is with respect to the
    student distributions only (the teacher side is a constant).
    """
    q_dist = np.asarray(q_dist, dtype=np.float64)
    k_dist = np.asarray(k_dist, dtype=np.float64)
    _require_same_shape(q_dist, k_dist, "distribution matrices")
    w = _reduction_weight(q_dist.shape[0], reduction)
    logq = np.log(np.maximum(q_dist, LOG_CLAMP))
    ce = -w * float(np.sum(k_dist * logq))
    ent = -w * float(np.sum(q_dist * logq))
    live = q_dist > LOG_CLAMP  # no gradient through the clamp
    grad = -w * np.where(live, k_dist / np.maximum(q_dist, LOG_CLAMP), 0.0)
    grad -= ent_weight * w * np.where(live, logq + 1.0, 0.0)
    return CsmLossResult(ce + ent_weight * ent, grad, ce, ent)


def entropy_minimization_loss(
    q_dist: np.ndarray, reduction: Reduction = "mean"
) -> tuple[float, np.ndarray]:
    """Entropy of the student's anchor distributions, taken alone."""
    q_dist = np.asarray(q_dist, dtype=np.float64)
    w = _reduction_weight(q_dist.shape[0], reduction)
    logq = np.log(np.maximum(q_dist, LOG_CLAMP))
    value = -w * float(np.sum(q_dist * logq))
    live = q_dist > LOG_CLAMP
    grad = -w * np.where(live, logq + 1.0, 0.0)
    return value, grad


def kl_matching_loss(
    q_dist: np.ndarray,
    k_dist: np.ndarray,
    reduction: Reduction = "mean",
) -> tuple[float, np.ndarray]:
    """KL(teacher || student) over anchor distributions (distillation baseline)."""
    q_dist = np.asarray(q_dist, dtype=np.float64)
    k_dist = np.asarray(k_dist, dtype=np.float64)
    _require_same_shape(q_dist, k_dist, "distribution matrices")
    w = _reduction_weight(q_dist.shape[0], reduction)
    logq = np.log(np.maximum(q_dist, LOG_CLAMP))
    logk = np.log(np.maximum(k_dist, LOG_CLAMP))
    value = w * float(np.sum(k_dist * (logk - logq)))
    live = q_dist > LOG_CLAMP
    grad = -w * np.where(live, k_dist / np.maximum(q_dist, LOG_CLAMP), 0.0)
    return value, grad


def similarity_smoothing(k_dist: np.ndarray, alpha: float) -> np.ndarray:
    """Label-smoothed one-hot at each row's argmax anchor.

    output_j = [j == argmax](1 - alpha) + alpha / M, ties broken by lowest
    index.  Entries are nudged by ulps so every row sums to exactly 1.0 in
    float64.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"smoothing alpha must lie in [0,1), got {alpha}")
    k_dist = np.asarray(k_dist, dtype=np.float64)
    squeeze = k_dist.ndim == 1
    rows = np.atleast_2d(k_dist)
    n, m = rows.shape
    out = np.full((n, m), alpha / m)
    stars = np.argmax(rows, axis=1)
    out[np.arange(n), stars] = (1.0 - alpha) + alpha / m
    for i in range(n):
        _fix_row_sum(out[i], stars[i])
    return out[0] if squeeze else out


def _fix_row_sum(row: np.ndarray, star: int) -> None:
    """Nudge entries by ulps until np.sum(row) is exactly 1.0.

    The construction lands within a couple of ulps of 1.0, but a single
    entry cannot always close the gap: its granularity against the sum's
    rounding grid can make the sum hop over 1.0.  Entries are therefore
    walked finest-granularity first, each accepted step must shrink the
    defect, and an overshoot is reverted before moving to the next entry.
    The nudges are a few ulps, far below anything that could move the
    argmax or the sign of an entry.
    """
    order = sorted(range(row.shape[0]), key=lambda j: (abs(row[j]), j))
    for j in order:
        for _ in range(4096):
            defect = 1.0 - float(row.sum())
            if defect == 0.0:
                return
            previous = row[j]
            row[j] = np.nextafter(previous, np.inf if defect > 0 else -np.inf)
            if abs(1.0 - float(row.sum())) > abs(defect):
                row[j] = previous
                break


@dataclass
class LossSettings:
    """Knobs of the combined objective (defaults follow the training recipe)."""

    tau: float = 0.01
    lambda_ism: float = 10.0
    ent_weight: float = 1.0
    smoothing_enabled: bool = True
    smoothing_alpha: float = 0.2
    smoothing_mix: float = 1.0  # 1 = smoothed target replaces the raw one
    loss_variant: Literal["ce_entmin", "kl", "ism_only"] = "ce_entmin"
    reduction: Reduction = "mean"

    def __post_init__(self):
        if self.tau <= 0:
            raise NonPositiveTemperature(f"temperature {self.tau} <= 0")
        if self.lambda_ism < 0:
            raise ValueError("lambda_ism must be >= 0")
        if not 0.0 <= self.smoothing_alpha < 1.0:
            raise ValueError("smoothing_alpha must lie in [0,1)")
        if not 0.0 <= self.smoothing_mix <= 1.0:
            raise ValueError("smoothing_mix must lie in [0,1]")


@dataclass
class LossReport:
    """Per-batch scalar terms and the gradient w.r.t. raw student embeddings."""

    csm_ce: float
    ent_min: float
    ism: float
    total: float
    grad_q: np.ndarray


def teacher_targets(
    teacher_unit: np.ndarray, anchors_unit: np.ndarray, settings: LossSettings
) -> np.ndarray:
    """The constant distribution the student is matched against."""
    t = similarity_profiles(teacher_unit, anchors_unit, settings.tau)
    if settings.smoothing_enabled:
        smoothed = similarity_smoothing(t, settings.smoothing_alpha)
        lam = settings.smoothing_mix
        t = smoothed if lam == 1.0 else lam * smoothed + (1.0 - lam) * t
    return t


def total_loss(
    student_raw: np.ndarray,
    teacher_unit: np.ndarray,
    anchors_unit: np.ndarray,
    settings: LossSettings,
    teacher_dist: np.ndarray | None = None,
) -> LossReport:
    """Combined objective and its gradient w.r.t. raw student embeddings.

    For the "kl" variant the matching term is reported in `csm_ce` and the
    entropy term is zero; "ism_only" drops the matching terms entirely.
    `teacher_dist` short-circuits the target computation when the caller
    has already run :func:`teacher_targets` (the targets are constants, so
    training loops compute them once).
    """
    student_raw = np.asarray(student_raw, dtype=np.float64)
    teacher_unit = np.asarray(teacher_unit, dtype=np.float64)
    _require_same_shape(student_raw, teacher_unit, "student/teacher embeddings")
    q, norms = normalize_rows(student_raw)

    ism_value, ism_grad_raw = ism_loss(student_raw, teacher_unit, settings.reduction)
    grad_raw = settings.lambda_ism * ism_grad_raw

    ce_value = 0.0
    ent_value = 0.0
    if settings.loss_variant != "ism_only":
        p = similarity_profiles(q, anchors_unit, settings.tau)
        t = (
            teacher_dist
            if teacher_dist is not None
            else teacher_targets(teacher_unit, anchors_unit, settings)
        )
        if settings.loss_variant == "ce_entmin":
            res = csm_loss(p, t, settings.ent_weight, settings.reduction)
            ce_value = res.cross_entropy
            ent_value = settings.ent_weight * res.entropy
            grad_p = res.grad
        elif settings.loss_variant == "kl":
            ce_value, grad_p = kl_matching_loss(p, t, settings.reduction)
        else:
            raise ValueError(f"unknown loss variant {settings.loss_variant!r}")
        grad_logits = softmax_rows_backward(p, grad_p)
        grad_q = (grad_logits @ anchors_unit) / settings.tau
        grad_raw = grad_raw + normalize_rows_backward(q, norms, grad_q)

    total = ce_value + ent_value + settings.lambda_ism * ism_value
    return LossReport(
        csm_ce=ce_value,
        ent_min=ent_value,
        ism=ism_value,
        total=total,
        grad_q=grad_raw,
    )
