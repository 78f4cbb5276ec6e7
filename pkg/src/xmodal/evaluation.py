"""Frozen-representation evaluation: zero-shot, linear probe, retrieval.

Zero-shot predicts the anchor with highest cosine similarity; the linear
probe fits L2-regularized multinomial logistic regression on frozen
embeddings.  The probe objective is

    f(W, b) = ||W||_F^2 / (2C) + sum_i CE(softmax(W e_i + b), y_i)

with C the *inverse* regularization strength and the bias unregularized.
The objective is convex, so the solver only determines speed: the default
is full-batch gradient descent with backtracking line search; "lbfgs"
switches to scipy's quasi-second-order routine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bundle import AnchorSet, DatasetBundle, EmbeddingSet, l2_normalize, normalize_anchors
from .errors import KTooLarge, MissingLabels, ShapeMismatch, SingleClass
from .trainer import TrainConfig, l2_normalize_embeddings_of, run_transfer


@dataclass
class ZeroShotResult:
    predictions: np.ndarray
    accuracy: float | None


def zero_shot_classify(
    embeddings: EmbeddingSet,
    anchors: AnchorSet,
    tau: float = 0.01,
    labels=None,
    require_labels: bool = False,
) -> ZeroShotResult:
    """Nearest-anchor prediction per embedding row.

    The softmax over similarities is monotone in the similarity for any
    tau > 0, so predictions do not depend on tau; it is accepted only for
    interface symmetry with the losses.  Anchor index j is the class label.
    """
    if not embeddings.normalized:
        raise ShapeMismatch("embeddings must be normalized before zero-shot")
    if not anchors.normalized:
        raise ShapeMismatch("anchors must be normalized before zero-shot")
    if tau <= 0:
        raise ValueError(f"temperature {tau} <= 0")
    if embeddings.dim != anchors.dim:
        raise ShapeMismatch(
            f"embedding dim {embeddings.dim} vs anchor dim {anchors.dim}"
        )
    sims = embeddings.data @ anchors.data.T
    predictions = np.argmax(sims, axis=1)
    if labels is None:
        labels = embeddings.labels
    if labels is None:
        if require_labels:
            raise MissingLabels("accuracy requested but no labels available")
        return ZeroShotResult(predictions=predictions, accuracy=None)
    labels = np.asarray(labels)
    if labels.shape[0] != embeddings.n:
        raise ShapeMismatch(f"{labels.shape[0]} labels for {embeddings.n} rows")
    return ZeroShotResult(
        predictions=predictions, accuracy=float(np.mean(predictions == labels))
    )


@dataclass
class ProbeResult:
    top1_accuracy: float
    weights: np.ndarray
    bias: np.ndarray
    converged: bool
    final_objective: float
    iterations: int


def _probe_objective(w_flat, embeddings, onehot, c, n_classes, dim):
    """Objective value and flat gradient for the probe optimizers."""
    w = w_flat[: n_classes * dim].reshape(n_classes, dim)
    b = w_flat[n_classes * dim :]
    logits = embeddings @ w.T + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -float(np.sum(onehot * log_probs))
    value = ce + float(np.sum(w * w)) / (2.0 * c)
    probs = np.exp(log_probs)
    delta = probs - onehot
    grad_w = delta.T @ embeddings + w / c
    grad_b = delta.sum(axis=0)
    return value, np.concatenate([grad_w.ravel(), grad_b])


def linear_probe(
    train_embeddings: EmbeddingSet,
    train_labels,
    test_embeddings: EmbeddingSet,
    test_labels,
    c: float = 30.0,
    solver: str = "gd",
    tol: float = 1e-6,
    max_iter: int = 5000,
    init: np.ndarray | None = None,
) -> ProbeResult:
    """Fit the regularized softmax classifier and report held-out top-1.

    Converged means the gradient infinity norm fell below `tol`; when the
    iteration budget runs out first the best iterate is still returned
    with converged=False.
    """
    train_labels = np.asarray(train_labels, dtype=int)
    test_labels = np.asarray(test_labels, dtype=int)
    classes = np.unique(train_labels)
    if classes.size < 2:
        raise SingleClass(f"need at least 2 classes, got {classes.size}")
    if c <= 0:
        raise ValueError("inverse regularization C must be positive")
    n_classes = int(classes.max()) + 1
    dim = train_embeddings.dim
    x = train_embeddings.data.astype(np.float64)
    onehot = np.zeros((x.shape[0], n_classes))
    onehot[np.arange(x.shape[0]), train_labels] = 1.0

    w_flat = (
        np.zeros(n_classes * dim + n_classes) if init is None else init.astype(np.float64)
    )
    iterations = 0
    if solver == "lbfgs":
        from scipy.optimize import minimize

        res = minimize(
            _probe_objective,
            w_flat,
            args=(x, onehot, c, n_classes, dim),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0},
        )
        w_flat = res.x
        value, grad = _probe_objective(w_flat, x, onehot, c, n_classes, dim)
        converged = bool(np.abs(grad).max() < tol)
        iterations = int(res.nit)
    elif solver == "gd":
        value, grad = _probe_objective(w_flat, x, onehot, c, n_classes, dim)
        step = 1.0 / (1.0 + float(np.abs(grad).max()))
        for iterations in range(1, max_iter + 1):
            if np.abs(grad).max() < tol:
                break
            step *= 2.0  # optimistic growth, then backtrack
            while True:
                trial = w_flat - step * grad
                trial_value, trial_grad = _probe_objective(
                    trial, x, onehot, c, n_classes, dim
                )
                if trial_value <= value - 0.5 * step * float(np.dot(grad, grad)):
                    break
                step *= 0.5
                if step < 1e-18:
                    break
            if step < 1e-18:
                break
            w_flat, value, grad = trial, trial_value, trial_grad
        converged = bool(np.abs(grad).max() < tol)
    else:
        raise ValueError(f"unknown solver {solver!r}")

    w = w_flat[: n_classes * dim].reshape(n_classes, dim)
    b = w_flat[n_classes * dim :]
    test_logits = test_embeddings.data.astype(np.float64) @ w.T + b
    predictions = np.argmax(test_logits, axis=1)
    accuracy = float(np.mean(predictions == test_labels))
    return ProbeResult(
        top1_accuracy=accuracy,
        weights=w,
        bias=b,
        converged=converged,
        final_objective=value,
        iterations=iterations,
    )


def search_probe_c(
    train_embeddings, train_labels, val_embeddings, val_labels,
    grid=(0.1, 1.0, 10.0, 30.0, 100.0), solver: str = "gd",
) -> float:
    """Coarse validation-split search for the probe's C; ties keep the smaller C."""
    best_c, best_acc = None, -1.0
    for c in grid:
        acc = linear_probe(
            train_embeddings, train_labels, val_embeddings, val_labels,
            c=c, solver=solver,
        ).top1_accuracy
        if acc > best_acc:
            best_c, best_acc = c, acc
    return best_c


@dataclass
class RetrievalResult:
    query_id: str
    ids: list[str]
    scores: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.scores) > 0):
            raise ShapeMismatch("retrieval scores must be non-increasing")


def retrieve_topk(
    query: np.ndarray, gallery: EmbeddingSet, k: int, query_id: str = "query"
) -> RetrievalResult:
    """Top-k gallery rows by cosine similarity; ties keep gallery order."""
    if not gallery.normalized:
        raise ShapeMismatch("gallery must be normalized before retrieval")
    if k > gallery.n:
        raise KTooLarge(f"k={k} exceeds gallery size {gallery.n}")
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != gallery.dim:
        raise ShapeMismatch(f"query dim {q.shape[0]} vs gallery dim {gallery.dim}")
    scores = gallery.data @ q
    order = np.argsort(-scores, kind="stable")[:k]
    return RetrievalResult(
        query_id=query_id,
        ids=[gallery.ids[i] for i in order],
        scores=scores[order],
    )


def write_retrieval_jsonl(path: str | Path, results: list[RetrievalResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for res in results:
            fh.write(
                json.dumps(
                    {
                        "query": res.query_id,
                        "ranked_ids": res.ids,
                        "scores": [float(s) for s in res.scores],
                    }
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# prompt-subset experiments
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    experiment: str
    subset_size: int
    seed: int
    metric: str
    value: float


def prompt_sweep(
    bundle: DatasetBundle,
    eval_bundle: DatasetBundle,
    config: TrainConfig,
    subset_sizes: list[int],
    seeds: list[int],
    experiment: str = "prompt_subset",
) -> list[SweepRow]:
    """Train once per (subset size, seed); evaluate zero-shot on full anchors.

    Anchor subsets are sampled uniformly per seed; the full anchor set is
    used untouched when the subset covers it, so a full-size sweep entry
    reproduces the plain run bit-exactly.
    """
    full_anchors = normalize_anchors(eval_bundle.anchors)
    rows: list[SweepRow] = []
    for seed in seeds:
        for size in subset_sizes:
            if size == bundle.anchors.m:
                sub_bundle = bundle
            else:
                pick_rng = np.random.default_rng(np.random.SeedSequence([seed, size]))
                idx = np.sort(
                    pick_rng.choice(bundle.anchors.m, size=size, replace=False)
                )
                # anchor subsets shrink the label space, so train unlabeled
                sub_bundle = DatasetBundle(
                    inputs=bundle.inputs,
                    teacher_embeddings=EmbeddingSet(
                        ids=list(bundle.teacher_embeddings.ids),
                        data=bundle.teacher_embeddings.data,
                        labels=None,
                        normalized=bundle.teacher_embeddings.normalized,
                    ),
                    anchors=bundle.anchors.subset(idx),
                    eval_labels=None,
                )
            run_config = replace(config, seed=seed)
            result = run_transfer(sub_bundle, run_config)
            student = l2_normalize_embeddings_of(result.shadow.model, eval_bundle.inputs)
            zs = zero_shot_classify(
                student, full_anchors, tau=config.tau, labels=eval_bundle.eval_labels
            )
            rows.append(
                SweepRow(
                    experiment=experiment,
                    subset_size=size,
                    seed=seed,
                    metric="zeroshot_acc",
                    value=zs.accuracy,
                )
            )
    return rows


def write_sweep_csv(path: str | Path, rows: list[SweepRow]) -> None:
    lines = ["experiment,subset_size,seed,metric,value"]
    for row in rows:
        lines.append(
            f"{row.experiment},{row.subset_size},{row.seed},{row.metric},{row.value!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
