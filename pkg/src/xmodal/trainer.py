"""The optimization loop: SGDR schedule, SGD steps, EMA stepping, curves.

The loop is deliberately plain: seeded shuffling, full batches plus one
trailing partial batch, decoupled weight decay, and a fatal error on any
non-finite loss.  Everything is deterministic under (config, bundle).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

from .bundle import DatasetBundle, l2_normalize, normalize_anchors
from .errors import NonFiniteLoss
from .losses import LossReport, LossSettings, teacher_targets, total_loss
from .model import (
    FeatureViewAugmenter,
    MomentumStudent,
    ProjectionHead,
    StudentModel,
    backward,
    ema_update,
    forward,
    infonce_pretrain_step,
    init_projection_head,
    init_student,
)

CURVE_HEADER = "epoch,step,lr,csm_ce,ent_min,ism,total,zeroshot_acc"


@dataclass
class TrainConfig:
    """Every knob of a transfer run; defaults follow the training recipe."""

    tau: float = 0.01
    lambda_ism: float = 10.0
    smoothing_alpha: float = 0.2
    smoothing_enabled: bool = True
    smoothing_mix: float = 1.0
    ent_weight: float = 1.0
    loss_variant: Literal["ce_entmin", "kl", "ism_only"] = "ce_entmin"
    reduction: Literal["mean", "sum"] = "mean"

    lr0: float = 0.5
    lr_min: float = 0.0
    weight_decay: float = 1e-6
    sgd_momentum: float = 0.0
    batch_size: int = 256
    epochs: int = 200
    restart_period: int = 0  # 0 = one cosine cycle spanning all epochs
    t_mult: int = 2
    seed: int = 0

    ema_momentum: float = 0.99
    shadow_in_loss: bool = False  # train through the shadow instead of the live model

    arch: Literal["linear", "mlp"] = "linear"
    hidden_dim: int = 64

    # contrastive pretraining
    pretrain_epochs: int = 0
    nce_tau: float = 0.1
    proj_dim: int = 128
    view_noise_sigma: float = 0.1
    view_dropout: float = 0.1

    def __post_init__(self):
        if self.lr0 <= 0 or self.lr_min < 0:
            raise ValueError("learning rates must be positive (lr_min >= 0)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lambda_ism < 0:
            raise ValueError("lambda_ism must be >= 0")
        if not 0.0 <= self.smoothing_alpha < 1.0:
            raise ValueError("smoothing_alpha must lie in [0,1)")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ValueError("ema_momentum must lie in [0,1]")
        if self.t_mult < 1:
            raise ValueError("t_mult must be >= 1")

    def loss_settings(self) -> LossSettings:
        return LossSettings(
            tau=self.tau,
            lambda_ism=self.lambda_ism,
            ent_weight=self.ent_weight,
            smoothing_enabled=self.smoothing_enabled,
            smoothing_alpha=self.smoothing_alpha,
            smoothing_mix=self.smoothing_mix,
            loss_variant=self.loss_variant,
            reduction=self.reduction,
        )


@dataclass
class TrainState:
    """Mutable bookkeeping carried across steps."""

    step: int = 0
    epoch: int = 0
    lr: float = 0.0
    velocity: list[np.ndarray] | None = None
    # per-step scalar loss terms, in step order (gradients are not kept)
    history: list[dict] = field(default_factory=list)


def sgdr_lr(t_epochs: float, config: TrainConfig) -> float:
    """Cosine-annealed learning rate with warm restarts.

    eta = lr_min + (lr0 - lr_min)/2 * (1 + cos(pi * t_cur / T_i)) where
    t_cur counts epochs since the last restart and cycle i has length
    T_0 * t_mult^i.  At every restart boundary the value is exactly lr0.
    """
    if t_epochs < 0:
        raise ValueError("schedule time must be >= 0")
    t0 = config.restart_period if config.restart_period > 0 else max(config.epochs, 1)
    start = 0.0
    period = float(t0)
    while t_epochs >= start + period:
        start += period
        period *= config.t_mult
    t_cur = t_epochs - start
    if t_cur == 0.0:
        return config.lr0
    cos_term = 1.0 + math.cos(math.pi * t_cur / period)
    return config.lr_min + 0.5 * (config.lr0 - config.lr_min) * cos_term


def _apply_update(
    model: StudentModel,
    grads: list[tuple[np.ndarray, np.ndarray]],
    lr: float,
    weight_decay: float,
    momentum: float,
    state: TrainState,
) -> None:
    flat_grads = []
    for (gw, gb), w, b in zip(grads, model.weights, model.biases):
        flat_grads.extend([gw + weight_decay * w, gb + weight_decay * b])
    params = model.parameters()
    if momentum > 0.0:
        if state.velocity is None:
            state.velocity = [np.zeros_like(p) for p in params]
        for v, g, p in zip(state.velocity, flat_grads, params):
            v *= momentum
            v += g
            p -= lr * v
    else:
        for g, p in zip(flat_grads, params):
            p -= lr * g


def train_step(
    model: StudentModel,
    shadow: MomentumStudent,
    batch_inputs: np.ndarray,
    batch_teacher_unit: np.ndarray,
    anchors_unit: np.ndarray,
    config: TrainConfig,
    state: TrainState,
    teacher_dist: np.ndarray | None = None,
) -> LossReport:
    """One SGD step: loss, parameter update, EMA step, state advance."""
    # with shadow_in_loss the loss is evaluated at the shadow's embeddings,
    # but the update always flows through the live model's layers (the
    # shadow is an EMA copy with no gradient path of its own)
    loss_model = shadow.model if config.shadow_in_loss else model
    embeddings = forward(loss_model, batch_inputs)
    if not np.isfinite(embeddings).all():
        raise NonFiniteLoss(
            f"non-finite student embeddings at step {state.step}", step=state.step
        )
    report = total_loss(
        embeddings,
        batch_teacher_unit,
        anchors_unit,
        config.loss_settings(),
        teacher_dist=teacher_dist,
    )
    if not math.isfinite(report.total):
        raise NonFiniteLoss(
            f"non-finite loss {report.total!r} at step {state.step}", step=state.step
        )
    grads = backward(model, batch_inputs, report.grad_q)
    _apply_update(
        model, grads, state.lr, config.weight_decay, config.sgd_momentum, state
    )
    model.assert_finite()
    ema_update(shadow, model)
    state.step += 1
    state.history.append(
        {
            "csm_ce": report.csm_ce,
            "ent_min": report.ent_min,
            "ism": report.ism,
            "total": report.total,
        }
    )
    return report


@dataclass
class TransferResult:
    model: StudentModel
    shadow: MomentumStudent
    curve: list[dict]
    state: TrainState


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield perm[lo : lo + batch_size]


def run_transfer(
    bundle: DatasetBundle,
    config: TrainConfig,
    eval_bundle: DatasetBundle | None = None,
    init_model: StudentModel | None = None,
) -> TransferResult:
    """Full transfer run over the bundle, deterministic under config.seed.

    The EMA shadow is the evaluation model; per-epoch zero-shot accuracy is
    measured on `eval_bundle` (or the training bundle) whenever labels are
    available.
    """
    from .evaluation import zero_shot_classify  # cycle guard

    teacher_unit = l2_normalize(bundle.teacher_embeddings).data
    anchors_unit = normalize_anchors(bundle.anchors).data

    if init_model is None:
        model = init_student(
            bundle.input_dim,
            bundle.embed_dim,
            arch=config.arch,
            hidden_dim=config.hidden_dim,
            seed=config.seed,
        )
    else:
        model = init_model.clone()
    shadow = MomentumStudent(model=model.clone(), momentum=config.ema_momentum)
    state = TrainState()
    batch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))

    probe = eval_bundle if eval_bundle is not None else bundle
    probe_anchors = normalize_anchors(probe.anchors)

    settings = config.loss_settings()
    targets = (
        teacher_targets(teacher_unit, anchors_unit, settings)
        if settings.loss_variant != "ism_only"
        else None
    )

    curve: list[dict] = []
    for epoch in range(config.epochs):
        state.epoch = epoch
        state.lr = sgdr_lr(float(epoch), config)
        sums = {"csm_ce": 0.0, "ent_min": 0.0, "ism": 0.0, "total": 0.0}
        batches = 0
        for idx in _epoch_batches(bundle.n, config.batch_size, batch_rng):
            report = train_step(
                model,
                shadow,
                bundle.inputs[idx],
                teacher_unit[idx],
                anchors_unit,
                config,
                state,
                teacher_dist=None if targets is None else targets[idx],
            )
            for key in sums:
                sums[key] += getattr(report, key)
            batches += 1
        row = {
            "epoch": epoch,
            "step": state.step,
            "lr": state.lr,
            **{k: v / batches for k, v in sums.items()},
        }
        if probe.eval_labels is not None:
            student = l2_normalize_embeddings_of(shadow.model, probe.inputs)
            zs = zero_shot_classify(
                student, probe_anchors, tau=config.tau, labels=probe.eval_labels
            )
            row["zeroshot_acc"] = zs.accuracy
        else:
            row["zeroshot_acc"] = ""
        curve.append(row)
    return TransferResult(model=model, shadow=shadow, curve=curve, state=state)


def l2_normalize_embeddings_of(
    model: StudentModel, inputs: np.ndarray, ids: list[str] | None = None
):
    """Unit-normalized student embeddings wrapped as an EmbeddingSet."""
    from .bundle import EmbeddingSet

    z = forward(model, inputs)
    if ids is None:
        ids = [str(i) for i in range(z.shape[0])]
    raw = EmbeddingSet(ids=list(ids), data=z)
    return l2_normalize(raw)


def _accuracy(predictions: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    return float(np.mean(predictions == labels))


@dataclass
class PretrainResult:
    model: StudentModel
    head: ProjectionHead
    losses: list[float]


def run_pretrain(
    bundle: DatasetBundle,
    config: TrainConfig,
    init_model: StudentModel | None = None,
) -> PretrainResult:
    """Contrastive self-supervised pretraining over the bundle inputs."""
    if init_model is None:
        model = init_student(
            bundle.input_dim,
            bundle.embed_dim,
            arch=config.arch,
            hidden_dim=config.hidden_dim,
            seed=config.seed,
        )
    else:
        model = init_model.clone()
    head = init_projection_head(
        bundle.embed_dim, proj_dim=config.proj_dim, seed=config.seed + 1
    )
    augmenter = FeatureViewAugmenter(
        noise_sigma=config.view_noise_sigma,
        dropout_rate=config.view_dropout,
        seed=config.seed,
    )
    batch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    losses: list[float] = []
    pre_cfg = replace(config, epochs=max(config.pretrain_epochs, 1))
    state = TrainState()
    step = 0
    for epoch in range(config.pretrain_epochs):
        lr = sgdr_lr(float(epoch), pre_cfg)
        for idx in _epoch_batches(bundle.n, config.batch_size, batch_rng):
            if len(idx) < 2:
                continue
            loss, model_grads, (gw, gb) = infonce_pretrain_step(
                model,
                head,
                bundle.inputs[idx],
                augmenter,
                tau=config.nce_tau,
                step=step,
                reduction=config.reduction,
            )
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"non-finite pretraining loss at step {step}", step=step)
            _apply_update(model, model_grads, lr, config.weight_decay, 0.0, state)
            head.weight -= lr * (gw + config.weight_decay * head.weight)
            head.bias -= lr * (gb + config.weight_decay * head.bias)
            model.assert_finite()
            losses.append(loss)
            step += 1
    return PretrainResult(model=model, head=head, losses=losses)


# ---------------------------------------------------------------------------
# curve and config files
# ---------------------------------------------------------------------------


def write_curve_csv(path: str | Path, curve: list[dict], config: TrainConfig) -> None:
    """Curve CSV with the effective config echoed as '#' comment lines."""
    lines = [f"# {key}={value}" for key, value in sorted(asdict(config).items())]
    lines.append(CURVE_HEADER)
    for row in curve:
        lines.append(
            "{epoch},{step},{lr!r},{csm_ce!r},{ent_min!r},{ism!r},{total!r},{zeroshot_acc}".format(
                **row
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_BOOL_NAMES = {"true": True, "false": False, "1": True, "0": False}


def parse_config_file(path: str | Path) -> dict:
    """key=value lines -> keyword overrides for TrainConfig."""
    overrides: dict = {}
    valid = {f.name: f.type for f in TrainConfig.__dataclass_fields__.values()}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in TrainConfig.__dataclass_fields__:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        overrides[key] = coerce_config_value(key, value)
    return overrides


def coerce_config_value(key: str, value: str):
    current = getattr(TrainConfig(), key)
    if isinstance(current, bool):
        lowered = value.lower()
        if lowered not in _BOOL_NAMES:
            raise ValueError(f"config key {key}: expected a boolean, got {value!r}")
        return _BOOL_NAMES[lowered]
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def make_config(file_overrides: dict | None = None, **flag_overrides) -> TrainConfig:
    """Defaults <- config file <- CLI flags (flags win)."""
    merged: dict = {}
    if file_overrides:
        merged.update(file_overrides)
    merged.update({k: v for k, v in flag_overrides.items() if v is not None})
    return TrainConfig(**merged)
