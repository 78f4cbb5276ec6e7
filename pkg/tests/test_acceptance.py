"""Acceptance suite: every exit criterion, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -s` to see the lines as they
complete.  Thresholds and tolerances are pinned here and nowhere else.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from xmodal.bundle import l2_normalize, normalize_anchors, split_bundle
from xmodal.cli import main as cli_main
from xmodal.evaluation import linear_probe, prompt_sweep, zero_shot_classify
from xmodal.losses import (
    LossSettings,
    csm_loss,
    entropy_minimization_loss,
    ism_loss,
    kl_matching_loss,
    similarity_profiles,
    similarity_smoothing,
    softmax_rows,
    total_loss,
)
from xmodal.model import MomentumStudent, ema_update, infonce_loss, init_student
from xmodal.synthetic import SynthSpec, generate
from xmodal.trainer import TrainConfig, l2_normalize_embeddings_of, run_transfer, sgdr_lr

from test_losses import fd_grad, max_relerr, unit_rows
from test_model import params_distance


def report(name: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    print(f"[acceptance] {name}: {status}" + (f"  ({detail})" if detail else ""))
    assert passed, f"{name}: {detail}"


class TestGradientCorrectness:
    def test_all_losses_match_finite_differences(self):
        started = time.monotonic()
        rng = np.random.default_rng(20240)
        worst = {name: 0.0 for name in ("ism", "csm_ce", "ent_min", "kl", "infonce", "total")}

        for _ in range(100):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(2, 9))
            d = int(rng.integers(2, 17))
            tau = float(rng.uniform(0.2, 2.0))
            raw = rng.normal(size=(n, d))
            teacher = unit_rows(rng, n, d)
            anchors = unit_rows(rng, m, d)
            # keep a floor under the probability entries: near-zero entries
            # put 1/q curvature where an h=1e-5 central difference is itself
            # inaccurate, which would test the oracle rather than the code
            q_dist = similarity_profiles(unit_rows(rng, n, d), anchors, tau)
            q_dist = 0.85 * q_dist + 0.15 / m
            k_dist = similarity_profiles(teacher, anchors, tau)
            k_dist = 0.85 * k_dist + 0.15 / m

            _, grad = ism_loss(raw, teacher)
            worst["ism"] = max(
                worst["ism"], max_relerr(grad, fd_grad(lambda x: ism_loss(x, teacher)[0], raw))
            )

            res = csm_loss(q_dist, k_dist, ent_weight=0.0)
            worst["csm_ce"] = max(
                worst["csm_ce"],
                max_relerr(
                    res.grad, fd_grad(lambda x: csm_loss(x, k_dist, ent_weight=0.0).value, q_dist)
                ),
            )

            _, grad = entropy_minimization_loss(q_dist)
            worst["ent_min"] = max(
                worst["ent_min"],
                max_relerr(grad, fd_grad(lambda x: entropy_minimization_loss(x)[0], q_dist)),
            )

            _, grad = kl_matching_loss(q_dist, k_dist)
            worst["kl"] = max(
                worst["kl"],
                max_relerr(grad, fd_grad(lambda x: kl_matching_loss(x, k_dist)[0], q_dist)),
            )

            b = int(rng.integers(2, 9))
            p = int(rng.integers(2, 17))
            projections = rng.normal(size=(2 * b, p))
            _, grad = infonce_loss(projections, tau=max(tau, 0.3))
            worst["infonce"] = max(
                worst["infonce"],
                max_relerr(
                    grad, fd_grad(lambda x: infonce_loss(x, tau=max(tau, 0.3))[0], projections)
                ),
            )

            settings = LossSettings(tau=tau, lambda_ism=10.0, smoothing_enabled=True)
            rep = total_loss(raw, teacher, anchors, settings)
            worst["total"] = max(
                worst["total"],
                max_relerr(
                    rep.grad_q,
                    fd_grad(lambda x: total_loss(x, teacher, anchors, settings).total, raw),
                ),
            )

        elapsed = time.monotonic() - started
        detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f", {elapsed:.1f}s"
        report(
            "gradient correctness (100 instances per loss, rel err < 1e-5, < 30 s)",
            all(v < 1e-5 for v in worst.values()) and elapsed < 30.0,
            detail,
        )


class TestDistributionSanity:
    def test_softmax_sums_and_shift_invariance(self):
        rng = np.random.default_rng(7)
        worst_sum = 0.0
        worst_shift = 0.0
        for tau in (1e-3, 0.01, 0.1, 1.0, 10.0):
            for _ in range(40):
                n = int(rng.integers(1, 9))
                m = int(rng.integers(2, 9))
                e = unit_rows(rng, n, 12)
                a = unit_rows(rng, m, 12)
                probs = similarity_profiles(e, a, tau)
                worst_sum = max(worst_sum, float(np.abs(probs.sum(axis=1) - 1.0).max()))
                logits = (e @ a.T) / tau
                shift = float(rng.uniform(-100, 100))
                worst_shift = max(
                    worst_shift,
                    float(np.abs(softmax_rows(logits) - softmax_rows(logits + shift)).max()),
                )
        report(
            "distribution sanity (sum within 1e-9, shift-invariance within 1e-12)",
            worst_sum <= 1e-9 and worst_shift <= 1e-12,
            f"sum err={worst_sum:.2e}, shift err={worst_shift:.2e}",
        )


class TestSmoothingAlgebra:
    def test_exact_sums_and_argmax(self):
        rng = np.random.default_rng(8)
        ok = True
        for alpha in (0.0, 0.2, 0.5, 0.9):
            for _ in range(200):
                m = int(rng.integers(2, 17))
                dist = softmax_rows(rng.normal(size=(1, m)) * rng.uniform(0.3, 3))[0]
                smoothed = similarity_smoothing(dist, alpha)
                ok &= smoothed.sum() == 1.0
                ok &= int(np.argmax(smoothed)) == int(np.argmax(dist))
        report("smoothing algebra (exact unit sum, argmax preserved, alpha in {0,.2,.5,.9})", ok)


class TestEmaContraction:
    def test_geometric_ratio(self):
        source = init_student(6, 4, arch="mlp", hidden_dim=5, seed=0)
        shadow = MomentumStudent(model=init_student(6, 4, arch="mlp", hidden_dim=5, seed=1), momentum=0.99)
        initial = params_distance(shadow.model, source)
        worst = 0.0
        for k in range(1, 101):
            ema_update(shadow, source)
            ratio = params_distance(shadow.model, source) / initial
            worst = max(worst, abs(ratio - 0.99**k))
        report("EMA contraction (0.99^k within 1e-9 for k <= 100)", worst < 1e-9, f"err={worst:.2e}")


class TestSgdrSchedule:
    def test_boundaries_and_closed_form(self):
        config = TrainConfig(epochs=200, restart_period=10, t_mult=2, lr0=0.5, lr_min=0.0)
        boundaries_ok = all(sgdr_lr(t, config) == 0.5 for t in (0.0, 10.0, 30.0, 70.0, 150.0))
        worst = 0.0
        cycle_len, cycle_start = 10, 0.0
        for step in range(150):
            t = float(step)
            while t >= cycle_start + cycle_len:
                cycle_start += cycle_len
                cycle_len *= 2
            expected = 0.25 * (1.0 + math.cos(math.pi * (t - cycle_start) / cycle_len))
            worst = max(worst, abs(sgdr_lr(t, config) - expected))
        report(
            "SGDR schedule (restart boundaries exactly 0.5, closed form within 1e-12)",
            boundaries_ok and worst <= 1e-12,
            f"form err={worst:.2e}",
        )


ACCEPTANCE_SPEC = SynthSpec(
    num_classes=10,
    embed_dim=16,
    samples_per_class=200,
    noise_sigma=0.1,
    input_dim=32,
    seed=2024,
)


class TestSyntheticEndToEnd:
    def test_transfer_reaches_thresholds(self):
        started = time.monotonic()
        bundle, labels = generate(ACCEPTANCE_SPEC)

        teacher = l2_normalize(bundle.teacher_embeddings)
        anchors = normalize_anchors(bundle.anchors)
        bayes = zero_shot_classify(teacher, anchors, labels=labels).accuracy

        train, hold = split_bundle(bundle, 0.2, seed=ACCEPTANCE_SPEC.seed)
        config = TrainConfig(epochs=100, seed=ACCEPTANCE_SPEC.seed)  # Table-12 defaults
        result = run_transfer(train, config)

        student_hold = l2_normalize_embeddings_of(result.shadow.model, hold.inputs)
        zero_shot = zero_shot_classify(
            student_hold, normalize_anchors(hold.anchors), labels=hold.eval_labels
        ).accuracy
        student_train = l2_normalize_embeddings_of(result.shadow.model, train.inputs)
        probe = linear_probe(
            student_train, train.eval_labels, student_hold, hold.eval_labels, c=30.0
        ).top1_accuracy
        elapsed = time.monotonic() - started
        report(
            "synthetic end-to-end transfer (zero-shot >= 0.95, probe >= 0.97, Bayes >= 0.99, < 2 min)",
            bayes >= 0.99 and zero_shot >= 0.95 and probe >= 0.97 and elapsed < 120.0,
            f"bayes={bayes:.3f}, zeroshot={zero_shot:.3f}, probe={probe:.3f}, {elapsed:.1f}s",
        )


class TestAblationDirection:
    def test_matching_beats_instance_only(self):
        # equal short budgets, each variant trained with its own faithful
        # loss: the anchor-matching objective converges much faster than
        # the bare cosine regression
        margins = []
        for seed in (0, 1, 2):
            spec = SynthSpec(
                num_classes=10,
                embed_dim=16,
                samples_per_class=200,
                noise_sigma=0.3,
                input_dim=32,
                seed=seed,
            )
            bundle, _ = generate(spec)
            train, hold = split_bundle(bundle, 0.2, seed=seed)
            hold_anchors = normalize_anchors(hold.anchors)
            accs = {}
            for variant, lam in (("ce_entmin", 0.0), ("ism_only", 1.0)):
                config = TrainConfig(epochs=10, seed=seed, loss_variant=variant, lambda_ism=lam)
                result = run_transfer(train, config)
                student = l2_normalize_embeddings_of(result.shadow.model, hold.inputs)
                accs[variant] = zero_shot_classify(
                    student, hold_anchors, labels=hold.eval_labels
                ).accuracy
            margins.append(accs["ce_entmin"] - accs["ism_only"])
        mean_margin = float(np.mean(margins))
        report(
            "ablation direction (matching beats instance-only by >= 0.03 over 3 seeds)",
            mean_margin >= 0.03,
            f"margins={[f'{m:+.3f}' for m in margins]}, mean={mean_margin:+.3f}",
        )


class TestPromptSubsetTrend:
    def test_accuracy_non_decreasing_in_anchor_count(self):
        sizes = [3, 5, 7, 10]
        accs = {size: [] for size in sizes}
        for seed in (0, 1, 2):
            spec = SynthSpec(
                num_classes=10,
                embed_dim=16,
                samples_per_class=100,
                noise_sigma=0.1,
                input_dim=32,
                seed=seed,
            )
            bundle, _ = generate(spec)
            train, hold = split_bundle(bundle, 0.2, seed=seed)
            config = TrainConfig(epochs=20, seed=seed, lambda_ism=0.1)
            for row in prompt_sweep(train, hold, config, sizes, [seed]):
                accs[row.subset_size].append(row.value)
        means = [float(np.mean(accs[size])) for size in sizes]
        rho = float(spearmanr(sizes, means).statistic)
        report(
            "prompt-subset trend (Spearman rho >= 0.8 over sizes {3,5,7,10}, 3 seeds)",
            rho >= 0.8,
            f"means={[f'{m:.3f}' for m in means]}, rho={rho:.3f}",
        )


class TestTopologicalAmbiguityWitness:
    def test_constructed_pair(self):
        k = np.array([[1.0, 0.0, 0.0]])
        s = math.sqrt(0.75)
        q1 = np.array([[0.5, s, 0.0]])
        q2 = np.array([[0.5, -s, 0.0]])
        anchors = np.array([[1.0, 0.1, -0.05], [0.15, 1.0, 0.2], [-0.1, 0.3, 1.0]])
        anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
        settings = LossSettings(tau=0.5, lambda_ism=0.0, smoothing_enabled=False)

        ism1, _ = ism_loss(q1, k)
        ism2, _ = ism_loss(q2, k)
        csm1 = total_loss(q1, k, anchors, settings).total
        csm2 = total_loss(q2, k, anchors, settings).total
        report(
            "topological-ambiguity witness (equal instance loss, matching losses differ >= 0.1)",
            bool(np.any(q1 != q2)) and ism1 == ism2 and abs(csm1 - csm2) >= 0.1,
            f"ism={ism1:.6f}=={ism2:.6f}, csm diff={abs(csm1 - csm2):.3f}",
        )


class TestDeterminism:
    def test_identical_seed_bitwise_outputs(self, tmp_path):
        bundle_path = tmp_path / "det.xmb"
        assert (
            cli_main(
                [
                    "synth", "--classes", "6", "--dim", "12", "--input-dim", "18",
                    "--per-class", "40", "--sigma", "0.1", "--seed", "5",
                    "--out", str(bundle_path),
                ]
            )
            == 0
        )
        blobs = []
        for name in ("one", "two"):
            out = tmp_path / name
            code = cli_main(
                [
                    "transfer", "--bundle", str(bundle_path), "--out-dir", str(out),
                    "--epochs", "20", "--batch-size", "64", "--seed", "9",
                    "--holdout", "0.2",
                ]
            )
            assert code == 0
            blobs.append(
                ((out / "student.xms").read_bytes(), (out / "curve.csv").read_bytes())
            )
        report(
            "determinism (same seed/config -> bit-identical checkpoint and curve)",
            blobs[0] == blobs[1],
        )
