"""Training loop mechanics, baselines, ablations, and determinism."""

import math

import numpy as np
import pytest

from promptdist.dataio import gen_synthetic_task
from promptdist.encoder import EncoderConfig, Position, TextEncoder
from promptdist.losses import NumericError
from promptdist.training import (ABLATION_VARIANTS, TrainConfig, build_encoder,
                                 evaluate_collection, lr_schedule, run_ablation,
                                 sgd_momentum_step, train_coop_baseline,
                                 train_linear_probe, train_proda,
                                 zero_shot_accuracy)


@pytest.fixture(scope="module")
def encoder():
    return TextEncoder(EncoderConfig(embed_dim=16, hidden_dim=32, out_dim=12,
                                     seed=0))


@pytest.fixture(scope="module")
def task(encoder):
    return gen_synthetic_task(4, 2, 12, 0.6, seed=0, encoder=encoder)


def small_config(**overrides):
    defaults = dict(epochs=3, num_prompts=8, prompt_len=4, prompt_batch=2,
                    tau=0.1, seed=0, base_lr=0.02)
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestLrSchedule:
    def test_linear_scaling_at_step_zero(self):
        config = TrainConfig(image_batch=20)
        assert lr_schedule(0, 100, config) == pytest.approx(0.001 * 20 / 5)

    def test_cosine_midpoint_is_half(self):
        config = TrainConfig(image_batch=20)
        assert lr_schedule(50, 100, config) == pytest.approx(
            0.5 * lr_schedule(0, 100, config))

    def test_approaches_zero_at_the_end(self):
        config = TrainConfig(image_batch=20)
        last = lr_schedule(99, 100, config)
        assert 0.0 < last < 0.001 * lr_schedule(0, 100, config)

    def test_step_bounds(self):
        config = TrainConfig()
        with pytest.raises(ValueError):
            lr_schedule(100, 100, config)


class TestSgdMomentum:
    def test_zero_momentum_is_plain_gd(self):
        p = [np.array([1.0, 2.0])]
        g = [np.array([0.5, -0.5])]
        v = [np.zeros(2)]
        new_p, new_v = sgd_momentum_step(p, g, v, lr=0.1, momentum=0.0)
        assert np.allclose(new_p[0], p[0] - 0.1 * g[0], atol=0)
        assert np.array_equal(new_v[0], g[0])

    def test_constant_gradient_geometric_series(self):
        # from v=0, after n steps with constant g: v_n = g (1 - m^n) / (1 - m)
        g = np.array([1.0])
        v = [np.zeros(1)]
        p = [np.zeros(1)]
        momentum = 0.9
        for n in range(1, 6):
            p, v = sgd_momentum_step(p, [g], v, lr=0.0, momentum=momentum)
            expected = (1 - momentum**n) / (1 - momentum)
            assert v[0][0] == pytest.approx(expected, rel=1e-12)

    def test_zero_gradient_no_motion_from_rest(self):
        p = [np.array([3.0])]
        new_p, new_v = sgd_momentum_step(p, [np.zeros(1)], [np.zeros(1)],
                                         lr=0.5, momentum=0.9)
        assert np.array_equal(new_p[0], p[0])
        assert np.array_equal(new_v[0], np.zeros(1))

    def test_non_finite_gradient_rejected(self):
        with pytest.raises(NumericError):
            sgd_momentum_step([np.zeros(1)], [np.array([np.inf])],
                              [np.zeros(1)], lr=0.1, momentum=0.9)


class TestTrainingLoop:
    def test_only_sampled_prompts_change(self, task, encoder):
        config = small_config(epochs=1, image_batch=20)  # single step
        history = train_proda(task, config, encoder=encoder,
                              evaluate_final=False)
        assert len(history.steps) == 1
        sampled = set(history.steps[0].prompt_indices)
        assert len(sampled) == 2
        from promptdist.encoder import init_prompt_collection
        fresh = init_prompt_collection(8, 4, 16, seed=0)
        for i, (before, after) in enumerate(zip(fresh, history.collection)):
            changed = not np.array_equal(before.tokens.data, after.tokens.data)
            assert changed == (i in sampled), f"prompt {i}"

    def test_encoder_frozen_through_training(self, task, encoder):
        before = encoder.weights_fingerprint()
        history = train_proda(task, small_config(), encoder=encoder,
                              evaluate_final=False)
        assert encoder.weights_fingerprint() == before
        assert history.encoder_fingerprint == before

    def test_determinism_byte_for_byte(self, task, encoder):
        a = train_proda(task, small_config(), encoder=encoder)
        b = train_proda(task, small_config(), encoder=encoder)
        assert a.final_accuracy == b.final_accuracy
        assert [s.total for s in a.steps] == [s.total for s in b.steps]
        assert [s.prompt_indices for s in a.steps] == \
            [s.prompt_indices for s in b.steps]
        for pa, pb in zip(a.collection, b.collection):
            assert np.array_equal(pa.tokens.data, pb.tokens.data)

    def test_seed_changes_trajectory(self, task, encoder):
        a = train_proda(task, small_config(seed=0), encoder=encoder,
                        evaluate_final=False)
        b = train_proda(task, small_config(seed=1), encoder=encoder,
                        evaluate_final=False)
        assert [s.total for s in a.steps] != [s.total for s in b.steps]

    def test_initial_loss_bounded(self, task, encoder):
        history = train_proda(task, small_config(), encoder=encoder,
                              evaluate_final=False)
        first = history.steps[0]
        assert np.isfinite(first.total)
        assert first.upper >= 0.0
        # log C plus the worst exponent advantage bounds the first loss
        assert first.upper <= math.log(task.num_classes) + 10.0

    def test_all_losses_finite_and_recorded(self, task, encoder):
        history = train_proda(task, small_config(), encoder=encoder,
                              evaluate_final=False)
        traces = history.loss_traces()
        assert set(traces) == {"total", "upper", "so"}
        for series in traces.values():
            assert len(series) == len(history.steps)
            assert np.all(np.isfinite(series))

    def test_lr_follows_schedule(self, task, encoder):
        config = small_config(epochs=4, image_batch=20)
        history = train_proda(task, config, encoder=encoder,
                              evaluate_final=False)
        for record in history.steps:
            assert record.lr == pytest.approx(
                lr_schedule(record.step, len(history.steps), config))

    def test_grad_clip_path(self, task, encoder):
        history = train_proda(task, small_config(grad_clip=1e-9),
                              encoder=encoder, evaluate_final=False)
        # with an absurdly tight clip the prompts barely move
        from promptdist.encoder import init_prompt_collection
        fresh = init_prompt_collection(8, 4, 16, seed=0)
        drift = max(np.abs(p.tokens.data - q.tokens.data).max()
                    for p, q in zip(history.collection, fresh))
        assert drift < 1e-6

    def test_epoch_snapshots(self, task, encoder):
        history = train_proda(task, small_config(epochs=4), encoder=encoder,
                              evaluate_final=False, eval_every=2)
        assert [s["epoch"] for s in history.snapshots] == [1, 3]
        for snap in history.snapshots:
            assert 0.0 <= snap["accuracy"] <= 1.0

    def test_snapshots_do_not_perturb_training(self, task, encoder):
        plain = train_proda(task, small_config(), encoder=encoder,
                            evaluate_final=False)
        snapped = train_proda(task, small_config(), encoder=encoder,
                              evaluate_final=False, eval_every=1)
        assert [s.total for s in plain.steps] == [s.total for s in snapped.steps]

    def test_divergence_aborts_with_snapshot(self, task, encoder):
        from promptdist.training import TrainingDivergedError
        # a subnormal temperature overflows the logits on the first step
        config = small_config(tau=1e-320)
        with pytest.raises(TrainingDivergedError) as err:
            train_proda(task, config, encoder=encoder, evaluate_final=False)
        assert err.value.snapshot["step"] == 0
        assert "prompt_indices" in err.value.snapshot


class TestPromptBatchSampling:
    def test_minibatch_close_to_all_prompts(self):
        """Sampling a prompt mini-batch per step tracks training on the whole
        collection: mean final accuracies agree within 1.5 points."""
        enc = TextEncoder(EncoderConfig(embed_dim=32, hidden_dim=64,
                                        out_dim=32, seed=0))
        mini, full = [], []
        for seed in range(8):
            task = gen_synthetic_task(6, 1, 32, 0.6, seed=seed, encoder=enc)
            base = dict(tau=0.05, seed=seed, epochs=60, base_lr=0.02,
                        num_prompts=16, prompt_len=8)
            mini.append(train_proda(task, TrainConfig(prompt_batch=4, **base),
                                    encoder=enc).final_accuracy)
            full.append(train_proda(task, TrainConfig(prompt_batch=16, **base),
                                    encoder=enc).final_accuracy)
        assert abs(np.mean(mini) - np.mean(full)) <= 0.015


class TestCoopBaseline:
    def test_single_prompt_end_tagged(self, task, encoder):
        history = train_coop_baseline(task, small_config(), encoder=encoder,
                                      evaluate_final=False)
        assert len(history.collection) == 1
        assert history.collection[0].position is Position.END
        assert history.objective == "cross-entropy"

    def test_matches_proda_with_k1_zero_lambda(self, task, encoder):
        """With one prompt the covariance vanishes, so the surrogate loss and
        plain cross-entropy produce identical step losses."""
        config = small_config(num_prompts=1, prompt_batch=1, lam=0.0)
        proda = train_proda(task, config, encoder=encoder, evaluate_final=False)
        coop = train_coop_baseline(task, config, encoder=encoder,
                                   evaluate_final=False)
        for a, b in zip(proda.steps, coop.steps):
            assert a.total == pytest.approx(b.total, abs=1e-12)

    def test_deterministic(self, task, encoder):
        a = train_coop_baseline(task, small_config(), encoder=encoder)
        b = train_coop_baseline(task, small_config(), encoder=encoder)
        assert a.final_accuracy == b.final_accuracy


class TestLinearProbe:
    def test_separable_toy_set_fits(self):
        rng = np.random.default_rng(0)
        encoder = TextEncoder(EncoderConfig(embed_dim=8, hidden_dim=16,
                                            out_dim=8, seed=1))
        task = gen_synthetic_task(2, 8, 8, 0.1, seed=3, encoder=encoder)
        result = train_linear_probe(task, TrainConfig(probe_l2=1e-6,
                                                      probe_steps=2000))
        assert result.train_accuracy == 1.0

    def test_huge_regularization_collapses_to_majority(self, encoder):
        task = gen_synthetic_task(3, 4, 12, 0.6, seed=4, encoder=encoder)
        # unbalance the training labels by dropping examples of class 1 and 2
        keep = np.concatenate([np.nonzero(task.train_y == 0)[0],
                               np.nonzero(task.train_y == 1)[0][:1]])
        task.train_z, task.train_y = task.train_z[keep], task.train_y[keep]
        result = train_linear_probe(task, TrainConfig(probe_l2=1e6,
                                                      probe_steps=200))
        majority = np.bincount(task.test_y[task.test_y < 2]).max()
        assert np.abs(result.weights).max() < 1e-3
        predicted_class = np.argmax(
            np.bincount(np.argmax(task.test_z @ result.weights.T
                                  + result.bias, axis=1)))
        assert predicted_class == 0

    def test_deterministic(self, task):
        a = train_linear_probe(task, TrainConfig())
        b = train_linear_probe(task, TrainConfig())
        assert a.test_accuracy == b.test_accuracy
        assert np.array_equal(a.weights, b.weights)


class TestAblations:
    def test_unknown_variant_rejected(self, task, encoder):
        with pytest.raises(ValueError):
            run_ablation(task, small_config(), "no_everything", encoder=encoder)

    def test_no_pos_div_all_end(self, task, encoder):
        history = run_ablation(task, small_config(), "no_pos_div",
                               encoder=encoder, evaluate_final=False)
        hist = history.collection.position_histogram()
        assert hist[Position.END] == 8
        assert hist[Position.FRONT] == hist[Position.MIDDLE] == 0

    def test_no_sem_orth_logs_but_excludes_so(self, task, encoder):
        history = run_ablation(task, small_config(), "no_sem_orth",
                               encoder=encoder, evaluate_final=False)
        traces = history.loss_traces()
        assert any(v != 0.0 for v in traces["so"])  # logged
        for total, upper in zip(traces["total"], traces["upper"]):
            assert total == upper  # but not part of the objective

    def test_no_upper_uses_mean_weight_objective(self, task, encoder):
        history = run_ablation(task, small_config(), "no_upper",
                               encoder=encoder, evaluate_final=False)
        assert history.objective == "ensemble-cross-entropy"

    def test_variant_list_is_stable(self):
        assert ABLATION_VARIANTS == ("no_upper", "no_pos_div", "no_sem_orth")


class TestEvaluation:
    def test_mean_and_mc_agree_at_zero_variance(self, task, encoder):
        config = small_config(num_prompts=1, prompt_batch=1)
        history = train_proda(task, config, encoder=encoder,
                              evaluate_final=False)
        mean_acc = evaluate_collection(task, history.collection, encoder, config,
                                       infer="mean")
        mc_acc = evaluate_collection(task, history.collection, encoder, config,
                                     infer="mc", draws=64, seed=0)
        assert mean_acc == mc_acc

    def test_empirical_mc_mode(self, task, encoder):
        config = small_config()
        history = train_proda(task, config, encoder=encoder,
                              evaluate_final=False)
        acc = evaluate_collection(task, history.collection, encoder, config,
                                  infer="mc", mc_mode="empirical", draws=64,
                                  seed=0)
        assert 0.0 <= acc <= 1.0

    def test_zero_shot_uses_bare_names(self, task, encoder):
        acc = zero_shot_accuracy(task, encoder)
        weights = np.stack([encoder.encode_text(task.name_tokens[c]).data
                            for c in range(task.num_classes)])
        pred = np.argmax(task.test_z @ weights.T, axis=1)
        assert acc == (pred == task.test_y).mean()

    def test_build_encoder_dimensions(self, task):
        enc = build_encoder(task, TrainConfig(encoder_hidden=24, encoder_seed=5))
        assert enc.config.embed_dim == task.name_tokens.embed_dim
        assert enc.config.out_dim == task.dim
        assert enc.config.hidden_dim == 24
