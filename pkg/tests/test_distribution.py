"""Weight generation and Gaussian estimation against brute-force oracles."""

import numpy as np
import pytest

from promptdist.autodiff import Tensor, finite_diff_check, tsum
from promptdist.distribution import (CovMode, Estimator, LossConfig,
                                     WeightSamples, estimate_distribution,
                                     generate_weights, quadratic_form)
from promptdist.encoder import (ClassNameTokens, EncoderConfig, TextEncoder,
                                init_prompt_collection)


@pytest.fixture(scope="module")
def encoder():
    return TextEncoder(EncoderConfig(embed_dim=8, hidden_dim=16, out_dim=6, seed=3))


@pytest.fixture(scope="module")
def class_tokens():
    rng = np.random.default_rng(0)
    return ClassNameTokens([rng.normal(size=(2, 8)) for _ in range(3)])


def random_samples(count, classes, dim, seed):
    """Unit-row weight samples built directly, no encoder involved."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(count, classes, dim))
    w /= np.linalg.norm(w, axis=2, keepdims=True)
    return WeightSamples(weights=Tensor(w), prompt_indices=list(range(count)))


class TestGenerateWeights:
    def test_shape_and_unit_rows(self, encoder, class_tokens):
        coll = init_prompt_collection(4, 5, 8, seed=1)
        samples = generate_weights(encoder, list(coll), class_tokens)
        assert samples.weights.shape == (4, 3, 6)
        norms = np.linalg.norm(samples.weights.data, axis=2)
        assert np.all(np.abs(norms - 1.0) <= 1e-10)

    def test_matches_per_sequence_encoding(self, encoder, class_tokens):
        from promptdist.encoder import assemble_description
        coll = init_prompt_collection(2, 5, 8, seed=2)
        samples = generate_weights(encoder, list(coll), class_tokens)
        for b, prompt in enumerate(coll):
            for c in range(3):
                direct = encoder.encode_text(
                    assemble_description(prompt, class_tokens[c]))
                assert np.allclose(samples.weights.data[b, c], direct.data,
                                   atol=1e-12, rtol=0)

    def test_duplicate_prompt_duplicates_rows(self, encoder, class_tokens):
        coll = init_prompt_collection(1, 5, 8, seed=3)
        samples = generate_weights(encoder, [coll[0], coll[0]], class_tokens)
        assert np.array_equal(samples.weights.data[0], samples.weights.data[1])

    def test_gradients_flow_to_prompts(self, encoder, class_tokens):
        coll = init_prompt_collection(4, 5, 8, seed=4)
        params = [p.tokens for p in coll]

        def loss_fn(ps):
            samples = generate_weights(encoder, list(coll), class_tokens)
            return tsum(samples.weights)

        err = finite_diff_check(loss_fn, params, step=1e-5, sample_count=40)
        assert err < 1e-4


class TestEstimateDistribution:
    def test_single_sample_zero_covariance(self):
        samples = random_samples(1, 3, 4, seed=0)
        dist = estimate_distribution(samples, LossConfig(tau=0.1))
        assert np.array_equal(dist.mu_array, samples.weights.data[0])
        assert np.all(dist.cov_array == 0.0)

    def test_unbiased_requires_two_samples(self):
        samples = random_samples(1, 3, 4, seed=0)
        with pytest.raises(ValueError):
            estimate_distribution(samples, LossConfig(tau=0.1,
                                                      estimator=Estimator.UNBIASED))

    def test_antipodal_pair_algebra(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(1, 2, 4))
        w /= np.linalg.norm(w, axis=2, keepdims=True)
        pair = np.concatenate([w, -w], axis=0)
        samples = WeightSamples(weights=Tensor(pair), prompt_indices=[0, 1])
        ml = estimate_distribution(samples, LossConfig(tau=0.1))
        assert np.allclose(ml.mu_array, 0.0, atol=1e-16)
        # ML per-coordinate variance of {w, -w} is w[k]^2
        diag = np.stack([ml.cov_array[c, c] for c in range(2)])
        assert np.allclose(diag, w[0] ** 2, atol=1e-15, rtol=0)
        unbiased = estimate_distribution(
            samples, LossConfig(tau=0.1, estimator=Estimator.UNBIASED))
        diag_u = np.stack([unbiased.cov_array[c, c] for c in range(2)])
        assert np.allclose(diag_u, 2.0 * w[0] ** 2, atol=1e-15, rtol=0)

    def test_mean_consistency(self):
        samples = random_samples(8, 3, 5, seed=6)
        dist = estimate_distribution(samples, LossConfig(tau=0.1))
        brute = samples.weights.data.mean(axis=0)
        assert np.allclose(dist.mu_array, brute, atol=1e-12, rtol=0)
        # the mean of unit vectors is generally shorter than unit
        assert np.all(np.linalg.norm(dist.mu_array, axis=1) < 1.0)

    def test_full_blocks_match_brute_force(self):
        samples = random_samples(8, 3, 4, seed=7)
        dist = estimate_distribution(
            samples, LossConfig(tau=0.1, cov_mode=CovMode.FULL_BLOCKS))
        w = samples.weights.data
        mu = w.mean(axis=0)
        for i in range(3):
            for j in range(3):
                brute = np.zeros((4, 4))
                for b in range(8):
                    brute += np.outer(w[b, i] - mu[i], w[b, j] - mu[j])
                brute /= 8
                assert np.allclose(dist.cov_array[i, j], brute, atol=1e-12, rtol=0)

    def test_diagonal_blocks_match_full_diagonals(self):
        samples = random_samples(6, 4, 5, seed=8)
        full = estimate_distribution(
            samples, LossConfig(tau=0.1, cov_mode=CovMode.FULL_BLOCKS))
        diag = estimate_distribution(
            samples, LossConfig(tau=0.1, cov_mode=CovMode.DIAGONAL_BLOCKS))
        for i in range(4):
            for j in range(4):
                assert np.allclose(diag.cov_array[i, j],
                                   np.diag(full.cov_array[i, j]),
                                   atol=1e-14, rtol=0)

    def test_diag_equals_full_when_d_is_1(self):
        samples = random_samples(5, 3, 1, seed=9)
        full = estimate_distribution(
            samples, LossConfig(tau=0.1, cov_mode=CovMode.FULL_BLOCKS))
        diag = estimate_distribution(
            samples, LossConfig(tau=0.1, cov_mode=CovMode.DIAGONAL_BLOCKS))
        rng = np.random.default_rng(10)
        z = rng.normal(size=1)
        for c in range(3):
            for y in range(3):
                assert quadratic_form(full, c, y, z) == pytest.approx(
                    quadratic_form(diag, c, y, z), abs=1e-15)

    def test_estimation_is_differentiable(self, encoder, class_tokens):
        coll = init_prompt_collection(4, 5, 8, seed=11)
        params = [p.tokens for p in coll]
        for mode in (CovMode.FULL_BLOCKS, CovMode.DIAGONAL_BLOCKS):
            def loss_fn(ps):
                samples = generate_weights(encoder, list(coll), class_tokens)
                dist = estimate_distribution(samples, LossConfig(tau=0.1,
                                                                 cov_mode=mode))
                return tsum(dist.mu) + tsum(dist.cov)

            err = finite_diff_check(loss_fn, params, step=1e-5, sample_count=24)
            assert err < 1e-4, mode


class TestQuadraticForm:
    def test_same_class_exactly_zero(self):
        samples = random_samples(8, 4, 5, seed=12)
        rng = np.random.default_rng(13)
        for mode in (CovMode.FULL_BLOCKS, CovMode.DIAGONAL_BLOCKS):
            dist = estimate_distribution(samples, LossConfig(tau=0.1, cov_mode=mode))
            for y in range(4):
                z = rng.normal(size=5)
                assert quadratic_form(dist, y, y, z) == 0.0

    def test_projection_identity_full_blocks(self):
        """Master oracle: z'A z equals the sample variance of z'(w_c - w_y)."""
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            count = int(rng.integers(2, 9))
            classes = int(rng.integers(2, 5))
            dim = int(rng.integers(2, 6))
            samples = random_samples(count, classes, dim, seed=200 + seed)
            w = samples.weights.data
            for estimator in (Estimator.ML, Estimator.UNBIASED):
                dist = estimate_distribution(
                    samples, LossConfig(tau=0.1, cov_mode=CovMode.FULL_BLOCKS,
                                        estimator=estimator))
                z = rng.normal(size=dim)
                c, y = rng.integers(0, classes, size=2)
                proj = w[:, c, :] @ z - w[:, y, :] @ z
                ddof = 0 if estimator is Estimator.ML else 1
                expected = proj.var(ddof=ddof)
                got = quadratic_form(dist, int(c), int(y), z)
                assert got == pytest.approx(expected, rel=1e-10, abs=1e-14)

    def test_projection_identity_diagonal_blocks(self):
        for seed in range(20):
            rng = np.random.default_rng(300 + seed)
            samples = random_samples(6, 3, 4, seed=400 + seed)
            w = samples.weights.data
            dist = estimate_distribution(
                samples, LossConfig(tau=0.1, cov_mode=CovMode.DIAGONAL_BLOCKS))
            z = rng.normal(size=4)
            c, y = rng.integers(0, 3, size=2)
            per_coord = (w[:, c, :] - w[:, y, :]).var(axis=0, ddof=0)
            expected = float(np.sum(z * z * per_coord))
            got = quadratic_form(dist, int(c), int(y), z)
            assert got == pytest.approx(expected, rel=1e-10, abs=1e-14)

    def test_nonnegativity(self):
        rng = np.random.default_rng(14)
        for seed in range(10):
            samples = random_samples(5, 3, 4, seed=500 + seed)
            for mode in (CovMode.FULL_BLOCKS, CovMode.DIAGONAL_BLOCKS):
                dist = estimate_distribution(samples,
                                             LossConfig(tau=0.1, cov_mode=mode))
                for _ in range(5):
                    z = rng.normal(size=4)
                    c, y = rng.integers(0, 3, size=2)
                    assert quadratic_form(dist, int(c), int(y), z) >= -1e-10

    def test_index_out_of_range(self):
        samples = random_samples(3, 2, 4, seed=15)
        dist = estimate_distribution(samples, LossConfig(tau=0.1))
        with pytest.raises(IndexError):
            quadratic_form(dist, 0, 2, np.ones(4))
