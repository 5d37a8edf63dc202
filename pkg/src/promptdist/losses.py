"""Training objectives and their Monte-Carlo verification oracles.

The centerpiece is the closed-form surrogate ``surrogate_loss``: an upper
bound on the intractable marginal-likelihood classification loss of a
Gaussian-distributed linear classifier. For weights ``w ~ N(mu, Sigma)`` and
``A[c, y] = Sigma_cc + Sigma_yy - Sigma_cy - Sigma_yc`` the bound reads

    mean_i  -log  exp(z_i' mu_y / tau)
                  / sum_c exp(z_i' mu_c / tau + z_i' A[c, y_i] z_i / (2 tau^2))

and follows from Jensen's inequality plus the Gaussian moment-generating
function; ``marginal_loss_mc`` and ``mgf_check`` verify both steps
numerically. All losses are differentiable with respect to the prompt
tokens through the weight distribution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .distribution import (CovMode, LossConfig, WeightDistribution, WeightSamples,
                           assemble_joint_covariance, per_coordinate_covariances)


class NumericError(ArithmeticError):
    """A numerical routine failed (factorization, divergence, underflow)."""


@dataclass
class Batch:
    """A labelled mini-batch of unit image embeddings."""

    z: np.ndarray  # (B_x, d)
    y: np.ndarray  # (B_x,)

    def __post_init__(self):
        self.z = np.ascontiguousarray(np.asarray(self.z, dtype=np.float64))
        self.y = np.ascontiguousarray(np.asarray(self.y, dtype=np.int64))
        if self.z.ndim != 2 or self.y.ndim != 1 or self.z.shape[0] != self.y.shape[0]:
            raise ValueError(f"batch shapes disagree: z {self.z.shape}, y {self.y.shape}")
        if self.z.shape[0] < 1:
            raise ValueError("batch is empty")
        if np.any(self.y < 0):
            raise ValueError("labels must be nonnegative")
        norms = np.linalg.norm(self.z, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("image embeddings must be unit norm (within 1e-6)")

    @property
    def size(self) -> int:
        return self.z.shape[0]


def _check_labels(batch: Batch, num_classes: int) -> None:
    if np.any(batch.y >= num_classes):
        raise ValueError(f"labels exceed class count {num_classes}")


def _pair_quadratic(dist: WeightDistribution, batch: Batch) -> Tensor:
    """Differentiable (B_x, C) matrix of ``z_i' A[c, y_i] z_i`` values."""
    num_classes, dim = dist.num_classes, dist.dim
    size = batch.size
    diag_idx = np.arange(num_classes) * num_classes + np.arange(num_classes)
    if dist.cov_mode is CovMode.DIAGONAL_BLOCKS:
        z_sq = Tensor(batch.z * batch.z)  # (B, d)
        var = ad.take(ad.reshape(dist.cov, (num_classes * num_classes, dim)),
                      diag_idx, axis=0)  # (C, d)
        t_cc = ad.matmul(z_sq, ad.transpose(var))  # (B, C): z^2 . Var_c
        t_yy = ad.gather_rows(t_cc, batch.y)       # (B,)
        cov_cy = ad.transpose(ad.take(dist.cov, batch.y, axis=1), (1, 0, 2))  # (B, C, d)
        t_cy = ad.tsum(ad.mul(ad.reshape(z_sq, (size, 1, dim)), cov_cy), axis=2)
        return ad.sub(ad.add(t_cc, ad.reshape(t_yy, (size, 1))), ad.mul(t_cy, 2.0))

    outer = batch.z[:, :, None] * batch.z[:, None, :]  # (B, d, d)
    outer_flat = Tensor(outer.reshape(size, dim * dim))
    blocks = ad.reshape(dist.cov, (num_classes * num_classes, dim * dim))
    own = ad.take(blocks, diag_idx, axis=0)  # (C, d*d): Sigma_cc
    t_cc = ad.matmul(outer_flat, ad.transpose(own))
    t_yy = ad.gather_rows(t_cc, batch.y)
    cov_cy = ad.reshape(ad.transpose(ad.take(dist.cov, batch.y, axis=1), (1, 0, 2, 3)),
                        (size, num_classes, dim * dim))
    cov_yc = ad.reshape(ad.take(dist.cov, batch.y, axis=0),
                        (size, num_classes, dim * dim))
    lifted = ad.reshape(outer_flat, (size, 1, dim * dim))
    t_cy = ad.tsum(ad.mul(lifted, cov_cy), axis=2)
    t_yc = ad.tsum(ad.mul(lifted, cov_yc), axis=2)
    return ad.sub(ad.sub(ad.add(t_cc, ad.reshape(t_yy, (size, 1))), t_cy), t_yc)


def surrogate_loss(dist: WeightDistribution, batch: Batch, tau: float) -> Tensor:
    """Closed-form upper bound on the marginal-likelihood classification loss.

    Computed through a shifted log-sum-exp; the variance correction for the
    true class is exactly zero, so zero covariance reduces this to softmax
    cross-entropy on the means.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    _check_labels(batch, dist.num_classes)
    logits = ad.div(ad.matmul(Tensor(batch.z), ad.transpose(dist.mu)), tau)  # (B, C)
    quad = _pair_quadratic(dist, batch)
    exponent = ad.add(logits, ad.div(quad, 2.0 * tau * tau))
    true_logit = ad.gather_rows(logits, batch.y)
    return ad.tmean(ad.sub(ad.logsumexp(exponent, axis=1), true_logit))


def _cholesky_with_jitter(matrix: np.ndarray, jitter: float = 1e-10) -> np.ndarray:
    """Cholesky factor; an all-zero matrix factors to zero, PSD gets jitter."""
    if not matrix.any():
        return np.zeros_like(matrix)
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        bumped = matrix + jitter * np.eye(matrix.shape[0])
        try:
            return np.linalg.cholesky(bumped)
        except np.linalg.LinAlgError as exc:
            raise NumericError("covariance is not factorizable even with jitter") from exc


def sample_weight_draws(dist: WeightDistribution, draws: int, seed: int) -> np.ndarray:
    """Draw (draws, C, d) weight vectors from the estimated Gaussian.

    Diagonal mode samples each coordinate's C-dimensional Gaussian from the
    per-coordinate class covariance; full mode samples the joint C*d vector.
    """
    rng = np.random.default_rng(seed)
    num_classes, dim = dist.num_classes, dist.dim
    mu = dist.mu_array
    if dist.cov_mode is CovMode.DIAGONAL_BLOCKS:
        per_coord = per_coordinate_covariances(dist)  # (d, C, C)
        eps = rng.standard_normal((dim, draws, num_classes))
        out = np.empty((draws, num_classes, dim))
        for k in range(dim):
            factor = _cholesky_with_jitter(per_coord[k])
            out[:, :, k] = mu[:, k][None, :] + eps[k] @ factor.T
        return out
    joint = assemble_joint_covariance(dist)
    factor = _cholesky_with_jitter(joint)
    flat = mu.reshape(-1)
    samples = flat[None, :] + rng.standard_normal((draws, flat.size)) @ factor.T
    return samples.reshape(draws, num_classes, dim)


class MonteCarloEstimate(NamedTuple):
    estimate: float
    std_error: float


def marginal_loss_mc(dist: WeightDistribution, batch: Batch, tau: float,
                     draws: int = 200_000, seed: int = 0,
                     groups: int = 20, chunk: int = 20_000) -> MonteCarloEstimate:
    """Monte-Carlo estimate of the true marginal-likelihood loss.

    The inner per-example expectation of the softmax likelihood is averaged
    over shared weight draws; the standard error comes from batch means over
    ``groups`` disjoint draw blocks (so it shrinks like 1/sqrt(draws)).
    """
    if draws < 100:
        raise ValueError("need at least 100 draws")
    _check_labels(batch, dist.num_classes)
    weights = sample_weight_draws(dist, draws, seed)  # (S, C, d)
    size = batch.size
    edges = np.linspace(0, draws, groups + 1).astype(int)
    group_sums = np.zeros((size, groups))
    for g in range(groups):
        for lo in range(edges[g], edges[g + 1], chunk):
            hi = min(lo + chunk, edges[g + 1])
            logits = np.einsum("bd,scd->bsc", batch.z, weights[lo:hi]) / tau
            logits -= logits.max(axis=2, keepdims=True)
            probs = np.exp(logits)
            probs /= probs.sum(axis=2, keepdims=True)
            group_sums[:, g] += probs[np.arange(size), :, batch.y].sum(axis=1)
    group_sizes = np.diff(edges)
    pooled = group_sums.sum(axis=1) / draws
    if np.any(pooled <= 0.0):
        raise NumericError("inner likelihood underflowed to zero; tau too small")
    estimate = float(np.mean(-np.log(pooled)))
    group_means = group_sums / group_sizes[None, :]
    group_losses = np.mean(-np.log(group_means), axis=0)
    std_error = float(np.std(group_losses, ddof=1) / np.sqrt(groups))
    return MonteCarloEstimate(estimate, std_error)


class MgfCheck(NamedTuple):
    empirical: float
    analytic: float
    std_error: float


def mgf_check(mu: float, sigma: float, t: float, draws: int = 100_000,
              seed: int = 0) -> MgfCheck:
    """Empirical vs analytic E[e^{tX}] for X ~ N(mu, sigma^2)."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    analytic = float(np.exp(t * mu + 0.5 * sigma * sigma * t * t))
    if t * sigma == 0.0:
        # Degenerate: every sample equals e^{t mu} exactly.
        return MgfCheck(float(np.exp(t * mu)), analytic, 0.0)
    rng = np.random.default_rng(seed)
    values = np.exp(t * (mu + sigma * rng.standard_normal(draws)))
    empirical = float(values.mean())
    std_error = float(values.std(ddof=1) / np.sqrt(draws))
    return MgfCheck(empirical, analytic, std_error)


def semantic_orthogonality_loss(prompt_embeddings) -> Tensor:
    """Mean absolute pairwise cosine similarity over unit prompt embeddings.

    Uses the 1/(K(K-1)) constant over the strictly-upper-triangle sum, so a
    collection of identical prompts scores exactly 1/2. Fewer than two
    prompts score zero.
    """
    emb = prompt_embeddings if isinstance(prompt_embeddings, Tensor) \
        else ad.stack([ad.as_tensor(e) for e in prompt_embeddings], axis=0)
    count = emb.shape[0]
    if count < 2:
        warnings.warn("semantic orthogonality needs at least two prompts; returning 0")
        return Tensor(0.0)
    gram = ad.matmul(emb, ad.transpose(emb))
    mask = Tensor(np.triu(np.ones((count, count)), k=1))
    total = ad.tsum(ad.mul(ad.absolute(gram), mask))
    return ad.div(total, float(count * (count - 1)))


def cross_entropy_single(weights, batch: Batch, tau: float) -> Tensor:
    """Softmax cross-entropy of a single fixed classifier (C, d)."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    w = ad.as_tensor(weights)
    _check_labels(batch, w.shape[0])
    logits = ad.div(ad.matmul(Tensor(batch.z), ad.transpose(w)), tau)
    true_logit = ad.gather_rows(logits, batch.y)
    return ad.tmean(ad.sub(ad.logsumexp(logits, axis=1), true_logit))


def ensemble_ce_loss(samples: WeightSamples, batch: Batch, tau: float) -> Tensor:
    """Cross-entropy on the per-class mean weight; no covariance term."""
    mean_weights = ad.tmean(samples.weights, axis=0)  # (C, d)
    return cross_entropy_single(mean_weights, batch, tau)


def total_loss(dist: WeightDistribution, batch: Batch, prompt_embeddings,
               config: LossConfig) -> Tensor:
    """Surrogate bound plus the weighted semantic orthogonality penalty."""
    upper = surrogate_loss(dist, batch, config.tau)
    if config.lam == 0.0:
        return upper
    return ad.add(upper, ad.mul(semantic_orthogonality_loss(prompt_embeddings),
                                config.lam))
