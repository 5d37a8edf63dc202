"""Classifier-weight generation and Gaussian distribution estimation.

Each prompt, combined with every class name and pushed through the frozen
encoder, yields one set of normalized classifier weights. A batch of prompts
therefore yields samples of the weight vector, from which the per-class
means and the covariance blocks are estimated. Estimation is differentiable:
gradients flow through both the mean and the covariance back to the prompt
tokens.

Covariance bookkeeping comes in two modes:

* ``FULL_BLOCKS``: all C x C blocks of d x d covariance matrices,
* ``DIAGONAL_BLOCKS``: only the per-coordinate covariances ``Cov(w_i[k],
  w_j[k])``, a C x C x d array. This is the memory-light default.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import ClassNameTokens, Prompt, TextEncoder, assemble_description


class CovMode(Enum):
    FULL_BLOCKS = "full"
    DIAGONAL_BLOCKS = "diag"


class Estimator(Enum):
    ML = "ml"            # divide by B
    UNBIASED = "unbiased"  # divide by B - 1, requires B >= 2


@dataclass
class LossConfig:
    """Temperature, diversity weight, and covariance estimation options."""

    tau: float = 0.01
    lam: float = 0.1
    cov_mode: CovMode = CovMode.DIAGONAL_BLOCKS
    estimator: Estimator = Estimator.ML

    def __post_init__(self):
        if isinstance(self.cov_mode, str):
            self.cov_mode = CovMode(self.cov_mode)
        if isinstance(self.estimator, str):
            self.estimator = Estimator(self.estimator)
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.lam < 0:
            raise ValueError("diversity weight must be nonnegative")


@dataclass
class WeightSamples:
    """Normalized classifier weights, one (C, d) set per prompt."""

    weights: Tensor  # (B, C, d), unit rows along d
    prompt_indices: list[int]

    @property
    def sample_count(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return self.weights.shape[2]


@dataclass
class WeightDistribution:
    mu: Tensor               # (C, d)
    cov: Tensor              # (C, C, d, d) full or (C, C, d) diagonal
    cov_mode: CovMode
    estimator: Estimator
    sample_count: int

    @property
    def num_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    @property
    def mu_array(self) -> np.ndarray:
        return self.mu.data

    @property
    def cov_array(self) -> np.ndarray:
        return self.cov.data


def generate_weights(encoder: TextEncoder, prompts: list[Prompt],
                     class_tokens: ClassNameTokens,
                     prompt_indices: list[int] | None = None) -> WeightSamples:
    """Encode every (prompt, class) description into classifier weights."""
    if not prompts:
        raise ValueError("need at least one prompt")
    sequences = [assemble_description(prompt, class_tokens[c])
                 for prompt in prompts for c in range(class_tokens.num_classes)]
    flat = encoder.encode_sequences(sequences)  # (B*C, d)
    weights = ad.reshape(flat, (len(prompts), class_tokens.num_classes, flat.shape[1]))
    if prompt_indices is None:
        prompt_indices = list(range(len(prompts)))
    return WeightSamples(weights=weights, prompt_indices=list(prompt_indices))


def estimate_distribution(samples: WeightSamples, config: LossConfig) -> WeightDistribution:
    """Sample mean and covariance blocks of the weight samples.

    ML divides by B, UNBIASED by B - 1. The diagonal mode keeps only the
    per-coordinate covariances across classes.
    """
    w = samples.weights
    count = samples.sample_count
    if config.estimator is Estimator.UNBIASED and count < 2:
        raise ValueError("unbiased covariance needs at least two samples")
    divisor = float(count if config.estimator is Estimator.ML else count - 1)
    num_classes, dim = samples.num_classes, samples.dim

    mu = ad.tmean(w, axis=0)  # (C, d)
    dev = ad.sub(w, ad.reshape(mu, (1, num_classes, dim)))

    if config.cov_mode is CovMode.DIAGONAL_BLOCKS:
        left = ad.reshape(dev, (count, num_classes, 1, dim))
        right = ad.reshape(dev, (count, 1, num_classes, dim))
        cov = ad.div(ad.tsum(ad.mul(left, right), axis=0), divisor)  # (C, C, d)
    else:
        flat = ad.reshape(dev, (count, num_classes * dim))
        joint = ad.div(ad.matmul(ad.transpose(flat), flat), divisor)  # (Cd, Cd)
        cov = ad.transpose(
            ad.reshape(joint, (num_classes, dim, num_classes, dim)), (0, 2, 1, 3))

    return WeightDistribution(mu=mu, cov=cov, cov_mode=config.cov_mode,
                              estimator=config.estimator, sample_count=count)


def quadratic_form(dist: WeightDistribution, c: int, y: int, z: np.ndarray) -> float:
    """z' (Sigma_cc + Sigma_yy - Sigma_cy - Sigma_yc) z for one class pair.

    Exactly zero when ``c == y``. Plain numpy; the training losses carry
    their own differentiable, batched version of the same expression.
    """
    num_classes = dist.num_classes
    if not (0 <= c < num_classes and 0 <= y < num_classes):
        raise IndexError(f"class pair ({c}, {y}) out of range for C={num_classes}")
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ad.NonFiniteError("query vector must be finite")
    cov = dist.cov_array
    if dist.cov_mode is CovMode.DIAGONAL_BLOCKS:
        a_diag = cov[c, c] + cov[y, y] - 2.0 * cov[c, y]
        return float(np.sum(z * z * a_diag))
    a_block = cov[c, c] + cov[y, y] - cov[c, y] - cov[y, c]
    return float(z @ a_block @ z)


def assemble_joint_covariance(dist: WeightDistribution) -> np.ndarray:
    """Dense (C*d, C*d) covariance of the stacked weight vector (full mode)."""
    if dist.cov_mode is not CovMode.FULL_BLOCKS:
        raise ValueError("joint covariance requires full covariance blocks")
    num_classes, dim = dist.num_classes, dist.dim
    return dist.cov_array.transpose(0, 2, 1, 3).reshape(num_classes * dim,
                                                        num_classes * dim)


def per_coordinate_covariances(dist: WeightDistribution) -> np.ndarray:
    """Per-coordinate (d, C, C) class covariance matrices (diagonal mode)."""
    if dist.cov_mode is not CovMode.DIAGONAL_BLOCKS:
        raise ValueError("per-coordinate covariances require diagonal mode")
    return dist.cov_array.transpose(2, 0, 1)
