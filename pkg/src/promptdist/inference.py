"""Prediction rules and metric computation.

Scoring is temperature-scaled softmax over ``z . w_c``. The distribution
variants either plug in the estimated mean weights directly (no per-query
overhead beyond one matrix-vector product) or average softmax probabilities
over Monte-Carlo weight draws. Zero-shot ensembling follows the usual
recipe: average the per-template class embeddings, renormalize, then score.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .distribution import WeightDistribution
from .losses import sample_weight_draws


class MetricKind(Enum):
    ACCURACY = "accuracy"
    MEAN_PER_CLASS = "mean-per-class"


@dataclass
class Prediction:
    probabilities: np.ndarray  # (C,), nonnegative, sums to 1
    label: int                 # argmax, ties broken toward the lowest index

    @classmethod
    def from_probabilities(cls, probs: np.ndarray) -> "Prediction":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probabilities=probs, label=int(np.argmax(probs)))


def _softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exped = np.exp(shifted)
    return exped / exped.sum(axis=axis, keepdims=True)


def score(z: np.ndarray, weights: np.ndarray, tau: float) -> Prediction:
    """Softmax prediction of one query against a fixed (C, d) classifier."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(z, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    return Prediction.from_probabilities(_softmax(weights @ z / tau))


def predict_mean(dist: WeightDistribution, z: np.ndarray, tau: float) -> Prediction:
    """Score against the distribution mean, used as-is (not renormalized)."""
    return score(z, dist.mu_array, tau)


def predict_mc(dist: WeightDistribution, z: np.ndarray, tau: float,
               draws: int, mode: str = "gaussian", seed: int = 0,
               empirical_weights: np.ndarray | None = None) -> Prediction:
    """Average softmax probabilities over sampled classifiers.

    ``gaussian`` samples from the estimated distribution; ``empirical``
    resamples the retained per-prompt weight sets uniformly (requires
    ``empirical_weights`` of shape (B, C, d)).
    """
    if draws < 1:
        raise ValueError("need at least one draw")
    if mode == "gaussian":
        sampled = sample_weight_draws(dist, draws, seed)  # (S, C, d)
    elif mode == "empirical":
        if empirical_weights is None:
            raise ValueError("empirical mode requires the retained weight samples")
        pool = np.asarray(empirical_weights, dtype=np.float64)
        rng = np.random.default_rng(seed)
        sampled = pool[rng.integers(0, pool.shape[0], size=draws)]
    else:
        raise ValueError(f"unknown Monte-Carlo mode: {mode!r}")
    z = np.asarray(z, dtype=np.float64)
    probs = _softmax(sampled @ z / tau, axis=1)  # (S, C)
    if (sampled == sampled[0]).all():
        # Degenerate draws (e.g. zero covariance) average to the single
        # softmax exactly; avoids accumulating rounding across draws.
        return Prediction.from_probabilities(probs[0])
    return Prediction.from_probabilities(probs.mean(axis=0))


def zero_shot_ensemble(weight_sets: Sequence[np.ndarray], z: np.ndarray, tau: float,
                       average_probs: bool = False) -> Prediction:
    """Combine several (C, d) classifiers built from different prompt sets.

    Default: average the class embeddings across sets, renormalize each
    class, then score once. ``average_probs`` switches to averaging the
    per-set softmax outputs instead.
    """
    stacked = np.asarray([np.asarray(w, dtype=np.float64) for w in weight_sets])
    if stacked.ndim != 3 or stacked.shape[0] < 1:
        raise ValueError("need at least one (C, d) weight set")
    z = np.asarray(z, dtype=np.float64)
    if average_probs:
        probs = _softmax(stacked @ z / tau, axis=1).mean(axis=0)
        return Prediction.from_probabilities(probs)
    return score(z, ensemble_weights(stacked), tau)


def ensemble_weights(weight_sets: np.ndarray) -> np.ndarray:
    """Mean class embeddings across sets, L2-normalized per class."""
    stacked = np.asarray(weight_sets, dtype=np.float64)
    mean = stacked.mean(axis=0) if stacked.ndim == 3 else stacked
    norms = np.linalg.norm(mean, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("ensemble produced a zero class embedding")
    return mean / norms


def evaluate(predict_fn: Callable[[np.ndarray], Prediction],
             test_z: np.ndarray, test_y: np.ndarray,
             metric: MetricKind = MetricKind.ACCURACY,
             num_classes: int | None = None) -> float:
    """Fraction correct, or the unweighted mean of per-class recalls."""
    test_z = np.asarray(test_z, dtype=np.float64)
    test_y = np.asarray(test_y, dtype=np.int64)
    if test_z.shape[0] == 0:
        raise ValueError("test set is empty")
    predicted = np.array([predict_fn(test_z[i]).label for i in range(test_z.shape[0])])
    correct = predicted == test_y
    if metric is MetricKind.ACCURACY:
        return float(correct.mean())
    if num_classes is None:
        num_classes = int(test_y.max()) + 1
    recalls = []
    for label in range(num_classes):
        mask = test_y == label
        if not mask.any():
            raise ValueError(f"class {label} absent from the test set; "
                             "mean-per-class recall is undefined")
        recalls.append(float(correct[mask].mean()))
    return float(np.mean(recalls))


def batch_scores(test_z: np.ndarray, weights: np.ndarray, tau: float) -> np.ndarray:
    """Vectorized argmax labels for a whole test set against one classifier."""
    logits = np.asarray(test_z, dtype=np.float64) @ np.asarray(weights).T / tau
    return np.argmax(logits, axis=1)
