"""Mini-batch prompt training, baselines, and ablation variants.

One training step samples an image batch and a prompt batch, rebuilds the
classifier-weight distribution from the sampled prompts, evaluates the
surrogate bound plus the weighted diversity penalty, and applies SGD with
momentum to the sampled prompts only. The learning rate follows a linear
scaling rule (base_lr * image_batch / 5) with cosine decay over all steps.

Baselines: a single-prompt tuner trained on plain cross-entropy, a logistic
regression probe on the frozen image features, and zero-shot scoring with
bare class-name encodings. Ablations flip one ingredient each: mean-weight
cross-entropy instead of the bound, all-END prompt positions, or a zero
diversity weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad
from .dataio import FewShotTask
from .distribution import (CovMode, Estimator, LossConfig, estimate_distribution,
                           generate_weights)
from .encoder import (EncoderConfig, EncoderKind, PromptCollection, TextEncoder,
                      init_prompt_collection)
from .inference import MetricKind, Prediction, _softmax
from .losses import (Batch, NumericError, cross_entropy_single, ensemble_ce_loss,
                     sample_weight_draws, semantic_orthogonality_loss, surrogate_loss)
from .rng import Xoshiro256StarStar, derive_seed

ABLATION_VARIANTS = ("no_upper", "no_pos_div", "no_sem_orth")


@dataclass
class TrainConfig:
    epochs: int = 100
    image_batch: int = 20
    prompt_batch: int = 4
    base_lr: float = 0.001
    lr_batch_divisor: float = 5.0
    momentum: float = 0.9
    num_prompts: int = 32
    prompt_len: int = 16
    seed: int = 0
    lam: float = 0.1
    tau: float = 0.01
    cov_mode: CovMode = CovMode.DIAGONAL_BLOCKS
    estimator: Estimator = Estimator.ML
    no_upper: bool = False
    no_pos_div: bool = False
    no_sem_orth: bool = False
    grad_clip: float | None = None
    encoder_kind: EncoderKind = EncoderKind.MEANPOOL
    encoder_hidden: int = 64
    encoder_seed: int = 0
    probe_l2: float = 1e-3
    probe_lr: float = 1.0
    probe_steps: int = 500

    def __post_init__(self):
        if isinstance(self.cov_mode, str):
            self.cov_mode = CovMode(self.cov_mode)
        if isinstance(self.estimator, str):
            self.estimator = Estimator(self.estimator)
        if isinstance(self.encoder_kind, str):
            self.encoder_kind = EncoderKind(self.encoder_kind)
        if self.epochs < 1 or self.image_batch < 1:
            raise ValueError("epochs and image_batch must be >= 1")
        if not (1 <= self.prompt_batch <= self.num_prompts):
            raise ValueError("need 1 <= prompt_batch <= num_prompts")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, lam=self.lam, cov_mode=self.cov_mode,
                          estimator=self.estimator)


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    total: float
    upper: float
    so: float
    prompt_indices: list[int]


@dataclass
class TrainHistory:
    steps: list[StepRecord]
    collection: PromptCollection
    encoder_fingerprint: str
    config: TrainConfig
    objective: str
    final_accuracy: float | None = None
    snapshots: list[dict] = field(default_factory=list)

    def loss_traces(self) -> dict[str, list[float]]:
        return {"total": [s.total for s in self.steps],
                "upper": [s.upper for s in self.steps],
                "so": [s.so for s in self.steps]}


class TrainingDivergedError(NumericError):
    """Training hit a non-finite loss; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


def lr_schedule(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear-scaled base rate with cosine decay over all steps."""
    if not (0 <= step < total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps})")
    scaled = config.base_lr * config.image_batch / config.lr_batch_divisor
    return scaled * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def sgd_momentum_step(params: list[np.ndarray], grads: list[np.ndarray],
                      velocity: list[np.ndarray], lr: float,
                      momentum: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Classic momentum: v <- momentum v + g; theta <- theta - lr v."""
    new_params, new_velocity = [], []
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ad.ShapeError("parameter, gradient, and velocity shapes must agree")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
        v_next = momentum * v + g
        new_velocity.append(v_next)
        new_params.append(p - lr * v_next)
    return new_params, new_velocity


def build_encoder(task: FewShotTask, config: TrainConfig) -> TextEncoder:
    return TextEncoder(EncoderConfig(kind=config.encoder_kind,
                                     embed_dim=task.name_tokens.embed_dim,
                                     hidden_dim=config.encoder_hidden,
                                     out_dim=task.dim,
                                     seed=config.encoder_seed))


def _clip_gradients(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return [g * scale for g in grads]


def _train_collection(task: FewShotTask, config: TrainConfig, encoder: TextEncoder,
                      collection: PromptCollection, objective: str,
                      eval_every: int = 0) -> TrainHistory:
    """Shared loop behind the distribution trainer and the single-prompt tuner."""
    fingerprint = encoder.weights_fingerprint()
    loss_cfg = config.loss_config()
    num_examples = task.train_z.shape[0]
    batch_rng = Xoshiro256StarStar(derive_seed(config.seed, "image-batches"))
    prompt_rng = Xoshiro256StarStar(derive_seed(config.seed, "prompt-batches"))
    steps_per_epoch = math.ceil(num_examples / config.image_batch)
    total_steps = config.epochs * steps_per_epoch
    velocities = [np.zeros_like(p.tokens.data) for p in collection]
    records: list[StepRecord] = []
    snapshots: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = batch_rng.permutation(num_examples)
        for start in range(0, num_examples, config.image_batch):
            chosen = order[start:start + config.image_batch]
            batch = Batch(task.train_z[chosen], task.train_y[chosen])
            picked = prompt_rng.permutation(len(collection))[:config.prompt_batch]
            prompts = [collection[i] for i in picked]
            lr = lr_schedule(step, total_steps, config)
            try:
                samples = generate_weights(encoder, prompts, task.name_tokens,
                                           prompt_indices=list(picked))
                if objective == "cross-entropy":
                    upper = cross_entropy_single(
                        ad.reshape(samples.weights,
                                   (task.num_classes, task.dim)), batch, config.tau)
                elif config.no_upper:
                    upper = ensemble_ce_loss(samples, batch, config.tau)
                else:
                    dist = estimate_distribution(samples, loss_cfg)
                    upper = surrogate_loss(dist, batch, config.tau)
                if len(prompts) >= 2:
                    embeddings = encoder.encode_sequences(
                        [p.tokens for p in prompts])
                    so = semantic_orthogonality_loss(embeddings)
                else:
                    so = Tensor(0.0)
                effective_lam = 0.0 if config.no_sem_orth else config.lam
                loss = upper if effective_lam == 0.0 \
                    else ad.add(upper, ad.mul(so, effective_lam))
                gradients = grad(loss, [p.tokens for p in prompts])
            except ad.NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}: {exc}",
                    snapshot={"step": step, "epoch": epoch, "lr": lr,
                              "prompt_indices": [int(i) for i in picked],
                              "recent": [r.total for r in records[-5:]]}) from exc
            if config.grad_clip is not None:
                gradients = _clip_gradients(gradients, config.grad_clip)
            tokens = [p.tokens.data for p in prompts]
            vel = [velocities[i] for i in picked]
            new_tokens, new_vel = sgd_momentum_step(tokens, gradients, vel,
                                                    lr, config.momentum)
            for prompt, fresh, slot, v_next in zip(prompts, new_tokens, picked, new_vel):
                np.copyto(prompt.tokens.data, fresh)
                velocities[slot] = v_next
            records.append(StepRecord(step=step, epoch=epoch, lr=lr,
                                      total=loss.item(), upper=upper.item(),
                                      so=so.item(),
                                      prompt_indices=[int(i) for i in picked]))
            step += 1
        if eval_every and (epoch + 1) % eval_every == 0:
            snapshots.append({"epoch": epoch,
                              "accuracy": evaluate_collection(
                                  task, collection, encoder, config)})
    if encoder.weights_fingerprint() != fingerprint:
        raise NumericError("frozen encoder weights changed during training")
    return TrainHistory(steps=records, collection=collection,
                        encoder_fingerprint=fingerprint, config=config,
                        objective=objective, snapshots=snapshots)


def train_proda(task: FewShotTask, config: TrainConfig,
                encoder: TextEncoder | None = None,
                evaluate_final: bool = True,
                eval_every: int = 0) -> TrainHistory:
    """Train a prompt collection through the surrogate-bound objective.

    ``eval_every`` > 0 records a test-accuracy snapshot after every that
    many epochs (evaluation is pure, so snapshots do not perturb the run).
    """
    _check_task(task)
    encoder = encoder or build_encoder(task, config)
    collection = init_prompt_collection(config.num_prompts, config.prompt_len,
                                        task.name_tokens.embed_dim, config.seed,
                                        uniform_end=config.no_pos_div)
    objective = "ensemble-cross-entropy" if config.no_upper else "surrogate-bound"
    history = _train_collection(task, config, encoder, collection, objective,
                                eval_every=eval_every)
    if evaluate_final:
        history.final_accuracy = evaluate_collection(task, collection, encoder, config)
    return history


def train_coop_baseline(task: FewShotTask, config: TrainConfig,
                        encoder: TextEncoder | None = None,
                        evaluate_final: bool = True) -> TrainHistory:
    """Single-prompt tuning: K = 1, plain cross-entropy, same optimizer."""
    _check_task(task)
    config = replace(config, num_prompts=1, prompt_batch=1, lam=0.0)
    encoder = encoder or build_encoder(task, config)
    collection = init_prompt_collection(1, config.prompt_len,
                                        task.name_tokens.embed_dim, config.seed)
    history = _train_collection(task, config, encoder, collection, "cross-entropy")
    if evaluate_final:
        history.final_accuracy = evaluate_collection(task, collection, encoder, config)
    return history


def run_ablation(task: FewShotTask, config: TrainConfig, variant: str,
                 encoder: TextEncoder | None = None,
                 evaluate_final: bool = True) -> TrainHistory:
    """Train with exactly one ingredient removed."""
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}; "
                         f"expected one of {ABLATION_VARIANTS}")
    config = replace(config, **{variant: True})
    return train_proda(task, config, encoder=encoder, evaluate_final=evaluate_final)


def _check_task(task: FewShotTask) -> None:
    counts = np.bincount(task.train_y, minlength=task.num_classes)
    if np.any(counts < 1):
        raise ValueError("every class needs at least one training example")


# -- evaluation helpers ---------------------------------------------------------


def _metric_value(pred_labels: np.ndarray, test_y: np.ndarray,
                  metric: MetricKind, num_classes: int) -> float:
    correct = pred_labels == test_y
    if metric is MetricKind.ACCURACY:
        return float(correct.mean())
    recalls = []
    for label in range(num_classes):
        mask = test_y == label
        if not mask.any():
            raise ValueError(f"class {label} absent from the test set")
        recalls.append(float(correct[mask].mean()))
    return float(np.mean(recalls))


def evaluate_collection(task: FewShotTask, collection: PromptCollection,
                        encoder: TextEncoder, config: TrainConfig,
                        infer: str = "mean", draws: int = 1000,
                        mc_mode: str = "gaussian", seed: int = 0) -> float:
    """Accuracy of the trained collection on the task's test split.

    All prompts participate in the distribution estimate; ``infer`` selects
    mean or Monte-Carlo prediction.
    """
    samples = generate_weights(encoder, list(collection), task.name_tokens)
    dist = estimate_distribution(samples, config.loss_config())
    if infer == "mean":
        pred = np.argmax(task.test_z @ dist.mu_array.T, axis=1)
    elif infer == "mc":
        if mc_mode == "gaussian":
            sampled = sample_weight_draws(dist, draws, seed)
        elif mc_mode == "empirical":
            pool = samples.weights.data
            rng = np.random.default_rng(seed)
            sampled = pool[rng.integers(0, pool.shape[0], size=draws)]
        else:
            raise ValueError(f"unknown Monte-Carlo mode {mc_mode!r}")
        probs = np.zeros((task.test_z.shape[0], task.num_classes))
        for lo in range(0, draws, 512):
            block = sampled[lo:lo + 512]
            logits = np.einsum("nd,scd->nsc", task.test_z, block) / config.tau
            logits -= logits.max(axis=2, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=2, keepdims=True)
            probs += p.sum(axis=1)
        pred = np.argmax(probs, axis=1)
    else:
        raise ValueError(f"unknown inference mode {infer!r}")
    return _metric_value(pred, task.test_y, task.metric, task.num_classes)


def zero_shot_accuracy(task: FewShotTask, encoder: TextEncoder) -> float:
    """Score the test split with bare class-name encodings (empty prompt)."""
    weights = np.stack([encoder.encode_text(task.name_tokens[c]).data
                        for c in range(task.num_classes)])
    pred = np.argmax(task.test_z @ weights.T, axis=1)
    return _metric_value(pred, task.test_y, task.metric, task.num_classes)


@dataclass
class LinearProbeResult:
    weights: np.ndarray  # (C, d)
    bias: np.ndarray     # (C,)
    train_accuracy: float
    test_accuracy: float


def train_linear_probe(task: FewShotTask, config: TrainConfig) -> LinearProbeResult:
    """Multinomial logistic regression on the frozen image features.

    Full-batch proximal gradient descent: a plain step on the data term, a
    closed-form shrinkage step for the L2 penalty (stable for any strength);
    the bias is unregularized. Deterministic: zero initialization, fixed
    step count.
    """
    features, labels = task.train_z, task.train_y
    count, dim = features.shape
    num_classes = task.num_classes
    onehot = np.zeros((count, num_classes))
    onehot[np.arange(count), labels] = 1.0
    weights = np.zeros((num_classes, dim))
    bias = np.zeros(num_classes)
    shrink = 1.0 / (1.0 + config.probe_lr * config.probe_l2)
    for _ in range(config.probe_steps):
        probs = _softmax(features @ weights.T + bias, axis=1)
        delta = (probs - onehot) / count
        weights = shrink * (weights - config.probe_lr * (delta.T @ features))
        bias -= config.probe_lr * delta.sum(axis=0)
    train_pred = np.argmax(features @ weights.T + bias, axis=1)
    test_pred = np.argmax(task.test_z @ weights.T + bias, axis=1)
    return LinearProbeResult(
        weights=weights, bias=bias,
        train_accuracy=float((train_pred == labels).mean()),
        test_accuracy=_metric_value(test_pred, task.test_y, task.metric,
                                    task.num_classes))
