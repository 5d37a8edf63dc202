"""Prompt distribution learning on frozen embedding encoders.

A desk-scale harness for training collections of soft prompts whose induced
classifier-weight distribution is optimized through a closed-form Gaussian
surrogate bound, with diversity constraints, baselines (single-prompt
tuning, linear probe, zero-shot), mean and Monte-Carlo inference, and a
bit-exact tensor file format for interchange with feature exporters.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, grad, finite_diff_check  # noqa: F401
from .distribution import (CovMode, Estimator, LossConfig,  # noqa: F401
                           WeightDistribution, WeightSamples,
                           estimate_distribution, generate_weights,
                           quadratic_form)
from .encoder import (ClassNameTokens, EncoderConfig, EncoderKind,  # noqa: F401
                      Position, Prompt, PromptCollection, TextEncoder,
                      assemble_description, init_prompt_collection)
from .inference import (MetricKind, Prediction, evaluate, predict_mc,  # noqa: F401
                        predict_mean, score, zero_shot_ensemble)
from .losses import (Batch, cross_entropy_single, ensemble_ce_loss,  # noqa: F401
                     marginal_loss_mc, mgf_check, semantic_orthogonality_loss,
                     surrogate_loss, total_loss)
from .training import (TrainConfig, TrainHistory, lr_schedule,  # noqa: F401
                       run_ablation, sgd_momentum_step, train_coop_baseline,
                       train_linear_probe, train_proda)
