"""Frozen differentiable text encoder and learnable prompt machinery.

The encoder stands in for a pretrained sentence encoder: it maps a sequence
of token vectors to a unit embedding and is differentiable with respect to
its inputs while its own weights stay frozen. Two variants are provided:

* ``meanpool``: mean over token rows, two linear layers with tanh between,
  then L2 normalization. Permutation invariant, cheap, exact gradients.
  The layers carry no bias so that near-zero token matrices (freshly
  initialized prompts) keep distinct directions instead of collapsing onto
  a common offset.
* ``attention``: sinusoidal position codes plus one frozen self-attention
  block before the same pooled head. Order sensitive, used to exercise the
  position-diversity machinery.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Xoshiro256StarStar, derive_seed


class Position(Enum):
    """Where the class name is inserted relative to the prompt tokens."""

    FRONT = "front"
    MIDDLE = "middle"
    END = "end"


PROMPT_INIT_STD = 0.02


@dataclass
class Prompt:
    """A learnable token matrix with its class-name insertion position."""

    tokens: Tensor
    position: Position

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.tokens.shape[1]


@dataclass
class PromptCollection:
    prompts: list[Prompt]
    seed: int

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)

    def __getitem__(self, index: int) -> Prompt:
        return self.prompts[index]

    def position_histogram(self) -> dict[Position, int]:
        counts = {pos: 0 for pos in Position}
        for prompt in self.prompts:
            counts[prompt.position] += 1
        return counts


class ClassNameTokens:
    """Per-class pre-embedded name tokens (one ``n_c x e`` matrix per class)."""

    def __init__(self, token_matrices: list[np.ndarray], names: list[str] | None = None):
        if not token_matrices:
            raise ValueError("at least one class is required")
        mats = [np.ascontiguousarray(np.asarray(m, dtype=np.float64)) for m in token_matrices]
        dims = {m.shape[1] for m in mats}
        if len(dims) != 1:
            raise ValueError(f"class token embedding dims disagree: {sorted(dims)}")
        for m in mats:
            if m.ndim != 2 or m.shape[0] < 1:
                raise ValueError("each class needs a nonempty 2-D token matrix")
        self.matrices = mats
        self.names = names if names is not None else [f"class_{i}" for i in range(len(mats))]

    @property
    def num_classes(self) -> int:
        return len(self.matrices)

    @property
    def embed_dim(self) -> int:
        return self.matrices[0].shape[1]

    def __getitem__(self, c: int) -> np.ndarray:
        return self.matrices[c]


def position_counts(total: int) -> dict[Position, int]:
    """Front/middle/end counts at proportions 1/4, 1/4, 1/2.

    When ``total`` is not divisible by 4 the remainder is absorbed by END.
    """
    front = total // 4
    middle = total // 4
    return {Position.FRONT: front, Position.MIDDLE: middle,
            Position.END: total - front - middle}


def init_prompt_collection(num_prompts: int, prompt_len: int, embed_dim: int,
                           seed: int, uniform_end: bool = False) -> PromptCollection:
    """Draw a fresh collection of prompts, i.i.d. N(0, 0.02^2) entries.

    ``uniform_end`` tags every prompt END (the no-position-diversity variant).
    """
    if num_prompts < 1 or prompt_len < 1 or embed_dim < 1:
        raise ValueError("num_prompts, prompt_len, and embed_dim must be >= 1")
    if uniform_end:
        tags = [Position.END] * num_prompts
    else:
        counts = position_counts(num_prompts)
        tags = ([Position.FRONT] * counts[Position.FRONT]
                + [Position.MIDDLE] * counts[Position.MIDDLE]
                + [Position.END] * counts[Position.END])
    rng = Xoshiro256StarStar(derive_seed(seed, "prompt-init"))
    prompts = []
    for tag in tags:
        values = np.array(rng.gaussians(prompt_len * embed_dim), dtype=np.float64)
        tokens = Tensor((PROMPT_INIT_STD * values).reshape(prompt_len, embed_dim),
                        requires_grad=True)
        prompts.append(Prompt(tokens=tokens, position=tag))
    return PromptCollection(prompts=prompts, seed=seed)


def assemble_description(prompt: Prompt, class_tokens: np.ndarray) -> Tensor:
    """Concatenate prompt and class-name rows according to the position tag.

    END puts the name last, FRONT first, MIDDLE splits the prompt at
    ``floor(p / 2)``. Output has ``p + n_c`` rows; only the prompt rows are
    differentiable.
    """
    name = np.asarray(class_tokens, dtype=np.float64)
    if name.ndim != 2 or name.shape[1] != prompt.embed_dim:
        raise ad.ShapeError(
            f"class tokens {name.shape} do not match prompt embed dim {prompt.embed_dim}")
    name_t = Tensor(name)
    if prompt.position is Position.END:
        return ad.concatenate([prompt.tokens, name_t], axis=0)
    if prompt.position is Position.FRONT:
        return ad.concatenate([name_t, prompt.tokens], axis=0)
    split = prompt.length // 2
    return ad.concatenate([prompt.tokens[:split], name_t, prompt.tokens[split:]], axis=0)


class EncoderKind(Enum):
    MEANPOOL = "meanpool"
    ATTENTION = "attention"


@dataclass
class EncoderConfig:
    kind: EncoderKind = EncoderKind.MEANPOOL
    embed_dim: int = 32
    hidden_dim: int = 64
    out_dim: int = 32
    seed: int = 0
    weight_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = EncoderKind(self.kind)


def _sinusoid_codes(max_len: int, dim: int) -> np.ndarray:
    codes = np.zeros((max_len, dim))
    position = np.arange(max_len, dtype=np.float64)[:, None]
    half = (dim + 1) // 2
    angles = position * np.exp(-math.log(10000.0) * 2.0 * np.arange(half) / dim)
    codes[:, 0::2] = np.sin(angles)
    codes[:, 1::2] = np.cos(angles[:, : dim // 2])
    return codes


class TextEncoder:
    """Frozen encoder g: token sequence -> unit vector in R^d."""

    # File names used when weights are persisted as tensor containers.
    WEIGHT_NAMES = ("w1", "w2", "wq", "wk", "wv")

    def __init__(self, config: EncoderConfig):
        self.config = config
        if config.weight_dir is not None:
            weights = self._read_weight_dir(config.weight_dir)
        else:
            weights = self._init_weights(config)
        self.w1 = Tensor(weights["w1"])  # (e, h)
        self.w2 = Tensor(weights["w2"])  # (h, d)
        if config.kind is EncoderKind.ATTENTION:
            self.wq = Tensor(weights["wq"])  # (e, e)
            self.wk = Tensor(weights["wk"])
            self.wv = Tensor(weights["wv"])
            self._codes = _sinusoid_codes(512, config.embed_dim)

    @staticmethod
    def _init_weights(config: EncoderConfig) -> dict[str, np.ndarray]:
        e, h, d = config.embed_dim, config.hidden_dim, config.out_dim
        rng = Xoshiro256StarStar(derive_seed(config.seed, "encoder-weights"))

        def draw(rows, cols):
            scale = 1.0 / math.sqrt(rows)
            vals = np.array(rng.gaussians(rows * cols), dtype=np.float64)
            return (scale * vals).reshape(rows, cols)

        weights = {"w1": draw(e, h), "w2": draw(h, d)}
        if config.kind is EncoderKind.ATTENTION:
            weights["wq"] = draw(e, e)
            weights["wk"] = draw(e, e)
            weights["wv"] = draw(e, e)
        return weights

    def _read_weight_dir(self, path: str) -> dict[str, np.ndarray]:
        from . import dataio  # local import; dataio depends on this module

        import os

        weights = {}
        wanted = self.WEIGHT_NAMES if self.config.kind is EncoderKind.ATTENTION \
            else self.WEIGHT_NAMES[:2]
        for name in wanted:
            weights[name] = dataio.read_embedding(
                os.path.join(path, f"{name}.pdle")).astype(np.float64)
        return weights

    def save_weights(self, path: str) -> None:
        from . import dataio

        import os

        os.makedirs(path, exist_ok=True)
        tensors = {"w1": self.w1, "w2": self.w2}
        if self.config.kind is EncoderKind.ATTENTION:
            tensors.update({"wq": self.wq, "wk": self.wk, "wv": self.wv})
        for name, tensor in tensors.items():
            dataio.write_embedding(os.path.join(path, f"{name}.pdle"), tensor.data, "f64")

    def weights_fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.w1.data.tobytes())
        digest.update(self.w2.data.tobytes())
        if self.config.kind is EncoderKind.ATTENTION:
            for w in (self.wq, self.wk, self.wv):
                digest.update(w.data.tobytes())
        return digest.hexdigest()

    # -- encoding -------------------------------------------------------------

    def _head(self, pooled: Tensor) -> Tensor:
        hidden = ad.tanh(ad.matmul(pooled, self.w1))
        return ad.l2_normalize(ad.matmul(hidden, self.w2), axis=-1)

    def _attend(self, rows: Tensor) -> Tensor:
        n = rows.shape[0]
        coded = rows + Tensor(self._codes[:n])
        q = ad.matmul(coded, self.wq)
        k = ad.matmul(coded, self.wk)
        v = ad.matmul(coded, self.wv)
        scores = ad.matmul(q, ad.transpose(k)) * (1.0 / math.sqrt(self.config.embed_dim))
        attn = ad.exp(scores - ad.logsumexp(scores, axis=1, keepdims=True))
        return ad.tmean(ad.matmul(attn, v), axis=0)

    def encode_text(self, token_rows) -> Tensor:
        """Unit embedding of one token sequence, differentiable in the rows."""
        rows = ad.as_tensor(token_rows)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ad.ShapeError(f"expected a nonempty (n, e) sequence, got {rows.shape}")
        if rows.shape[1] != self.config.embed_dim:
            raise ad.ShapeError(
                f"sequence dim {rows.shape[1]} != encoder embed dim {self.config.embed_dim}")
        if self.config.kind is EncoderKind.ATTENTION:
            pooled = self._attend(rows)
        else:
            pooled = ad.tmean(rows, axis=0)
        return self._head(pooled)

    def encode_sequences(self, sequences) -> Tensor:
        """Encode many sequences into an (m, d) matrix of unit rows.

        The meanpool variant shares one matmul chain across sequences; the
        attention variant falls back to per-sequence encoding.
        """
        sequences = list(sequences)
        if not sequences:
            raise ad.ShapeError("need at least one sequence")
        if self.config.kind is EncoderKind.ATTENTION:
            return ad.stack([self.encode_text(seq) for seq in sequences], axis=0)
        pooled = ad.stack([ad.tmean(ad.as_tensor(s), axis=0) for s in sequences], axis=0)
        hidden = ad.tanh(ad.matmul(pooled, self.w1))
        return ad.l2_normalize(ad.matmul(hidden, self.w2), axis=-1)

    def encode_prompt_semantic(self, prompt: Prompt) -> Tensor:
        """Embedding of the bare prompt tokens, no class name attached."""
        return self.encode_text(prompt.tokens)
