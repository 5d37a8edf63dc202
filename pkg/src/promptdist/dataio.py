"""Bit-exact tensor files, task manifests, and synthetic few-shot tasks.

Tensor container layout (all little-endian):

    bytes 0..3    magic "PDLE"
    bytes 4..7    version, u32 (currently 1)
    bytes 8..11   dtype code, u32: 0 = f32, 1 = f64, 2 = u32
    bytes 12..15  rank, u32
    then          rank dimension sizes, u64 each
    then          payload, row-major, exactly elem_size * prod(dims) bytes

Task manifests are JSON documents naming the tensor files of a few-shot
task plus the metric, the seed, and the PRNG algorithm identifier, so a
task can be rebuilt or audited byte-for-byte. Synthetic tasks place each
class at a unit anchor (the encoding of its name tokens) and scatter unit
image embeddings around it, which guarantees a nonzero zero-shot signal.
"""

from __future__ import annotations

import json
import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoder import ClassNameTokens, EncoderConfig, EncoderKind, TextEncoder
from .inference import MetricKind
from .rng import PRNG_ALGORITHM, Xoshiro256StarStar, derive_seed

MAGIC = b"PDLE"
FORMAT_VERSION = 1

_DTYPES = {"f32": (0, np.dtype("<f4")), "f64": (1, np.dtype("<f8")),
           "u32": (2, np.dtype("<u4"))}
_CODES = {code: (name, dt) for name, (code, dt) in _DTYPES.items()}


class DataFormatError(ValueError):
    """A tensor container or manifest violates the documented layout."""


class DataError(ValueError):
    """Task content is inconsistent (missing files, shape mismatches...)."""


def write_embedding(path: str | os.PathLike, tensor: np.ndarray, dtype: str = "f64") -> None:
    """Write a tensor container; f64 -> f32 rounds to nearest even."""
    if dtype not in _DTYPES:
        raise DataFormatError(f"unknown dtype {dtype!r}; expected f32, f64, or u32")
    code, np_dtype = _DTYPES[dtype]
    arr = np.asarray(tensor)
    if dtype in ("f32", "f64"):
        if not np.all(np.isfinite(arr)):
            raise DataFormatError("refusing to write non-finite values")
        payload = arr.astype(np_dtype, order="C")
    else:
        if np.any(np.asarray(arr) < 0) or np.any(np.mod(arr, 1) != 0):
            raise DataFormatError("u32 tensors require nonnegative integers")
        payload = arr.astype(np_dtype, order="C")
    header = MAGIC + struct.pack("<III", FORMAT_VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(payload.tobytes(order="C"))


def read_embedding(path: str | os.PathLike) -> np.ndarray:
    """Read a tensor container back, in its stored dtype."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise DataFormatError(f"{path}: truncated header")
    if blob[:4] != MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, code, rank = struct.unpack_from("<III", blob, 4)
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if code not in _CODES:
        raise DataFormatError(f"{path}: unknown dtype code {code}")
    name, np_dtype = _CODES[code]
    offset = 16
    if len(blob) < offset + 8 * rank:
        raise DataFormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}Q", blob, offset) if rank else ()
    offset += 8 * rank
    count = 1
    for dim in dims:
        count *= dim
    expected = count * np_dtype.itemsize
    if len(blob) - offset != expected:
        raise DataFormatError(
            f"{path}: payload is {len(blob) - offset} bytes, expected {expected}")
    flat = np.frombuffer(blob, dtype=np_dtype, count=count, offset=offset)
    return flat.reshape(dims).copy()


def file_sha256(path: str | os.PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


# -- manifests -----------------------------------------------------------------

MANIFEST_VERSION = 1


@dataclass
class TaskManifest:
    dim: int
    classes: list[str]
    name_token_files: list[str]
    train_features: str
    train_labels: str
    test_features: str
    test_labels: str
    shots: int
    metric: str
    seed: int
    version: int = MANIFEST_VERSION
    prng: str = PRNG_ALGORITHM
    encoder: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "dim": self.dim,
            "classes": self.classes,
            "name_token_files": self.name_token_files,
            "train_features": self.train_features,
            "train_labels": self.train_labels,
            "test_features": self.test_features,
            "test_labels": self.test_labels,
            "shots": self.shots,
            "metric": self.metric,
            "seed": self.seed,
            "prng": self.prng,
        }
        if self.encoder is not None:
            doc["encoder"] = self.encoder
        doc.update(self.extra)
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TaskManifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"manifest is not valid JSON: {exc}") from exc
        required = ["version", "dim", "classes", "name_token_files", "train_features",
                    "train_labels", "test_features", "test_labels", "shots", "metric",
                    "seed"]
        missing = [key for key in required if key not in doc]
        if missing:
            raise DataFormatError(f"manifest is missing fields: {missing}")
        known = set(required) | {"prng", "encoder"}
        extra = {key: value for key, value in doc.items() if key not in known}
        return cls(dim=doc["dim"], classes=doc["classes"],
                   name_token_files=doc["name_token_files"],
                   train_features=doc["train_features"], train_labels=doc["train_labels"],
                   test_features=doc["test_features"], test_labels=doc["test_labels"],
                   shots=doc["shots"], metric=doc["metric"], seed=doc["seed"],
                   version=doc["version"], prng=doc.get("prng", PRNG_ALGORITHM),
                   encoder=doc.get("encoder"), extra=extra)


@dataclass
class FewShotTask:
    class_names: list[str]
    name_tokens: ClassNameTokens
    train_z: np.ndarray
    train_y: np.ndarray
    test_z: np.ndarray
    test_y: np.ndarray
    metric: MetricKind
    dim: int
    seed: int
    manifest: TaskManifest | None = None

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def shots(self) -> int:
        return int(self.train_y.shape[0]) // self.num_classes


TEST_EXAMPLES_PER_CLASS = 100
CENTER_SHIFT_SCALE = 1.0
CLASS_SPREAD = 0.3


def gen_synthetic_task(num_classes: int, shots: int, dim: int, noise_sigma: float,
                       seed: int, encoder: TextEncoder,
                       name_token_count: int = 2,
                       test_per_class: int = TEST_EXAMPLES_PER_CLASS,
                       center_shift: float = CENTER_SHIFT_SCALE,
                       class_spread: float = CLASS_SPREAD,
                       metric: MetricKind = MetricKind.ACCURACY) -> FewShotTask:
    """Build a synthetic few-shot task around encoder-defined class anchors.

    The geometry mirrors a fine-grained recognition task on a pretrained
    embedding space:

    * class-name tokens share a common base, ``base + class_spread * delta``,
      so the anchors (name-token encodings) cluster the way descriptions of
      related categories do;
    * the true class centers sit at ``normalize(anchor + center_shift *
      noise_sigma * gap_dir)`` with one ``gap_dir`` unit vector shared by the
      whole task, modelling the systematic text-to-image offset (modality
      gap) that prompt learning can absorb but name-only scoring cannot;
    * image embeddings are ``normalize(center + noise)`` with noise entries
      N(0, noise_sigma^2 / dim), i.e. ``noise_sigma`` is the expected
      noise-to-signal norm ratio, independent of dimension.

    Zero noise collapses centers onto the anchors exactly and makes every
    image equal its anchor. If two anchors land closer than 1e-3 the task is
    resampled with the seed incremented (rare for reasonable dimensions).
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    embed_dim = encoder.config.embed_dim
    attempt_seed = seed
    for _ in range(16):
        rng = Xoshiro256StarStar(derive_seed(attempt_seed, "synthetic-task"))
        base = np.array(rng.gaussians(name_token_count * embed_dim))
        base = base.reshape(name_token_count, embed_dim)
        matrices = []
        for _c in range(num_classes):
            delta = np.array(rng.gaussians(name_token_count * embed_dim))
            matrices.append(base + class_spread * delta.reshape(name_token_count, embed_dim))
        anchors = np.stack([encoder.encode_text(m).data for m in matrices])
        gaps = np.linalg.norm(anchors[:, None, :] - anchors[None, :, :], axis=2)
        gaps[np.diag_indices(num_classes)] = np.inf
        if gaps.min() >= 1e-3:
            break
        attempt_seed += 1
    else:
        raise DataError("could not draw distinct class anchors after 16 attempts")

    gap_dir = np.array(rng.gaussians(anchors.shape[1]))
    gap_dir /= np.linalg.norm(gap_dir)
    if center_shift * noise_sigma == 0.0:
        centers = anchors.copy()  # keep the zero-noise case bit-exact
    else:
        centers = anchors + center_shift * noise_sigma * gap_dir[None, :]
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    noise_scale = noise_sigma / np.sqrt(anchors.shape[1])

    def draw_split(per_class: int) -> tuple[np.ndarray, np.ndarray]:
        features = np.empty((num_classes * per_class, anchors.shape[1]))
        labels = np.empty(num_classes * per_class, dtype=np.int64)
        row = 0
        for c in range(num_classes):
            for _ in range(per_class):
                noise = np.array(rng.gaussians(anchors.shape[1]))
                if noise_scale == 0.0:
                    features[row] = centers[c]
                else:
                    vec = centers[c] + noise_scale * noise
                    features[row] = vec / np.linalg.norm(vec)
                labels[row] = c
                row += 1
        return features, labels

    train_z, train_y = draw_split(shots)
    test_z, test_y = draw_split(test_per_class)
    names = [f"class_{c}" for c in range(num_classes)]
    return FewShotTask(class_names=names,
                       name_tokens=ClassNameTokens(matrices, names),
                       train_z=train_z, train_y=train_y,
                       test_z=test_z, test_y=test_y,
                       metric=metric, dim=anchors.shape[1], seed=seed)


def save_task(task: FewShotTask, out_dir: str | os.PathLike,
              encoder_config: EncoderConfig | None = None,
              features_dtype: str = "f64") -> str:
    """Write the five tensor files plus the manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    counts = {m.shape[0] for m in task.name_tokens.matrices}
    if len(counts) == 1:
        stacked = np.stack(task.name_tokens.matrices)
        write_embedding(os.path.join(out_dir, "name_tokens.pdle"), stacked, "f64")
        token_files = ["name_tokens.pdle"]
    else:
        token_files = []
        for c, matrix in enumerate(task.name_tokens.matrices):
            fname = f"name_tokens_{c:04d}.pdle"
            write_embedding(os.path.join(out_dir, fname), matrix, "f64")
            token_files.append(fname)
    write_embedding(os.path.join(out_dir, "train_features.pdle"), task.train_z, features_dtype)
    write_embedding(os.path.join(out_dir, "train_labels.pdle"), task.train_y, "u32")
    write_embedding(os.path.join(out_dir, "test_features.pdle"), task.test_z, features_dtype)
    write_embedding(os.path.join(out_dir, "test_labels.pdle"), task.test_y, "u32")
    encoder_doc = None
    if encoder_config is not None:
        encoder_doc = {"kind": encoder_config.kind.value,
                       "hidden": encoder_config.hidden_dim,
                       "seed": encoder_config.seed}
    manifest = TaskManifest(dim=task.dim, classes=list(task.class_names),
                            name_token_files=token_files,
                            train_features="train_features.pdle",
                            train_labels="train_labels.pdle",
                            test_features="test_features.pdle",
                            test_labels="test_labels.pdle",
                            shots=task.shots, metric=task.metric.value, seed=task.seed,
                            encoder=encoder_doc)
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json())
    return manifest_path


def subsample_indices(labels: np.ndarray, shots: int, seed: int) -> np.ndarray:
    """Deterministic per-class subsampling, portable across implementations.

    For each class in ascending order: sort its example indices, shuffle
    them with a Fisher-Yates pass seeded from ``derive_seed(seed,
    "shot-subsample", class)``, keep the first ``shots``.
    """
    labels = np.asarray(labels)
    picked = []
    for c in range(int(labels.max()) + 1):
        idx = sorted(int(i) for i in np.nonzero(labels == c)[0])
        if len(idx) < shots:
            raise DataError(f"class {c} has only {len(idx)} examples, need {shots}")
        rng = Xoshiro256StarStar(derive_seed(seed, "shot-subsample", c))
        rng.shuffle(idx)
        picked.extend(idx[:shots])
    return np.array(picked, dtype=np.int64)


def load_task(manifest_path: str | os.PathLike, shots: int | None = None) -> FewShotTask:
    """Materialize a task from its manifest, optionally subsampling shots."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = TaskManifest.from_json(fh.read())
    base = os.path.dirname(os.path.abspath(manifest_path))

    def load(rel: str) -> np.ndarray:
        path = os.path.join(base, rel)
        if not os.path.exists(path):
            raise DataError(f"manifest references missing file: {rel}")
        return read_embedding(path)

    matrices: list[np.ndarray] = []
    for rel in manifest.name_token_files:
        arr = load(rel).astype(np.float64)
        if arr.ndim == 3:
            matrices.extend(arr[i] for i in range(arr.shape[0]))
        elif arr.ndim == 2:
            matrices.append(arr)
        else:
            raise DataError(f"{rel}: name tokens must be rank 2 or 3, got rank {arr.ndim}")
    if len(matrices) != len(manifest.classes):
        raise DataError(f"{len(matrices)} name-token matrices for "
                        f"{len(manifest.classes)} classes")

    train_z = load(manifest.train_features).astype(np.float64)
    train_y = load(manifest.train_labels).astype(np.int64)
    test_z = load(manifest.test_features).astype(np.float64)
    test_y = load(manifest.test_labels).astype(np.int64)
    for name, arr in (("train_features", train_z), ("test_features", test_z)):
        if arr.ndim != 2 or arr.shape[1] != manifest.dim:
            raise DataError(f"{name} has shape {arr.shape}, expected (*, {manifest.dim})")
    for name, feats, labs in (("train", train_z, train_y), ("test", test_z, test_y)):
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise DataError(f"{name} labels do not align with features")
        if labs.size and labs.max() >= len(manifest.classes):
            raise DataError(f"{name} labels exceed the class list")

    if shots is not None:
        available = manifest.shots
        if shots > available:
            raise DataError(f"requested {shots} shots but the task provides {available}")
        if shots < available:
            keep = subsample_indices(train_y, shots, manifest.seed)
            train_z, train_y = train_z[keep], train_y[keep]

    try:
        metric = MetricKind(manifest.metric)
    except ValueError as exc:
        raise DataFormatError(f"unknown metric {manifest.metric!r}") from exc

    return FewShotTask(class_names=list(manifest.classes),
                       name_tokens=ClassNameTokens(matrices, list(manifest.classes)),
                       train_z=train_z, train_y=train_y,
                       test_z=test_z, test_y=test_y,
                       metric=metric, dim=manifest.dim, seed=manifest.seed,
                       manifest=manifest)


def encoder_from_manifest(manifest: TaskManifest, embed_dim: int) -> TextEncoder:
    """Rebuild the frozen encoder a synthetic task was generated with."""
    doc = manifest.encoder or {}
    config = EncoderConfig(kind=EncoderKind(doc.get("kind", "meanpool")),
                           embed_dim=embed_dim,
                           hidden_dim=int(doc.get("hidden", 64)),
                           out_dim=manifest.dim,
                           seed=int(doc.get("seed", 0)))
    return TextEncoder(config)
