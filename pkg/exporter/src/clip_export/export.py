"""Export orchestration: class weights, image features, manifest, reference.

The exporter writes everything the consumer needs for inference on real
features:

    class_weights.pdle   [num_templates, C, d]  f32, unit rows
    test_features.pdle   [N, d]                 f32, unit rows
    test_labels.pdle     [N]                    u32
    train_features.pdle  [0, d]                 f32 (inference-only export)
    train_labels.pdle    [0]                    u32
    name_tokens.pdle     [C, 1, 8]              f32 zeros (placeholder: raw
                                                token embeddings are never
                                                exported)
    manifest.json        consumer-compatible task manifest + provenance
    reference.json       internally computed accuracies for cross-checking

``reference_zero_shot`` recomputes its accuracies from the files as
written (read back, cast to f64), so a consumer that follows the same
recipe on the same bytes reproduces the reference exactly.
"""

from __future__ import annotations

import json
import os
import platform
from dataclasses import dataclass, field

import numpy as np

from .models import build_dataset, build_model
from .templates import load_templates, templates_hash, validate_templates
from .tensorfile import read_tensor, sha256_of, write_tensor

MANIFEST_VERSION = 1
PUBLISHED_ZERO_SHOT = {("cifar10", "RN50"): 0.716}


@dataclass
class ExportSpec:
    dataset: str = "synthetic"
    model: str = "fake"
    templates: list[str] = field(default_factory=lambda: load_templates("single"))
    out_dir: str = "export"
    split: str = "test"
    limit: int | None = None
    dim: int = 64          # fake-model embedding width; real models fix their own
    seed: int = 0

    def __post_init__(self):
        validate_templates(self.templates)
        if self.split not in ("test", "train"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.limit is not None and self.limit < 1:
            raise ValueError("limit must be positive")


def export_class_weights(spec: ExportSpec, model, class_names: list[str]) -> np.ndarray:
    """Encode template(class) for every pair; write [P, C, d] f32."""
    rows = []
    for template in spec.templates:
        texts = [template.format(name) for name in class_names]
        rows.append(model.encode_texts(texts))
    stacked = np.stack(rows)  # (P, C, d)
    write_tensor(os.path.join(spec.out_dir, "class_weights.pdle"),
                 stacked, "f32")
    return stacked


def export_image_features(spec: ExportSpec, dataset) -> tuple[np.ndarray, np.ndarray]:
    """Write the split's features and labels plus empty train placeholders."""
    features, labels = dataset.features_and_labels()
    out = spec.out_dir
    write_tensor(os.path.join(out, "test_features.pdle"), features, "f32")
    write_tensor(os.path.join(out, "test_labels.pdle"), labels, "u32")
    dim = features.shape[1]
    write_tensor(os.path.join(out, "train_features.pdle"),
                 np.zeros((0, dim)), "f32")
    write_tensor(os.path.join(out, "train_labels.pdle"),
                 np.zeros((0,), dtype=np.uint32), "u32")
    write_tensor(os.path.join(out, "name_tokens.pdle"),
                 np.zeros((len(dataset.classes), 1, 8)), "f32")
    return features, labels


def reference_zero_shot(out_dir: str) -> dict:
    """Ensemble and single-template accuracies from the files as written."""
    weights = read_tensor(os.path.join(out_dir, "class_weights.pdle"))
    features = read_tensor(os.path.join(out_dir, "test_features.pdle"))
    labels = read_tensor(os.path.join(out_dir, "test_labels.pdle"))
    weights = weights.astype(np.float64)
    features = features.astype(np.float64)

    mean = weights.mean(axis=0)
    mean /= np.linalg.norm(mean, axis=1, keepdims=True)
    ensemble_pred = np.argmax(features @ mean.T, axis=1)
    single_pred = np.argmax(features @ weights[0].T, axis=1)
    return {
        "ensemble_accuracy": float((ensemble_pred == labels).mean()),
        "single_template_accuracy": float((single_pred == labels).mean()),
        "num_examples": int(labels.shape[0]),
        "num_templates": int(weights.shape[0]),
    }


def _versions() -> dict:
    versions = {"python": platform.python_version(), "numpy": np.__version__}
    try:
        import torch
        versions["torch"] = torch.__version__
    except ImportError:
        pass
    try:
        import open_clip
        versions["open_clip"] = getattr(open_clip, "__version__", "unknown")
    except ImportError:
        pass
    return versions


def run_export(spec: ExportSpec) -> dict:
    """End-to-end export; returns the reference document."""
    os.makedirs(spec.out_dir, exist_ok=True)
    model = build_model(spec.model, spec.dim, spec.seed)
    dataset = build_dataset(spec.dataset, spec.split, model, spec.limit)
    class_names = list(dataset.classes)

    weights = export_class_weights(spec, model, class_names)
    features, labels = export_image_features(spec, dataset)
    if weights.shape[2] != features.shape[1]:
        raise ValueError("text and image embedding widths disagree")

    reference = reference_zero_shot(spec.out_dir)
    reference.update({
        "dataset": spec.dataset, "model": spec.model, "split": spec.split,
        "templates_hash": templates_hash(spec.templates),
        "versions": _versions(),
    })
    published = PUBLISHED_ZERO_SHOT.get((spec.dataset, spec.model))
    if published is not None and spec.limit is None:
        reference["published_zero_shot"] = published

    files = ["class_weights.pdle", "test_features.pdle", "test_labels.pdle",
             "train_features.pdle", "train_labels.pdle", "name_tokens.pdle"]
    manifest = {
        "version": MANIFEST_VERSION,
        "dim": int(features.shape[1]),
        "classes": class_names,
        "name_token_files": ["name_tokens.pdle"],
        "train_features": "train_features.pdle",
        "train_labels": "train_labels.pdle",
        "test_features": "test_features.pdle",
        "test_labels": "test_labels.pdle",
        "shots": 0,
        "metric": "accuracy",
        "seed": spec.seed,
        "prng": "sha256-seeded-pcg64-v1",
        "model": model.name,
        "dataset": spec.dataset,
        "split": spec.split,
        "templates": spec.templates,
        "templates_hash": templates_hash(spec.templates),
        "weight_sets": "class_weights.pdle",
        "checksums": {name: sha256_of(os.path.join(spec.out_dir, name))
                      for name in files},
        "versions": _versions(),
    }
    with open(os.path.join(spec.out_dir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(os.path.join(spec.out_dir, "reference.json"), "w",
              encoding="utf-8") as fh:
        json.dump(reference, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return reference
