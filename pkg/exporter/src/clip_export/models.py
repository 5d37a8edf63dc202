"""Embedding models and datasets behind the exporter.

Two backends:

* ``fake``: a deterministic stand-in that needs no downloads. Class names
  hash to unit "semantic" directions; template text adds a style offset;
  images scatter around their class direction behind a shared text-to-image
  gap. Good enough to exercise every byte of the export pipeline and to
  give the consumer a nontrivial reference accuracy to reproduce.
* real checkpoints: loaded lazily through open_clip (preferred, covers the
  ResNet-50 contrastive checkpoint) or transformers; datasets through
  torchvision. Imports happen inside the loaders so the fake path works on
  machines without the ML stack.
"""

from __future__ import annotations

import hashlib

import numpy as np


class ExportEnvironmentError(RuntimeError):
    """The requested model/dataset backend is not available here."""


CIFAR10_CLASSES = ["airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck"]


def _hash_rng(*parts: str) -> np.random.Generator:
    digest = hashlib.sha256("::".join(parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _unit(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


class FakeContrastiveModel:
    """Hash-seeded text/image embeddings with realistic cluster structure."""

    name = "fake"

    def __init__(self, dim: int = 64, style_scale: float = 0.25,
                 gap_scale: float = 0.3, noise_scale: float = 0.45,
                 seed: int = 0):
        self.dim = dim
        self.style_scale = style_scale
        self.gap_scale = gap_scale
        self.noise_scale = noise_scale
        self.seed = seed
        self._gap = _unit(_hash_rng(f"{seed}", "modality-gap")
                          .standard_normal(dim))

    def _semantic(self, class_name: str) -> np.ndarray:
        return _unit(_hash_rng(f"{self.seed}", "class", class_name)
                     .standard_normal(self.dim))

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        """The class name inside the text anchors it; the rest adds style."""
        out = np.empty((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            anchor = None
            for class_name in CIFAR10_CLASSES:
                if class_name in text:
                    anchor = self._semantic(class_name)
                    break
            if anchor is None:
                anchor = _unit(_hash_rng(f"{self.seed}", "text", text)
                               .standard_normal(self.dim))
            style = _hash_rng(f"{self.seed}", "style", text)\
                .standard_normal(self.dim)
            out[i] = _unit(anchor + self.style_scale * style)
        return out

    def encode_image(self, class_name: str, index: int) -> np.ndarray:
        anchor = self._semantic(class_name)
        noise = _hash_rng(f"{self.seed}", "image", class_name, str(index))\
            .standard_normal(self.dim)
        return _unit(anchor + self.gap_scale * self._gap
                     + self.noise_scale * noise)


class FakeDataset:
    """Round-robin labelled set over the ten standard small-image classes."""

    name = "synthetic"
    classes = CIFAR10_CLASSES

    def __init__(self, model: FakeContrastiveModel, size: int = 2000):
        self.model = model
        self.size = size

    def features_and_labels(self) -> tuple[np.ndarray, np.ndarray]:
        features = np.empty((self.size, self.model.dim), dtype=np.float64)
        labels = np.empty(self.size, dtype=np.uint32)
        for i in range(self.size):
            label = i % len(self.classes)
            features[i] = self.model.encode_image(self.classes[label], i)
            labels[i] = label
        return features, labels


# -- real backends ------------------------------------------------------------


class RealClipModel:
    """A pretrained contrastive checkpoint wrapped to numpy in/out."""

    def __init__(self, model_id: str):
        self.name = model_id
        try:
            import torch
        except ImportError as exc:
            raise ExportEnvironmentError(
                "real checkpoints need torch; install the [real] extra") from exc
        self._torch = torch
        try:
            import open_clip
        except ImportError:
            open_clip = None
        if open_clip is not None:
            try:
                model, _, preprocess = open_clip.create_model_and_transforms(
                    model_id, pretrained="openai")
                self._backend = "open_clip"
                self._model = model.eval()
                self._tokenize = open_clip.get_tokenizer(model_id)
                self.preprocess = preprocess
                return
            except Exception as exc:  # fall through to transformers
                last_error = exc
        else:
            last_error = ImportError("open_clip is not installed")
        try:
            from transformers import CLIPModel, CLIPProcessor
            self._model = CLIPModel.from_pretrained(model_id).eval()
            self._processor = CLIPProcessor.from_pretrained(model_id)
            self._backend = "transformers"
            self.preprocess = None
        except Exception as exc:
            raise ExportEnvironmentError(
                f"could not load checkpoint {model_id!r} via open_clip "
                f"({last_error}) or transformers ({exc}); checkpoint "
                "downloads need network access") from exc

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            if self._backend == "open_clip":
                tokens = self._tokenize(texts)
                emb = self._model.encode_text(tokens).float()
            else:
                inputs = self._processor(text=texts, return_tensors="pt",
                                         padding=True)
                emb = self._model.get_text_features(**inputs).float()
        emb = emb / emb.norm(dim=-1, keepdim=True)
        return emb.cpu().numpy().astype(np.float64)

    def encode_images(self, batch) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            if self._backend == "open_clip":
                emb = self._model.encode_image(batch).float()
            else:
                emb = self._model.get_image_features(pixel_values=batch).float()
        emb = emb / emb.norm(dim=-1, keepdim=True)
        return emb.cpu().numpy().astype(np.float64)


class RealDataset:
    """torchvision-backed labelled image set (currently: cifar10)."""

    def __init__(self, dataset_id: str, split: str, model: RealClipModel,
                 limit: int | None, root: str = "~/.cache/clip-export"):
        if dataset_id != "cifar10":
            raise ExportEnvironmentError(
                f"unknown real dataset {dataset_id!r}; supported: cifar10")
        try:
            import torchvision
        except ImportError as exc:
            raise ExportEnvironmentError(
                "real datasets need torchvision; install the [real] extra"
            ) from exc
        import os
        try:
            self._data = torchvision.datasets.CIFAR10(
                root=os.path.expanduser(root), train=(split == "train"),
                download=True, transform=model.preprocess)
        except Exception as exc:
            raise ExportEnvironmentError(
                f"could not obtain cifar10 ({exc}); dataset downloads need "
                "network access") from exc
        self.name = dataset_id
        self.classes = list(self._data.classes)
        self.limit = limit
        self._model = model

    def features_and_labels(self) -> tuple[np.ndarray, np.ndarray]:
        import torch
        total = len(self._data) if self.limit is None \
            else min(self.limit, len(self._data))
        loader = torch.utils.data.DataLoader(
            torch.utils.data.Subset(self._data, range(total)),
            batch_size=256, shuffle=False, num_workers=0)
        chunks, labels = [], []
        for images, targets in loader:
            chunks.append(self._model.encode_images(images))
            labels.append(targets.numpy())
        return np.concatenate(chunks), np.concatenate(labels).astype(np.uint32)


def build_model(model_id: str, dim: int, seed: int):
    if model_id == "fake":
        return FakeContrastiveModel(dim=dim, seed=seed)
    return RealClipModel(model_id)


def build_dataset(dataset_id: str, split: str, model, limit: int | None):
    if isinstance(model, FakeContrastiveModel):
        if dataset_id not in ("synthetic", "cifar10"):
            raise ExportEnvironmentError(
                "the fake model only serves the synthetic ten-class dataset")
        return FakeDataset(model, size=limit or 2000)
    return RealDataset(dataset_id, split, model, limit)
