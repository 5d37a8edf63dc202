"""Hand-crafted prompt template sets.

Each template contains exactly one ``{}`` placeholder for the class name.
``cifar10`` and ``imagenet`` are the published template lists that shipped
with the original contrastive vision-language release; ``single`` is the
default one-template fallback.
"""

from __future__ import annotations

import hashlib

SINGLE = ["a photo of a {}."]

CIFAR10 = [
    "a photo of a {}.",
    "a blurry photo of a {}.",
    "a black and white photo of a {}.",
    "a low contrast photo of a {}.",
    "a high contrast photo of a {}.",
    "a bad photo of a {}.",
    "a good photo of a {}.",
    "a photo of a small {}.",
    "a photo of a big {}.",
    "a photo of the {}.",
    "a blurry photo of the {}.",
    "a black and white photo of the {}.",
    "a low contrast photo of the {}.",
    "a high contrast photo of the {}.",
    "a bad photo of the {}.",
    "a good photo of the {}.",
    "a photo of the small {}.",
    "a photo of the big {}.",
]

IMAGENET = [
    "a bad photo of a {}.", "a photo of many {}.", "a sculpture of a {}.",
    "a photo of the hard to see {}.", "a low resolution photo of the {}.",
    "a rendering of a {}.", "graffiti of a {}.", "a bad photo of the {}.",
    "a cropped photo of the {}.", "a tattoo of a {}.",
    "the embroidered {}.", "a photo of a hard to see {}.",
    "a bright photo of a {}.", "a photo of a clean {}.",
    "a photo of a dirty {}.", "a dark photo of the {}.",
    "a drawing of a {}.", "a photo of my {}.", "the plastic {}.",
    "a photo of the cool {}.", "a close-up photo of a {}.",
    "a black and white photo of the {}.", "a painting of the {}.",
    "a painting of a {}.", "a pixelated photo of the {}.",
    "a sculpture of the {}.", "a bright photo of the {}.",
    "a cropped photo of a {}.", "a plastic {}.",
    "a photo of the dirty {}.", "a jpeg corrupted photo of a {}.",
    "a blurry photo of the {}.", "a photo of the {}.",
    "a good photo of the {}.", "a rendering of the {}.",
    "a {} in a video game.", "a photo of one {}.", "a doodle of a {}.",
    "a close-up photo of the {}.", "a photo of a {}.",
    "the origami {}.", "the {} in a video game.", "a sketch of a {}.",
    "a doodle of the {}.", "a origami {}.",
    "a low resolution photo of a {}.", "the toy {}.",
    "a rendition of the {}.", "a photo of the clean {}.",
    "a photo of a large {}.", "a rendition of a {}.",
    "a photo of a nice {}.", "a photo of a weird {}.",
    "a blurry photo of a {}.", "a cartoon {}.", "art of a {}.",
    "a sketch of the {}.", "a embroidered {}.",
    "a pixelated photo of a {}.", "itap of the {}.",
    "a jpeg corrupted photo of the {}.", "a good photo of a {}.",
    "a plushie {}.", "a photo of the nice {}.",
    "a photo of the small {}.", "a photo of the weird {}.",
    "the cartoon {}.", "art of the {}.", "a drawing of the {}.",
    "a photo of the large {}.", "a black and white photo of a {}.",
    "the plushie {}.", "a dark photo of a {}.", "itap of a {}.",
    "graffiti of the {}.", "a toy {}.", "itap of my {}.",
    "a photo of a cool {}.", "a photo of a small {}.", "a tattoo of the {}.",
]

BUILTIN = {"single": SINGLE, "cifar10": CIFAR10, "imagenet": IMAGENET}


class TemplateError(ValueError):
    pass


def validate_templates(templates: list[str]) -> list[str]:
    if not templates:
        raise TemplateError("template list is empty")
    for template in templates:
        if template.count("{}") != 1:
            raise TemplateError(
                f"template must contain exactly one {{}} placeholder: "
                f"{template!r}")
    return templates


def load_templates(spec: str) -> list[str]:
    """A builtin set name, or a path to a file with one template per line."""
    if spec in BUILTIN:
        return validate_templates(list(BUILTIN[spec]))
    with open(spec, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    return validate_templates(lines)


def templates_hash(templates: list[str]) -> str:
    digest = hashlib.sha256()
    for template in templates:
        digest.update(template.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()
