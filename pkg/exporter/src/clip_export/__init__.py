"""One-shot exporter of pretrained vision-language features.

Writes per-template class weights, image features, and labels in the
promptdist tensor/manifest formats, together with an internally computed
zero-shot reference for cross-checking the consumer.
"""

__version__ = "0.1.0"

from .export import ExportSpec, reference_zero_shot, run_export  # noqa: F401
from .models import FakeContrastiveModel, FakeDataset  # noqa: F401
from .templates import load_templates, templates_hash  # noqa: F401
from .tensorfile import read_tensor, write_tensor  # noqa: F401
