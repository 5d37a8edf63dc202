"""Cross-component contract: exporter-written files drive primary inference.

The exporter carries its own writer for the tensor container and the
manifest; these tests confirm that the primary reader decodes those bytes
verbatim and that ensemble inference reproduces the exporter's internally
computed reference accuracy.
"""

import json
import os

import numpy as np
import pytest

clip_export = pytest.importorskip(
    "clip_export", reason="the exporter package is not installed")

from promptdist.cli import main as cli_main
from promptdist.dataio import file_sha256, load_task, read_embedding
from promptdist.distribution import LossConfig, WeightSamples, estimate_distribution
from promptdist.autodiff import Tensor
from promptdist.inference import ensemble_weights


@pytest.fixture(scope="module")
def export_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("export") / "bundle")
    spec = clip_export.ExportSpec(dataset="synthetic", model="fake",
                                  templates=clip_export.load_templates("cifar10"),
                                  out_dir=out, limit=800, dim=32, seed=3)
    reference = clip_export.run_export(spec)
    return out, reference


def test_primary_reader_decodes_exporter_files(export_dir):
    out, _ = export_dir
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    for name, digest in manifest["checksums"].items():
        path = os.path.join(out, name)
        assert file_sha256(path) == digest, name
        if name.endswith(".pdle"):
            ours = read_embedding(path)
            theirs = clip_export.read_tensor(path)
            assert ours.dtype == theirs.dtype
            assert np.array_equal(ours, theirs), name


def test_manifest_loads_as_task(export_dir):
    out, _ = export_dir
    task = load_task(os.path.join(out, "manifest.json"))
    assert task.num_classes == 10
    assert task.test_z.shape == (800, 32)
    assert task.train_z.shape == (0, 32)
    norms = np.linalg.norm(task.test_z, axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-3)  # f32 storage tolerance


def test_ensemble_eval_matches_reference_exactly(export_dir, tmp_path):
    out, reference = export_dir
    assert cli_main(["--workdir", out, "eval", "--manifest", "manifest.json",
                     "--weight-sets", "class_weights.pdle",
                     "--infer", "ensemble", "--out", "ens_eval"]) == 0
    report = json.load(open(os.path.join(out, "ens_eval", "report.json")))
    # identical bytes, identical recipe: the accuracies agree exactly,
    # well inside the 0.1% cross-implementation budget
    assert report["accuracy"] == reference["ensemble_accuracy"]


def test_mean_of_distribution_near_ensemble(export_dir):
    out, reference = export_dir
    assert cli_main(["--workdir", out, "eval", "--manifest", "manifest.json",
                     "--weight-sets", "class_weights.pdle",
                     "--infer", "mean", "--out", "mean_eval"]) == 0
    report = json.load(open(os.path.join(out, "mean_eval", "report.json")))
    assert abs(report["accuracy"] - reference["ensemble_accuracy"]) <= 0.01


def test_zero_shot_single_set_matches_first_template(export_dir):
    out, reference = export_dir
    assert cli_main(["--workdir", out, "eval", "--manifest", "manifest.json",
                     "--weight-sets", "class_weights.pdle",
                     "--infer", "zeroshot", "--out", "zs_eval"]) == 0
    report = json.load(open(os.path.join(out, "zs_eval", "report.json")))
    assert report["accuracy"] == reference["single_template_accuracy"]


def test_ensemble_recipe_agreement(export_dir):
    """Both sides build the same combined classifier from the same bytes."""
    out, _ = export_dir
    sets = read_embedding(os.path.join(out, "class_weights.pdle"))
    combined = ensemble_weights(sets.astype(np.float64))
    theirs = clip_export.read_tensor(
        os.path.join(out, "class_weights.pdle")).astype(np.float64)
    mean = theirs.mean(axis=0)
    mean /= np.linalg.norm(mean, axis=1, keepdims=True)
    assert np.array_equal(combined, mean)
