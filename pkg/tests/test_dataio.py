"""Tensor container layout, manifests, synthetic tasks, and subsampling."""

import json
import os
import struct

import numpy as np
import pytest

from promptdist.dataio import (DataError, DataFormatError, TaskManifest,
                               file_sha256, gen_synthetic_task, load_task,
                               read_embedding, save_task, subsample_indices,
                               write_embedding)
from promptdist.encoder import EncoderConfig, TextEncoder
from promptdist.inference import MetricKind
from promptdist.rng import PRNG_ALGORITHM


@pytest.fixture(scope="module")
def encoder():
    return TextEncoder(EncoderConfig(embed_dim=16, hidden_dim=32, out_dim=12,
                                     seed=0))


class TestEmbeddingFile:
    def test_round_trip_all_dtypes(self, tmp_path):
        rng = np.random.default_rng(0)
        cases = [("f64", rng.normal(size=(3, 4, 2))),
                 ("f32", rng.normal(size=(5,)).astype(np.float32)),
                 ("u32", rng.integers(0, 1000, size=(7,)).astype(np.uint32))]
        for dtype, tensor in cases:
            path = tmp_path / f"t_{dtype}.pdle"
            write_embedding(path, tensor, dtype)
            back = read_embedding(path)
            assert back.shape == tensor.shape
            assert np.array_equal(back, tensor.astype(back.dtype))

    def test_f64_to_f32_rounds_to_nearest_even(self, tmp_path):
        values = np.array([1.0 + 2**-24, 1.0 + 3 * 2**-24])
        path = tmp_path / "round.pdle"
        write_embedding(path, values, "f32")
        back = read_embedding(path)
        assert np.array_equal(back, values.astype(np.float32))
        assert back[0] == np.float32(1.0)  # halfway rounds to even

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "m.pdle"
        write_embedding(path, np.zeros(2), "f64")
        with open(path, "rb") as fh:
            assert fh.read(4) == b"\x50\x44\x4c\x45"

    def test_header_arithmetic_rank1_f32(self, tmp_path):
        path = tmp_path / "h.pdle"
        write_embedding(path, np.zeros(3, dtype=np.float32), "f32")
        assert os.path.getsize(path) == 4 + 4 + 4 + 4 + 8 + 12  # 36 bytes

    def test_corrupted_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pdle"
        write_embedding(path, np.zeros(2), "f64")
        blob = bytearray(path.read_bytes())
        blob[0] = 0x58
        path.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError, match="magic"):
            read_embedding(path)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "ver.pdle"
        write_embedding(path, np.zeros(2), "f64")
        blob = bytearray(path.read_bytes())
        struct.pack_into("<I", blob, 4, 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError, match="version"):
            read_embedding(path)

    def test_unknown_dtype_code_rejected(self, tmp_path):
        path = tmp_path / "dt.pdle"
        write_embedding(path, np.zeros(2), "f64")
        blob = bytearray(path.read_bytes())
        struct.pack_into("<I", blob, 8, 7)
        path.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError, match="dtype"):
            read_embedding(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "tr.pdle"
        write_embedding(path, np.zeros(4), "f64")
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(DataFormatError, match="payload"):
            read_embedding(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "tg.pdle"
        write_embedding(path, np.zeros(4), "f64")
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(DataFormatError, match="payload"):
            read_embedding(path)

    def test_non_finite_refused(self, tmp_path):
        with pytest.raises(DataFormatError):
            write_embedding(tmp_path / "nan.pdle", np.array([np.nan]), "f64")

    def test_bad_dtype_name(self, tmp_path):
        with pytest.raises(DataFormatError):
            write_embedding(tmp_path / "x.pdle", np.zeros(2), "f16")

    def test_scalar_rank0_round_trip(self, tmp_path):
        path = tmp_path / "s.pdle"
        write_embedding(path, np.float64(3.5), "f64")
        back = read_embedding(path)
        assert back.shape == ()
        assert back == 3.5


class TestSyntheticTask:
    def test_shapes_and_counts(self, encoder):
        task = gen_synthetic_task(4, 3, 12, 0.5, seed=0, encoder=encoder)
        assert task.num_classes == 4
        assert task.train_z.shape == (12, 12)
        assert task.test_z.shape == (400, 12)
        assert np.all(np.bincount(task.train_y) == 3)
        assert np.all(np.bincount(task.test_y) == 100)
        assert task.shots == 3

    def test_unit_norm_features(self, encoder):
        task = gen_synthetic_task(3, 2, 12, 0.8, seed=1, encoder=encoder)
        for z in (task.train_z, task.test_z):
            assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)

    def test_zero_noise_gives_perfect_zero_shot(self, encoder):
        from promptdist.training import zero_shot_accuracy
        task = gen_synthetic_task(5, 1, 12, 0.0, seed=2, encoder=encoder)
        assert zero_shot_accuracy(task, encoder) == 1.0
        # at zero noise every image sits exactly on its anchor
        anchors = np.stack([encoder.encode_text(task.name_tokens[c]).data
                            for c in range(5)])
        assert np.array_equal(task.test_z, anchors[task.test_y])

    def test_huge_noise_near_chance(self, encoder):
        from promptdist.training import zero_shot_accuracy
        accs = [zero_shot_accuracy(
            gen_synthetic_task(4, 1, 12, 1000.0, seed=s, encoder=encoder), encoder)
            for s in range(5)]
        assert abs(np.mean(accs) - 0.25) < 0.08

    def test_same_seed_identical_bytes(self, encoder, tmp_path):
        for run in ("a", "b"):
            task = gen_synthetic_task(3, 2, 12, 0.6, seed=9, encoder=encoder)
            save_task(task, tmp_path / run)
        for name in os.listdir(tmp_path / "a"):
            assert file_sha256(tmp_path / "a" / name) == \
                file_sha256(tmp_path / "b" / name), name

    def test_rejects_bad_parameters(self, encoder):
        with pytest.raises(ValueError):
            gen_synthetic_task(1, 1, 12, 0.5, seed=0, encoder=encoder)
        with pytest.raises(ValueError):
            gen_synthetic_task(3, 0, 12, 0.5, seed=0, encoder=encoder)
        with pytest.raises(ValueError):
            gen_synthetic_task(3, 1, 12, -0.5, seed=0, encoder=encoder)


class TestManifestAndLoad:
    def test_save_writes_manifest_plus_five_tensors(self, encoder, tmp_path):
        task = gen_synthetic_task(4, 2, 12, 0.6, seed=3, encoder=encoder)
        manifest_path = save_task(task, tmp_path, encoder_config=encoder.config)
        files = sorted(os.listdir(tmp_path))
        assert files == ["manifest.json", "name_tokens.pdle", "test_features.pdle",
                         "test_labels.pdle", "train_features.pdle",
                         "train_labels.pdle"]
        doc = json.loads(open(manifest_path).read())
        for key in ("version", "dim", "classes", "name_token_files",
                    "train_features", "train_labels", "test_features",
                    "test_labels", "shots", "metric", "seed", "prng"):
            assert key in doc
        assert doc["prng"] == PRNG_ALGORITHM
        assert doc["encoder"]["kind"] == "meanpool"

    def test_load_round_trip(self, encoder, tmp_path):
        task = gen_synthetic_task(4, 2, 12, 0.6, seed=4, encoder=encoder)
        manifest_path = save_task(task, tmp_path, encoder_config=encoder.config)
        loaded = load_task(manifest_path)
        assert np.array_equal(loaded.train_z, task.train_z)
        assert np.array_equal(loaded.test_y, task.test_y)
        assert loaded.metric is MetricKind.ACCURACY
        for c in range(4):
            assert np.array_equal(loaded.name_tokens[c], task.name_tokens[c])

    def test_metric_string_mapping(self, encoder, tmp_path):
        task = gen_synthetic_task(3, 1, 12, 0.6, seed=5, encoder=encoder,
                                  metric=MetricKind.MEAN_PER_CLASS)
        manifest_path = save_task(task, tmp_path)
        doc = json.loads(open(manifest_path).read())
        assert doc["metric"] == "mean-per-class"
        assert load_task(manifest_path).metric is MetricKind.MEAN_PER_CLASS

    def test_shot_subsampling_count(self, encoder, tmp_path):
        task = gen_synthetic_task(5, 16, 12, 0.6, seed=6, encoder=encoder)
        manifest_path = save_task(task, tmp_path)
        loaded = load_task(manifest_path, shots=1)
        assert loaded.train_z.shape[0] == 5
        assert np.array_equal(np.sort(np.unique(loaded.train_y)), np.arange(5))

    def test_shot_subsampling_too_many(self, encoder, tmp_path):
        task = gen_synthetic_task(3, 2, 12, 0.6, seed=7, encoder=encoder)
        manifest_path = save_task(task, tmp_path)
        with pytest.raises(DataError):
            load_task(manifest_path, shots=5)

    def test_dimension_mismatch_detected(self, encoder, tmp_path):
        task = gen_synthetic_task(3, 2, 12, 0.6, seed=8, encoder=encoder)
        manifest_path = save_task(task, tmp_path)
        write_embedding(tmp_path / "train_features.pdle",
                        np.zeros((6, 11)), "f64")
        with pytest.raises(DataError, match="shape"):
            load_task(manifest_path)

    def test_missing_file_detected(self, encoder, tmp_path):
        task = gen_synthetic_task(3, 2, 12, 0.6, seed=9, encoder=encoder)
        manifest_path = save_task(task, tmp_path)
        os.remove(tmp_path / "test_labels.pdle")
        with pytest.raises(DataError, match="missing"):
            load_task(manifest_path)

    def test_manifest_missing_field(self, tmp_path):
        with pytest.raises(DataFormatError, match="missing"):
            TaskManifest.from_json(json.dumps({"version": 1}))

    def test_label_range_validated(self, encoder, tmp_path):
        task = gen_synthetic_task(3, 2, 12, 0.6, seed=10, encoder=encoder)
        manifest_path = save_task(task, tmp_path)
        write_embedding(tmp_path / "train_labels.pdle",
                        np.array([0, 1, 2, 3, 3, 3], dtype=np.uint32), "u32")
        with pytest.raises(DataError, match="class"):
            load_task(manifest_path)

    def test_per_class_token_files_supported(self, encoder, tmp_path):
        task = gen_synthetic_task(3, 1, 12, 0.6, seed=11, encoder=encoder)
        manifest_path = save_task(task, tmp_path)
        # split the stacked token file into one file per class
        stacked = read_embedding(tmp_path / "name_tokens.pdle")
        names = []
        for c in range(3):
            name = f"class_{c}_tokens.pdle"
            write_embedding(tmp_path / name, stacked[c], "f64")
            names.append(name)
        doc = json.loads(open(manifest_path).read())
        doc["name_token_files"] = names
        with open(manifest_path, "w") as fh:
            json.dump(doc, fh)
        loaded = load_task(manifest_path)
        for c in range(3):
            assert np.array_equal(loaded.name_tokens[c], task.name_tokens[c])


class TestSubsampleIndices:
    def test_deterministic_and_exact_count(self):
        labels = np.repeat(np.arange(4), 16)
        a = subsample_indices(labels, 3, seed=1)
        b = subsample_indices(labels, 3, seed=1)
        assert np.array_equal(a, b)
        assert len(a) == 12
        assert np.all(np.bincount(labels[a]) == 3)

    def test_different_seeds_select_differently(self):
        labels = np.repeat(np.arange(4), 16)
        a = subsample_indices(labels, 3, seed=1)
        b = subsample_indices(labels, 3, seed=2)
        assert not np.array_equal(a, b)

    def test_frozen_reference_selection(self):
        """Pinned output of the documented shuffle (sort per-class indices,
        Fisher-Yates seeded by derive_seed(seed, "shot-subsample", class),
        take the first `shots`). Guards the cross-implementation
        index-selection contract against accidental algorithm changes."""
        labels = np.repeat(np.arange(2), 8)
        picked = subsample_indices(labels, 4, seed=42)
        assert picked.tolist() == [6, 2, 3, 4, 8, 10, 13, 15]

    def test_insufficient_examples(self):
        labels = np.array([0, 0, 1])
        with pytest.raises(DataError):
            subsample_indices(labels, 2, seed=0)
