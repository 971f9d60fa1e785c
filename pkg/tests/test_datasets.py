"""Synthetic generator and CSV/binary round-trip tests."""

import numpy as np
import pytest

from ferhead.datasets import (
    EXPRESSION_CLASSES,
    FeatureDataset,
    SynthSpec,
    default_action_dirs,
    generate,
    load_bin,
    load_csv,
    make_synth_spec,
    save_bin,
    save_csv,
)
from ferhead.errors import ContractViolation, DataFormatError
from ferhead.numerics import SplitMix64


def small_spec(**overrides):
    base = dict(
        n_classes=3,
        n_actions=4,
        feature_dim=12,
        noise_sigma=0.02,
        samples_per_class=5,
        seed=0,
    )
    base.update(overrides)
    return make_synth_spec(**base)


class TestGenerate:
    def test_row_count_and_nonnegativity(self):
        data = generate(small_spec())
        assert len(data) == 15
        assert np.all(data.features >= 0)
        np.testing.assert_array_equal(np.bincount(data.labels), [5, 5, 5])

    def test_deterministic(self):
        a = generate(small_spec())
        b = generate(small_spec())
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_noise_free_jitter_free_samples_identical_per_class(self):
        spec = small_spec(noise_sigma=0.0)
        spec.jitter = 0.0
        data = generate(spec)
        for k in range(3):
            rows = data.features[data.labels == k]
            for row in rows:
                np.testing.assert_array_equal(row, rows[0])

    def test_same_structure_different_seed_same_population(self):
        a = make_synth_spec(seed=0, structure_seed=5, feature_dim=16, n_actions=4)
        b = make_synth_spec(seed=9, structure_seed=5, feature_dim=16, n_actions=4)
        assert np.array_equal(a.action_dirs, b.action_dirs)
        assert np.array_equal(a.class_profiles, b.class_profiles)
        assert not np.array_equal(generate(a).features, generate(b).features)

    def test_nearest_profile_classifier_perfect_on_clean_data(self):
        """Orthonormal dirs + disjoint profiles + no noise => exact recovery."""
        rng = SplitMix64(1)
        dirs = default_action_dirs(3, 9, rng)  # disjoint blocks, orthonormal
        profiles = np.array(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        )
        spec = SynthSpec(
            action_dirs=dirs,
            class_profiles=profiles,
            noise_sigma=0.0,
            samples_per_class=20,
            seed=3,
            class_names=("a", "b", "c"),
        )
        data = generate(spec)
        # brute-force oracle: project each sample onto every action direction
        # and pick the class whose profile best matches (least squares)
        correct = 0
        for x, label in zip(data.features, data.labels):
            coords = dirs @ x
            errors = [np.linalg.norm(coords / max(coords.max(), 1e-12) - p / p.max()) for p in profiles]
            correct += int(np.argmin(errors) == label)
        assert correct == len(data)

    def test_identical_profiles_rejected(self):
        spec = small_spec()
        spec.class_profiles[1] = spec.class_profiles[0]
        with pytest.raises(ContractViolation, match="identical"):
            generate(spec)

    def test_non_unit_dirs_rejected(self):
        spec = small_spec()
        spec.action_dirs = spec.action_dirs * 2.0
        with pytest.raises(ContractViolation, match="unit"):
            generate(spec)

    def test_action_dirs_orthonormal(self):
        dirs = default_action_dirs(5, 20, SplitMix64(2))
        gram = dirs @ dirs.T
        np.testing.assert_allclose(gram, np.eye(5), atol=1e-12)


class TestCsvRoundTrip:
    def test_exact_roundtrip(self, tmp_path):
        data = generate(small_spec())
        path = tmp_path / "data.csv"
        save_csv(str(path), data)
        loaded = load_csv(str(path), data.class_names)
        assert np.array_equal(loaded.features, data.features)
        assert np.array_equal(loaded.labels, data.labels)

    def test_header_shape(self, tmp_path):
        data = generate(small_spec())
        path = tmp_path / "data.csv"
        save_csv(str(path), data)
        header = path.read_text().splitlines()[0]
        assert header.split(",")[0] == "label"
        assert header.split(",")[1] == "f_1"
        assert header.split(",")[-1] == f"f_{data.feature_dim}"

    def test_wrong_arity_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,f_1,f_2\n0,1.0,2.0\n1,3.0\n")
        with pytest.raises(DataFormatError, match=":3"):
            load_csv(str(path), ("a", "b"))

    def test_out_of_range_label(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,f_1\n9,1.0\n")
        with pytest.raises(DataFormatError, match="label 9"):
            load_csv(str(path))  # default 7 expression classes

    def test_non_numeric_cell_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,f_1\n0,1.0\n0,oops\n")
        with pytest.raises(DataFormatError, match=":3"):
            load_csv(str(path), ("a",))


class TestBinaryRoundTrip:
    def test_f32_roundtrip(self, tmp_path):
        data = generate(small_spec())
        path = tmp_path / "data.bin"
        save_bin(str(path), data)
        loaded = load_bin(str(path), data.class_names)
        np.testing.assert_array_equal(
            loaded.features, data.features.astype(np.float32).astype(np.float64)
        )
        assert np.array_equal(loaded.labels, data.labels)

    def test_exact_byte_layout(self, tmp_path):
        data = FeatureDataset(
            np.array([[1.5, -2.5]]), np.array([3]), EXPRESSION_CLASSES
        )
        path = tmp_path / "tiny.bin"
        save_bin(str(path), data)
        blob = path.read_bytes()
        # magic + version + N + P + K + 2 f32 features + 1 u32 label
        assert len(blob) == 4 + 4 + 4 + 4 + 4 + 2 * 4 + 4 == 32
        assert blob[:4] == b"FDRL"

    def test_truncation_is_format_error(self, tmp_path):
        data = generate(small_spec())
        path = tmp_path / "data.bin"
        save_bin(str(path), data)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(DataFormatError, match="expected"):
            load_bin(str(path))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"WHAT" + b"\x00" * 28)
        with pytest.raises(DataFormatError, match="magic"):
            load_bin(str(path))

    def test_bad_version(self, tmp_path):
        import struct

        path = tmp_path / "v9.bin"
        path.write_bytes(b"FDRL" + struct.pack("<4I", 9, 0, 0, 0))
        with pytest.raises(DataFormatError, match="version"):
            load_bin(str(path))


class TestFeatureDatasetValidation:
    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            FeatureDataset(np.zeros((3, 2)), np.zeros(2, dtype=int), ("a",))

    def test_label_range(self):
        with pytest.raises(ContractViolation):
            FeatureDataset(np.zeros((2, 2)), np.array([0, 5]), ("a", "b"))
