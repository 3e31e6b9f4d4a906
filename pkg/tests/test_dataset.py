import json

import numpy as np
import pytest

from robustlat.dataset import (
    Corpus,
    SyntheticSpec,
    generate,
    load_images,
    quantize8,
    save_images,
)
from robustlat.metrics import FeatureExtractorSpec, extract_features


@pytest.fixture(scope="module")
def small_corpus():
    return generate(SyntheticSpec(side=32, num_classes=3, per_class=4, seed=11))


class TestGenerate:
    def test_deterministic(self, small_corpus):
        again = generate(SyntheticSpec(side=32, num_classes=3, per_class=4, seed=11))
        assert np.array_equal(again.images, small_corpus.images)
        assert np.array_equal(again.labels, small_corpus.labels)

    def test_seed_changes_content(self, small_corpus):
        other = generate(SyntheticSpec(side=32, num_classes=3, per_class=4, seed=12))
        assert not np.array_equal(other.images, small_corpus.images)

    def test_counts_and_labels(self):
        corpus = generate(SyntheticSpec(side=32, num_classes=2, per_class=4, seed=0))
        assert len(corpus) == 8
        assert corpus.labels.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]

    def test_pixels_in_unit_range(self, small_corpus):
        assert small_corpus.images.min() >= 0.0
        assert small_corpus.images.max() <= 1.0

    def test_classes_separate_in_feature_space(self):
        corpus = generate(SyntheticSpec(side=32, num_classes=2, per_class=8, seed=5))
        spec = FeatureExtractorSpec(kind="random_projection", out_dim=16, seed=1)
        feats = extract_features(corpus.images, spec)
        mean0 = feats[corpus.labels == 0].mean(axis=0)
        mean1 = feats[corpus.labels == 1].mean(axis=0)
        assert np.linalg.norm(mean0 - mean1) > 0.0

    def test_num_classes_bounded_by_families(self):
        with pytest.raises(ValueError, match="num_classes"):
            SyntheticSpec(num_classes=99)

    def test_spec_json_round_trip(self):
        spec = SyntheticSpec(side=16, num_classes=4, per_class=2, seed=3, noise=0.1)
        assert SyntheticSpec.from_json(spec.to_json()) == spec


class TestSaveLoad:
    def test_round_trip_bit_identical_after_quantization(self, small_corpus, tmp_path):
        save_images(small_corpus, tmp_path / "corpus")
        loaded = load_images(tmp_path / "corpus")
        assert np.array_equal(loaded.images, quantize8(small_corpus.images))
        assert np.array_equal(loaded.labels, small_corpus.labels)
        assert loaded.spec == small_corpus.spec

    def test_file_naming_and_count(self, small_corpus, tmp_path):
        save_images(small_corpus, tmp_path / "corpus")
        pngs = sorted(p.name for p in (tmp_path / "corpus").glob("*.png"))
        assert len(pngs) == 12
        assert "class_0_idx_0.png" in pngs
        assert "class_2_idx_3.png" in pngs

    def test_missing_manifest_error_names_path(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(FileNotFoundError, match="manifest"):
            load_images(tmp_path / "empty")

    def test_missing_image_error(self, small_corpus, tmp_path):
        save_images(small_corpus, tmp_path / "corpus")
        (tmp_path / "corpus" / "class_0_idx_0.png").unlink()
        with pytest.raises(FileNotFoundError, match="class_0_idx_0.png"):
            load_images(tmp_path / "corpus")

    def test_stray_files_ignored(self, small_corpus, tmp_path):
        save_images(small_corpus, tmp_path / "corpus")
        first = load_images(tmp_path / "corpus")
        # a file not in the manifest must not change evaluation order or content
        (tmp_path / "corpus" / "aaa_stray.png").write_bytes(
            (tmp_path / "corpus" / "class_0_idx_0.png").read_bytes()
        )
        second = load_images(tmp_path / "corpus")
        assert np.array_equal(first.images, second.images)
        assert np.array_equal(first.labels, second.labels)

    def test_manifest_order_defines_evaluation_order(self, small_corpus, tmp_path):
        save_images(small_corpus, tmp_path / "corpus")
        manifest_path = tmp_path / "corpus" / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["images"] = manifest["images"][::-1]
        manifest_path.write_text(json.dumps(manifest))
        reversed_corpus = load_images(tmp_path / "corpus")
        assert reversed_corpus.labels.tolist() == small_corpus.labels.tolist()[::-1]
        assert np.array_equal(
            reversed_corpus.images[::-1], quantize8(small_corpus.images)
        )

    def test_save_is_deterministic(self, small_corpus, tmp_path):
        save_images(small_corpus, tmp_path / "a")
        save_images(small_corpus, tmp_path / "b")
        for p in sorted((tmp_path / "a").iterdir()):
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
