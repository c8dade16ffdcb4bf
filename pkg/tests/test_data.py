import numpy as np
import pytest

from changekit.data import (
    assemble_patches,
    crop_to_patches,
    filter_small_regions,
    load_manifest,
    load_sample,
)
from changekit.synth import SynthConfig, generate_synthetic
from changekit.types import default_taxonomy


class TestCropToPatches:
    def test_divisible_row_major(self):
        label = np.arange(512 * 512, dtype=np.int64).reshape(512, 512) % 6
        patches = crop_to_patches(label, 256)
        assert len(patches) == 4
        # row-major: patch 1 sits right of patch 0
        np.testing.assert_array_equal(patches[1], label[:256, 256:])
        np.testing.assert_array_equal(patches[2], label[256:, :256])

    def test_identity_single_patch(self):
        img = np.random.default_rng(0).random((256, 256, 3))
        patches = crop_to_patches(img, 256)
        assert len(patches) == 1
        np.testing.assert_array_equal(patches[0], img)

    def test_padding_labels_with_ignore(self):
        label = np.random.default_rng(0).integers(0, 6, size=(300, 300)).astype(np.int64)
        patches = crop_to_patches(label, 256)
        assert len(patches) == 4
        recon = assemble_patches(patches, 2, 2)
        np.testing.assert_array_equal(recon[:300, :300], label)
        assert (recon[300:, :] == 255).all()
        assert (recon[:, 300:] == 255).all()

    def test_padding_images_with_zero(self):
        img = np.random.default_rng(0).random((40, 70, 3))
        patches = crop_to_patches(img, 32)
        recon = assemble_patches(patches, 2, 3)
        np.testing.assert_array_equal(recon[:40, :70], img)
        assert (recon[40:, :] == 0).all()

    def test_crop_assemble_identity(self):
        rng = np.random.default_rng(3)
        img = rng.random((128, 192, 3))
        recon = assemble_patches(crop_to_patches(img, 64), 2, 3)
        np.testing.assert_array_equal(recon, img)

    def test_bad_patch_size(self):
        with pytest.raises(ValueError):
            crop_to_patches(np.zeros((8, 8)), 0)


class TestFilterSmallRegions:
    def test_removes_99px_component(self):
        label = np.zeros((64, 64), dtype=np.int64)
        label[0:9, 0:11] = 2  # 99 pixels
        assert label.sum() > 0
        out = filter_small_regions(label, 100)
        assert (out == 0).all()

    def test_keeps_100px_component(self):
        label = np.zeros((64, 64), dtype=np.int64)
        label[0:10, 0:10] = 2  # exactly 100 pixels
        out = filter_small_regions(label, 100)
        np.testing.assert_array_equal(out, label)

    def test_all_zero_unchanged(self):
        label = np.zeros((32, 32), dtype=np.int64)
        np.testing.assert_array_equal(filter_small_regions(label, 100), label)

    def test_eight_connectivity_joins_diagonals(self):
        # two 60-px squares touching at one corner form a single 120-px
        # 8-connected component and survive as a whole
        label = np.zeros((64, 64), dtype=np.int64)
        label[0:6, 0:10] = 3
        label[6:12, 10:20] = 3
        out = filter_small_regions(label, 100)
        np.testing.assert_array_equal(out, label)

    def test_classes_filtered_independently(self):
        label = np.zeros((64, 64), dtype=np.int64)
        label[0:5, 0:10] = 1  # 50 px of class 1
        label[0:5, 10:20] = 2  # adjacent 50 px of class 2
        out = filter_small_regions(label, 100)
        assert (out == 0).all()

    def test_ignore_pixels_untouched(self):
        label = np.zeros((32, 32), dtype=np.int64)
        label[0, 0] = 255
        label[5:7, 5:7] = 4  # tiny region, removed
        out = filter_small_regions(label, 100)
        assert out[0, 0] == 255
        assert (out[5:7, 5:7] == 0).all()

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        label = rng.integers(0, 6, size=(96, 96)).astype(np.int64)
        once = filter_small_regions(label, 40)
        twice = filter_small_regions(once, 40)
        np.testing.assert_array_equal(once, twice)


class TestManifest:
    def test_complete_triples(self, tmp_path):
        generate_synthetic(SynthConfig(n_samples=5, seed=1, patch_size=64), tmp_path)
        manifest = load_manifest(tmp_path, "train")
        assert len(manifest) == 5
        assert manifest.rejects == []

    def test_missing_label_rejected(self, tmp_path):
        generate_synthetic(SynthConfig(n_samples=5, seed=1, patch_size=64), tmp_path)
        (tmp_path / "train" / "label" / "train_0002.png").unlink()
        manifest = load_manifest(tmp_path, "train")
        assert len(manifest) == 4
        assert manifest.rejects == [("train_0002", "missing label file")]

    def test_empty_root_warns(self, tmp_path):
        with pytest.warns(UserWarning):
            manifest = load_manifest(tmp_path, "train")
        assert manifest.entries == []

    def test_prompt_sidecar_attached(self, tmp_path):
        generate_synthetic(SynthConfig(n_samples=3, seed=2, patch_size=64), tmp_path)
        manifest = load_manifest(tmp_path, "train")
        sample = load_sample(manifest, manifest.entries[0])
        assert sample.prompt is not None
        assert sample.prompt.scene.value == "farmland"

    def test_split_entries_disjoint(self, tmp_path):
        generate_synthetic(SynthConfig(n_samples=8, seed=3, patch_size=64), tmp_path)
        tax = default_taxonomy("SCD")
        ids = [set(load_manifest(tmp_path, s, tax).entries) for s in ("train", "val", "test")]
        assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])

    def test_bad_split_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            load_manifest(tmp_path, "dev")
