"""Tests for dataset sources: synthetic images, PNG directories, manifests and tiles."""

import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from fre_seg.errors import ConfigError, DatasetError, LabelError, ShapeError
from fre_seg.models import DatasetSplit, Sample, SyntheticSpec
from fre_seg.sources import (
    LocalPNGSource,
    SyntheticSource,
    crop_tiles,
    generate,
    hash_split,
    load_dataset,
    parse_manifest,
    proportional_split,
    save_dataset,
    split_samples,
    stitch_tiles,
    tile_samples,
)
from fre_seg.sources.local_png import read_image, write_image
from fre_seg.sources.splits import format_manifest
from fre_seg.sources.synthetic import CLASS_BANDS, class_frequencies, render_sample


class TestSynthetic:
    """Tests for the synthetic generator."""

    def test_deterministic(self):
        spec = SyntheticSpec(image_size=32, seed=4)
        a, b = render_sample(spec, 3), render_sample(spec, 3)
        assert a.image.tobytes() == b.image.tobytes()
        np.testing.assert_array_equal(a.label, b.label)

    def test_seed_changes_images(self):
        a = render_sample(SyntheticSpec(image_size=32, seed=1), 0)
        b = render_sample(SyntheticSpec(image_size=32, seed=2), 0)
        assert a.image.tobytes() != b.image.tobytes()

    def test_shapes_and_range(self):
        sample = generate(SyntheticSpec(image_size=32), 1)[0]
        assert sample.image.shape == (1, 32, 32)
        assert sample.image.dtype == np.float32
        assert sample.label.shape == (32, 32)
        assert 0.0 <= sample.image.min() and sample.image.max() <= 1.0
        assert sample.stem == "synth_00000"

    def test_membrane_encloses_nucleus(self):
        """With one cell and no noise the membrane ring surrounds the nucleus."""
        spec = SyntheticSpec(image_size=64, cells=(1, 1), noise=0.0, seed=8)
        for index in range(5):
            label = render_sample(spec, index).label
            nucleus = label == 2
            assert nucleus.any()
            enclosed = ndimage.binary_fill_holes(label == 1)
            assert np.all(enclosed[nucleus])

    def test_noise_free_intensities(self):
        spec = SyntheticSpec(image_size=32, noise=0.0, blur=0.0)
        sample = render_sample(spec, 0)
        np.testing.assert_allclose(sample.image[0][sample.label == 0], 0.15, rtol=1e-6)

    @pytest.mark.parametrize("scheme", ["three_class", "four_class"])
    def test_class_frequencies_in_bands(self, scheme):
        spec = SyntheticSpec(class_scheme=scheme)
        freqs = class_frequencies(generate(spec, 100), spec.classes)
        for name, value in zip(spec.class_names, freqs):
            lo, hi = CLASS_BANDS[scheme][name]
            assert lo <= value <= hi, name

    def test_source_split_sizes(self):
        splits = SyntheticSource(SyntheticSpec(image_size=16), n=50).load()
        assert splits.sizes() == {"train": 35, "val": 5, "test": 10}

    @pytest.mark.parametrize(
        "spec",
        [
            SyntheticSpec(class_scheme="five_class"),
            SyntheticSpec(image_size=4),
            SyntheticSpec(cells=(0, 2)),
            SyntheticSpec(noise=-1.0),
        ],
    )
    def test_invalid_spec(self, spec):
        with pytest.raises(ConfigError):
            generate(spec, 1)

    def test_no_images(self):
        with pytest.raises(ConfigError):
            generate(SyntheticSpec(), 0)


class TestTiles:
    """Tests for crop_tiles and stitch_tiles."""

    def test_sixteen_tiles(self):
        image = np.zeros((1, 1024, 1024), dtype=np.float32)
        label = np.zeros((1024, 1024), dtype=np.int64)
        tiles = crop_tiles(image, label, 256)
        assert len(tiles) == 16
        assert tiles[0][0].shape == (1, 256, 256)

    def test_raster_order(self):
        label = np.arange(16).reshape(4, 4)
        tiles = crop_tiles(label[None].astype(np.float32), label, 2)
        assert [int(t[1][0, 0]) for t in tiles] == [0, 2, 8, 10]

    def test_single_tile_is_identity(self):
        image = np.random.default_rng(0).random((1, 8, 8)).astype(np.float32)
        label = np.random.default_rng(1).integers(0, 3, (8, 8))
        [(tile_image, tile_label)] = crop_tiles(image, label, 8)
        np.testing.assert_array_equal(tile_image, image)
        np.testing.assert_array_equal(tile_label, label)

    def test_stitch_restores(self):
        image = np.random.default_rng(2).random((3, 12, 8)).astype(np.float32)
        label = np.random.default_rng(3).integers(0, 3, (12, 8))
        stitched_image, stitched_label = stitch_tiles(crop_tiles(image, label, 4), rows=3, cols=2)
        np.testing.assert_array_equal(stitched_image, image)
        np.testing.assert_array_equal(stitched_label, label)

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            crop_tiles(np.zeros((1, 10, 10)), np.zeros((10, 10), dtype=np.int64), 4)

    def test_tile_samples_names(self):
        sample = Sample("img", np.zeros((1, 8, 8), dtype=np.float32), np.zeros((8, 8), dtype=np.int64))
        assert [s.stem for s in tile_samples([sample], 4)] == ["img_t00", "img_t01", "img_t02", "img_t03"]


class TestManifest:
    """Tests for split manifests and hash splits."""

    def test_parse(self):
        text = "# header\na train\n\nb val  # comment\nc test\n"
        assert parse_manifest(text) == {"a": "train", "b": "val", "c": "test"}

    @pytest.mark.parametrize("text", ["a train\na val\n", "a holdout\n", "a\n", "a train extra\n"])
    def test_malformed(self, text):
        with pytest.raises(DatasetError):
            parse_manifest(text)

    def test_format_parses_back(self):
        assignment = {"x": "test", "y": "train", "z": "val"}
        assert parse_manifest(format_manifest(assignment)) == assignment

    def test_hash_split_deterministic(self):
        stems = [f"img_{i}" for i in range(200)]
        first = [hash_split(s) for s in stems]
        assert first == [hash_split(s) for s in stems]
        assert set(first) == {"train", "val", "test"}

    def test_proportional(self):
        counts = list(proportional_split([f"s{i}" for i in range(50)]).values())
        assert (counts.count("train"), counts.count("val"), counts.count("test")) == (35, 5, 10)

    def test_unlisted_stem(self):
        sample = Sample("loose", np.zeros((1, 4, 4)), np.zeros((4, 4), dtype=np.int64))
        with pytest.raises(DatasetError):
            split_samples([sample], {"other": "train"})

    def test_overlap_detected(self):
        sample = Sample("dup", np.zeros((1, 4, 4)), np.zeros((4, 4), dtype=np.int64))
        with pytest.raises(DatasetError):
            DatasetSplit(train=[sample], val=[sample]).validate()


class TestLocalPNG:
    """Tests for the PNG dataset directory."""

    def test_save_and_load_fifty(self, tmp_path):
        splits = SyntheticSource(SyntheticSpec(image_size=32, seed=6), n=50).load()
        save_dataset(splits, tmp_path)
        assert len(list((tmp_path / "images").glob("*.png"))) == 50
        loaded = load_dataset(tmp_path, classes=3)
        assert loaded.sizes() == {"train": 35, "val": 5, "test": 10}
        for original, restored in zip(splits.train, loaded.train):
            assert original.stem == restored.stem
            np.testing.assert_array_equal(original.label, restored.label)
            np.testing.assert_allclose(original.image, restored.image, atol=1e-4)

    def test_sixteen_bit_roundtrip(self, tmp_path):
        image = np.random.default_rng(0).random((1, 8, 8)).astype(np.float32)
        write_image(image, tmp_path / "a.png")
        np.testing.assert_allclose(read_image(tmp_path / "a.png"), image, atol=1.0 / 65535)

    def test_rgb_image(self, tmp_path):
        image = np.random.default_rng(1).random((3, 8, 8)).astype(np.float32)
        write_image(image, tmp_path / "rgb.png")
        restored = read_image(tmp_path / "rgb.png")
        assert restored.shape == (3, 8, 8)
        np.testing.assert_allclose(restored, image, atol=1.0 / 255)

    def test_eight_bit_scaled_by_max(self, tmp_path):
        Image.fromarray(np.full((4, 4), 255, dtype=np.uint8)).save(tmp_path / "white.png")
        np.testing.assert_array_equal(read_image(tmp_path / "white.png"), 1.0)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(DatasetError, match="empty"):
            LocalPNGSource(tmp_path, classes=3).load()

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DatasetError):
            LocalPNGSource(tmp_path / "absent", classes=3)

    def test_label_out_of_range(self, tmp_path):
        sample = Sample("bad", np.zeros((1, 4, 4), dtype=np.float32), np.full((4, 4), 7, dtype=np.int64))
        save_dataset([sample], tmp_path)
        with pytest.raises(LabelError) as info:
            load_dataset(tmp_path, classes=3)
        assert info.value.value == 7
        assert "bad.png" in str(info.value)

    def test_missing_label(self, tmp_path):
        save_dataset(generate(SyntheticSpec(image_size=16), 2), tmp_path)
        (tmp_path / "labels" / "synth_00001.png").unlink()
        with pytest.raises(DatasetError, match="missing label"):
            load_dataset(tmp_path, classes=3)

    def test_manifest_with_unknown_stem(self, tmp_path):
        save_dataset(generate(SyntheticSpec(image_size=16), 1), tmp_path)
        (tmp_path / "split.manifest").write_text("synth_00000 train\nghost val\n")
        with pytest.raises(DatasetError, match="ghost"):
            load_dataset(tmp_path, classes=3)

    def test_hash_split_without_manifest(self, tmp_path):
        samples = generate(SyntheticSpec(image_size=16), 6)
        save_dataset(samples, tmp_path)
        loaded = load_dataset(tmp_path, classes=3)
        for name in DatasetSplit.SPLITS:
            assert all(hash_split(s.stem) == name for s in loaded.get(name))
