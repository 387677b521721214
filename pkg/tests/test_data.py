import numpy as np
import pytest
from scipy import ndimage

from tribranch.core import validate_sample
from tribranch.data import (CameraParams, DatasetConfig, SyntheticSceneConfig,
                            cityscapes_mapping, compute_class_weights,
                            decode_instance_value, depth_to_disparity,
                            disparity_to_depth, export_synthetic_dataset,
                            iterate_batches, load_split, make_synthetic_scene,
                            synthetic_mapping)
from tribranch.data.cityscapes import disparity_to_raw, raw_to_disparity
from tribranch.data.synthetic import SceneGenerationError
from tribranch.data.weights import cached_class_frequencies, class_frequencies


class TestDisparity:
    def test_hand_value(self):
        depth, valid = disparity_to_depth(np.array([1.0]), focal=1000.0,
                                          baseline=0.2)
        assert valid[0]
        assert depth[0] == pytest.approx(200.0)

    def test_invalid_stays_invalid(self):
        depth, valid = disparity_to_depth(np.array([1.0, 2.0]), 500.0, 0.2,
                                          valid=np.array([False, True]))
        assert not valid[0] and valid[1]
        assert depth[0] == 0.0

    def test_zero_disparity_invalid(self):
        _, valid = disparity_to_depth(np.array([0.0]), 500.0, 0.2)
        assert not valid[0]

    def test_doubling_disparity_halves_depth(self):
        rng = np.random.default_rng(1)
        disp = rng.uniform(0.5, 100, size=50)
        d1, _ = disparity_to_depth(disp, 800.0, 0.22)
        d2, _ = disparity_to_depth(2 * disp, 800.0, 0.22)
        np.testing.assert_allclose(d1, 2 * d2, rtol=1e-12)

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        disp = rng.uniform(0.1, 200, size=200)
        depth, valid = disparity_to_depth(disp, 2262.52, 0.209313)
        back, _ = depth_to_disparity(depth, 2262.52, 0.209313, valid)
        np.testing.assert_allclose(back, disp, rtol=1e-6)

    def test_raw_encoding(self):
        # p = 0 invalid; p = 257 -> disparity 1 px.
        disp, valid = raw_to_disparity(np.array([0, 257, 1]))
        assert not valid[0] and valid[1] and valid[2]
        assert disp[1] == pytest.approx(1.0)
        assert disp[2] == pytest.approx(0.0)
        raw = disparity_to_raw(disp, valid)
        assert raw[0] == 0 and raw[1] == 257

    def test_bad_camera_rejected(self):
        with pytest.raises(ValueError):
            disparity_to_depth(np.array([1.0]), focal=-1.0, baseline=0.2)
        with pytest.raises(ValueError):
            CameraParams(focal=500.0, baseline=0.0)


class TestClassWeights:
    def test_zero_frequency(self):
        w = compute_class_weights(np.array([0.0]), c_hyper=1.02)
        assert w[0] == pytest.approx(1.0 / np.log(1.02))
        assert w[0] == pytest.approx(50.50, abs=0.01)

    def test_full_frequency(self):
        w = compute_class_weights(np.array([1.0]), c_hyper=1.02)
        assert w[0] == pytest.approx(1.0 / np.log(2.02))
        assert w[0] == pytest.approx(1.422, abs=0.001)

    def test_equal_frequencies_equal_weights(self):
        w = compute_class_weights(np.array([0.3, 0.3, 0.4]))
        assert w[0] == w[1]

    def test_monotone_decreasing_in_frequency(self):
        p = np.linspace(0, 1, 50)
        w = compute_class_weights(p)
        assert (np.diff(w) < 0).all()
        assert (w > 0).all() and np.isfinite(w).all()

    def test_too_small_c_hyper_rejected(self):
        with pytest.raises(ValueError, match="c_hyper"):
            compute_class_weights(np.array([0.0, 0.5]), c_hyper=0.9)

    def test_frequency_cache(self, tmp_path):
        samples = [make_synthetic_scene(SyntheticSceneConfig(rng_seed=i))
                   for i in range(3)]
        cache = tmp_path / "freq.txt"
        f1 = cached_class_frequencies(samples, 3, cache)
        assert cache.is_file()
        f2 = cached_class_frequencies(samples, 3, cache)
        np.testing.assert_array_equal(f1, f2)
        np.testing.assert_allclose(f1, class_frequencies(samples, 3))
        assert f1.sum() == pytest.approx(1.0)


class TestSyntheticScenes:
    def test_same_seed_identical(self):
        cfg = SyntheticSceneConfig(rng_seed=11)
        a, b = make_synthetic_scene(cfg), make_synthetic_scene(cfg)
        for field in ("image", "semantic", "instances", "depth"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))

    def test_zero_objects(self):
        s = make_synthetic_scene(SyntheticSceneConfig(num_objects=0, rng_seed=1))
        assert (s.instances == 0).all()

    def test_three_objects_are_three_connected_regions(self):
        s = make_synthetic_scene(SyntheticSceneConfig(num_objects=3, rng_seed=7))
        ids = np.unique(s.instances[s.instances > 0])
        assert len(ids) == 3
        for iid in ids:
            _, n = ndimage.label(s.instances == iid)
            assert n == 1

    @pytest.mark.parametrize("seed", range(10))
    def test_scenes_valid_for_many_seeds(self, seed):
        s = make_synthetic_scene(SyntheticSceneConfig(rng_seed=seed))
        assert validate_sample(s, num_classes=3) == []

    def test_background_depth_gradient_and_object_depths(self):
        cfg = SyntheticSceneConfig(num_objects=2, rng_seed=3,
                                   depth_range=(2.0, 10.0))
        s = make_synthetic_scene(cfg)
        bg = s.instances == 0
        col = np.where(bg.all(axis=0))[0]
        if col.size:   # a fully-background column decreases monotonically
            profile = s.depth[:, col[0]]
            assert (np.diff(profile) < 0).all()
        for iid in np.unique(s.instances[s.instances > 0]):
            values = s.depth[s.instances == iid]
            assert values.min() == values.max()
            assert 2.0 <= values.min() <= 10.0

    def test_impossible_placement_names_seed(self):
        cfg = SyntheticSceneConfig(size=16, num_objects=60, rng_seed=123)
        with pytest.raises(SceneGenerationError, match="123"):
            make_synthetic_scene(cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SyntheticSceneConfig(size=60)
        with pytest.raises(ValueError):
            SyntheticSceneConfig(num_classes=2)
        with pytest.raises(ValueError):
            SyntheticSceneConfig(depth_range=(0.0, 5.0))


class TestLoader:
    def test_instance_value_decoding(self):
        assert decode_instance_value(26001) == (26, 1)

    def test_export_and_load_round_trip(self, tmp_path):
        cfg_path = export_synthetic_dataset(tmp_path, 2, seed=4)
        ds = DatasetConfig.from_file(cfg_path)
        samples = load_split(ds, "train")
        assert [s.id for s in samples] == ["synthetic_000004",
                                           "synthetic_000005"]
        direct = make_synthetic_scene(SyntheticSceneConfig(rng_seed=4))
        loaded = samples[0]
        np.testing.assert_array_equal(loaded.semantic, direct.semantic)
        np.testing.assert_array_equal(loaded.instances, direct.instances)
        assert loaded.depth_valid.all()
        # 16-bit disparity and 8-bit image quantization
        assert np.abs(loaded.depth - direct.depth).max() < 0.01
        assert np.abs(loaded.image - direct.image).max() <= 1 / 255.0 + 1e-6
        assert validate_sample(loaded, ds.mapping.num_classes) == []

    def test_instance_ids_renumbered_contiguously(self, tmp_path):
        cfg_path = export_synthetic_dataset(tmp_path, 1, seed=9)
        ds = DatasetConfig.from_file(cfg_path)
        sample = load_split(ds, "train")[0]
        ids = np.unique(sample.instances)
        assert ids.tolist() == [0, 1, 2, 3]

    def test_missing_split_raises(self, tmp_path):
        cfg_path = export_synthetic_dataset(tmp_path, 1, seed=0)
        ds = DatasetConfig.from_file(cfg_path)
        with pytest.raises(FileNotFoundError):
            load_split(ds, "val")

    def test_mappings(self):
        cs = cityscapes_mapping()
        assert cs.num_classes == 19
        assert cs.raw_to_train[26] == 13        # car
        assert cs.raw_to_train[0] == 255        # unlabeled -> ignore
        assert 13 in cs.thing_ids
        assert cs.category_names[cs.category_of[13]] == "vehicle"
        assert len(cs.category_names) == 7
        syn = synthetic_mapping(3)
        assert syn.thing_ids == (2,)
        with pytest.raises(ValueError):
            synthetic_mapping(2)


class TestBatching:
    def make_samples(self, n):
        return [make_synthetic_scene(SyntheticSceneConfig(rng_seed=i))
                for i in range(n)]

    def test_ten_samples_batch_ten(self):
        batches = list(iterate_batches(self.make_samples(10), 10, 0))
        assert len(batches) == 1
        assert len(batches[0]) == 10
        assert batches[0].images.shape == (10, 64, 64, 3)

    def test_partial_batch_kept(self):
        sizes = [len(b) for b in iterate_batches(self.make_samples(5), 2, 0)]
        assert sizes == [2, 2, 1]

    def test_same_seed_same_order(self):
        samples = self.make_samples(6)
        order1 = [b.ids for b in iterate_batches(samples, 2, 3)]
        order2 = [b.ids for b in iterate_batches(samples, 2, 3)]
        assert order1 == order2
        order3 = [b.ids for b in iterate_batches(samples, 2, 4)]
        assert order1 != order3

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            next(iterate_batches([], 2, 0))
