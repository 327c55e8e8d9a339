import numpy as np
import pytest
from pydantic import ValidationError

from synthgen import (
    VOID,
    DenseScene,
    SynthSpec,
    class_means,
    draw_patches,
    load_bundle,
    make_dense_scene,
    make_image_wide,
    outlier_union,
    sample_inliers,
    sample_negatives,
    save_bundle,
    stratified_counts,
    streams,
)
from tensor_io import directory_digest
from uno_errors import ConfigurationError, ManifestError


class TestImageWide:
    def test_same_seed_same_bundle(self, toy_spec):
        a, b = make_image_wide(toy_spec), make_image_wide(toy_spec)
        np.testing.assert_array_equal(a.train.x, b.train.x)
        np.testing.assert_array_equal(a.outliers["far"], b.outliers["far"])

    def test_splits_do_not_share_a_stream(self, toy_spec):
        a = make_image_wide(toy_spec)
        b = make_image_wide(toy_spec.model_copy(update={"n_far": 10, "n_negatives": 7}))
        np.testing.assert_array_equal(a.train.x, b.train.x)
        np.testing.assert_array_equal(a.outliers["near"], b.outliers["near"])

    def test_stratified_counts(self):
        np.testing.assert_array_equal(stratified_counts(300, 3), [100, 100, 100])
        np.testing.assert_array_equal(stratified_counts(10, 3), [4, 3, 3])
        split = sample_inliers(SynthSpec(seed=1), 300, np.random.default_rng(0))
        np.testing.assert_array_equal(np.bincount(split.y), [100, 100, 100])

    def test_class_means_are_recovered(self):
        spec = SynthSpec(seed=1)
        split = sample_inliers(spec, 3000, np.random.default_rng(0))
        for k, mean in enumerate(class_means(spec)):
            err = np.abs(split.x[split.y == k].mean(axis=0) - mean)
            assert np.all(err < 3 * spec.sigma / np.sqrt(1000))

    def test_custom_means(self):
        spec = SynthSpec(seed=0, num_classes=2, means=[[0.0, 1.0], [2.0, 3.0]])
        np.testing.assert_array_equal(class_means(spec), [[0.0, 1.0], [2.0, 3.0]])
        with pytest.raises(ValidationError):
            SynthSpec(seed=0, num_classes=3, means=[[0.0, 1.0]])

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            SynthSpec(seed=0, num_classes=1)
        with pytest.raises(ValidationError):
            SynthSpec(seed=0, ring_inner=5.0, ring_outer=4.0)
        with pytest.raises(ValidationError):
            SynthSpec(seed=0, colour="red")


class TestNegativeSources:
    def _negatives(self, source):
        spec = SynthSpec(seed=0, negative_source=source, n_negatives=400)
        return spec, sample_negatives(spec, streams(0)["negatives"])

    def test_ring_segment(self):
        spec, neg = self._negatives("ring-segment")
        r = np.linalg.norm(neg.x, axis=1)
        assert np.all((r >= spec.ring_inner) & (r <= spec.ring_outer))
        angle = np.degrees(np.mod(np.arctan2(neg.x[:, 1], neg.x[:, 0]), 2.0 * np.pi))
        assert not np.any((angle > 285.0 + 1e-9) & (angle < 315.0 - 1e-9))
        assert np.any(angle < 30.0) and np.any((angle > 180.0) & (angle < 285.0))
        assert np.all(neg.y == spec.num_classes)

    def test_uniform_box(self):
        spec, neg = self._negatives("uniform-box")
        assert np.all(np.abs(neg.x) <= spec.box_half_width)

    def test_inlier_crop_lies_between_classes(self):
        spec, neg = self._negatives("inlier-crop")
        r = np.linalg.norm(neg.x, axis=1)
        # mixtures of two points on the circle fall inside it on average
        assert r.mean() < spec.radius

    def test_flow_source_has_no_stored_samples(self):
        _, neg = self._negatives("flow")
        assert neg.x.shape == (0, 2)

    def test_outlier_sets(self, toy_bundle, toy_spec):
        far_r = np.linalg.norm(toy_bundle.outliers["far"], axis=1)
        assert np.all((far_r >= toy_spec.far_inner) & (far_r <= toy_spec.far_outer))
        near_r = np.linalg.norm(toy_bundle.outliers["near"], axis=1)
        assert abs(near_r.mean() - toy_spec.radius) < 0.5
        assert outlier_union(toy_bundle).shape == (120, 2)


class TestDenseScenes:
    def test_labels_and_patches(self, dense_spec):
        bundle = make_image_wide(dense_spec)
        assert len(bundle.dense_train) == 6 and len(bundle.dense_test) == 4
        k = dense_spec.num_classes
        for scene in bundle.dense_train + bundle.dense_test:
            assert scene.inputs.shape == (4, 8, 8)
            assert scene.labels.min() >= VOID and scene.labels.max() <= k
            for r, c, h, w in scene.patches:
                assert np.all(scene.labels[r:r + h, c:c + w] == k)

    def test_held_out_negatives_differ(self, dense_spec):
        rng = np.random.default_rng(0)
        train = make_dense_scene(dense_spec, rng, held_out=False, n_patches=1)
        test = make_dense_scene(dense_spec, rng, held_out=True, n_patches=1)
        k = dense_spec.num_classes
        assert train.inputs[:, train.labels == k].mean() < 0 < test.inputs[:, test.labels == k].mean()

    def test_components_split_disjoint_regions(self):
        labels = np.array([[0, 0, 1, 0], [0, 0, 0, 0], [1, 0, 0, VOID]])
        scene = DenseScene(np.zeros((2, 3, 4)), labels)
        assert [r.label for r in scene.regions()] == [0, 1]
        assert [r.label for r in scene.components()] == [0, 1, 1]

    def test_grid_mismatch(self):
        with pytest.raises(ConfigurationError):
            DenseScene(np.zeros((2, 3, 4)), np.zeros((4, 3), dtype=int))

    def test_patch_larger_than_scene(self, dense_spec):
        spec = dense_spec.model_copy(update={"dense": dense_spec.dense.model_copy(update={"patch_side": (2, 9)})})
        with pytest.raises(ConfigurationError):
            draw_patches(spec, np.random.default_rng(0))


class TestBundleIO:
    def test_round_trip(self, tmp_path, dense_spec):
        bundle = make_image_wide(dense_spec)
        save_bundle(bundle, tmp_path / "b")
        loaded = load_bundle(tmp_path / "b")
        np.testing.assert_array_equal(loaded.test.x, bundle.test.x)
        np.testing.assert_array_equal(loaded.negatives.y, bundle.negatives.y)
        assert sorted(loaded.outliers) == ["far", "near"]
        np.testing.assert_array_equal(loaded.dense_test[1].labels, bundle.dense_test[1].labels)
        np.testing.assert_array_equal(loaded.dense_train[0].patches, bundle.dense_train[0].patches)
        assert loaded.spec == bundle.spec

    def test_digest_is_reproducible(self, tmp_path, toy_spec):
        save_bundle(make_image_wide(toy_spec), tmp_path / "a")
        save_bundle(make_image_wide(toy_spec), tmp_path / "b")
        assert directory_digest(tmp_path / "a") == directory_digest(tmp_path / "b")

    def test_missing_tensor(self, tmp_path, toy_bundle):
        save_bundle(toy_bundle, tmp_path / "b")
        (tmp_path / "b" / "train.x.unot").unlink()
        with pytest.raises(ManifestError):
            load_bundle(tmp_path / "b")
