import numpy as np
import pytest

from openset_net import (
    ClassifierHead,
    FeatureExtractor,
    OpenSetModel,
    class_vector_cosines,
    extend_head,
    extend_model,
    load_model,
    posterior,
    save_model,
)
from uno_errors import ContractError, ShapeMismatchError, UndefinedCosineError


def _head(weight, bias, k, convention="image-wide"):
    return ClassifierHead(np.array(weight, dtype=float), np.array(bias, dtype=float), k, convention)


class TestPosterior:
    def test_uniform(self):
        p = posterior(np.ones((2, 3)), _head(np.zeros((3, 3)), np.zeros(3), 2))
        np.testing.assert_allclose(p, 1.0 / 3.0, atol=1e-15)

    def test_known_logits(self):
        head = _head([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], np.zeros(3), 2)
        np.testing.assert_allclose(posterior(np.array([1.0, 0.0]), head), [0.57612, 0.21194, 0.21194], atol=1e-5)

    def test_bias_shift_invariance(self, rng):
        w = rng.standard_normal((4, 3))
        b = rng.standard_normal(4)
        z = rng.standard_normal((5, 3))
        np.testing.assert_allclose(posterior(z, _head(w, b + 7.5, 3)), posterior(z, _head(w, b, 3)), atol=1e-14)

    def test_head_shape_checked(self):
        with pytest.raises(ShapeMismatchError):
            _head(np.zeros((3, 2)), np.zeros(2), 2)
        with pytest.raises(ShapeMismatchError):
            _head(np.zeros((3, 2)), np.zeros(3), 2).logits(np.zeros(3))

    def test_conventions(self):
        assert _head(np.zeros((3, 2)), np.zeros(3), 2, "closed").negative_index is None
        assert _head(np.zeros((3, 2)), np.zeros(3), 2).negative_index == 2
        dense = _head(np.zeros((4, 2)), np.zeros(4), 2, "dense")
        assert (dense.negative_index, dense.no_object_index) == (2, 3)
        assert _head(np.zeros((3, 2)), np.zeros(3), 2, "dense-closed").no_object_index == 2


class TestExtendHead:
    def test_new_logit_is_zero_and_old_rows_kept(self, rng):
        head = ClassifierHead.init(3, 5, 3, rng)
        head.b.data = rng.standard_normal(3)
        ext = extend_head(head)
        z = rng.standard_normal((10, 5))
        logits = ext.logits(z)
        np.testing.assert_array_equal(logits[:, 3], 0.0)
        np.testing.assert_array_equal(logits[:, :3], head.logits(z))
        assert ext.convention == "image-wide" and ext.negative_index == 3

    def test_argmax_and_renormalization(self, rng):
        head = ClassifierHead.init(3, 5, 3, rng)
        z = rng.standard_normal((20, 5))
        p_old = posterior(z, head)
        p_new = posterior(z, extend_head(head))
        np.testing.assert_array_equal(np.argmax(p_new[:, :3], axis=1), np.argmax(p_old, axis=1))
        np.testing.assert_allclose(p_new[:, :3], p_old * (1.0 - p_new[:, 3:]), rtol=1e-12)

    def test_dense_closed_becomes_dense(self, rng):
        head = ClassifierHead.init(3, 4, 2, rng, convention="dense-closed")
        ext = extend_head(head, insert_at=2)
        assert ext.convention == "dense" and ext.num_classes == 4
        np.testing.assert_array_equal(ext.W.data[2], 0.0)
        np.testing.assert_array_equal(ext.W.data[3], head.W.data[2])

    def test_invalid_arguments(self, rng):
        head = ClassifierHead.init(3, 4, 3, rng)
        with pytest.raises(ContractError):
            extend_head(head, n_new=0)
        with pytest.raises(ContractError):
            extend_head(head, insert_at=5)


class TestCosines:
    def test_orthonormal_rows(self, rng):
        cos = class_vector_cosines(ClassifierHead.init(4, 6, 4, rng))
        np.testing.assert_allclose(cos, np.eye(4), atol=1e-12)

    def test_symmetric_with_unit_diagonal(self, rng):
        cos = class_vector_cosines(_head(rng.standard_normal((5, 3)), np.zeros(5), 4))
        np.testing.assert_array_equal(np.diag(cos), 1.0)
        np.testing.assert_allclose(cos, cos.T, atol=1e-15)
        assert np.all(np.abs(cos) <= 1.0 + 1e-12)

    def test_zero_row(self, rng):
        # a freshly extended head has a zero negative row
        with pytest.raises(UndefinedCosineError):
            class_vector_cosines(extend_head(ClassifierHead.init(3, 4, 3, rng)))


class TestModel:
    def test_batch_independence(self, rng):
        model = OpenSetModel.build(2, 3, rng, hidden=(8,), feature_dim=4)
        x = rng.standard_normal((6, 2))
        full = model.posterior(x)
        for i in range(6):
            np.testing.assert_allclose(model.posterior(x[i:i + 1])[0], full[i], rtol=1e-12)

    def test_predict_ignores_negative(self, rng):
        model = extend_model(OpenSetModel.build(2, 3, rng, hidden=(8,), feature_dim=4))
        model.head.b.data[3] = 50.0
        assert set(model.predict(rng.standard_normal((30, 2)))) <= {0, 1, 2}

    def test_extend_model_shares_features(self, rng):
        model = OpenSetModel.build(2, 3, rng, hidden=(8,), feature_dim=4)
        ext = extend_model(model)
        assert ext.features is model.features
        assert ext.head.num_classes == 4

    def test_feature_shape_checked(self, rng):
        with pytest.raises(ShapeMismatchError):
            FeatureExtractor(3, (4,), 2, rng)(np.zeros((2, 2)))

    def test_checkpoint_round_trip(self, tmp_path, rng):
        model = extend_model(OpenSetModel.build(2, 3, rng, hidden=(8, 8), feature_dim=4))
        model.ood_head = ClassifierHead.init(2, 4, 3, rng)
        save_model(model, tmp_path / "m")
        loaded = load_model(tmp_path / "m")
        x = rng.standard_normal((7, 2))
        np.testing.assert_array_equal(loaded.posterior(x), model.posterior(x))
        np.testing.assert_array_equal(loaded.ood_head.W.data, model.ood_head.W.data)
        assert loaded.head.convention == "image-wide"
