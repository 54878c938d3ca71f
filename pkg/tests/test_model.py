import numpy as np
import pytest

from covid_tsc._rng import derive_seed
from covid_tsc.dataio import FOUR_CLASS, STAGE1, STAGE2, DatasetManifest, scan_directory, split_train_val, to_stage1
from covid_tsc.errors import ConfigInvalid, EmptyTrainingSet, InvalidShape, NonFiniteLoss, SchemaMismatch, ShapeMismatch
from covid_tsc.model import (
    LayerSpec,
    LookupModel,
    ModelSpec,
    Network,
    TrainConfig,
    TrainedModel,
    activation,
    backbone,
    build_baseline_cnn,
    build_transfer_head,
    conv2d,
    count_parameters,
    dense,
    fit,
    flatten,
    global_pool,
    load_model,
    maxpool,
)
from covid_tsc.model.network import sigmoid_binary_cross_entropy, softmax_cross_entropy

from .oracles import closed_form_parameters, gradient_check, random_spec

SMALL = dict(conv_filters=(4, 8), dense_units=16)


class TestParameterCounting:
    def test_dense(self):
        assert count_parameters(ModelSpec((3,), (dense(2),))) == (8, 8)

    def test_conv(self):
        assert count_parameters(ModelSpec((5, 5, 1), (conv2d(8, 3),))) == (80, 80)

    def test_empty(self):
        assert count_parameters(ModelSpec((4, 4, 1), ())) == (0, 0)

    def test_random_specs(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            spec = random_spec(rng)
            assert count_parameters(spec) == closed_form_parameters(spec)

    def test_transfer_head(self):
        spec = build_transfer_head(512, FOUR_CLASS, hidden=48)
        assert count_parameters(spec) == (24_820, 24_820)
        assert 512 * 48 + 48 + 48 * 4 + 4 == 24_820

    def test_transfer_binary(self):
        spec = build_transfer_head(512, STAGE1, "binary", hidden=48)
        assert count_parameters(spec)[1] == 24_673

    def test_frozen_backbone_excluded(self):
        spec = build_transfer_head(512, FOUR_CLASS, backbone_params=14_714_688)
        total, trainable = count_parameters(spec)
        assert total == 14_714_688 + 24_820 and trainable == 24_820

    def test_baseline_closed_form(self):
        spec = build_baseline_cnn(FOUR_CLASS)
        conv1 = (3 * 3 * 1 + 1) * 32
        conv2 = (3 * 3 * 32 + 1) * 64
        side = ((64 - 2) // 2 - 2) // 2
        dense1 = (side * side * 64 + 1) * 128
        head = (128 + 1) * 4
        assert count_parameters(spec) == (conv1 + conv2 + dense1 + head,) * 2
        assert count_parameters(spec) == closed_form_parameters(spec)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            count_parameters(ModelSpec((4, 4, 1), (conv2d(2, 5),)))
        with pytest.raises(ShapeMismatch):
            count_parameters(ModelSpec((4, 4, 1), (dense(2),)))


class TestSpecBuilders:
    def test_multiclass_head(self):
        spec = build_baseline_cnn(FOUR_CLASS)
        assert spec.layers[-2] == dense(4) and spec.layers[-1] == activation("softmax")
        spec.check_head(4)

    def test_binary_head(self):
        spec = build_baseline_cnn(STAGE1, "binary")
        assert spec.layers[-2] == dense(1) and spec.layers[-1] == activation("sigmoid")

    def test_binary_needs_two_classes(self):
        with pytest.raises(InvalidShape):
            build_baseline_cnn(STAGE2, "binary")

    def test_input_too_small(self):
        with pytest.raises(InvalidShape):
            build_baseline_cnn(FOUR_CLASS, input_shape=(16, 16, 1))

    def test_invalid_feature_dim(self):
        with pytest.raises(InvalidShape):
            build_transfer_head(0, FOUR_CLASS)

    def test_json_roundtrip(self):
        for spec in (build_baseline_cnn(FOUR_CLASS), build_transfer_head(64, STAGE1, "binary", backbone_params=9)):
            assert ModelSpec.from_json(spec.to_json()) == spec

    def test_bad_layer(self):
        with pytest.raises(InvalidShape):
            LayerSpec("lstm")
        with pytest.raises(InvalidShape):
            activation("tanh")

    def test_backbone_must_be_frozen(self):
        spec = ModelSpec((8, 8, 1), (backbone(4), dense(2), activation("softmax")), frozen_prefix=0)
        with pytest.raises(InvalidShape):
            Network(spec)


class TestLosses:
    def test_softmax_ce_matches_direct(self, rng):
        z = rng.normal(size=(6, 4))
        y = rng.integers(0, 4, 6)
        loss, d = softmax_cross_entropy(z, y)
        p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
        assert loss == pytest.approx(-np.log(p[np.arange(6), y]).mean())
        onehot = np.eye(4)[y]
        np.testing.assert_allclose(d, (p - onehot) / 6, atol=1e-12)

    def test_stable_on_huge_logits(self):
        loss, _ = softmax_cross_entropy(np.array([[1e4, -1e4]]), np.array([0]))
        assert loss == pytest.approx(0.0)
        loss, _ = sigmoid_binary_cross_entropy(np.array([[-1e4]]), np.array([1]))
        assert loss == pytest.approx(1e4)


class TestGradients:
    def test_conv_pool_dense_softmax(self, rng):
        spec = ModelSpec((5, 5, 1), (conv2d(2, 3), activation("relu"), maxpool(2), flatten(), dense(3),
                                     activation("softmax")))
        assert count_parameters(spec)[0] <= 50
        x = rng.random((4, 5, 5, 1))
        rel, n = gradient_check(spec, x, rng.integers(0, 3, 4))
        assert n == 29 and rel < 1e-4

    def test_sigmoid_head(self, rng):
        spec = ModelSpec((4, 4, 2), (conv2d(3, 2), activation("sigmoid"), global_pool(), dense(4),
                                     activation("relu"), dense(1), activation("sigmoid")), "binary")
        rel, n = gradient_check(spec, rng.random((5, 4, 4, 2)), rng.integers(0, 2, 5))
        assert n <= 50 and rel < 1e-4


@pytest.fixture(scope="module")
def tiny_manifests(tiny_corpus):
    m = scan_directory(tiny_corpus)
    sp = split_train_val(m, 0.25, seed=0)
    return sp.train, sp.held_out


class TestFit:
    def test_history_rows(self, tiny_manifests):
        train, val = tiny_manifests
        _, hist = fit(build_baseline_cnn(FOUR_CLASS, **SMALL), train, val, TrainConfig(epochs=3))
        assert len(hist) == 3 and [r.epoch for r in hist] == [1, 2, 3]
        assert all(0 <= r.accuracy <= 1 and 0 <= r.val_accuracy <= 1 for r in hist)

    def test_empty_training_set(self, tiny_manifests):
        _, val = tiny_manifests
        with pytest.raises(EmptyTrainingSet):
            fit(build_baseline_cnn(FOUR_CLASS, **SMALL), DatasetManifest(FOUR_CLASS, ()), val, TrainConfig(epochs=1))

    def test_schema_mismatch(self, tiny_manifests):
        train, val = tiny_manifests
        with pytest.raises(SchemaMismatch):
            fit(build_baseline_cnn(STAGE1, "binary", **SMALL), train, val,
                TrainConfig.for_head("binary", epochs=1))

    def test_loss_head_mismatch(self, tiny_manifests):
        train, val = tiny_manifests
        with pytest.raises(ConfigInvalid):
            fit(build_baseline_cnn(FOUR_CLASS, **SMALL), train, val, TrainConfig(loss="binary_cross_entropy"))

    def test_divergence(self, tiny_manifests):
        train, val = tiny_manifests
        with pytest.raises(NonFiniteLoss):
            fit(build_baseline_cnn(FOUR_CLASS, **SMALL), train, val, TrainConfig(epochs=5, learning_rate=1e12))

    def test_deterministic(self, tiny_manifests):
        train, val = tiny_manifests
        spec = build_baseline_cnn(FOUR_CLASS, **SMALL)
        m1, h1 = fit(spec, train, val, TrainConfig(epochs=2, seed=4))
        m2, h2 = fit(spec, train, val, TrainConfig(epochs=2, seed=4))
        assert h1.rows == h2.rows
        for k, v in m1.network.get_weights().items():
            assert np.array_equal(v, m2.network.get_weights()[k])

    def test_frozen_prefix_untouched(self, tiny_manifests):
        train, val = tiny_manifests
        base = build_baseline_cnn(FOUR_CLASS, **SMALL)
        spec = ModelSpec(base.input_shape, base.layers, base.head_mode, frozen_prefix=3)
        model, _ = fit(spec, train, val, TrainConfig(epochs=2, seed=0))
        w = model.network.get_weights()
        ref = Network(spec, seed=derive_seed(0, "init")).get_weights()
        assert np.array_equal(w["0.W"], ref["0.W"]) and np.array_equal(w["0.b"], ref["0.b"])
        assert not np.array_equal(w["3.W"], ref["3.W"])
        assert count_parameters(spec)[1] == count_parameters(base)[1] - 40  # (9+1)*4 frozen

    def test_transfer_binary(self, tiny_manifests):
        train, val = tiny_manifests
        train1, val1 = to_stage1(train), to_stage1(val)
        spec = build_transfer_head(32, STAGE1, "binary", hidden=8, input_shape=(64, 64, 1))
        model, hist = fit(spec, train1, val1, TrainConfig.for_head("binary", epochs=2))
        p = model.predict_proba(val1)
        assert p.shape == (len(val1),) and np.all((p >= 0) & (p <= 1))
        assert model.positive == "disease"


@pytest.fixture(scope="module")
def trained(tiny_manifests):
    train, val = tiny_manifests
    model, _ = fit(build_baseline_cnn(FOUR_CLASS, **SMALL), train, val, TrainConfig(epochs=1))
    return model, val


class TestInference:
    def test_rows_sum_to_one(self, trained):
        model, val = trained
        p = model.predict_proba(val)
        assert p.shape == (len(val), 4)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_repeatable(self, trained):
        model, val = trained
        assert np.array_equal(model.predict_proba(val), model.predict_proba(val))

    def test_raw_images(self, trained, rng):
        model, _ = trained
        imgs = [rng.integers(0, 256, (40, 50), dtype=np.uint8) for _ in range(3)]
        assert model.predict_proba(imgs).shape == (3, 4)

    def test_save_load(self, trained, tmp_path):
        model, val = trained
        a = model.save(tmp_path / "a.npz")
        b = model.save(tmp_path / "b.npz")
        assert a.read_bytes() == b.read_bytes()
        back = load_model(a)
        assert isinstance(back, TrainedModel)
        assert np.array_equal(back.predict_proba(val), model.predict_proba(val))
        assert set(np.load(a).files) >= {"__meta__", "0.W"}

    def test_lookup_roundtrip(self, tmp_path, tiny_manifests):
        _, val = tiny_manifests
        oracle = LookupModel.from_labels(FOUR_CLASS, {s.id: s.label for s in val})
        assert oracle.predict(val) == val.labels
        back = load_model(oracle.save(tmp_path / "o.json"))
        assert back.predict(val) == val.labels
