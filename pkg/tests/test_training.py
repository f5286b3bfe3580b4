"""Losses, optimizer, gradients, and the two training recipes."""

import warnings

import numpy as np
import pytest

from swmparc.datasets import LabeledDataset
from swmparc.geometry import reflect_bilateral, resample_many
from swmparc.network import (
    classify_backward,
    classify_with_cache,
    encode_backward,
    encode_with_cache,
    project_backward,
    project_with_cache,
    serialize_model,
)
from swmparc.training import (
    AdamState,
    StageOneConfig,
    StageTwoConfig,
    adam_init,
    adam_step,
    contrastive_batch,
    cross_entropy_loss,
    supcon_loss,
    train_stage_one,
    train_stage_two,
)

from helpers import (
    fd_gradient,
    max_rel_error,
    random_polyline,
    tiny_classifier,
    tiny_encoder,
    tiny_projector,
)


def _unit_rows(rng, b, d):
    z = rng.normal(size=(b, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _supcon_reference(z, labels, temperature):
    """Nested-loop transcription of the loss definition."""
    b = z.shape[0]
    total = 0.0
    for i in range(b):
        positives = [p for p in range(b) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        candidates = [a for a in range(b) if a != i]
        logz = np.log(sum(np.exp(z[i] @ z[a] / temperature) for a in candidates))
        mean_pos = sum(z[i] @ z[p] / temperature for p in positives) / len(positives)
        total += logz - mean_pos
    return total


class TestCrossEntropy:
    def test_matches_hand_computation(self):
        logits = np.array([[2.0, 0.0], [0.0, 0.0]])
        labels = np.array([0, 1])
        loss, _ = cross_entropy_loss(logits, labels)
        want = (-np.log(np.e**2 / (np.e**2 + 1)) - np.log(0.5)) / 2
        assert loss == pytest.approx(want, abs=1e-12)

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(40)
        logits = rng.normal(size=(7, 5))
        labels = rng.integers(0, 5, size=7)
        _, grad = cross_entropy_loss(logits, labels)
        num = fd_gradient(lambda: cross_entropy_loss(logits, labels)[0],
                          {"logits": logits})
        assert max_rel_error({"logits": grad}, num) < 1e-6

    def test_certain_prediction_has_near_zero_loss(self):
        logits = np.array([[50.0, 0.0, 0.0]])
        loss, _ = cross_entropy_loss(logits, np.array([0]))
        assert loss < 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros((0, 3)), np.zeros(0, dtype=int))
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros((2, 3)), np.array([0, 3]))
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros((2, 3)), np.array([0, -1]))
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros((2, 3)), np.array([0]))
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros(3), np.array([0]))


class TestSupCon:
    def test_matches_nested_loop_reference(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            b = int(rng.integers(2, 17))
            z = _unit_rows(rng, b, 5)
            labels = rng.integers(0, 4, size=b)
            loss, _ = supcon_loss(z, labels, temperature=0.1)
            assert loss == pytest.approx(
                _supcon_reference(z, labels, 0.1), abs=1e-10)

    def test_two_sample_same_label_is_zero(self):
        # with one candidate that is also the positive, logZ cancels the
        # positive term exactly
        rng = np.random.default_rng(42)
        z = _unit_rows(rng, 2, 6)
        loss, grad = supcon_loss(z, np.array([3, 3]))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(grad, 0.0, atol=1e-12)

    def test_all_distinct_labels_is_zero(self):
        rng = np.random.default_rng(43)
        z = _unit_rows(rng, 5, 4)
        loss, grad = supcon_loss(z, np.arange(5))
        assert loss == 0.0
        assert np.array_equal(grad, np.zeros_like(z))

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(44)
        z = _unit_rows(rng, 9, 4)
        labels = rng.integers(0, 3, size=9)
        _, grad = supcon_loss(z, labels, temperature=0.2)
        num = fd_gradient(lambda: supcon_loss(z, labels, 0.2)[0], {"z": z},
                          h=1e-6)
        assert max_rel_error({"z": grad}, num, floor=1e-3) < 1e-4

    def test_identical_positives_minimize(self):
        # an anchor stacked on its positive scores higher than one apart
        z_near = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        z_far = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        labels = np.array([0, 0, 1])
        near, _ = supcon_loss(z_near, labels)
        far, _ = supcon_loss(z_far, labels)
        assert near < far

    def test_validation(self):
        rng = np.random.default_rng(45)
        z = _unit_rows(rng, 4, 3)
        with pytest.raises(ValueError):
            supcon_loss(z * 1.001, np.zeros(4, dtype=int))
        with pytest.raises(ValueError):
            supcon_loss(z[:1], np.zeros(1, dtype=int))
        with pytest.raises(ValueError):
            supcon_loss(z, np.zeros(4, dtype=int), temperature=0.0)
        with pytest.raises(ValueError):
            supcon_loss(z, np.zeros(3, dtype=int))


class TestAdam:
    def test_first_step_moves_by_lr(self):
        # bias correction makes the very first update lr * g/|g| for any
        # nonzero gradient
        params = {"w": np.array([1.0, -2.0, 3.0])}
        grads = {"w": np.array([0.3, -4.0, 0.001])}
        state = adam_init(params)
        adam_step(params, grads, state, lr=0.1)
        want = np.array([1.0, -2.0, 3.0]) - 0.1 * np.sign(grads["w"])
        assert np.allclose(params["w"], want, atol=1e-6)

    def test_two_steps_match_scalar_reference(self):
        p = {"w": np.array([0.5])}
        state = adam_init(p)
        m = v = 0.0
        x = 0.5
        for step, g in enumerate([0.2, -0.7], start=1):
            adam_step(p, {"w": np.array([g])}, state, lr=0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mhat = m / (1 - 0.9**step)
            vhat = v / (1 - 0.999**step)
            x -= 0.01 * mhat / (np.sqrt(vhat) + 1e-8)
            assert p["w"][0] == pytest.approx(x, abs=1e-15)
        assert state.step == 2

    def test_updates_in_place(self):
        arr = np.ones(3)
        params = {"w": arr}
        state = adam_init(params)
        adam_step(params, {"w": np.ones(3)}, state, lr=0.05)
        assert arr is params["w"]
        assert not np.array_equal(arr, np.ones(3))

    def test_rejects_bad_learning_rate(self):
        params = {"w": np.zeros(2)}
        state = adam_init(params)
        with pytest.raises(ValueError):
            adam_step(params, {"w": np.zeros(2)}, state, lr=0.0)


class TestFullGradients:
    """End-to-end analytic gradients against central differences."""

    def _loss_and_grads(self, enc, cla, x, y):
        gf, ecache = encode_with_cache(enc, x, train=True, update_stats=False)
        logits, ccache = classify_with_cache(cla, gf.g, train=True,
                                             update_stats=False)
        loss, glogits = cross_entropy_loss(logits, y)
        cgrads, gg = classify_backward(cla, ccache, glogits)
        egrads, _ = encode_backward(enc, ecache, gg)
        return loss, {**egrads, **cgrads}

    def test_supervised_path(self):
        rng = np.random.default_rng(46)
        enc = tiny_encoder(rng)
        cla = tiny_classifier(rng, enc.out_dim)
        x = np.stack([random_polyline(rng, 5, scale=4.0) for _ in range(6)])
        y = rng.integers(0, 3, size=6)
        _, grads = self._loss_and_grads(enc, cla, x, y)
        params = {**enc.trainable(), **cla.trainable()}

        def scalar():
            return self._loss_and_grads(enc, cla, x, y)[0]

        num = fd_gradient(scalar, params)
        err = max_rel_error({k: grads[k] for k in params}, num)
        assert err < 1e-4

    def test_contrastive_path(self):
        rng = np.random.default_rng(47)
        enc = tiny_encoder(rng)
        proj = tiny_projector(rng, enc.out_dim)
        x = np.stack([random_polyline(rng, 5, scale=4.0) for _ in range(8)])
        y = rng.integers(0, 2, size=8)

        def forward():
            gf, ecache = encode_with_cache(enc, x, train=True,
                                           update_stats=False)
            z, pcache = project_with_cache(proj, gf.g)
            loss, gz = supcon_loss(z, y)
            return loss, ecache, pcache, gz

        loss, ecache, pcache, gz = forward()
        pgrads, gg = project_backward(proj, pcache, gz)
        egrads, _ = encode_backward(enc, ecache, gg)
        grads = {**egrads, **pgrads}
        params = {**enc.trainable(), **proj.trainable()}
        num = fd_gradient(lambda: forward()[0], params)
        err = max_rel_error({k: grads[k] for k in params}, num, floor=1e-3)
        assert err < 1e-4

    def test_bias_gradient_vanishes_under_norm(self):
        # batch norm subtracts the batch mean, so a bias feeding a
        # normalized layer cannot change the loss; only rounding crumbs
        # survive the cancellation
        rng = np.random.default_rng(48)
        enc = tiny_encoder(rng)
        cla = tiny_classifier(rng, enc.out_dim)
        x = rng.normal(size=(6, 5, 3))
        y = rng.integers(0, 3, size=6)
        _, grads = self._loss_and_grads(enc, cla, x, y)
        for name in ("enc0.bias", "enc1.bias", "cla0.bias"):
            assert np.allclose(grads[name], 0.0, atol=1e-12), name
        assert np.abs(grads["cla1.bias"]).max() > 1e-6


def _tiny_dataset(rng, n_per_class, num_classes, n_points=12):
    lines = []
    labels = []
    protos = [random_polyline(rng, n_points, scale=30.0)
              for _ in range(num_classes)]
    for c, proto in enumerate(protos):
        for _ in range(n_per_class):
            lines.append(proto + rng.normal(0, 0.5, size=proto.shape))
            labels.append(c)
    return LabeledDataset(streamlines=lines, labels=np.array(labels))


_FAST1 = dict(n_points=6, encoder_widths=(8, 16), classifier_hidden=(8,),
              epochs=3, batch_size=16)
_FAST2 = dict(n_points=6, encoder_widths=(8, 16), classifier_hidden=(8,),
              projector_widths=(16, 8), contrastive_epochs=2,
              contrastive_batch_size=8, epochs=3, batch_size=16)


class TestStageOneTraining:
    def test_learns_separable_data(self):
        rng = np.random.default_rng(49)
        data = _tiny_dataset(rng, 40, 2)
        result = train_stage_one(data, StageOneConfig(epochs=20, **{
            k: v for k, v in _FAST1.items() if k != "epochs"}))
        assert result.model.stage == 1
        assert result.model.num_classes == 2
        assert result.history[-1]["accuracy"] > 0.9

    def test_same_seed_is_byte_identical(self):
        rng = np.random.default_rng(50)
        data = _tiny_dataset(rng, 10, 2)
        cfg = StageOneConfig(seed=7, **_FAST1)
        a = serialize_model(train_stage_one(data, cfg).model)
        b = serialize_model(train_stage_one(data, cfg).model)
        assert a == b

    def test_different_seed_differs(self):
        rng = np.random.default_rng(51)
        data = _tiny_dataset(rng, 10, 2)
        a = serialize_model(
            train_stage_one(data, StageOneConfig(seed=0, **_FAST1)).model)
        b = serialize_model(
            train_stage_one(data, StageOneConfig(seed=1, **_FAST1)).model)
        assert a != b

    def test_validation_history(self):
        rng = np.random.default_rng(52)
        data = _tiny_dataset(rng, 12, 2)
        val = _tiny_dataset(rng, 4, 2)
        result = train_stage_one(data, StageOneConfig(**_FAST1), val=val)
        vals = [e["val_macro_f1"] for e in result.history]
        assert len(vals) == _FAST1["epochs"]
        assert all(0.0 <= v <= 1.0 for v in vals)

    def test_rejects_non_binary_labels(self):
        rng = np.random.default_rng(53)
        data = _tiny_dataset(rng, 8, 3)
        with pytest.raises(ValueError):
            train_stage_one(data, StageOneConfig(**_FAST1))

    def test_rejects_empty_dataset(self):
        data = LabeledDataset(streamlines=[], labels=np.zeros(0, dtype=int))
        with pytest.raises(ValueError):
            train_stage_one(data, StageOneConfig(**_FAST1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StageOneConfig(weight_decay=0.1).validate()
        with pytest.raises(ValueError):
            StageOneConfig(learning_rate=0.0).validate()
        with pytest.raises(ValueError):
            StageOneConfig(n_points=1).validate()
        with pytest.raises(ValueError):
            StageOneConfig(batch_size=0).validate()


class TestStageTwoTraining:
    def test_contrastive_recipe_produces_projector(self):
        rng = np.random.default_rng(54)
        data = _tiny_dataset(rng, 12, 4)
        result = train_stage_two(data, StageTwoConfig(**_FAST2))
        assert result.model.stage == 2
        assert result.model.num_classes == 4
        assert result.model.projector is not None
        phases = {e["phase"] for e in result.history}
        assert phases == {"contrastive", "downstream"}

    def test_ablation_recipe_has_no_projector(self):
        rng = np.random.default_rng(55)
        data = _tiny_dataset(rng, 12, 4)
        cfg = StageTwoConfig(use_contrastive=False, **_FAST2)
        result = train_stage_two(data, cfg)
        assert result.model.projector is None
        assert {e["phase"] for e in result.history} == {"supervised"}

    def test_head_phase_freezes_encoder(self):
        rng = np.random.default_rng(56)
        data = _tiny_dataset(rng, 12, 4)
        short = train_stage_two(
            data, StageTwoConfig(**{**_FAST2, "epochs": 0}))
        long = train_stage_two(
            data, StageTwoConfig(**{**_FAST2, "epochs": 4}))
        for name, arr in short.model.encoder.named_arrays().items():
            other = long.model.encoder.named_arrays()[name]
            assert arr.tobytes() == other.tobytes(), name

    def test_same_seed_is_byte_identical(self):
        rng = np.random.default_rng(57)
        data = _tiny_dataset(rng, 10, 4)
        cfg = StageTwoConfig(seed=3, **_FAST2)
        a = serialize_model(train_stage_two(data, cfg).model)
        b = serialize_model(train_stage_two(data, cfg).model)
        assert a == b

    def test_odd_inferred_classes_rejected(self):
        rng = np.random.default_rng(58)
        data = _tiny_dataset(rng, 8, 3)
        with pytest.raises(ValueError, match="odd"):
            train_stage_two(data, StageTwoConfig(**_FAST2))

    def test_explicit_classes_with_missing_labels_warns(self):
        rng = np.random.default_rng(59)
        data = _tiny_dataset(rng, 8, 2)
        with pytest.warns(UserWarning, match="absent"):
            result = train_stage_two(data, StageTwoConfig(**_FAST2),
                                     num_classes=6)
        assert result.model.num_classes == 6

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StageTwoConfig(projector_widths=(8,)).validate()
        with pytest.raises(ValueError):
            StageTwoConfig(temperature=-1.0).validate()
        with pytest.raises(ValueError):
            StageTwoConfig(contrastive_learning_rate=0.0).validate()
        with pytest.raises(ValueError):
            StageTwoConfig(weight_decay=1e-4).validate()

    def test_best_validation_epoch_is_returned(self):
        rng = np.random.default_rng(60)
        data = _tiny_dataset(rng, 12, 4)
        val = _tiny_dataset(rng, 5, 4)
        cfg = StageTwoConfig(use_contrastive=False,
                             **{**_FAST2, "epochs": 6})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = train_stage_two(data, cfg, val=val)
        recorded = [e["val_macro_f1"] for e in result.history]
        from swmparc.evaluation import macro_f1
        from swmparc.network import classify, encode, predict
        x = resample_many(val.streamlines, cfg.n_points)
        pred = predict(classify(result.model.classifier,
                                encode(result.model.encoder, x).g))
        got = macro_f1(pred, val.labels, num_classes=4).mean
        assert got == pytest.approx(max(recorded), abs=1e-12)


class TestContrastiveBatch:
    def test_mirrors_and_tiles(self):
        rng = np.random.default_rng(61)
        x = rng.normal(size=(10, 6, 3))
        labels = rng.integers(0, 3, size=10)
        idx = np.array([2, 5, 7])
        xb, yb = contrastive_batch(x, labels, idx)
        assert xb.shape == (6, 6, 3)
        assert np.array_equal(xb[:3], x[idx])
        assert np.array_equal(xb[3:], reflect_bilateral(x[idx]))
        assert np.array_equal(yb, np.concatenate([labels[idx], labels[idx]]))
