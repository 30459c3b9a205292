import math

import numpy as np
import pytest

from features.labeling import SoftLabel
from model import layers
from model.checkpoint_manager import CheckpointManager
from model.network import (
    LOSS_EPS, ModelConfig, ModelParams, ProbabilityPair, bce, count_parameters, forward, forward_batch,
    infer_shapes, init_params, loss, loss_and_grads, param_shapes, predict, zero_params,
)
from model.optimizer import nadam_step
from model.trainer import TrainConfig, balanced_indices, check_dataset, dataset_loss, train, train_epoch
from recordings.signal_io import TAG_CROSSING, TAG_ICTAL, TAG_INTERICTAL
from shared.errors import DataError, NonFiniteGradientError, ShapeMismatchError


def numeric_grad(f, x, h):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def random_features(rng, cfg, n):
    return {s: rng.uniform(0, 1, (n, cfg.channels, cfg.kept_bins, 2 ** s - 1)) for s in cfg.scales}


def activation_pattern(probs, cache):
    """ReLU signs, max-pool winners and the loss clip of one forward pass;
    the network is smooth in its parameters while these stay fixed."""
    parts = [(probs > LOSS_EPS) & (probs < 1 - LOSS_EPS)]
    for blocks, _, c_relu in cache["scales"].values():
        for _, c_relu_b, c_pool in blocks:
            parts += [c_relu_b > 0, c_pool[3]]
        parts.append(c_relu > 0)
    for _, c_relu, c_pool in cache["fuse"]:
        parts += [c_relu > 0, c_pool[3]]
    parts += [c_relu > 0 for _, c_relu in cache["head"]]
    return parts


def same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def smooth_numeric_grad(evaluate, x, h=1e-3, smallest=1e-9):
    """Central differences taken only inside the base activation pattern.
    The step shrinks tenfold while either perturbation lands in another
    pattern; elements still on a kink at the smallest step come back NaN.
    Returns (grad, step used per element)."""
    _, base = evaluate()
    grad = np.full(x.shape, np.nan)
    steps = np.full(x.shape, np.nan)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        step = h
        while step >= smallest:
            x[idx] = old + step
            up, up_pattern = evaluate()
            x[idx] = old - step
            down, down_pattern = evaluate()
            x[idx] = old
            if same_pattern(up_pattern, base) and same_pattern(down_pattern, base):
                grad[idx] = (up - down) / (2 * step)
                steps[idx] = step
                break
            step /= 10
    return grad, steps


class TestLayerGradients:
    @pytest.mark.parametrize("x_shape,w_shape", [
        ((2, 2, 4, 5, 3), (3, 2, 3, 3, 1)),
        ((2, 1, 3, 4, 3), (2, 1, 3, 3, 3)),
        ((2, 2, 3, 6), (2, 2, 5, 5)),
    ])
    def test_conv(self, rng, x_shape, w_shape):
        x = rng.standard_normal(x_shape)
        w = rng.standard_normal(w_shape)
        b = rng.standard_normal(w_shape[0])
        out, cache = layers.conv_forward(x, w, b)
        g = rng.standard_normal(out.shape)
        dx, dw, db = layers.conv_backward(g, cache)

        def objective():
            return float((layers.conv_forward(x, w, b)[0] * g).sum())

        assert rel_error(dx, numeric_grad(objective, x, 1e-3)) < 1e-7
        assert rel_error(dw, numeric_grad(objective, w, 1e-3)) < 1e-7
        assert rel_error(db, numeric_grad(objective, b, 1e-3)) < 1e-7

    def test_conv_matches_direct_sum(self, rng):
        x = rng.standard_normal((1, 1, 4, 4))
        w = rng.standard_normal((1, 1, 3, 3))
        out, _ = layers.conv_forward(x, w, np.zeros(1))
        xp = np.pad(x[0, 0], 1)
        expected = np.array([[(xp[i:i + 3, j:j + 3] * w[0, 0]).sum() for j in range(4)] for i in range(4)])
        np.testing.assert_allclose(out[0, 0], expected, atol=1e-12)

    @pytest.mark.parametrize("shape,pool", [
        ((2, 2, 4, 6, 2), (2, 2, 2)),
        ((1, 2, 5, 4, 3), (2, 2, 1)),
        ((2, 1, 1, 5), (2, 2)),
    ])
    def test_maxpool(self, rng, shape, pool):
        # distinct values far apart so no perturbation swaps a max
        x = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.1
        out, cache = layers.maxpool_forward(x, pool)
        g = rng.standard_normal(out.shape)
        dx = layers.maxpool_backward(g, cache)

        def objective():
            return float((layers.maxpool_forward(x, pool)[0] * g).sum())

        np.testing.assert_allclose(dx, numeric_grad(objective, x, 1e-3), atol=1e-8)

    def test_clipped_pool_shapes(self):
        assert layers.pool_extent(1, 2) == (1, 1)
        assert layers.pool_extent(3, 2) == (2, 1)
        assert layers.pool_extent(7, 2) == (2, 3)

    def test_affine_and_relu(self, rng):
        x = rng.standard_normal((3, 2, 4))
        x[np.abs(x) < 0.1] += 0.5
        w = rng.standard_normal((8, 5))
        b = rng.standard_normal(5)
        g = rng.standard_normal((3, 5))

        def objective():
            z, _ = layers.affine_forward(layers.relu_forward(x)[0], w, b)
            return float((z * g).sum())

        a, c_relu = layers.relu_forward(x)
        _, c_aff = layers.affine_forward(a, w, b)
        da, dw, db = layers.affine_backward(g, c_aff)
        dx = layers.relu_backward(da, c_relu)
        assert rel_error(dx, numeric_grad(objective, x, 1e-3)) < 1e-7
        assert rel_error(dw, numeric_grad(objective, w, 1e-3)) < 1e-7
        assert rel_error(db, numeric_grad(objective, b, 1e-3)) < 1e-7

    def test_sigmoid_extremes(self):
        out = layers.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        assert out.tolist() == [0.0, 0.5, 1.0]


class TestNetworkGradients:
    @pytest.mark.parametrize("seed", range(20))
    def test_full_network_matches_finite_differences(self, tiny_model, seed):
        rng = np.random.default_rng(seed)
        params = init_params(tiny_model, seed=seed)
        for name, tensor in params.tensors.items():
            if name.endswith(".b"):
                tensor += rng.normal(0.0, 0.1, tensor.shape)
        features = random_features(rng, tiny_model, 3)
        labels = np.array([[1.0, 0.0], [0.3, 0.7], [0.0, 1.0]])
        _, grads = loss_and_grads(features, labels, params, tiny_model)

        def evaluate():
            probs, cache = forward_batch(features, params, tiny_model)
            return float(bce(probs, labels).mean()), activation_pattern(probs, cache)

        unresolved = 0
        for name, tensor in params.tensors.items():
            numeric, _ = smooth_numeric_grad(evaluate, tensor, h=1e-3)
            checked = ~np.isnan(numeric)
            unresolved += int((~checked).sum())
            analytic = grads[name][checked]
            scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric[checked]))
            assert np.linalg.norm(analytic - numeric[checked]) <= 1e-4 * scale + 1e-8, name
        assert unresolved == 0

    def test_zero_gradient_when_prediction_matches_label(self, tiny_model, rng):
        params = zero_params(tiny_model)
        features = random_features(rng, tiny_model, 2)
        value, grads = loss_and_grads(features, np.full((2, 2), 0.5), params, tiny_model)
        assert value == pytest.approx(2 * math.log(2))
        assert all(np.all(g == 0.0) for g in grads.values())

    def test_dead_relu_blocks_upstream_gradient(self, tiny_model, rng):
        params = init_params(tiny_model, seed=1)
        params.tensors["head.fc0.b"][:] = -100.0
        features = random_features(rng, tiny_model, 2)
        _, grads = loss_and_grads(features, np.array([[1.0, 0.0], [1.0, 0.0]]), params, tiny_model)
        for name, g in grads.items():
            if name != "out.b":
                assert np.all(g == 0.0), name
        assert np.any(grads["out.b"] != 0.0)


class TestArchitecture:
    def test_tiny_parameter_count(self, tiny_model):
        assert count_parameters(tiny_model) == 790
        assert init_params(tiny_model, seed=0).n_parameters() == 790

    @pytest.mark.parametrize("cfg", [
        ModelConfig(channels=23),
        ModelConfig(channels=1),
        ModelConfig.desk(channels=8),
        ModelConfig(channels=4, scales=(2, 4), fc_width=16, channel_width_multiplier=0.5),
    ])
    def test_closed_form_count_matches_shapes(self, cfg):
        assert count_parameters(cfg) == sum(int(np.prod(s)) for _, s in param_shapes(cfg))

    @pytest.mark.parametrize("channels", [1, 2, 8, 23])
    def test_no_stage_collapses_to_zero(self, channels):
        shapes = infer_shapes(ModelConfig(channels=channels))
        for stage, shape in shapes.items():
            assert all(d >= 1 for d in shape), stage

    def test_shape_trace_scale_three(self):
        shapes = infer_shapes(ModelConfig(channels=8, scales=(3,)))
        assert shapes["s3.input"] == (1, 8, 32, 7)
        assert shapes["s3.pool0"] == (16, 4, 16, 3)
        assert shapes["s3.pool1"] == (32, 2, 8, 1)
        assert shapes["s3.pool2"] == (64, 1, 4, 1)

    def test_config_dict_round_trip(self):
        cfg = ModelConfig.desk(channels=6, scales=(1, 3))
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_init_is_seeded(self, tiny_model):
        a = init_params(tiny_model, seed=11)
        b = init_params(tiny_model, seed=11)
        c = init_params(tiny_model, seed=12)
        assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)
        assert not all(np.array_equal(a.tensors[k], c.tensors[k]) for k in a.tensors)
        assert all(np.all(t == 0.0) for k, t in a.tensors.items() if k.endswith(".b"))


class TestForward:
    def test_zero_params_give_one_half(self, tiny_model, rng):
        probs, _ = forward_batch(random_features(rng, tiny_model, 4), zero_params(tiny_model), tiny_model)
        assert np.all(probs == 0.5)

    def test_outputs_are_probabilities(self, tiny_model, rng):
        probs = predict(random_features(rng, tiny_model, 10), init_params(tiny_model, 3), tiny_model)
        assert probs.shape == (10, 2)
        assert np.all((probs >= 0.0) & (probs <= 1.0))

    def test_single_matches_batch(self, tiny_model, rng):
        params = init_params(tiny_model, 3)
        features = random_features(rng, tiny_model, 3)
        batch = predict(features, params, tiny_model, batch_size=2)
        for i in range(3):
            pair = forward({s: t[i] for s, t in features.items()}, params, tiny_model)
            assert pair.p_hat_interictal == pytest.approx(batch[i, 0], abs=1e-12)
            assert pair.p_hat_ictal == pytest.approx(batch[i, 1], abs=1e-12)

    def test_wrong_channel_count(self, tiny_model, rng):
        features = random_features(rng, ModelConfig.tiny(channels=3), 1)
        with pytest.raises(ShapeMismatchError):
            forward_batch(features, init_params(tiny_model, 0), tiny_model)

    def test_missing_scale(self, tiny_model, rng):
        features = random_features(rng, tiny_model, 1)
        del features[2]
        with pytest.raises(ShapeMismatchError):
            predict(features, init_params(tiny_model, 0), tiny_model)


class TestLoss:
    def test_uninformed_prediction(self):
        assert loss(ProbabilityPair(0.5, 0.5), SoftLabel(1.0, 0.0)) == pytest.approx(2 * math.log(2))

    def test_confident_correct_prediction_is_clipped(self):
        assert loss(ProbabilityPair(1.0, 0.0), SoftLabel(1.0, 0.0)) == pytest.approx(2e-7, rel=1e-3)

    def test_matches_formula(self, rng):
        for _ in range(200):
            p = rng.uniform(0.01, 0.99, 2)
            q = rng.uniform(0.0, 1.0)
            y = np.array([1 - q, q])
            expected = -np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
            assert bce(p, y) == pytest.approx(expected, rel=1e-12)


class TestNadam:
    @pytest.fixture
    def params(self):
        return ModelParams({"w": np.zeros(3), "b": np.ones(2)})

    def test_first_step_by_hand(self, params):
        nadam_step(params, {"w": np.ones(3)}, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
        m_hat = 0.9 * 0.1 / (1 - 0.81) + 0.1 / 0.1
        v_hat = 0.001 / 0.001
        np.testing.assert_allclose(params.tensors["w"], -0.01 * m_hat / (math.sqrt(v_hat) + 1e-8))
        np.testing.assert_allclose(params.m["w"], 0.1)
        np.testing.assert_allclose(params.v["w"], 0.001)
        assert params.step == 1

    def test_zero_gradient_leaves_tensors(self, params):
        nadam_step(params, {"w": np.zeros(3), "b": np.zeros(2)})
        np.testing.assert_array_equal(params.tensors["w"], np.zeros(3))
        np.testing.assert_array_equal(params.tensors["b"], np.ones(2))
        assert params.step == 1

    def test_non_finite_gradient_changes_nothing(self, params):
        nadam_step(params, {"w": np.full(3, 0.5), "b": np.full(2, 0.5)})
        before = params.copy()
        with pytest.raises(NonFiniteGradientError):
            nadam_step(params, {"w": np.ones(3), "b": np.array([1.0, np.nan])})
        assert params.step == before.step
        for store, old in ((params.tensors, before.tensors), (params.m, before.m), (params.v, before.v)):
            for k in old:
                np.testing.assert_array_equal(store[k], old[k])

    def test_unknown_parameter(self, params):
        with pytest.raises(KeyError):
            nadam_step(params, {"missing": np.ones(1)})

    def test_tensors_update_independently(self, rng):
        g = {"w": rng.standard_normal(3), "b": rng.standard_normal(2)}
        joint = ModelParams({"w": np.zeros(3), "b": np.ones(2)})
        only_w = joint.copy()
        only_b = joint.copy()
        nadam_step(joint, g)
        nadam_step(only_w, {"w": g["w"]})
        nadam_step(only_b, {"b": g["b"]})
        np.testing.assert_array_equal(joint.tensors["w"], only_w.tensors["w"])
        np.testing.assert_array_equal(joint.tensors["b"], only_b.tensors["b"])


class TestTrainer:
    def test_balanced_subset(self, rng):
        tags = [TAG_INTERICTAL] * 50 + [TAG_ICTAL] * 6 + [TAG_CROSSING] * 4
        idx = balanced_indices(tags, rng)
        assert len(idx) == 20
        assert sum(tags[i] == TAG_INTERICTAL for i in idx) == 10
        assert set(range(50, 60)) <= set(idx.tolist())

    def test_same_seed_same_parameters(self, tiny_dataset, tiny_model):
        cfg = TrainConfig(epochs=1, batch_size=16, lr=1e-3, seed=7)
        a = train(tiny_dataset, tiny_model, cfg)
        b = train(tiny_dataset, tiny_model, cfg)
        for k in a.params.tensors:
            np.testing.assert_array_equal(a.params.tensors[k], b.params.tensors[k])
        assert a.history == b.history

    def test_loss_decreases(self, tiny_dataset, tiny_model, tmp_path):
        cfg = TrainConfig(epochs=3, batch_size=16, lr=1e-3, seed=2, balance=False)
        start = dataset_loss(init_params(tiny_model, 2), tiny_model, tiny_dataset)
        result = train(tiny_dataset, tiny_model, cfg, history_path=str(tmp_path / "history.csv"))
        frame = result.history_frame()
        assert list(frame["epoch"]) == [1, 2, 3]
        assert frame["eval_loss"].iloc[-1] < start
        assert (tmp_path / "history.csv").exists()
        assert 1 <= result.best_epoch <= 3

    def test_learns_constant_interictal_labels(self, tiny_dataset, tiny_model):
        subset = tiny_dataset.subset(np.arange(16))
        subset.labels[:] = [1.0, 0.0]
        params = init_params(tiny_model, 4)
        cfg = TrainConfig(batch_size=16, lr=0.05)
        for _ in range(80):
            train_epoch(params, subset, np.arange(16), tiny_model, cfg)
        probs = predict(subset.features, params, tiny_model)
        assert np.all(probs[:, 1] < 0.1)

    def test_empty_training_set(self, tiny_dataset):
        with pytest.raises(DataError, match="empty"):
            check_dataset(tiny_dataset.subset([]))

    def test_single_period_training_set(self, tiny_dataset, tiny_model):
        only_interictal = tiny_dataset.subset(
            [i for i, t in enumerate(tiny_dataset.tags) if t == TAG_INTERICTAL])
        with pytest.raises(DataError, match="lacks"):
            train(only_interictal, tiny_model, TrainConfig(epochs=1))


class TestCheckpoints:
    def test_round_trip(self, tmp_path, tiny_model, rng):
        manager = CheckpointManager(str(tmp_path))
        params = init_params(tiny_model, 3)
        nadam_step(params, {k: rng.standard_normal(t.shape) for k, t in params.tensors.items()})
        manager.save_checkpoint("fold0", params, tiny_model, seed=3, extra={"segment_s": 5.0})
        loaded, cfg, header = manager.load_checkpoint("fold0", expected_cfg=tiny_model)
        assert cfg == tiny_model
        assert header["extra"] == {"segment_s": 5.0}
        assert loaded.step == 1
        for store, old in ((loaded.tensors, params.tensors), (loaded.m, params.m), (loaded.v, params.v)):
            for k in old:
                np.testing.assert_array_equal(store[k], old[k])
        assert manager.list_checkpoints() == [{"name": "fold0", "seed": 3, "step": 1}]

    def test_identical_runs_write_identical_bytes(self, tmp_path, tiny_model):
        params = init_params(tiny_model, 3)
        a = CheckpointManager(str(tmp_path / "a"))
        b = CheckpointManager(str(tmp_path / "b"))
        a.save_checkpoint("m", params, tiny_model, seed=3)
        b.save_checkpoint("m", params, tiny_model, seed=3)
        for suffix in (".json", ".f64"):
            assert (tmp_path / "a" / f"m{suffix}").read_bytes() == (tmp_path / "b" / f"m{suffix}").read_bytes()

    def test_config_mismatch(self, tmp_path, tiny_model):
        manager = CheckpointManager(str(tmp_path))
        manager.save_checkpoint("m", init_params(tiny_model, 0), tiny_model, seed=0)
        with pytest.raises(DataError, match="different model config"):
            manager.load_checkpoint("m", expected_cfg=ModelConfig.tiny(channels=3))

    def test_truncated_payload(self, tmp_path, tiny_model):
        manager = CheckpointManager(str(tmp_path))
        manager.save_checkpoint("m", init_params(tiny_model, 0), tiny_model, seed=0)
        payload = tmp_path / "m.f64"
        payload.write_bytes(payload.read_bytes()[:-8])
        with pytest.raises(DataError, match="length mismatch"):
            manager.load_checkpoint("m")

    def test_params_must_fit_config(self, tmp_path, tiny_model):
        manager = CheckpointManager(str(tmp_path))
        with pytest.raises(DataError):
            manager.save_checkpoint("m", init_params(ModelConfig.tiny(scales=(1,)), 0), tiny_model, seed=0)

    def test_delete(self, tmp_path, tiny_model):
        manager = CheckpointManager(str(tmp_path))
        manager.save_checkpoint("m", init_params(tiny_model, 0), tiny_model, seed=0)
        assert manager.delete_checkpoint("m")
        assert manager.list_checkpoints() == []
