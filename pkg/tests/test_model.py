import numpy as np
import pytest

from oracles import bilstm_forward_reference, max_rel_err, model_fd_grads
from serkit.core import FeatureMatrix, GoldTrack, SegmentTimeline
from serkit.errors import FormatError, InvalidArgumentError, SchemaError
from serkit.metrics import ccc_loss
from serkit.model import (
    ModelConfig,
    OptimState,
    TrainSettings,
    adam_step,
    backward,
    forward,
    init_optim_state,
    init_params,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
    train,
    write_history_csv,
)


def _features(rows, conv="c", segment_ms=250, feature_set="mfcc-stats"):
    rows = np.asarray(rows, dtype=np.float64)
    tl = SegmentTimeline(conv, segment_ms, rows.shape[0])
    return FeatureMatrix(feature_set, rows, tl)


def _random_case(seed, t, d, layers, reducer=None):
    rng = np.random.default_rng(seed)
    config = ModelConfig(
        input_dim=d, layer_units=layers, reducer_dim=reducer, seed=seed
    )
    params = init_params(config)
    features = _features(rng.normal(0, 1, (t, d)))
    gold = GoldTrack("satisfaction", np.cumsum(rng.normal(0, 0.3, t)))
    return params, features, gold


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def test_init_deterministic():
    config = ModelConfig(input_dim=6, layer_units=(5, 3), seed=42)
    a = init_params(config)
    b = init_params(config)
    for name in a.tensors:
        assert np.array_equal(a.tensors[name], b.tensors[name])


def test_init_forget_gate_bias_is_one():
    config = ModelConfig(input_dim=4, layer_units=(3,), seed=0)
    params = init_params(config)
    bias = params.tensors["lstm0.fwd.b"]
    assert np.array_equal(bias[3:6], np.ones(3))
    assert np.array_equal(bias[:3], np.zeros(3))
    assert np.array_equal(bias[6:], np.zeros(6))


def test_layer0_gate_stacking_shape():
    config = ModelConfig(input_dim=48)
    shapes = param_shapes(config)
    assert shapes["lstm0.fwd.W"] == (4 * 200, 48)
    assert shapes["lstm1.fwd.W"] == (4 * 64, 400)
    assert shapes["out.w"] == (64,)


def test_init_rejects_bad_config():
    with pytest.raises(InvalidArgumentError):
        ModelConfig(input_dim=0)
    with pytest.raises(InvalidArgumentError):
        ModelConfig(input_dim=3, layer_units=())


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def test_forward_length_matches_input():
    params, features, _ = _random_case(1, 9, 4, (3, 2))
    assert len(forward(params, features).values) == 9
    single = _features(np.zeros((1, 4)))
    assert len(forward(params, single).values) == 1


def test_forward_zero_params_outputs_bias():
    config = ModelConfig(input_dim=3, layer_units=(4,), seed=0)
    params = init_params(config)
    for name in params.trainable_names():
        params.tensors[name][:] = 0.0
    params.tensors["out.b"][0] = 0.75
    track = forward(params, _features(np.random.default_rng(0).normal(size=(6, 3))))
    assert np.allclose(track.values, 0.75)


def test_forward_matches_step_by_step_oracle():
    params, features, _ = _random_case(7, 5, 4, (3, 2))
    ours = forward(params, features).values
    ref = bilstm_forward_reference(params, features.rows)
    assert np.max(np.abs(ours - ref)) < 1e-12


def test_forward_with_reducer_matches_oracle():
    params, features, _ = _random_case(11, 6, 5, (3,), reducer=2)
    ours = forward(params, features).values
    ref = bilstm_forward_reference(params, features.rows)
    assert np.max(np.abs(ours - ref)) < 1e-12


def test_forward_dimension_mismatch():
    params, _, _ = _random_case(1, 5, 4, (3,))
    with pytest.raises(SchemaError):
        forward(params, _features(np.zeros((5, 3))))


def test_full_context_dependence():
    params, features, _ = _random_case(13, 8, 4, (3, 2))
    base = forward(params, features).values
    rows = features.rows.copy()
    rows[-1] += 0.5
    perturbed_last = forward(params, _features(rows)).values
    assert perturbed_last[0] != base[0]  # backward direction carries it
    rows = features.rows.copy()
    rows[0] += 0.5
    perturbed_first = forward(params, _features(rows)).values
    assert perturbed_first[-1] != base[-1]  # forward direction carries it


# ---------------------------------------------------------------------------
# Backward (BPTT)
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1])
def test_backward_matches_finite_differences(seed):
    params, features, gold = _random_case(seed, 7, 3, (4, 3), reducer=3)
    analytic = backward(params, features, gold)
    numeric = model_fd_grads(params, features, gold)
    assert set(analytic) == set(numeric)
    worst = max(max_rel_err(analytic[n], numeric[n]) for n in analytic)
    assert worst < 1e-4


def test_backward_zero_variance_gold_guarded():
    params, features, _ = _random_case(3, 6, 3, (3,))
    gold = GoldTrack("satisfaction", np.full(6, 0.5))
    pred = forward(params, features).values
    grads = backward(params, features, gold)
    # Constant gold makes the covariance-form gradient vanish identically.
    for g in grads.values():
        assert np.all(np.isfinite(g))
        assert np.all(g == 0.0)
    assert np.isfinite(ccc_loss(pred, gold.values))


def test_backward_without_reducer_emits_no_reducer_grads():
    params, features, gold = _random_case(5, 6, 3, (3,))
    grads = backward(params, features, gold)
    assert not any(name.startswith("reducer.") for name in grads)
    assert not any(name.startswith("norm.") for name in grads)


def test_backward_needs_two_segments():
    params, _, _ = _random_case(5, 6, 3, (3,))
    features = _features(np.zeros((1, 3)))
    gold = GoldTrack("satisfaction", np.zeros(1))
    with pytest.raises(InvalidArgumentError):
        backward(params, features, gold)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def _scalar_params():
    config = ModelConfig(input_dim=1, layer_units=(1,), seed=0)
    params = init_params(config)
    return config, params


def test_adam_zero_gradient_keeps_params():
    _, params = _scalar_params()
    before = {k: v.copy() for k, v in params.tensors.items()}
    grads = {n: np.zeros_like(params.tensors[n]) for n in params.trainable_names()}
    state = init_optim_state(params)
    adam_step(params, grads, state)
    for name in params.tensors:
        assert np.array_equal(params.tensors[name], before[name])


def test_adam_first_step_size():
    _, params = _scalar_params()
    before = params.tensors["out.b"].copy()
    grads = {n: np.zeros_like(params.tensors[n]) for n in params.trainable_names()}
    grads["out.b"] = np.array([1.0])
    state = init_optim_state(params)
    adam_step(params, grads, state)
    # Bias correction makes m_hat = v_hat = 1: step = lr / (1 + eps).
    step = before[0] - params.tensors["out.b"][0]
    assert step == pytest.approx(0.001 / (1.0 + 1e-8), abs=1e-12)


def test_adam_steady_state_step_size():
    # Hand-iterated recurrences: with identical unit gradients every step,
    # m_hat = v_hat = 1 exactly, so each update has magnitude lr / (1 + eps).
    _, params = _scalar_params()
    grads = {n: np.zeros_like(params.tensors[n]) for n in params.trainable_names()}
    grads["out.b"] = np.array([1.0])
    state = init_optim_state(params)
    prev = params.tensors["out.b"][0]
    adam_step(params, grads, state)
    first = prev - params.tensors["out.b"][0]
    prev = params.tensors["out.b"][0]
    adam_step(params, grads, state)
    second = prev - params.tensors["out.b"][0]
    assert first == pytest.approx(0.001 / (1.0 + 1e-8), abs=1e-12)
    assert second == pytest.approx(0.001 / (1.0 + 1e-8), abs=1e-12)


def test_adam_defaults():
    state = OptimState()
    assert (state.lr, state.beta1, state.beta2, state.eps) == (0.001, 0.9, 0.999, 1e-8)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _toy_dataset(seed, n_conv, t=30, d=3):
    rng = np.random.default_rng(seed)
    data = []
    for k in range(n_conv):
        curve = np.cumsum(rng.normal(0, 0.3, t))
        curve = (curve - curve.mean()) / (np.abs(curve).max() + 1e-9)
        rows = np.stack(
            [curve + rng.normal(0, 0.05, t) for _ in range(d)], axis=1
        )
        data.append(
            (
                _features(rows, conv=f"conv{k}"),
                GoldTrack("satisfaction", curve),
            )
        )
    return data


def test_train_is_deterministic():
    data = _toy_dataset(1, 4)
    config = ModelConfig(input_dim=3, layer_units=(4, 3), seed=9)
    settings = TrainSettings(epochs=3, batch_size=2, seed=9)
    r1 = train(data[:3], data[3:], config, settings)
    r2 = train(data[:3], data[3:], config, settings)
    assert [e.train_loss for e in r1.record.epochs] == [
        e.train_loss for e in r2.record.epochs
    ]
    assert [e.dev_ccc for e in r1.record.epochs] == [
        e.dev_ccc for e in r2.record.epochs
    ]
    for name in r1.best.tensors:
        assert np.array_equal(r1.best.tensors[name], r2.best.tensors[name])


def test_train_returns_best_epoch_checkpoint():
    data = _toy_dataset(2, 4)
    config = ModelConfig(input_dim=3, layer_units=(4,), seed=1)
    result = train(data[:3], data[3:], config, TrainSettings(epochs=5, seed=1))
    record = result.record
    best = record.best_epoch
    assert record.epochs[best].dev_ccc == max(e.dev_ccc for e in record.epochs)
    from serkit.model import dev_concat_ccc

    assert dev_concat_ccc(result.best, data[3:]) == record.epochs[best].dev_ccc


def test_train_overfits_single_conversation():
    # BPTT sanity: a single short conversation is driven below 0.05 loss.
    data = _toy_dataset(3, 1, t=40)
    config = ModelConfig(input_dim=3, layer_units=(8,), seed=4)
    result = train(data, data, config, TrainSettings(epochs=300, batch_size=1, seed=4))
    losses = [e.train_loss for e in result.record.epochs]
    assert min(losses) < 0.05
    assert losses[-1] < losses[0]
    # Scoring the overfit checkpoint on its own train data clears 0.95 CCC.
    from serkit.model import dev_concat_ccc

    assert dev_concat_ccc(result.best, data) >= 0.95


def test_paper_default_hyperparameters():
    settings = TrainSettings()
    assert settings.epochs == 500
    assert settings.batch_size == 15
    assert settings.learning_rate == 0.001
    assert ModelConfig(input_dim=48).layer_units == (200, 64, 32, 32)


def test_train_rejects_empty_subsets():
    data = _toy_dataset(4, 2)
    config = ModelConfig(input_dim=3, layer_units=(4,), seed=0)
    with pytest.raises(InvalidArgumentError):
        train([], data, config, TrainSettings(epochs=1))
    with pytest.raises(InvalidArgumentError):
        train(data, [], config, TrainSettings(epochs=1))


def test_history_csv_has_no_wall_time(tmp_path):
    data = _toy_dataset(5, 2)
    config = ModelConfig(input_dim=3, layer_units=(3,), seed=0)
    result = train(data[:1], data[1:], config, TrainSettings(epochs=2, seed=0))
    path = tmp_path / "history.csv"
    write_history_csv(result.record, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,dev_ccc"
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    params, features, _ = _random_case(21, 5, 4, (3, 2), reducer=2)
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert loaded.config == params.config
    # A second round-trip is exact: stored values are f32 already.
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()
    again = load_checkpoint(path2)
    for name in loaded.tensors:
        assert np.array_equal(loaded.tensors[name], again.tensors[name])
    out1 = forward(loaded, features).values
    out2 = forward(again, features).values
    assert np.array_equal(out1, out2)


def test_checkpoint_truncated(tmp_path):
    params, _, _ = _random_case(22, 5, 4, (3,))
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_corrupt_crc(tmp_path):
    params, _, _ = _random_case(23, 5, 4, (3,))
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    data = bytearray(path.read_bytes())
    data[40] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="CRC"):
        load_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "model.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_config_mismatch(tmp_path):
    params, _, _ = _random_case(24, 5, 4, (3,))
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    other = ModelConfig(input_dim=4, layer_units=(5,), seed=24)
    with pytest.raises(FormatError, match="config"):
        load_checkpoint(path, expect_config=other)
