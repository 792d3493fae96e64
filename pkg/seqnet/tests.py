import numpy as np
import pytest

from core.errors import DomainError, SchemaError, ShapeError, TrainingError
from dataforge.physics import synth_generate
from dataforge.schemas import FeatureStats, SynthConfig
from dataforge.service import build_dataset
from numcore.schemas import Activation
from numcore.service import SeededRng
from seqnet.checkpoint import load_checkpoint, save_checkpoint
from seqnet.generation import GenerationConfig, next_point_errors, rollout
from seqnet.gradcheck import run_gradcheck
from seqnet.schemas import BlstmLayerParams, LossSpec, LstmParams, LstmState, ModelConfig
from seqnet.service import (
    backward,
    blstm_layer_forward,
    count_parameters,
    init_model,
    lstm_step,
    make_batch,
    params_to_vector,
    stack_forward,
    vector_to_params,
    zero_model,
)
from trainer.schemas import Task, TrainConfig
from trainer.service import SplitArrays, fit


def lstm(d, h, fill=0.0, rng=None, scale=1.0) -> LstmParams:
    def make(shape):
        return scale * rng.normal(shape) if rng is not None else np.full(shape, fill)

    return LstmParams.from_stacked(make((d, 4 * h)), make((h, 4 * h)), make((4 * h,)))


def random_layer(rng, d=3, h=4, units=5) -> BlstmLayerParams:
    return BlstmLayerParams(
        forward=lstm(d, h, rng=rng, scale=0.5),
        backward=lstm(d, h, rng=rng, scale=0.5),
        W_fy=0.5 * rng.normal((h, units)),
        W_by=0.5 * rng.normal((h, units)),
        b_y=0.1 * rng.normal(units),
    )


# ---------- Cell ----------

def test_lstm_step_zero_case():
    state = lstm_step(lstm(3, 2), np.zeros(3), LstmState.zeros(2))
    assert np.all(state.h == 0.0) and np.all(state.c == 0.0)


def test_lstm_step_hand_evaluation():
    state = lstm_step(lstm(1, 1), np.zeros(1), LstmState(h=[0.0], c=[2.0]))
    assert state.c[0] == pytest.approx(1.0, abs=1e-15)
    assert state.h[0] == pytest.approx(0.380797, abs=1e-6)


def test_lstm_step_saturated_gates():
    p = lstm(2, 3)
    for name in ("b_f", "b_i", "b_o"):
        getattr(p, name)[:] = 100.0
    p.b_c[:] = np.arctanh(0.5)
    prev = LstmState(h=np.zeros(3), c=np.full(3, 0.25))
    state = lstm_step(p, np.zeros(2), prev)
    assert np.allclose(state.c, 0.75, atol=1e-12)
    assert np.allclose(state.h, np.tanh(0.75), atol=1e-12)


def test_lstm_step_hidden_is_strictly_bounded():
    rng = SeededRng(3)
    p = lstm(4, 6, rng=rng, scale=1.0)
    state = LstmState.zeros(6, batch=32)
    for _ in range(20):
        state = lstm_step(p, rng.normal((32, 4)), state)
        assert np.all(np.abs(state.h) < 1.0)
        assert np.all(np.isfinite(state.c))


def test_lstm_step_shape_errors():
    with pytest.raises(ShapeError):
        lstm_step(lstm(3, 2), np.zeros(4), LstmState.zeros(2))
    with pytest.raises(ShapeError):
        lstm_step(lstm(3, 2), np.zeros(3), LstmState.zeros(5))


# ---------- Bidirectional layer ----------

def test_zero_layer_outputs_zero():
    layer = BlstmLayerParams(forward=lstm(3, 2), backward=lstm(3, 2), W_fy=np.zeros((2, 4)),
                             W_by=np.zeros((2, 4)), b_y=np.zeros(4))
    ys = blstm_layer_forward(layer, np.ones((7, 3)))
    assert ys.shape == (7, 4) and np.all(ys == 0.0)
    assert blstm_layer_forward(layer, np.ones((1, 3))).shape == (1, 4)


def test_reversed_input_with_swapped_directions_mirrors_output():
    rng = SeededRng(5)
    layer = random_layer(rng)
    swapped = BlstmLayerParams(forward=layer.backward, backward=layer.forward,
                               W_fy=layer.W_by, W_by=layer.W_fy, b_y=layer.b_y)
    xs = rng.normal((9, 3))
    original = blstm_layer_forward(layer, xs, Activation.IDENTITY)
    mirrored = blstm_layer_forward(swapped, xs[::-1], Activation.IDENTITY)[::-1]
    assert np.allclose(original, mirrored, atol=1e-13)


def test_every_output_sees_every_input():
    rng = SeededRng(6)
    layer = random_layer(rng)
    xs = rng.normal((6, 3))
    base = blstm_layer_forward(layer, xs, Activation.IDENTITY)
    for t_changed in range(6):
        bumped = xs.copy()
        bumped[t_changed] += 0.5
        out = blstm_layer_forward(layer, bumped, Activation.IDENTITY)
        changed = np.any(np.abs(out - base) > 1e-12, axis=1)
        assert changed.all()


# ---------- Full model ----------

def test_zero_model_is_uninformative():
    result = stack_forward(zero_model(ModelConfig()), np.ones((12, 4)))
    assert float(result.logit) == 0.0
    assert float(result.hit_probability()) == 0.5
    assert result.raw_mixture.shape == (12, 3, 8)
    assert ModelConfig(units_per_layer=64, components=3).mdn_width == 24


def test_doubled_sequence_keeps_zero_logit():
    cfg = ModelConfig(seq_len=24, units_per_layer=8)
    xs = np.repeat(SeededRng(1).normal((12, 4)), 2, axis=0)
    assert float(stack_forward(zero_model(cfg), xs).logit) == 0.0


def test_sequence_length_mismatch():
    model = zero_model(ModelConfig(units_per_layer=8))
    with pytest.raises(ShapeError):
        stack_forward(model, np.zeros((11, 4)))
    with pytest.raises(ShapeError):
        stack_forward(model, np.zeros((12, 3)))


def test_bidirectional_stack_has_fewer_parameters():
    blstm = zero_model(ModelConfig(num_layers=2, units_per_layer=64, components=3))
    uni = zero_model(ModelConfig(num_layers=2, units_per_layer=64, components=3, bidirectional=False))
    assert count_parameters(blstm) < count_parameters(uni)


def test_init_is_seeded():
    cfg = ModelConfig(units_per_layer=8)
    a = params_to_vector(init_model(cfg, SeededRng(4)))
    b = params_to_vector(init_model(cfg, SeededRng(4)))
    c = params_to_vector(init_model(cfg, SeededRng(5)))
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.all(np.abs(a) <= 1.0)


def test_vector_conversion_preserves_values():
    model = init_model(ModelConfig(units_per_layer=8), SeededRng(2))
    vec = params_to_vector(model)
    assert np.array_equal(params_to_vector(vector_to_params(model, vec)), vec)
    with pytest.raises(ShapeError):
        vector_to_params(model, vec[:-1])


# ---------- Gradients ----------

@pytest.mark.parametrize("seed", [20780, 7])
def test_gradcheck_passes(seed):
    report = run_gradcheck(seed=seed)
    assert report.passed, report.worst_coordinate
    assert report.max_rel_error < 1e-4
    assert report.checked + report.skipped_kinks == 100


def test_gradcheck_passes_for_unidirectional_variant():
    cfg = ModelConfig(num_layers=2, units_per_layer=8, components=3, bidirectional=False)
    assert run_gradcheck(seed=3, config=cfg, n_coords=60).passed


def test_gradcheck_names_corrupted_coordinate():
    report = run_gradcheck(seed=1, n_coords=20, gradient_hook=lambda g: g + 1.0)
    assert not report.passed
    assert report.worst_coordinate.startswith(("layers.", "mdn_head.", "cls_head."))
    assert "[" in report.worst_coordinate


def small_batch(seed=0, size=3):
    rng = SeededRng(seed)
    return make_batch(rng.normal((size, 12, 4)), rng.integers(0, 2, size), batch_id=42)


def test_zero_weighted_terms_contribute_nothing():
    model = init_model(ModelConfig(units_per_layer=8), SeededRng(9))
    batch = small_batch()
    _, no_bce = backward(model, batch, LossSpec(bce_weight=0.0, nll_weight=1.0))
    assert np.all(no_bce.cls_head.W == 0.0) and np.all(no_bce.cls_head.b == 0.0)
    _, no_nll = backward(model, batch, LossSpec(bce_weight=1.0, nll_weight=0.0))
    assert np.all(no_nll.mdn_head.W == 0.0) and np.all(no_nll.mdn_head.b == 0.0)


def test_classifier_bias_gradient_closed_form():
    model = init_model(ModelConfig(units_per_layer=8), SeededRng(10))
    batch = small_batch(seed=4, size=1)
    _, grads = backward(model, batch, LossSpec(bce_weight=1.0, nll_weight=0.0))
    logit = float(stack_forward(model, batch.features[0]).logit)
    expected = 1.0 / (1.0 + np.exp(-logit)) - batch.labels[0]
    assert grads.cls_head.b[0] == pytest.approx(expected, abs=1e-12)


def test_non_finite_loss_reports_batch():
    model = init_model(ModelConfig(units_per_layer=8), SeededRng(11))
    model.cls_head.b[:] = np.nan
    with pytest.raises(TrainingError) as info:
        backward(model, small_batch())
    assert info.value.batch_id == 42


# ---------- Checkpoints ----------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = init_model(ModelConfig(units_per_layer=8, components=2), SeededRng(12))
    stats = FeatureStats(mean=[1.0, 2.0, 3.0, 4.0], std=[0.5, 1.5, 2.5, 3.5])
    path = save_checkpoint(model, tmp_path / "model.npz", stats)
    loaded, loaded_stats = load_checkpoint(path)
    assert loaded.config == model.config
    assert loaded_stats == stats
    for (name_a, a), (name_b, b) in zip(model.named_tensors(), loaded.named_tensors()):
        assert name_a == name_b
        assert np.array_equal(a, b)


def test_checkpoint_rejects_foreign_archives(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, weights=np.zeros(3))
    with pytest.raises(SchemaError):
        load_checkpoint(path)
    text = tmp_path / "notes.npz"
    text.write_text("not an archive")
    with pytest.raises(SchemaError):
        load_checkpoint(text)


# ---------- Generation ----------

def test_rollout_branches_k_to_the_s():
    model = init_model(ModelConfig(units_per_layer=8), SeededRng(13))
    prefix = SeededRng(14).normal((9, 4))
    result = rollout(model, prefix, GenerationConfig(branch_factor=2, steps=3, grid_resolution=11), SeededRng(1))
    assert len(result.trajectories) == 8
    assert len({t.branch_id for t in result.trajectories}) == 8
    assert "0-1-1" in {t.branch_id for t in result.trajectories}
    for traj in result.trajectories:
        assert traj.points.shape == (12, 4)
        assert np.allclose(traj.points[:9], prefix)
        assert np.allclose(np.diff(traj.points[8:, 3]), prefix[8, 3] - prefix[7, 3])
    assert len(result.grids) == 9
    assert sorted({g.step for g in result.grids}) == [1, 2, 3]


def test_forced_sigma_rollout_follows_means():
    model = init_model(ModelConfig(units_per_layer=8, components=1), SeededRng(15))
    prefix = SeededRng(16).normal((6, 4))
    cfg = GenerationConfig(branch_factor=1, steps=3, forced_log_sigma=-30.0, grid_resolution=5)
    a = rollout(model, prefix, cfg, SeededRng(1)).trajectories
    b = rollout(model, prefix, cfg, SeededRng(2)).trajectories
    assert len(a) == 1
    assert np.allclose(a[0].points, b[0].points, atol=1e-9)
    seq = prefix
    for _ in range(3):
        mean = stack_forward(model, seq, strict=False).raw_mixture[-1, 0, 1:4]
        nxt = np.append(seq[-1, :3] + mean, 2 * seq[-1, 3] - seq[-2, 3])
        seq = np.vstack([seq, nxt])
    assert np.allclose(a[0].points, seq, atol=1e-9)


def test_rollout_maps_back_to_feet():
    model = init_model(ModelConfig(units_per_layer=8), SeededRng(17))
    stats = FeatureStats(mean=[-10.0, 0.0, 5.0, 300.0], std=[4.0, 3.0, 2.0, 100.0])
    prefix = SeededRng(18).normal((5, 4))
    result = rollout(model, prefix, GenerationConfig(branch_factor=1, steps=1, grid_resolution=5),
                     SeededRng(3), stats)
    assert np.allclose(result.trajectories[0].points[:5], stats.invert(prefix))


def test_rollout_needs_two_prefix_frames():
    model = zero_model(ModelConfig(units_per_layer=8))
    with pytest.raises(DomainError):
        rollout(model, np.zeros((1, 4)), GenerationConfig(), SeededRng(1))


def test_next_point_errors_shape():
    model = init_model(ModelConfig(units_per_layer=8), SeededRng(19))
    errors = next_point_errors(model, SeededRng(20).normal((3, 12, 4)), prefix_length=9)
    assert errors.shape == (3,) and np.all(errors >= 0)


@pytest.mark.slow
def test_trained_generator_places_the_tenth_point_near_the_truth():

    data = build_dataset(synth_generate(SynthConfig(n_shots=1500, seed=31)), seed=31)
    arrays = SplitArrays.from_prepared(data)
    model = init_model(ModelConfig(num_layers=2, units_per_layer=32), SeededRng(32))
    best, _ = fit(model, arrays, TrainConfig(task=Task.GENERATE, epochs=30, early_stop=False, show_progress=False))
    errors = next_point_errors(best, arrays.x_val[:100], data.stats)
    assert errors.shape == (100,)
    assert np.mean(errors <= 1.5) >= 0.8
