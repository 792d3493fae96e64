import math

import numpy as np
import pytest

from core.errors import DomainError, ExitCode, ShapeError, TrainingError
from dataforge.physics import synth_generate
from dataforge.schemas import SynthConfig
from dataforge.service import build_dataset
from numcore.service import SeededRng
from seqnet.schemas import ModelConfig
from seqnet.service import init_model, params_to_vector
from trainer import service as trainer_service
from trainer.optim import adam_step, clip_global_norm, early_stop_check, global_norm, init_adam
from trainer.schemas import (
    AdamHyper,
    RangeSpec,
    SearchSpace,
    SearchStrategy,
    StopDecision,
    Task,
    TrainConfig,
    TrialResult,
)
from trainer.search import rank_trials, random_points, search
from trainer.service import SplitArrays, fit

TINY = ModelConfig(num_layers=1, units_per_layer=4, components=1)


def toy_data(seed=0, n_train=24, n_val=8) -> SplitArrays:
    """Noisy straight-line sequences with alternating labels."""
    rng = SeededRng(seed)

    def make(n):
        t = np.linspace(0.0, 1.0, 12)
        start = rng.normal((n, 1, 4))
        slope = rng.normal((n, 1, 4))
        xs = start + slope * t[None, :, None] + 0.05 * rng.normal((n, 12, 4))
        labels = (np.arange(n) % 2).astype(np.float64)
        return xs, labels

    x_train, y_train = make(n_train)
    x_val, y_val = make(n_val)
    return SplitArrays(x_train, y_train, x_val, y_val)


def quick(**overrides) -> TrainConfig:
    base = dict(epochs=3, batch_size=8, early_stop=False, show_progress=False, seed=5)
    base.update(overrides)
    return TrainConfig(**base)


# ---------- Adam ----------

def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -2.0])}
    state = init_adam(params, AdamHyper(lr=1e-3))
    adam_step(state, params, {"w": np.array([0.5, -3.0])})
    assert params["w"][0] == pytest.approx(1.0 - 1e-3, abs=1e-9)
    assert params["w"][1] == pytest.approx(-2.0 + 1e-3, abs=1e-9)
    assert state.step == 1


def test_adam_zero_gradient_is_a_no_op():
    params = {"w": np.array([0.3, 0.7])}
    state = init_adam(params)
    for _ in range(5):
        adam_step(state, params, {"w": np.zeros(2)})
    assert np.array_equal(params["w"], [0.3, 0.7])


def test_adam_constant_gradient_steps_by_learning_rate():
    params = {"w": np.zeros(1)}
    state = init_adam(params, AdamHyper(lr=0.01))
    for _ in range(100):
        adam_step(state, params, {"w": np.array([2.0])})
    assert params["w"][0] == pytest.approx(-1.0, rel=1e-6)


def test_adam_is_odd_in_the_gradient():
    a, b = {"w": np.zeros(3)}, {"w": np.zeros(3)}
    sa, sb = init_adam(a), init_adam(b)
    rng = SeededRng(1)
    for _ in range(10):
        g = rng.normal(3)
        adam_step(sa, a, {"w": g})
        adam_step(sb, b, {"w": -g})
    assert np.allclose(a["w"], -b["w"], atol=1e-15)


def test_adam_rejects_bad_gradients():
    params = {"w": np.zeros(2)}
    state = init_adam(params)
    with pytest.raises(ShapeError):
        adam_step(state, params, {"w": np.zeros(3)})
    with pytest.raises(TrainingError):
        adam_step(state, params, {"w": np.array([np.nan, 0.0])})
    assert state.step == 0


def test_clip_global_norm():
    grads = {"a": np.array([6.0]), "b": np.array([8.0])}
    assert clip_global_norm(grads, 5.0) == pytest.approx(10.0)
    assert global_norm(grads) == pytest.approx(5.0)
    assert grads["a"][0] == pytest.approx(3.0)
    assert clip_global_norm(grads, None) == pytest.approx(5.0)


# ---------- Early stop ----------

def test_early_stop_rule():
    history = [1.0] * 10
    assert early_stop_check(history, 0.89) is StopDecision.STOP
    assert early_stop_check(history, 0.95) is StopDecision.CONTINUE
    assert early_stop_check(history[:5], 0.1) is StopDecision.CONTINUE
    assert early_stop_check(history, 1.2, comparator="rise") is StopDecision.STOP
    with pytest.raises(DomainError):
        early_stop_check(history, 0.5, factor=1.5)


def test_early_stop_margin_scales_with_negative_losses():
    history = [-10.0] * 10
    assert early_stop_check(history, -10.5) is StopDecision.CONTINUE
    assert early_stop_check(history, -11.5) is StopDecision.STOP
    assert early_stop_check(history, -8.0, comparator="rise") is StopDecision.STOP
    assert early_stop_check(history, -10.0, comparator="rise") is StopDecision.CONTINUE


# ---------- fit ----------

def test_zero_learning_rate_keeps_parameters_and_losses():
    model = init_model(TINY, SeededRng(2))
    best, report = fit(model, toy_data(), quick(lr=0.0, grad_clip=None))
    assert np.array_equal(params_to_vector(best), params_to_vector(model))
    losses = [r.train_loss for r in report.epochs]
    assert losses == pytest.approx([losses[0]] * len(losses), rel=1e-12)
    assert report.stop_epoch == 3 and not report.stopped_early


def test_fit_is_deterministic_and_leaves_input_untouched():
    model = init_model(TINY, SeededRng(2))
    before = params_to_vector(model).copy()
    best_a, report_a = fit(model, toy_data(), quick())
    best_b, report_b = fit(model, toy_data(), quick())
    assert report_a.to_csv() == report_b.to_csv()
    assert np.array_equal(params_to_vector(best_a), params_to_vector(best_b))
    assert np.array_equal(params_to_vector(model), before)
    assert report_a.to_csv().splitlines()[0] == "epoch,train_loss,val_loss,val_auc"


def test_generation_task_reduces_validation_nll():
    model = init_model(TINY, SeededRng(3))
    _, report = fit(model, toy_data(seed=1), quick(task=Task.GENERATE, epochs=25, lr=0.01))
    nlls = [r.val_nll for r in report.epochs]
    assert all(v is not None for v in nlls)
    assert min(nlls) < nlls[0]
    assert report.epochs[-1].train_loss < report.epochs[0].train_loss
    assert report.to_csv().splitlines()[0] == "epoch,train_loss,val_loss,val_nll"


def test_early_stop_cannot_fire_before_window_fills(monkeypatch):
    def eager(history, current, factor, window, comparator):
        return StopDecision.STOP if len(history) >= window else StopDecision.CONTINUE

    monkeypatch.setattr(trainer_service, "early_stop_check", eager)
    model = init_model(TINY, SeededRng(4))
    _, report = fit(model, toy_data(), quick(epochs=20, early_stop=True, early_stop_window=3))
    assert report.stopped_early
    assert report.stop_epoch == 4
    assert 1 <= report.best_epoch <= 4


def test_divergence_names_epoch_and_batch():
    model = init_model(TINY, SeededRng(5))
    model.cls_head.b[:] = np.nan
    with pytest.raises(TrainingError) as info:
        fit(model, toy_data(), quick())
    assert info.value.epoch == 1 and info.value.batch_id == 0
    assert info.value.exit_code == ExitCode.DIVERGED


def test_fit_rejects_mismatched_data():
    model = init_model(ModelConfig(num_layers=1, units_per_layer=4, components=1, seq_len=10), SeededRng(6))
    with pytest.raises(ShapeError):
        fit(model, toy_data(), quick())


# ---------- Search ----------

def test_grid_search_runs_every_combination_within_budget():
    space = SearchSpace(params={"units_per_layer": [4, 6], "lr": [0.001, 0.003, 0.01]})
    results = search(space, toy_data(), TINY, quick(epochs=1))
    assert len(results) == 6
    assert sorted(r.trial for r in results) == list(range(6))

    capped = search(space.model_copy(update={"budget": 4}), toy_data(), TINY, quick(epochs=1))
    assert len(capped) == 4


def test_random_search_is_seeded():
    space = SearchSpace(
        params={"lr": RangeSpec(low=1e-4, high=1e-1, log=True), "units_per_layer": [4, 8], "epochs": RangeSpec(low=1, high=5)},
        strategy=SearchStrategy.RANDOM,
        budget=7,
    )
    a, b = random_points(space, 11), random_points(space, 11)
    assert a == b
    assert all(1e-4 <= p["lr"] <= 1e-1 for p in a)
    assert all(isinstance(p["epochs"], int) for p in a)
    assert random_points(space, 12) != a


def test_search_rejects_bad_spaces():
    with pytest.raises(DomainError):
        search(SearchSpace(params={}), toy_data(), TINY, quick(epochs=1))
    with pytest.raises(DomainError):
        search(SearchSpace(params={"lr": []}), toy_data(), TINY, quick(epochs=1))
    with pytest.raises(DomainError):
        search(SearchSpace(params={"dropout": [0.1]}), toy_data(), TINY, quick(epochs=1))
    with pytest.raises(DomainError):
        search(SearchSpace(params={"lr": RangeSpec(low=0.0, high=1.0)}), toy_data(), TINY, quick(epochs=1))
    with pytest.raises(DomainError):
        search(SearchSpace(params={"units_per_layer": [5]}), toy_data(), TINY, quick(epochs=1))


def test_ranking_puts_missing_metrics_last_and_keeps_trial_order_on_ties():
    def trial(i, metric):
        return TrialResult(trial=i, params={}, metric=metric, metric_name="val_auc", best_epoch=1,
                           stop_epoch=1, n_parameters=1, wall_seconds=0.0)

    ranked = rank_trials([trial(0, 0.6), trial(1, math.nan), trial(2, 0.8), trial(3, 0.6)])
    assert [r.trial for r in ranked] == [2, 0, 3, 1]


def test_classifier_without_signal_stays_near_chance():
    data = toy_data(seed=7, n_train=200, n_val=600)
    rng = SeededRng(8)
    data = data._replace(
        y_train=rng.integers(0, 2, 200).astype(np.float64),
        y_val=rng.integers(0, 2, 600).astype(np.float64),
    )
    model = init_model(TINY, SeededRng(9))
    _, report = fit(model, data, quick(epochs=50, batch_size=50, nll_weight=0.0))
    aucs = [r.val_auc for r in report.epochs]
    assert all(0.4 <= a <= 0.6 for a in aucs)


def test_classify_loss_averages_nll_over_predicted_steps():
    assert TrainConfig(nll_weight=0.5).loss_spec.nll_weight == pytest.approx(0.5 / 11)
    assert TrainConfig(nll_weight=0.5, nll_reduction="sum").loss_spec.nll_weight == 0.5
    assert TrainConfig(task=Task.GENERATE).loss_spec.nll_weight == 1.0


@pytest.mark.parametrize("monitor, series", [("bce", "val_bce"), ("loss", "val_loss")])
def test_best_epoch_follows_the_monitored_series(monitor, series):
    model = init_model(TINY, SeededRng(10))
    _, report = fit(model, toy_data(seed=2), quick(epochs=8, lr=0.02, monitor=monitor))
    values = [getattr(r, series) for r in report.epochs]
    assert report.best_epoch == int(np.argmin(values)) + 1
    assert all(r.val_bce is not None for r in report.epochs)
    assert "best_val_bce=" in report.summary()


@pytest.mark.slow
def test_generation_training_lowers_the_nll_on_synthetic_shots():
    data = build_dataset(synth_generate(SynthConfig(n_shots=2000, seed=41)), seed=41)
    model = init_model(ModelConfig(num_layers=1, units_per_layer=8, components=2), SeededRng(42))
    cfg = TrainConfig(task=Task.GENERATE, epochs=50, batch_size=64, lr=0.01, early_stop=False, show_progress=False)
    _, report = fit(model, data, cfg)
    assert report.stop_epoch == 50
    assert report.epochs[-1].train_loss < report.epochs[0].train_loss
    assert report.best.val_nll < report.epochs[0].val_nll
