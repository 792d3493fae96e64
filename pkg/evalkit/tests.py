import numpy as np
import pytest

from core.errors import EvaluationError
from dataforge.physics import synth_generate
from dataforge.schemas import ShotSequence, SynthConfig
from evalkit.baseline import baseline_logistic, engineer_features, fit_logistic, predict_logistic
from evalkit.metrics import pairwise_auc, roc_auc
from evalkit.schemas import DistanceReport, DistanceRow, RowStatus
from evalkit.sweep import distance_sweep
from numcore.service import SeededRng
from seqnet.schemas import ModelConfig
from trainer.schemas import TrainConfig


# ---------- ROC / AUC ----------

def test_auc_matches_pairwise_count():
    rng = SeededRng(20780)
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        # coarse scores so ties are common
        scores = np.round(rng.normal(n), 1)
        assert roc_auc(scores, labels).auc == pairwise_auc(scores, labels)


def test_auc_fixture_value():
    assert roc_auc([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0]).auc == 0.75
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]).auc == 0.75


def test_auc_perfect_and_reversed():
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]).auc == 1.0
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]).auc == 0.0
    assert roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]).auc == 0.5


def test_auc_complement_and_monotone_invariance():
    rng = SeededRng(4)
    scores = rng.normal(200)
    labels = rng.integers(0, 2, 200)
    auc = roc_auc(scores, labels).auc
    assert auc + roc_auc(-scores, labels).auc == pytest.approx(1.0, abs=1e-12)
    assert roc_auc(np.exp(scores), labels).auc == pytest.approx(auc, abs=1e-12)
    assert roc_auc(3.0 * scores + 7.0, labels).auc == pytest.approx(auc, abs=1e-12)


def test_roc_curve_endpoints_and_csv():
    curve = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert (curve.fpr[0], curve.tpr[0], curve.thresholds[0]) == (0.0, 0.0, np.inf)
    assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    lines = curve.to_csv().splitlines()
    assert lines[0] == "fpr,tpr,threshold"
    assert len(lines) == 1 + 5


def test_tied_scores_share_one_curve_point():
    curve = roc_auc([0.5, 0.5, 0.2], [1, 0, 0])
    assert curve.fpr.tolist() == [0.0, 0.5, 1.0]
    assert curve.tpr.tolist() == [0.0, 1.0, 1.0]


def test_auc_errors():
    with pytest.raises(EvaluationError):
        roc_auc([0.2, 0.3], [1, 1])
    with pytest.raises(EvaluationError):
        roc_auc([0.2], [1])
    with pytest.raises(EvaluationError):
        roc_auc([0.2, 0.3, 0.4], [1, 0])
    with pytest.raises(EvaluationError):
        roc_auc([0.2, np.nan], [1, 0])
    with pytest.raises(EvaluationError):
        roc_auc([0.2, 0.3], [1, 2])


# ---------- Baseline ----------

def descending_sequence(end, drop_per_frame, label, shot_id):
    steps = np.arange(12)[::-1]
    features = np.zeros((12, 4))
    features[:, 0] = end[0] + 0.3 * steps
    features[:, 1] = end[1]
    features[:, 2] = end[2] + drop_per_frame * steps
    features[:, 3] = 0.04 * steps
    return ShotSequence(shot_id=shot_id, features=features, label=label)


def test_engineered_features():
    seq = descending_sequence((0.0, 0.0, 4.0), 0.4, 1, "a")
    (distance, vertical_speed, entry_angle), = engineer_features([seq])
    assert distance == pytest.approx(4.0)
    assert vertical_speed == pytest.approx(-0.4 * 25.0)
    assert entry_angle == pytest.approx(np.degrees(np.arctan2(0.4, 0.3)))


def test_logistic_separates_thresholded_feature():
    rng = SeededRng(8)
    features = rng.normal((400, 3))
    labels = (features[:, 0] > 0.2).astype(float)
    w, b, mean, std = fit_logistic(features, labels, epochs=400, lr=0.05)
    assert roc_auc(predict_logistic(features, w, b, mean, std), labels).auc >= 0.99


def test_logistic_on_random_labels_is_near_chance():
    rng = SeededRng(9)
    train_x, test_x = rng.normal((600, 3)), rng.normal((600, 3))
    train_y = rng.integers(0, 2, 600).astype(float)
    test_y = rng.integers(0, 2, 600)
    w, b, mean, std = fit_logistic(train_x, train_y, epochs=200)
    auc = roc_auc(predict_logistic(test_x, w, b, mean, std), test_y).auc
    assert 0.4 <= auc <= 0.6


def test_baseline_on_sequences():
    train = [descending_sequence((0.0, 0.0, 1.0 + 3.0 * (i % 2)), 0.4, i % 2, f"t{i}") for i in range(40)]
    test = [descending_sequence((0.0, 0.0, 1.2 + 3.0 * (i % 2)), 0.4, i % 2, f"v{i}") for i in range(10)]
    result = baseline_logistic(train, test, epochs=200)
    assert result.auc == 1.0
    assert result.weights.shape == (3,)


# ---------- Distance sweep ----------

def test_distance_report_rows_are_sorted():
    rows = [DistanceRow(cutoff_ft=3.0, model="m"), DistanceRow(cutoff_ft=2.0, model="m")]
    with pytest.raises(ValueError):
        DistanceReport(rows=rows)


def test_distance_sweep_reports_every_cutoff():
    shots = synth_generate(SynthConfig(n_shots=160, seed=21))
    report = distance_sweep(
        shots,
        cutoffs=[40.0, 2.0],
        model_config=ModelConfig(num_layers=1, units_per_layer=4, components=1),
        train_config=TrainConfig(epochs=2, batch_size=32, early_stop=False, show_progress=False),
        seed=3,
        include_baseline=True,
    )
    assert [r.cutoff_ft for r in report.rows] == [2.0, 2.0, 40.0]
    model_row, baseline_row, far_row = report.rows
    assert model_row.model == "BLSTM-MDN" and model_row.status is RowStatus.OK
    assert 0.0 <= model_row.auc <= 1.0 and model_row.n_sequences == 160
    assert baseline_row.model == "logistic"
    assert far_row.status is RowStatus.INSUFFICIENT_DATA and far_row.auc is None
    assert "BLSTM-MDN@2" in report.curves
    header = report.to_csv().splitlines()[0]
    assert header == "cutoff_ft,model,auc,best_epoch,n_parameters,wall_seconds_per_fit,n_sequences,status"


@pytest.mark.slow
def test_auc_falls_with_distance_and_beats_the_baseline():
    shots = synth_generate(SynthConfig())
    report = distance_sweep(
        shots,
        cutoffs=[2.0, 5.0, 8.0],
        model_config=ModelConfig(num_layers=2, units_per_layer=16, components=3),
        train_config=TrainConfig(epochs=40, batch_size=64, lr=3e-3, early_stop=False, show_progress=False),
        include_baseline=True,
    )
    near, far = report.auc_at(2.0, "BLSTM-MDN"), report.auc_at(8.0, "BLSTM-MDN")
    assert near is not None and far is not None
    assert near >= far
    assert report.auc_at(5.0, "BLSTM-MDN") >= report.auc_at(5.0, "logistic")
