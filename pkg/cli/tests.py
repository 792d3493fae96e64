import numpy as np
import pandas as pd
import pytest
import yaml
from typer.testing import CliRunner

from cli.commands import app
from cli.schemas import RunConfig, load_run_config
from core.errors import ExitCode, SchemaError
from dataforge.service import load_csv, rim_relative
from seqnet.checkpoint import load_checkpoint

runner = CliRunner()

SMALL = {
    "synth": {"n_shots": 150, "seed": 31},
    "model": {"num_layers": 1, "units_per_layer": 4, "components": 2},
    "train": {"epochs": 2, "batch_size": 32, "early_stop": False, "show_progress": False},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def invoke(config_file, out, *args):
    return runner.invoke(app, ["--config", str(config_file), "--out", str(out), *args])


@pytest.fixture
def shots_csv(tmp_path, config_file):
    out = tmp_path / "data"
    result = invoke(config_file, out, "synth")
    assert result.exit_code == ExitCode.OK, result.output
    return out / "shots.csv"


# ---------- RunConfig ----------

def test_run_config_defaults_and_unknown_keys(tmp_path):
    assert load_run_config(None) == RunConfig()
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  epochz: 3\n")
    with pytest.raises(SchemaError):
        load_run_config(bad)


def test_resolved_config_reloads_to_the_same_run(tmp_path, config_file):
    cfg = load_run_config(config_file).with_seed(5)
    echoed = tmp_path / "echo.yaml"
    echoed.write_text(cfg.to_yaml())
    assert load_run_config(echoed) == cfg
    assert cfg.synth.seed == cfg.train.seed == 5


# ---------- synth / prep ----------

def test_synth_writes_distinct_shots_and_is_reproducible(tmp_path, config_file, shots_csv):
    shots = load_csv(shots_csv)
    assert len({s.shot_id for s in shots}) == 150
    assert (shots_csv.parent / "resolved_config.yaml").exists()

    again = tmp_path / "again"
    assert invoke(config_file, again, "synth").exit_code == ExitCode.OK
    assert (again / "shots.csv").read_bytes() == shots_csv.read_bytes()


def test_unknown_config_key_is_an_input_error(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("modell: {}\n")
    result = invoke(bad, tmp_path / "out", "synth")
    assert result.exit_code == ExitCode.INPUT_ERROR


def test_prep_writes_split_sequences(tmp_path, config_file, shots_csv):
    out = tmp_path / "prep"
    assert invoke(config_file, out, "prep", str(shots_csv)).exit_code == ExitCode.OK
    frame = pd.read_csv(out / "sequences.csv")
    assert set(frame["split"]) == {"train", "test"}
    assert frame.groupby("shot_id").size().eq(12).all()
    assert (out / "stats.json").exists() and (out / "drops.json").exists()


def test_missing_data_file_is_an_input_error(tmp_path, config_file):
    result = invoke(config_file, tmp_path / "out", "prep", str(tmp_path / "nope.csv"))
    assert result.exit_code == ExitCode.INPUT_ERROR


# ---------- train / eval / generate ----------

def test_train_classify_and_generate_reports(tmp_path, config_file, shots_csv):
    out = tmp_path / "cls"
    assert invoke(config_file, out, "train", str(shots_csv)).exit_code == ExitCode.OK
    header = (out / "train_report.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_loss,val_auc"
    model, stats = load_checkpoint(out / "checkpoint.npz")
    assert model.config.units_per_layer == 4 and stats is not None

    rerun = tmp_path / "cls2"
    assert invoke(config_file, rerun, "train", str(shots_csv)).exit_code == ExitCode.OK
    assert (rerun / "train_report.csv").read_text() == (out / "train_report.csv").read_text()

    gen = tmp_path / "gen"
    assert invoke(config_file, gen, "train", str(shots_csv), "--task", "generate").exit_code == ExitCode.OK
    header = (gen / "train_report.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_loss,val_nll"


def test_eval_checkpoint_writes_roc(tmp_path, config_file, shots_csv):
    out = tmp_path / "run"
    assert invoke(config_file, out, "train", str(shots_csv)).exit_code == ExitCode.OK
    result = invoke(config_file, out, "eval", str(shots_csv), "--checkpoint", str(out / "checkpoint.npz"))
    assert result.exit_code == ExitCode.OK, result.output
    roc = pd.read_csv(out / "roc.csv")
    assert list(roc.columns) == ["fpr", "tpr", "threshold"]
    assert roc["fpr"].iloc[-1] == 1.0

    assert invoke(config_file, out, "eval", str(shots_csv)).exit_code == ExitCode.INPUT_ERROR


def test_generate_branches_and_rejects_short_prefix(tmp_path, config_file, shots_csv):
    out = tmp_path / "run"
    assert invoke(config_file, out, "train", str(shots_csv), "--task", "generate").exit_code == ExitCode.OK
    ckpt = str(out / "checkpoint.npz")

    result = invoke(config_file, out, "generate", ckpt, str(shots_csv), "--prefix-length", "9", "-k", "2", "-s", "3")
    assert result.exit_code == ExitCode.OK, result.output
    traj = pd.read_csv(out / "trajectories.csv", dtype={"branch_id": str})
    assert traj["branch_id"].nunique() == 8
    assert traj.groupby("branch_id").size().eq(12).all()
    assert traj.groupby("branch_id")["generated"].sum().eq(3).all()
    grids = pd.read_csv(out / "density_grids.csv")
    assert sorted(grids["step"].unique()) == [1, 2, 3]

    short = invoke(config_file, out, "generate", ckpt, str(shots_csv), "--prefix-length", "1")
    assert short.exit_code == ExitCode.INPUT_ERROR


def test_generate_prefix_comes_from_the_model_window_by_default(tmp_path, config_file, shots_csv):
    out = tmp_path / "run"
    assert invoke(config_file, out, "train", str(shots_csv), "--task", "generate").exit_code == ExitCode.OK
    ckpt = str(out / "checkpoint.npz")
    shot = rim_relative(load_csv(shots_csv)[0])
    columns = ["x", "y", "z", "clock"]

    for flag, expected in (("--from-window", shot.frames[-12:][:9]), ("--from-start", shot.frames[:9])):
        run = tmp_path / flag.strip("-")
        result = invoke(config_file, run, "generate", ckpt, str(shots_csv), "--prefix-length", "9",
                        "-k", "1", "-s", "1", flag)
        assert result.exit_code == ExitCode.OK, result.output
        traj = pd.read_csv(run / "trajectories.csv", dtype={"branch_id": str})
        observed = traj[traj["generated"] == 0][columns].to_numpy()
        assert np.allclose(observed, expected, rtol=1e-6, atol=1e-6)


# ---------- search / gradcheck ----------

def test_search_writes_ranked_trials(tmp_path, shots_csv):
    cfg = dict(SMALL, search={"params": {"lr": [0.001, 0.01]}, "strategy": "grid"})
    path = tmp_path / "search.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out = tmp_path / "search"
    assert invoke(path, out, "search", str(shots_csv)).exit_code == ExitCode.OK
    trials = pd.read_csv(out / "search_trials.csv")
    assert list(trials["rank"]) == [1, 2]
    assert set(trials["trial"]) == {0, 1}


def test_gradcheck_command_passes(tmp_path, config_file):
    result = invoke(config_file, tmp_path / "gc", "gradcheck", "--coords", "30")
    assert result.exit_code == ExitCode.OK, result.output
    assert (tmp_path / "gc" / "gradcheck.json").exists()
