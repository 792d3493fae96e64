"""
Command-line surface: `python manage.py <command>`.

Every command resolves its RunConfig (YAML file, then --seed/--out overrides),
echoes it to the output directory and writes its artifacts atomically. Errors
map to stable exit codes through core.errors.
"""

import functools
import json
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
import typer
from pydantic import ValidationError
from rich.table import Table

from config import settings
from core.errors import DomainError, ExitCode, HoopnetError, SchemaError
from core.files import atomic_write_text
from core.telemetry import configure_logging, console, timed
from dataforge.physics import synth_generate
from dataforge.schemas import CourtSpec, RawShot
from dataforge.service import build_dataset, load_csv, prepare_sequences, rim_relative, write_csv, write_sequences_csv
from evalkit.metrics import roc_auc
from evalkit.sweep import distance_sweep
from numcore.service import SeededRng
from seqnet.checkpoint import load_checkpoint, save_checkpoint
from seqnet.generation import IDENTITY_STATS, GenerationConfig, next_point_errors, rollout
from seqnet.gradcheck import run_gradcheck
from seqnet.service import count_parameters, init_model
from trainer.schemas import Task
from trainer.search import search as run_search, trials_to_frame
from trainer.service import evaluate, fit
from .schemas import RunConfig, load_run_config, write_resolved_config

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, no_args_is_help=True, help="Shot trajectory models: data, training, evaluation.")

NEXT_POINT_RADIUS_FT = 1.5


def _cfg(ctx: typer.Context) -> RunConfig:
    return ctx.obj["config"]


def _out(ctx: typer.Context, name: str) -> Path:
    return Path(_cfg(ctx).out_dir) / name


def handle_errors(fn):
    """Translate package errors into exit codes with a one-line message."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except HoopnetError as exc:
            console.print(f"[red]error:[/red] {exc}")
            raise typer.Exit(exc.exit_code)
        except ValidationError as exc:
            console.print(f"[red]error:[/red] {exc.errors()[0]['msg']}")
            raise typer.Exit(ExitCode.INPUT_ERROR)
        except OSError as exc:
            console.print(f"[red]error:[/red] {exc}")
            raise typer.Exit(ExitCode.INPUT_ERROR)

    return wrapper


@app.callback()
def main(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(None, "--config", help="YAML run configuration."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override every seed in the configuration."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory."),
):
    try:
        cfg = load_run_config(config)
    except (HoopnetError, OSError) as exc:
        console.print(f"[red]error:[/red] {exc}")
        raise typer.Exit(ExitCode.INPUT_ERROR)
    if seed is not None:
        if seed < 0:
            console.print("[red]error:[/red] seed must be non-negative")
            raise typer.Exit(ExitCode.INPUT_ERROR)
        cfg = cfg.with_seed(seed)
    if out is not None:
        cfg = cfg.model_copy(update={"out_dir": out})
    configure_logging(cfg.log_level)
    ctx.obj = {"config": cfg}


def _echo_config(cfg: RunConfig) -> None:
    path = write_resolved_config(cfg)
    logger.info("wrote %s", path)


def _load_shots(path: Path, court: CourtSpec) -> List[RawShot]:
    shots = load_csv(path, court)
    if not shots:
        raise SchemaError(f"{path}: no shots")
    return shots


def _summary(title: str, rows) -> None:
    table = Table(title=title, show_header=False)
    for key, value in rows:
        table.add_row(key, str(value))
    console.print(table)


@app.command()
@handle_errors
def synth(ctx: typer.Context, out_csv: Optional[Path] = typer.Argument(None, help="Defaults to <out>/shots.csv.")):
    """Generate a synthetic shot dataset with oracle labels."""
    cfg = _cfg(ctx)
    _echo_config(cfg)
    shots = synth_generate(cfg.synth)
    path = write_csv(shots, out_csv or _out(ctx, "shots.csv"))
    _, drops = prepare_sequences(shots, cfg.court)
    hit_rate = float(np.mean([s.label for s in shots]))
    logger.info("wrote %s", path)
    _summary("synth", [
        ("shots", len(shots)), ("hit rate", f"{hit_rate:.4f}"),
        ("too short", drops.dropped_short), ("file", path),
    ])


@app.command()
@handle_errors
def prep(ctx: typer.Context, data_csv: Path = typer.Argument(..., help="Shot CSV.")):
    """Preprocess, split and standardize; writes sequences, stats and the drop report."""
    cfg = _cfg(ctx)
    _echo_config(cfg)
    data = build_dataset(_load_shots(data_csv, cfg.court), cfg.court, cfg.cutoff_ft, cfg.seed)
    seq_path = write_sequences_csv(data.train + data.test, _out(ctx, "sequences.csv"), data.split)
    stats_path = atomic_write_text(_out(ctx, "stats.json"), data.stats.model_dump_json(indent=2))
    drops = data.drops.model_dump()
    drops.update(dropped=data.drops.dropped, drop_rate=data.drops.drop_rate)
    drop_path = atomic_write_text(_out(ctx, "drops.json"), json.dumps(drops, indent=2))
    for p in (seq_path, stats_path, drop_path):
        logger.info("wrote %s", p)
    _summary("prep", [
        ("train", len(data.train)), ("test", len(data.test)),
        ("dropped", f"{data.drops.dropped} ({100 * data.drops.drop_rate:.2f}%)"),
    ])


@app.command()
@handle_errors
def train(
    ctx: typer.Context,
    data_csv: Path = typer.Argument(..., help="Shot CSV."),
    task: Optional[Task] = typer.Option(None, help="Override the configured task."),
):
    """Train a model; writes checkpoint.npz and train_report.csv."""
    cfg = _cfg(ctx)
    if task is not None:
        cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"task": task})})
        ctx.obj["config"] = cfg
    _echo_config(cfg)
    data = build_dataset(_load_shots(data_csv, cfg.court), cfg.court, cfg.cutoff_ft, cfg.seed)
    model = init_model(cfg.model, SeededRng(cfg.seed))
    best, report = fit(model, data, cfg.train)
    ckpt = save_checkpoint(best, _out(ctx, "checkpoint.npz"), data.stats)
    report_path = atomic_write_text(_out(ctx, "train_report.csv"), report.to_csv())
    logger.info("wrote %s and %s", ckpt, report_path)
    _summary("train", [(k, v) for k, v in (p.split("=") for p in report.summary().split())])


@app.command(name="eval")
@handle_errors
def evaluate_cmd(
    ctx: typer.Context,
    data_csv: Path = typer.Argument(..., help="Shot CSV."),
    checkpoint: Optional[Path] = typer.Option(None, help="Score this checkpoint on the held-out split."),
    sweep: bool = typer.Option(False, "--sweep", help="Train and score a fresh model at every configured cutoff."),
    next_point: bool = typer.Option(False, "--next-point", help="Also measure next-point density-mode errors."),
    max_shots: int = typer.Option(100, min=1, help="Held-out shots used for --next-point."),
):
    """Held-out AUC and ROC for a checkpoint, or the AUC-by-distance sweep."""
    cfg = _cfg(ctx)
    if checkpoint is None and not sweep:
        raise DomainError("give --checkpoint, --sweep or both")
    _echo_config(cfg)
    shots = _load_shots(data_csv, cfg.court)

    if checkpoint is not None:
        model, stats = load_checkpoint(checkpoint)
        data = build_dataset(shots, cfg.court, cfg.cutoff_ft, cfg.seed)
        stats = stats or data.stats
        x_test = np.stack([stats.apply(s.features) for s in data.test_raw])
        y_test = np.array([s.label for s in data.test_raw], dtype=np.float64)
        ev = evaluate(model, x_test, y_test, cfg.train.loss_spec)
        curve = roc_auc(ev.probabilities, y_test)
        roc_path = atomic_write_text(_out(ctx, "roc.csv"), curve.to_csv())
        logger.info("wrote %s", roc_path)
        rows = [("auc", f"{curve.auc:.4f}"), ("test loss", f"{ev.loss:.5g}"), ("test sequences", len(y_test))]
        if next_point:
            errors = next_point_errors(model, x_test[:max_shots], stats)
            within = float(np.mean(errors <= NEXT_POINT_RADIUS_FT))
            rows += [("median next-point error ft", f"{np.median(errors):.3f}"),
                     (f"within {NEXT_POINT_RADIUS_FT} ft", f"{within:.3f}")]
        _summary("eval", rows)

    if sweep:
        report = distance_sweep(
            shots, cfg.cutoffs_ft, cfg.model, cfg.train, cfg.court, cfg.seed, cfg.include_baseline,
        )
        report_path = atomic_write_text(_out(ctx, "distance_report.csv"), report.to_csv())
        for key, curve in report.curves.items():
            atomic_write_text(_out(ctx, f"roc_{key.replace('@', '_')}ft.csv"), curve.to_csv())
        logger.info("wrote %s and %d ROC curves", report_path, len(report.curves))
        console.print(report.to_frame().to_string(index=False))


@app.command()
@handle_errors
def search(ctx: typer.Context, data_csv: Path = typer.Argument(..., help="Shot CSV.")):
    """Grid or random hyperparameter search over the configured space."""
    cfg = _cfg(ctx)
    if cfg.search is None:
        raise SchemaError("configuration has no `search` section")
    _echo_config(cfg)
    data = build_dataset(_load_shots(data_csv, cfg.court), cfg.court, cfg.cutoff_ft, cfg.seed)
    results = run_search(cfg.search, data, cfg.model, cfg.train, cfg.seed)
    frame = trials_to_frame(results)
    path = atomic_write_text(
        _out(ctx, "search_trials.csv"), frame.to_csv(index=False, float_format="%.6g", lineterminator="\n"),
    )
    logger.info("wrote %s", path)
    console.print(frame.head(10).to_string(index=False))


@app.command()
@handle_errors
def generate(
    ctx: typer.Context,
    checkpoint: Path = typer.Argument(..., help="Trained checkpoint."),
    prefix_csv: Path = typer.Argument(..., help="Shot CSV holding the observed prefix."),
    shot_id: Optional[str] = typer.Option(None, help="Shot to continue; defaults to the first in the file."),
    prefix_length: Optional[int] = typer.Option(None, help="Use only the first N frames of the prefix."),
    from_window: bool = typer.Option(
        True, "--from-window/--from-start",
        help="Take the prefix from the last-12-frame model window or from the start of the shot.",
    ),
    branch_factor: Optional[int] = typer.Option(None, "-k", "--branch-factor", help="Samples per step (K)."),
    steps: Optional[int] = typer.Option(None, "-s", "--steps", help="Generated points (S)."),
    forced_log_sigma: Optional[float] = typer.Option(None, help="Override every log-sigma output."),
):
    """Branching K^S trajectory rollout plus per-step density grids."""
    cfg = _cfg(ctx)
    overrides = {
        k: v for k, v in dict(branch_factor=branch_factor, steps=steps, forced_log_sigma=forced_log_sigma).items()
        if v is not None
    }
    gen_cfg = GenerationConfig.model_validate({**cfg.generation.model_dump(), **overrides})
    cfg = cfg.model_copy(update={"generation": gen_cfg})
    ctx.obj["config"] = cfg
    _echo_config(cfg)

    model, stats = load_checkpoint(checkpoint)
    stats = stats or IDENTITY_STATS
    shots = _load_shots(prefix_csv, cfg.court)
    if shot_id is None:
        shot = shots[0]
    else:
        matches = [s for s in shots if s.shot_id == shot_id]
        if not matches:
            raise SchemaError(f"{prefix_csv}: no shot {shot_id!r}")
        shot = matches[0]
    frames = rim_relative(shot, cfg.court).frames
    if from_window:
        frames = frames[-settings.SEQUENCE_LENGTH:]
    if prefix_length is not None:
        frames = frames[:prefix_length]

    with timed() as clock:
        result = rollout(model, stats.apply(frames), gen_cfg, SeededRng(cfg.seed), stats)
    traj_frames = []
    for t in result.trajectories:
        n = t.points.shape[0]
        traj_frames.append(pd.DataFrame({
            "branch_id": [t.branch_id] * n,
            "frame_idx": np.arange(n),
            "x": t.points[:, 0], "y": t.points[:, 1], "z": t.points[:, 2], "clock": t.points[:, 3],
            "generated": (np.arange(n) >= t.prefix_length).astype(int),
        }))
    grid_frames = [
        g.to_frame().assign(step=g.step, plane=g.plane.value, mode=g.mode.value)[["step", "plane", "mode", "u", "v", "density"]]
        for g in result.grids
    ]
    traj_path = atomic_write_text(
        _out(ctx, "trajectories.csv"),
        pd.concat(traj_frames, ignore_index=True).to_csv(index=False, float_format="%.10g", lineterminator="\n"),
    )
    grid_path = atomic_write_text(
        _out(ctx, "density_grids.csv"),
        pd.concat(grid_frames, ignore_index=True).to_csv(index=False, float_format="%.6g", lineterminator="\n"),
    )
    logger.info("wrote %s and %s", traj_path, grid_path)
    _summary("generate", [
        ("trajectories", len(result.trajectories)), ("prefix frames", frames.shape[0]),
        ("parameters", count_parameters(model)), ("latency ms", clock["latency_ms"]),
    ])


@app.command()
@handle_errors
def gradcheck(
    ctx: typer.Context,
    coords: Optional[int] = typer.Option(None, min=1, help="Gradient coordinates to compare."),
):
    """Compare backprop gradients with central differences on a small seeded model."""
    cfg = _cfg(ctx)
    _echo_config(cfg)
    kwargs = {"n_coords": coords} if coords is not None else {}
    report = run_gradcheck(cfg.seed, **kwargs)
    path = atomic_write_text(_out(ctx, "gradcheck.json"), report.model_dump_json(indent=2))
    logger.info("wrote %s", path)
    _summary("gradcheck", [
        ("passed", report.passed), ("max relative error", f"{report.max_rel_error:.3e}"),
        ("worst coordinate", report.worst_coordinate), ("checked", report.checked),
        ("skipped at ReLU kinks", report.skipped_kinks),
    ])
    if not report.passed:
        raise typer.Exit(ExitCode.CHECK_FAILED)
