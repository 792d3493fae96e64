import numpy as np
import pytest

from core.errors import DomainError, GenerationError, ParseError, SchemaError
from dataforge.physics import (
    LaunchParams,
    aim_launch,
    oracle_hit,
    rim_crossing,
    synth_generate,
    synth_generate_with_truth,
)
from dataforge.schemas import CourtSpec, RawShot, ShotOutcome, ShotSequence, SynthConfig
from dataforge.service import (
    build_dataset,
    cutoff_at_distance,
    load_csv,
    next_point_targets,
    pareto_split,
    prepare_sequences,
    rim_relative,
    standardize,
    truncate,
    write_csv,
)

HEADER = "shot_id,frame_idx,x_ft,y_ft,z_ft,game_clock_s,label\n"
COURT = CourtSpec()


def rel_shot(points, shot_id="s", outcome=ShotOutcome.HIT) -> RawShot:
    points = np.asarray(points, dtype=np.float64)
    clock = 100.0 - 0.04 * np.arange(len(points))
    return RawShot(shot_id=shot_id, frames=np.column_stack([points, clock]), outcome=outcome, rim_relative=True)


def line_shot(n, shot_id="s") -> RawShot:
    return rel_shot(np.column_stack([np.arange(n, 0, -1.0), np.zeros(n), np.zeros(n)]), shot_id)


# ---------- CSV ----------

def test_load_csv_groups_and_orders_frames(tmp_path):
    path = tmp_path / "shots.csv"
    path.write_text(
        HEADER
        + "a,1,10,25,9,700.96,hit\n"
        + "a,0,11,25,8,701.0,hit\n"
        + "b,0,80,20,8,500.0,miss\n"
        + "a,2,9,25,9.5,700.92,hit\n"
        + "b,1,81,21,9,499.96,miss\n"
    )
    shots = load_csv(path)
    assert [s.shot_id for s in shots] == ["a", "b"]
    assert [s.n_frames for s in shots] == [3, 2]
    assert shots[0].frames[:, 0].tolist() == [11.0, 10.0, 9.0]
    assert shots[1].outcome is ShotOutcome.MISS


def test_load_csv_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(HEADER)
    assert load_csv(path) == []


def test_load_csv_rejects_nan_with_line_number(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(HEADER + "a,0,11,25,8,701.0,hit\na,1,NaN,25,9,700.96,hit\n")
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert info.value.line == 3


def test_load_csv_short_row_is_a_parse_error(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text(HEADER + "a,0,11,25,8,701.0,hit\na,1,10,25,9,700.96\n")
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert info.value.line == 3
    assert "label" in str(info.value)


def test_load_csv_counts_blank_lines(tmp_path):
    path = tmp_path / "blank.csv"
    path.write_text(HEADER + "a,0,11,25,8,701.0,hit\n\na,1,NaN,25,9,700.96,hit\n")
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert info.value.line == 3
    assert "blank" in str(info.value)

    trailing = tmp_path / "trailing.csv"
    trailing.write_text(HEADER + "a,0,11,25,8,701.0,hit\na,1,10,25,9,700.96,hit\n\n\n")
    assert [s.n_frames for s in load_csv(trailing)] == [2]


def test_load_csv_schema_errors(tmp_path):
    bad_label = tmp_path / "label.csv"
    bad_label.write_text(HEADER + "a,0,11,25,8,701.0,swish\n")
    with pytest.raises(SchemaError):
        load_csv(bad_label)
    bad_header = tmp_path / "header.csv"
    bad_header.write_text("id,x,y\n1,2,3\n")
    with pytest.raises(SchemaError):
        load_csv(bad_header)


def test_written_csv_loads_back(tmp_path):
    shots = synth_generate(SynthConfig(n_shots=3, seed=4))
    path = write_csv(shots, tmp_path / "out.csv")
    text = path.read_bytes()
    assert b"\r\n" not in text
    loaded = load_csv(path)
    assert [s.shot_id for s in loaded] == [s.shot_id for s in shots]
    for a, b in zip(loaded, shots):
        assert np.allclose(a.frames, b.frames, rtol=1e-9, atol=1e-9)
        assert a.outcome is b.outcome


# ---------- Transforms ----------

def court_shot(points) -> RawShot:
    points = np.asarray(points, dtype=np.float64)
    clock = 30.0 - 0.04 * np.arange(len(points))
    return RawShot(shot_id="c", frames=np.column_stack([points, clock]), outcome=ShotOutcome.MISS)


def test_rim_relative_origin_and_translation():
    near = COURT.rim_centers[0]
    assert np.allclose(rim_relative(court_shot([near]), COURT).frames[0, :3], 0.0)
    above = rim_relative(court_shot([near + [0, 0, 3]]), COURT)
    assert np.allclose(above.frames[0, :3], [0, 0, 3])


def test_rim_relative_picks_far_rim_from_final_frame():
    shot = court_shot([[40.0, 25.0, 8.0], [80.0, 25.0, 12.0], [88.0, 25.0, 10.5]])
    rel = rim_relative(shot, COURT)
    assert np.allclose(rel.frames[-1, :3], [88.0 - 88.75, 0.0, 0.5])


def test_rim_relative_preserves_pairwise_distances():
    shot = synth_generate(SynthConfig(n_shots=1, seed=11))[0]
    rel = rim_relative(shot, COURT)
    before = np.linalg.norm(shot.frames[:, None, :3] - shot.frames[None, :, :3], axis=-1)
    after = np.linalg.norm(rel.frames[:, None, :3] - rel.frames[None, :, :3], axis=-1)
    assert np.allclose(before, after, atol=1e-12)
    assert np.array_equal(rel.frames[:, 3], shot.frames[:, 3])


def test_truncate_rules():
    assert truncate(line_shot(11)) is None
    twelve = line_shot(12)
    assert np.array_equal(truncate(twelve).features, twelve.frames)
    thirty = line_shot(30)
    seq = truncate(thirty)
    assert np.array_equal(seq.features, thirty.frames[-12:])
    assert truncate(seq) is seq


def test_cutoff_at_distance_removes_near_rim_tail():
    xs = list(np.arange(18.0, 6.0, -1.0)) + [4.0, 2.0]
    shot = rel_shot(np.column_stack([xs, np.zeros(14), np.zeros(14)]))
    seq = cutoff_at_distance(shot, 5.0)
    assert np.linalg.norm(seq.features[-1, :3]) == pytest.approx(7.0)
    assert seq.cutoff_distance_ft == 5.0
    assert cutoff_at_distance(shot, 9.0) is None


def test_cutoff_zero_matches_truncate_and_far_shots_keep_tail():
    shot = line_shot(20)
    assert np.array_equal(cutoff_at_distance(shot, 0.0).features, truncate(shot).features)
    far = rel_shot(np.column_stack([np.arange(30, 8, -1.0), np.zeros(22), np.zeros(22)]))
    assert np.array_equal(cutoff_at_distance(far, 8.0).features, far.frames[-12:])


def test_next_point_targets_shape():
    feats = np.arange(2 * 12 * 4, dtype=float).reshape(2, 12, 4)
    targets = next_point_targets(feats)
    assert targets.shape == (2, 11, 3)
    assert np.all(targets == 4.0)


# ---------- Split and standardization ----------

def test_pareto_split_sizes_and_determinism():
    ids = [f"s{i}" for i in range(10)]
    split = pareto_split(ids, seed=3)
    assert (len(split.train_ids), len(split.test_ids)) == (8, 2)
    assert split == pareto_split(ids, seed=3)
    assert set(split.train_ids) | set(split.test_ids) == set(ids)

    big = pareto_split([str(i) for i in range(20780)], seed=1)
    assert (len(big.train_ids), len(big.test_ids)) == (16624, 4156)


def test_pareto_split_needs_two_ids():
    with pytest.raises(DomainError):
        pareto_split(["only"])


def seq(features, shot_id="x", label=0) -> ShotSequence:
    return ShotSequence(shot_id=shot_id, features=features, label=label)


def test_standardize_train_on_itself():
    rng = np.random.default_rng(0)
    train = [seq(rng.normal(3.0, 2.0, (12, 4)), f"t{i}") for i in range(20)]
    out, stats = standardize(train)
    stacked = np.concatenate([s.features for s in out])
    assert np.allclose(stacked.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(stacked.std(axis=0), 1.0, atol=1e-10)
    assert all(s.standardized for s in out)
    assert len(stats.mean) == 4


def test_standardize_constant_feature_and_no_leakage():
    rng = np.random.default_rng(1)
    train = []
    for i in range(10):
        f = rng.normal(size=(12, 4))
        f[:, 3] = 0.0
        train.append(seq(f, f"t{i}"))
    test = [seq(rng.normal(5.0, 1.0, (12, 4)), "q")]
    out, stats = standardize(train, test)
    assert stats.std[3] == 1.0
    assert np.all(standardize(train)[0][0].features[:, 3] == 0.0)
    assert abs(out[0].features[:, :3].mean()) > 1.0


def test_build_dataset_uses_train_statistics_only():
    shots = synth_generate(SynthConfig(n_shots=60, seed=5))
    data = build_dataset(shots, COURT, seed=5)
    assert len(data.train) + len(data.test) == data.drops.kept
    train_stack = np.concatenate([s.features for s in data.train_raw])
    assert np.allclose(data.stats.mean, train_stack.mean(axis=0))
    assert not set(data.split.train_ids) & set(data.split.test_ids)


# ---------- Physics ----------

def straight_launch(offset_ft: float) -> LaunchParams:
    rim = COURT.rim_centers[0]
    release = rim + np.array([20.0, 0.0, -2.0])
    aim = rim + np.array([offset_ft, 0.0, 0.0])
    return LaunchParams(position=release, velocity=aim_launch(release, aim, 50.0), rim=rim)


def test_oracle_cases():
    assert oracle_hit(straight_launch(0.0), COURT) is ShotOutcome.HIT
    assert oracle_hit(straight_launch(-2.0), COURT) is ShotOutcome.MISS
    assert oracle_hit(straight_launch(COURT.hit_radius_ft), COURT) is ShotOutcome.HIT
    assert oracle_hit(straight_launch(COURT.hit_radius_ft + 1e-3), COURT) is ShotOutcome.MISS


def test_exact_solution_crosses_rim_center():
    crossing = rim_crossing(straight_launch(0.0), COURT)
    assert crossing.offset_ft == pytest.approx(0.0, abs=1e-9)
    assert crossing.point[2] == pytest.approx(COURT.rim_height_ft)


def test_low_apex_is_a_miss():
    rim = COURT.rim_centers[0]
    launch = LaunchParams(position=rim + [10.0, 0.0, -3.0], velocity=[-10.0, 0.0, 5.0], rim=rim)
    assert rim_crossing(launch, COURT) is None
    assert oracle_hit(launch, COURT) is ShotOutcome.MISS


def test_noiseless_exact_shot_is_labelled_hit():
    cfg = SynthConfig(n_shots=1, noise_std_ft=0.0, aim_std_ft=0.0, release_spread_deg=0.0, seed=2)
    shot = synth_generate(cfg)[0]
    assert shot.outcome is ShotOutcome.HIT
    rel = rim_relative(shot, cfg.court)
    assert np.allclose(rel.frames[:, 1], 0.0, atol=1e-9)


def test_synthetic_frames_run_until_rim_plane_at_tracking_rate():
    truth = synth_generate_with_truth(SynthConfig(n_shots=5, noise_std_ft=0.0, seed=9))
    for shot, launch in truth:
        clocks = shot.frames[:, 3]
        assert np.allclose(np.diff(clocks), -0.04)
        end = rim_crossing(launch, COURT).time_s
        assert (shot.n_frames - 1) * 0.04 <= end < shot.n_frames * 0.04


def test_default_hit_rate_band():
    shots = synth_generate(SynthConfig(n_shots=5000))
    rate = np.mean([s.label for s in shots])
    assert 0.30 <= rate <= 0.40


def test_labels_do_not_depend_on_noise_seed():
    a = synth_generate(SynthConfig(n_shots=200, seed=7, noise_seed=1))
    b = synth_generate(SynthConfig(n_shots=200, seed=7, noise_seed=2))
    assert [s.label for s in a] == [s.label for s in b]
    assert not np.allclose(a[0].frames, b[0].frames)


def test_synthetic_generation_is_deterministic():
    a = synth_generate(SynthConfig(n_shots=20, seed=13))
    b = synth_generate(SynthConfig(n_shots=20, seed=13))
    assert all(np.array_equal(x.frames, y.frames) for x, y in zip(a, b))


def test_impossible_config_raises_generation_error():
    cfg = SynthConfig(n_shots=3, release_distance_ft=(1.0, 1.0), launch_angle_mean_deg=1.0,
                      launch_angle_std_deg=0.0)
    with pytest.raises(GenerationError):
        synth_generate(cfg)


def test_configured_court_drives_generation_and_loading(tmp_path):
    court = CourtSpec(length_ft=120.0, width_ft=70.0, margin_ft=0.0)
    shots = synth_generate(SynthConfig(n_shots=50, court=court, seed=6))
    assert len(shots) == 50
    assert all(court.contains(s.frames) for s in shots)

    path = write_csv(shots, tmp_path / "big.csv")
    assert len(load_csv(path, court)) == 50
    far = [s for s in shots if s.frames[-1, 0] > 104.0]
    assert far
    with pytest.raises(SchemaError):
        load_csv(path)


def test_court_contains():
    assert COURT.contains([[0.0, 0.0, 0.0, 1.0], [94.0, 50.0, 20.0, 0.5]])
    assert not COURT.contains([[0.0, 61.0, 5.0, 1.0]])
    assert not COURT.contains([[47.0, 25.0, -11.0, 1.0]])


def test_synth_config_rejects_empty_ranges():
    with pytest.raises(ValueError):
        SynthConfig(release_height_ft=(9.0, 7.0))


def test_synthetic_shots_are_long_enough_and_drop_rate_small():
    shots = synth_generate(SynthConfig(n_shots=300, seed=3))
    _, report = prepare_sequences(shots, COURT)
    assert report.drop_rate == 0.0

    mixed = [line_shot(40, f"l{i}") for i in range(990)] + [line_shot(8, f"s{i}") for i in range(10)]
    _, report = prepare_sequences(mixed, COURT)
    assert report.dropped == 10
    assert report.drop_rate <= 0.0104
