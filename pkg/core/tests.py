import pytest

from core.errors import DomainError, ExitCode, HoopnetError, OracleError, ParseError, TrainingError
from core.files import atomic_open, atomic_write_text
from core.telemetry import timed


def test_exit_codes_follow_error_kind():
    assert DomainError("x").exit_code == ExitCode.INPUT_ERROR
    assert OracleError("x").exit_code == ExitCode.CHECK_FAILED
    err = TrainingError("non-finite loss", batch_id=4, epoch=2)
    assert err.exit_code == ExitCode.DIVERGED
    assert (err.batch_id, err.epoch) == (4, 2)
    assert isinstance(ParseError("bad row", line=7), HoopnetError)
    assert ParseError("bad row", line=7).line == 7


def test_atomic_write_replaces_whole_file(tmp_path):
    path = tmp_path / "nested" / "out.csv"
    atomic_write_text(path, "a,b\n1,2\n")
    assert path.read_text() == "a,b\n1,2\n"
    atomic_write_text(path, "a\n")
    assert path.read_text() == "a\n"


def test_failed_write_leaves_previous_content(tmp_path):
    path = tmp_path / "out.txt"
    atomic_write_text(path, "kept")
    with pytest.raises(RuntimeError):
        with atomic_open(path) as fh:
            fh.write("partial")
            raise RuntimeError("boom")
    assert path.read_text() == "kept"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


def test_timed_records_elapsed():
    with timed() as clock:
        sum(range(1000))
    assert clock["wall_seconds"] >= 0.0
    assert clock["latency_ms"] == int(clock["wall_seconds"] * 1000)
