import json

import numpy as np
import pytest

from src.diagnostics import METRICS_COLUMNS, MetricsRow
from src.metrics_writer import MetricsSink, MetricsWriteError, read_metrics


def _row(step, **kwargs):
    return MetricsRow(env_step=step, episode=step // 10, **kwargs)


def test_header_written_once_and_rows_counted(tmp_path):
    sink = MetricsSink(tmp_path)
    for step in (10, 20, 30):
        sink.record(_row(step, episodic_return=-step / 3))
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0].split(",") == list(METRICS_COLUMNS)
    assert sum(line.startswith("env_step") for line in lines) == 1
    assert len(lines) == 4
    assert len((tmp_path / "metrics.jsonl").read_text().splitlines()) == 3


def test_values_parse_back_exactly(tmp_path):
    sink = MetricsSink(tmp_path)
    sink.record(_row(5, episodic_return=1 / 3, rep_loss=-4.0951, latent_rank=17.0, wall_time_s=0.125))
    frame = read_metrics(tmp_path)
    assert frame["episodic_return"].iloc[0] == 1 / 3
    assert frame["rep_loss"].iloc[0] == -4.0951
    assert frame["latent_rank"].iloc[0] == 17.0
    assert np.isnan(frame["critic_loss"].iloc[0])
    record = json.loads((tmp_path / "metrics.jsonl").read_text().splitlines()[0])
    assert record["env_step"] == 5
    assert record["critic_loss"] is None


def test_env_step_must_increase(tmp_path):
    sink = MetricsSink(tmp_path)
    sink.record(_row(10))
    with pytest.raises(MetricsWriteError):
        sink.record(_row(10))
    with pytest.raises(MetricsWriteError):
        sink.record(_row(5))


def test_fresh_sink_replaces_old_files(tmp_path):
    MetricsSink(tmp_path).record(_row(10))
    sink = MetricsSink(tmp_path)
    sink.record(_row(3))
    assert list(read_metrics(tmp_path)["env_step"]) == [3]


def test_resume_drops_rows_past_the_checkpoint(tmp_path):
    sink = MetricsSink(tmp_path)
    for step in (10, 20, 30, 40):
        sink.record(_row(step))
    resumed = MetricsSink(tmp_path, resume_step=20)
    assert resumed.rows_written == 2
    resumed.record(_row(30, episodic_return=2.5))
    frame = read_metrics(tmp_path)
    assert list(frame["env_step"]) == [10, 20, 30]
    assert frame["episodic_return"].iloc[-1] == 2.5
    assert len((tmp_path / "metrics.jsonl").read_text().splitlines()) == 3


def test_resume_before_first_row_starts_clean(tmp_path):
    MetricsSink(tmp_path).record(_row(10))
    resumed = MetricsSink(tmp_path, resume_step=5)
    resumed.record(_row(6))
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert len(lines) == 2


def test_missing_file_reads_as_empty(tmp_path):
    frame = read_metrics(tmp_path / "nothing")
    assert frame.empty
    assert list(frame.columns) == list(METRICS_COLUMNS)


def test_io_failure_is_wrapped(tmp_path):
    sink = MetricsSink(tmp_path)
    sink.csv_path = tmp_path / "missing_dir" / "metrics.csv"
    with pytest.raises(MetricsWriteError):
        sink.record(_row(1))
