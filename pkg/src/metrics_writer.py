from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from src.diagnostics import METRICS_COLUMNS, MetricsRow

logger = logging.getLogger(__name__)


class MetricsWriteError(RuntimeError):
    pass


class MetricsSink:
    """
    Appends MetricsRows to metrics.csv and a JSON-lines mirror metrics.jsonl.
    Each record is written and closed immediately; the CSV header is written
    once per file.
    """

    def __init__(self, out_dir: Union[str, Path], resume_step: Optional[int] = None):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.csv_path = self.out_dir / "metrics.csv"
        self.jsonl_path = self.out_dir / "metrics.jsonl"
        self.rows_written = 0
        self.last_step: Optional[int] = None
        if resume_step is not None and self.csv_path.exists():
            # rows past the checkpoint belong to an abandoned continuation
            existing = read_metrics(self.csv_path)
            existing = existing[existing["env_step"] <= resume_step]
            self.rows_written = len(existing)
            if self.rows_written:
                existing.to_csv(self.csv_path, index=False)
                with open(self.jsonl_path, "w", encoding="utf-8") as f:
                    f.write(existing.to_json(orient="records", lines=True).strip() + "\n")
                self.last_step = int(existing["env_step"].iloc[-1])
            else:
                self._clear()
        else:
            self._clear()

    def _clear(self) -> None:
        for path in (self.csv_path, self.jsonl_path):
            if path.exists():
                path.unlink()

    def record(self, row: MetricsRow) -> None:
        if self.last_step is not None and row.env_step <= self.last_step:
            raise MetricsWriteError(f"env_step must increase: got {row.env_step} after {self.last_step}")
        values = {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in row.to_dict().items()}
        frame = pd.DataFrame([values], columns=list(METRICS_COLUMNS))
        try:
            frame.to_csv(self.csv_path, mode="a", header=self.rows_written == 0, index=False)
            with open(self.jsonl_path, "a", encoding="utf-8") as f:
                f.write(frame.to_json(orient="records", lines=True).strip() + "\n")
        except OSError as e:
            raise MetricsWriteError(f"could not write metrics to {self.out_dir}: {e}") from e
        self.rows_written += 1
        self.last_step = row.env_step


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.csv"
    if not path.exists():
        return pd.DataFrame(columns=list(METRICS_COLUMNS))
    return pd.read_csv(path, float_precision="round_trip")
