from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd
from openpyxl import load_workbook
from openpyxl.styles import Font, PatternFill
from openpyxl.utils import get_column_letter
from openpyxl.worksheet.table import Table, TableStyleInfo

from src.diagnostics import METRICS_COLUMNS
from src.metrics_writer import read_metrics

SUMMARY_COLS = [
    "run",
    "env_steps",
    "episodes",
    "final_eval_return",
    "best_eval_return",
    "latent_rank_min",
    "latent_rank_mean",
    "latent_rank_max",
    "final_active_frac",
]

# two-sided 95% normal quantile
CI_Z = 1.96


def _last_valid(series: pd.Series) -> float:
    valid = series.dropna()
    return float(valid.iloc[-1]) if len(valid) else float("nan")


def summarize_run(run_dir: Union[str, Path]) -> Dict:
    m = read_metrics(run_dir)
    rank = m["latent_rank"].dropna()
    return {
        "run": Path(run_dir).name,
        "env_steps": int(m["env_step"].iloc[-1]) if len(m) else 0,
        "episodes": int(m["episode"].max()) if len(m) else 0,
        "final_eval_return": _last_valid(m["eval_return_mean"]),
        "best_eval_return": float(m["eval_return_mean"].max()) if m["eval_return_mean"].notna().any() else float("nan"),
        "latent_rank_min": float(rank.min()) if len(rank) else float("nan"),
        "latent_rank_mean": float(rank.mean()) if len(rank) else float("nan"),
        "latent_rank_max": _last_valid(m["latent_rank_max"]),
        "final_active_frac": _last_valid(m["codebook_active_frac"]),
    }


def summarize_runs(run_dirs: Sequence[Union[str, Path]]) -> pd.DataFrame:
    """
    One row per run, then a "mean" row and a "ci95" row holding the 95%
    normal-approximation half-width (1.96 standard errors) across runs.
    """
    rows = [summarize_run(d) for d in run_dirs]
    df = pd.DataFrame(rows, columns=SUMMARY_COLS)
    numeric = [c for c in SUMMARY_COLS if c != "run"]
    values = df[numeric].astype(float)
    n = values.notna().sum()
    mean = values.mean()
    half = CI_Z * values.std(ddof=1) / np.sqrt(n.clip(lower=1))
    half[n < 2] = np.nan
    agg = pd.DataFrame([{"run": "mean", **mean.to_dict()}, {"run": "ci95", **half.to_dict()}], columns=SUMMARY_COLS)
    return pd.concat([df, agg], ignore_index=True)


def collect_metrics(run_dirs: Sequence[Union[str, Path]]) -> pd.DataFrame:
    frames: List[pd.DataFrame] = []
    for d in run_dirs:
        m = read_metrics(d)
        m.insert(0, "run", Path(d).name)
        frames.append(m)
    if not frames:
        return pd.DataFrame(columns=["run", *METRICS_COLUMNS])
    return pd.concat(frames, ignore_index=True)


def _style_sheet(ws, table_name: str) -> None:
    ws.freeze_panes = "A2"
    header_fill = PatternFill("solid", fgColor="1F4E79")
    header_font = Font(color="FFFFFF", bold=True)
    for col in range(1, ws.max_column + 1):
        cell = ws.cell(row=1, column=col)
        cell.fill = header_fill
        cell.font = header_font

    if ws.max_row > 1:
        end_col = get_column_letter(ws.max_column)
        tab = Table(displayName=table_name, ref=f"A1:{end_col}{ws.max_row}")
        tab.tableStyleInfo = TableStyleInfo(name="TableStyleMedium9", showRowStripes=True, showColumnStripes=False)
        ws.add_table(tab)

    # width from the first 200 rows
    for col in range(1, ws.max_column + 1):
        max_len = 10
        for r in range(1, min(ws.max_row, 200) + 1):
            v = ws.cell(row=r, column=col).value
            if v is not None:
                max_len = max(max_len, len(str(v)))
        ws.column_dimensions[get_column_letter(col)].width = min(40, max_len + 2)


def write_excel(summary: pd.DataFrame, metrics: pd.DataFrame, notes: Dict, out_path: Union[str, Path]) -> str:
    """
    Writes:
      - Runs: every metrics row of every run
      - Summary: per-run summary plus mean / ci95 rows
      - Notes: provenance (configs, env debug)
    Returns out_path.
    """
    out_path = str(out_path)
    df_notes = pd.DataFrame([{"Item": k, "Value": str(v)} for k, v in (notes or {}).items()], columns=["Item", "Value"])

    with pd.ExcelWriter(out_path, engine="openpyxl") as writer:
        metrics.to_excel(writer, sheet_name="Runs", index=False)
        summary.to_excel(writer, sheet_name="Summary", index=False)
        df_notes.to_excel(writer, sheet_name="Notes", index=False)

    wb = load_workbook(out_path)
    _style_sheet(wb["Runs"], "RunsTable")
    _style_sheet(wb["Summary"], "SummaryTable")

    ws = wb["Notes"]
    ws.freeze_panes = "A2"
    ws.column_dimensions["A"].width = 38
    ws.column_dimensions["B"].width = 120

    wb.save(out_path)
    return out_path
