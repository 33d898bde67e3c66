"""CSV and text output for experiment results.

The CSV carries every column of the result in the result's own column order,
one row per driver and configuration. The text table shows a readable subset.
"""

from __future__ import annotations

import csv
import io
import sys

from .experiments import ExperimentResult

SUMMARY_COLUMNS = (
    "driver",
    "config",
    "overall_time",
    "read_time",
    "write_time",
    "gc_time",
    "erases_per_update",
    "io_time_per_txn",
    "hit_ratio",
    "erases_per_txn",
    "pdl256_speedup",
)


def write_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as f:
        f.write(csv_text(result))


def csv_text(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(result.columns), extrasaction="ignore", restval="", lineterminator="\n")
    w.writeheader()
    w.writerows(result.rows)
    return buf.getvalue()


def _number(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_csv(path) -> list[dict]:
    """Rows of a CSV written by write_csv, with numbers converted back."""
    with open(path, newline="") as f:
        return [{k: _number(v) for k, v in row.items()} for row in csv.DictReader(f)]


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}" if abs(v) < 10 else f"{v:.1f}"
    return str(v)


def format_table(result: ExperimentResult, columns=None) -> str:
    if columns is None:
        present = set(result.columns)
        columns = [c for c in SUMMARY_COLUMNS if c in present]
    cells = [list(columns)] + [[_cell(r.get(c, "")) for c in columns] for r in result.rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = [result.title]
    for n, row in enumerate(cells):
        # first two columns are labels, the rest numbers
        lines.append("  ".join(v.ljust(w) if i < 2 else v.rjust(w) for i, (v, w) in enumerate(zip(row, widths))).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def emit_report(result: ExperimentResult, csv_path=None, out=None) -> None:
    """Print the text table and, if asked, write the CSV."""
    (out or sys.stdout).write(format_table(result))
    if csv_path is not None:
        write_csv(result, csv_path)
