"""CSV and markdown emission for experiment reports.

Every value is formatted through a fixed rule so a rerun from the same
config and seed writes byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

__all__ = ["format_value", "write_csv", "write_markdown", "markdown_table", "read_csv"]


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6f}"
    return "" if v is None else str(v)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c)) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def markdown_table(columns, rows) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(format_value(row.get(c)) for c in columns) + " |")
    return "\n".join(lines) + "\n"


def write_markdown(path, title: str, columns, rows, notes: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = f"# {title}\n\n" + markdown_table(columns, rows)
    if notes:
        text += "\n" + notes.rstrip() + "\n"
    path.write_text(text)
    return path
