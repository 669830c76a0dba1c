"""Canonical CSV output and optional line plots."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Sequence


def format_value(value, exact: bool = False) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return str(value)
        if exact:
            return repr(value)
        # 6 significant digits, fixed notation, trailing zeros trimmed
        rounded = float(f"{value:.6g}")
        if rounded == 0:
            return "0"
        decimals = max(0, 5 - math.floor(math.log10(abs(rounded))))
        text = f"{rounded:.{decimals}f}"
        if "." in text:
            text = text.rstrip("0").rstrip(".")
        return text
    return str(value)


def to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None,
           exact: Iterable[str] = ()) -> str:
    """Rows as CSV text. Columns default to the sorted union of keys."""
    if not rows:
        raise ValueError("no rows to report")
    if columns is None:
        columns = sorted({k for row in rows for k in row})
    exact = set(exact)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c), c in exact) for c in columns])
    return buf.getvalue()


def write_csv(path: str | Path, rows: Sequence[dict], columns: Sequence[str] | None = None,
              exact: Iterable[str] = ()) -> str:
    text = to_csv(rows, columns, exact)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return text


def plot_lines(path: str | Path, rows: Sequence[dict], x: str, y: str, series: str,
               title: str = "") -> bool:
    """Static SVG/PDF/PNG line chart of ``y`` against ``x`` per ``series``. Returns False
    when matplotlib is unavailable."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    groups: dict = {}
    for row in rows:
        groups.setdefault(row[series], []).append((row[x], row[y]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in sorted(groups, key=str):
        pts = sorted(groups[key])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{series}={key}")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)
    return True
