"""Table and learning-curve emission.

Tables mirror the usual per-accent layout: one row per system, one column
per accent, an ``Ave.`` column for the pooled rate, and ``group``/``rest``
columns when a report carries a labeled-group split. Values are error rates
in [0, inf); the text renderer shows percentages, the delimited renderer
keeps raw floats and round-trips through :func:`load_delimited`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, ValidationError

AVE = "Ave."
GROUP = "group"
REST = "rest"

FORMATS = ("text-table", "delimited", "plot")


@dataclass
class ReportTable:
    columns: list[str]
    rows: list[tuple[str, dict[str, float]]] = field(default_factory=list)


def load_report(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"evaluation report not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"evaluation report {path}: {exc}") from None
    if "overall" not in doc or "per_accent" not in doc:
        raise DataError(f"evaluation report {path}: missing overall/per_accent")
    return doc


def table_from_reports(labeled: list[tuple[str, dict]]) -> ReportTable:
    """One row per (label, report dict); report dicts as written by the
    evaluator. Accent columns follow first appearance order."""
    if not labeled:
        raise ValidationError("need at least one evaluation report")
    columns: list[str] = []
    has_group = False
    for _, doc in labeled:
        for name in doc["per_accent"]:
            if name not in columns:
                columns.append(name)
        has_group = has_group or "group" in doc
    columns.append(AVE)
    if has_group:
        columns += [GROUP, REST]
    table = ReportTable(columns)
    for label, doc in labeled:
        cells: dict[str, float] = {}
        for name, entry in doc["per_accent"].items():
            cells[name] = float(entry["wer"])
        cells[AVE] = float(doc["overall"]["wer"])
        if "group" in doc:
            cells[GROUP] = float(doc["group"]["wer"])
            cells[REST] = float(doc["rest"]["wer"])
        table.rows.append((label, cells))
    return table


def render_text(table: ReportTable) -> str:
    """Fixed-width table, rates as percentages with two decimals."""
    header = ["system"] + table.columns
    body = []
    for label, cells in table.rows:
        body.append([label] + [f"{cells[c] * 100:.2f}" if c in cells else "-"
                               for c in table.columns])
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        lines.append("  ".join(cell.rjust(w) if i else cell.ljust(w)
                               for i, (cell, w) in enumerate(zip(row, widths))))
        if row is header:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_delimited(table: ReportTable) -> str:
    lines = ["\t".join(["system"] + table.columns)]
    for label, cells in table.rows:
        lines.append("\t".join([label] + [repr(cells[c]) if c in cells else ""
                                          for c in table.columns]))
    return "\n".join(lines) + "\n"


def load_delimited(text: str) -> ReportTable:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise DataError("empty delimited table")
    header = lines[0].split("\t")
    if not header or header[0] != "system":
        raise DataError("delimited table must start with a 'system' column")
    table = ReportTable(header[1:])
    for lineno, line in enumerate(lines[1:], start=2):
        fields_ = line.split("\t")
        if len(fields_) != len(header):
            raise DataError(f"delimited table line {lineno}: "
                            f"expected {len(header)} fields, got {len(fields_)}")
        cells = {}
        for name, cell in zip(header[1:], fields_[1:]):
            if cell:
                try:
                    cells[name] = float(cell)
                except ValueError:
                    raise DataError(f"delimited table line {lineno}: "
                                    f"bad number {cell!r}") from None
        table.rows.append((fields_[0], cells))
    return table


# --------------------------------------------------------------------------
# Learning curves


def curve_from_log(log_path: str | Path) -> list[dict]:
    """Per-epoch records (epoch, step, accuracy fields) from a training log,
    in log order."""
    log_path = Path(log_path)
    if not log_path.is_file():
        raise DataError(f"training log not found: {log_path}")
    points = []
    for lineno, raw in enumerate(log_path.read_text(encoding="utf-8").splitlines(),
                                 start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError:
            raise DataError(f"training log line {lineno}: not valid JSON") from None
        if rec.get("event") == "epoch":
            points.append(rec)
    if not points:
        raise DataError(f"training log has no epoch records: {log_path}")
    return points


def render_curve_delimited(points: list[dict]) -> str:
    """TSV with one row per epoch record; columns are the union of keys
    (minus the event tag), so the file diffs cleanly against the log."""
    columns = []
    for rec in points:
        for key in rec:
            if key != "event" and key not in columns:
                columns.append(key)
    lines = ["\t".join(columns)]
    for rec in points:
        lines.append("\t".join(repr(rec[c]) if isinstance(rec.get(c), float)
                               else str(rec[c]) if c in rec else ""
                               for c in columns))
    return "\n".join(lines) + "\n"


def render_curve_image(points: list[dict], path: str | Path) -> None:
    """Optional PNG; needs matplotlib."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ValidationError("matplotlib is required for plot images") from None
    steps = [rec["step"] for rec in points]
    keys = [k for k in points[0] if k.endswith("accuracy")]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for key in keys:
        ys = [rec.get(key) for rec in points]
        ax.plot(steps, ys, marker="o", markersize=3, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("accuracy")
    if keys:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
