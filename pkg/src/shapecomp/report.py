"""Benchmark result rows: canonical CSV serialization, aggregation, display.

``rows.csv`` is the benchmark's source of truth. Its byte layout is pinned
down so that reruns over identical inputs produce identical files: a fixed
comment header carrying content digests, a fixed column order, rows sorted by
task key, and floats serialized with repr. Wall-clock timing never goes in
here; it lives in a sidecar.

Aggregation reduces rows to per-method (and per method x pattern) medians in
raw normalized-cube units. Display formatting scales them the way completion
results are usually quoted: chamfer-family metrics x100, the directional
chamfer x10000.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

__all__ = [
    "ROW_FIELDS",
    "METRIC_FIELDS",
    "DISPLAY_SCALE",
    "RowFormatError",
    "rows_to_csv_bytes",
    "write_rows",
    "read_rows",
    "sort_rows",
    "aggregate",
    "format_metric",
    "render_table",
    "render_markdown",
    "render_report",
]

ROW_FIELDS = ("object_id", "pattern", "sample", "method", "seed", "status",
              "n_points", "cd", "emd", "ucd", "uhd", "mmd", "tmd", "error")

METRIC_FIELDS = ("cd", "emd", "ucd", "uhd", "mmd", "tmd")

# multiplier and format used when quoting a metric, keyed by column
DISPLAY_SCALE = {
    "cd": (100.0, "%.2f"),
    "emd": (100.0, "%.2f"),
    "mmd": (100.0, "%.2f"),
    "tmd": (100.0, "%.2f"),
    "ucd": (10000.0, "%.1f"),
    "uhd": (100.0, "%.1f"),
}

_HEADER_TAG = "# shapecomp-bench v1"


class RowFormatError(ValueError):
    """rows.csv is malformed or carries an unexpected layout."""


def sort_rows(rows: list[dict]) -> list[dict]:
    return sorted(rows, key=lambda r: (r["object_id"], r["pattern"], int(r["sample"]),
                                       r["method"], int(r["seed"])))


def _clean(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return " ".join(str(value).split())


def rows_to_csv_bytes(meta: dict, rows: list[dict]) -> bytes:
    """Serialize rows canonically; identical inputs yield identical bytes."""
    buf = io.StringIO()
    buf.write(_HEADER_TAG + "\n")
    for key in sorted(meta):
        buf.write(f"# {key}={_clean(meta[key])}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROW_FIELDS)
    for row in sort_rows(rows):
        unknown = set(row) - set(ROW_FIELDS)
        if unknown:
            raise RowFormatError(f"unexpected row fields: {sorted(unknown)}")
        writer.writerow([_clean(row.get(f, "")) for f in ROW_FIELDS])
    return buf.getvalue().encode()


def write_rows(path, meta: dict, rows: list[dict]) -> None:
    Path(path).write_bytes(rows_to_csv_bytes(meta, rows))


def read_rows(path) -> tuple[dict, list[dict]]:
    """Parse a rows file back into (meta, rows); cell values stay strings."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != _HEADER_TAG:
        raise RowFormatError(f"{path}: missing '{_HEADER_TAG}' header")
    meta = {}
    body_start = 1
    for i, line in enumerate(lines[1:], start=1):
        if not line.startswith("# "):
            body_start = i
            break
        key, sep, value = line[2:].partition("=")
        if not sep:
            raise RowFormatError(f"{path}: bad meta line {i + 1}: {line!r}")
        meta[key] = value
    reader = csv.reader(lines[body_start:])
    header = next(reader, None)
    if header is None or tuple(header) != ROW_FIELDS:
        raise RowFormatError(f"{path}: unexpected column header {header}")
    rows = []
    for cells in reader:
        if len(cells) != len(ROW_FIELDS):
            raise RowFormatError(f"{path}: row with {len(cells)} cells: {cells}")
        rows.append(dict(zip(ROW_FIELDS, cells)))
    return meta, rows


def _float_or_none(cell: str):
    return float(cell) if cell not in ("", None) else None


def aggregate(rows: list[dict]) -> dict:
    """Medians per method and per (method, pattern) over successful rows."""
    methods = sorted({r["method"] for r in rows})
    out = {"methods": {}, "by_pattern": {}, "total_rows": len(rows),
           "total_errors": sum(1 for r in rows if r["status"] != "ok")}

    def summarize(group: list[dict]) -> dict:
        ok = [r for r in group if r["status"] == "ok"]
        entry = {"rows": len(group), "ok": len(ok),
                 "errors": len(group) - len(ok)}
        for metric in METRIC_FIELDS:
            values = [v for r in ok if (v := _float_or_none(r[metric])) is not None]
            entry[metric] = float(np.median(values)) if values else None
            entry[metric + "_mean"] = float(np.mean(values)) if values else None
        return entry

    for method in methods:
        group = [r for r in rows if r["method"] == method]
        out["methods"][method] = summarize(group)
        for pattern in sorted({r["pattern"] for r in group}):
            key = f"{method}/{pattern}"
            out["by_pattern"][key] = summarize([r for r in group if r["pattern"] == pattern])
    return out


def format_metric(metric: str, value) -> str:
    if value is None:
        return "-"
    scale, fmt = DISPLAY_SCALE[metric]
    return fmt % (value * scale)


def render_markdown(agg: dict) -> str:
    """Markdown table of per-method medians, chamfer and assignment distances
    sharing one column in the usual "1.42 / 1.84" style."""
    lines = ["| method | CD/EMD | UCD | UHD | MMD/TMD |",
             "| --- | --- | --- | --- | --- |"]
    for method, entry in agg["methods"].items():
        cd_emd = f"{format_metric('cd', entry['cd'])} / {format_metric('emd', entry['emd'])}"
        mmd_tmd = f"{format_metric('mmd', entry['mmd'])} / {format_metric('tmd', entry['tmd'])}"
        lines.append(f"| {method} | {cd_emd} | {format_metric('ucd', entry['ucd'])} "
                     f"| {format_metric('uhd', entry['uhd'])} | {mmd_tmd} |")
    lines.append("")
    lines.append("CD/EMD/MMD/TMD x100, UCD x10000, UHD x100; medians over ok rows")
    return "\n".join(lines)


def render_table(agg: dict) -> str:
    """Fixed-width text table of per-method medians in display units."""
    headers = ["method", "ok/rows"] + [m for m in METRIC_FIELDS]
    lines = []
    body = []
    for method, entry in agg["methods"].items():
        body.append([method, f"{entry['ok']}/{entry['rows']}"]
                    + [format_metric(m, entry[m]) for m in METRIC_FIELDS])
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h)
              for i, h in enumerate(headers)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    lines.append("")
    lines.append("cd/emd/mmd/tmd x100, ucd x10000, uhd x100; medians over ok rows")
    return "\n".join(lines)


def render_report(path, fmt: str = "text") -> str:
    """Render a rows file: a summary table (text or markdown), the aggregate
    JSON, or the canonical CSV itself (identity for a well-formed file)."""
    meta, rows = read_rows(path)
    if fmt == "text":
        header = [f"{k} = {v}" for k, v in sorted(meta.items())]
        return "\n".join(header) + "\n\n" + render_table(aggregate(rows)) + "\n"
    if fmt == "markdown":
        return render_markdown(aggregate(rows)) + "\n"
    if fmt == "json":
        return json.dumps({"meta": meta, "aggregate": aggregate(rows)},
                          indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        return rows_to_csv_bytes(meta, rows).decode()
    raise ValueError(f"unknown report format {fmt!r}")
