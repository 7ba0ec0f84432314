"""
Event Anonymization - Report Files

Reports are line-oriented `key = value` files with keys in sorted order,
plus optional CSV tables written beside them as `<stem>.<table>.csv`. No
timestamps are written, so identical inputs give identical bytes.

Classes:
- Table - Header and rows of one CSV table
- Report - Command name, flat values and tables

Functions:
- write_key_values() / parse_key_values() - The `key = value` format
- emit_report() / parse_report() - Report files with their CSV tables
- format_summary() - Console table of a report's values (tabulate)
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Union

from tabulate import tabulate

from .errors import DataError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
REPORT_SUFFIX = ".report"


@dataclass
class Table:
    header: List[str]
    rows: List[Sequence[Any]] = field(default_factory=list)


@dataclass
class Report:
    command: str
    values: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, Table] = field(default_factory=dict)

    def update(self, values: Mapping[str, Any]) -> "Report":
        self.values.update(values)
        return self


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item"):
        return format_value(value.item())
    if value is None:
        return "none"
    return str(value)


def parse_value(text: str) -> Any:
    if text == "true":
        return True
    if text == "false":
        return False
    if text == "none":
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def write_key_values(values: Mapping[str, Any], path: PathLike, header: str) -> Path:
    lines = [f"# {header}\n"]
    lines.extend(f"{key} = {format_value(values[key])}\n" for key in sorted(values))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(lines), encoding="utf-8")
    return path


def parse_key_values(path: PathLike) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep or not key.strip():
            raise DataError(f"{path}: line {lineno}: expected 'key = value'")
        values[key.strip()] = parse_value(value.strip())
    return values


def _report_stem(path: Path) -> str:
    return path.name[: -len(REPORT_SUFFIX)] if path.name.endswith(REPORT_SUFFIX) else path.stem


def _table_path(path: Path, name: str) -> Path:
    return path.with_name(f"{_report_stem(path)}.{name}.csv")


def emit_report(report: Report, path: PathLike) -> List[Path]:
    """Write the report and its tables; returns every path written."""
    path = Path(path)
    written = [write_key_values(report.values, path, f"evanon report: {report.command}")]
    for name in sorted(report.tables):
        table = report.tables[name]
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(table.header)
        writer.writerows([[format_value(v) for v in row] for row in table.rows])
        table_path = _table_path(path, name)
        table_path.write_text(buffer.getvalue(), encoding="utf-8")
        written.append(table_path)
    logger.info(f"Wrote report {path} ({len(report.values)} values, {len(report.tables)} tables)")
    return written


def parse_report(path: PathLike) -> Report:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    command = lines[0].partition("evanon report:")[2].strip() if lines else ""
    report = Report(command, parse_key_values(path))
    stem = _report_stem(path)
    for table_path in sorted(path.parent.glob(f"{stem}.*.csv")):
        name = table_path.name[len(stem) + 1 : -len(".csv")]
        with table_path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if rows:
            report.tables[name] = Table(rows[0], [[parse_value(v) for v in row] for row in rows[1:]])
    return report


def format_summary(values: Mapping[str, Any], limit: int = 40) -> str:
    rows = [[key, format_value(values[key])] for key in sorted(values)[:limit]]
    return tabulate(rows, headers=["key", "value"], tablefmt="grid")
