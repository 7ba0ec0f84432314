"""Unit tests for report files."""

import pytest

from evanon.errors import DataError
from evanon.report import (
    Report,
    Table,
    emit_report,
    format_summary,
    format_value,
    parse_key_values,
    parse_report,
    parse_value,
    write_key_values,
)


class TestValues:
    """Test value formatting and parsing."""

    def test_format(self):
        """Test booleans, floats and None render canonically."""
        assert format_value(True) == "true"
        assert format_value(0.1) == "0.1"
        assert format_value(None) == "none"
        assert format_value(3) == "3"

    def test_parse(self):
        """Test parse_value restores the basic types."""
        assert parse_value("false") is False
        assert parse_value("12") == 12
        assert parse_value("0.25") == 0.25
        assert parse_value("raw") == "raw"

    def test_float_repr_exact(self):
        """Test floats survive the text format bit-for-bit."""
        value = 1.0 / 3.0
        assert parse_value(format_value(value)) == value


class TestKeyValueFiles:
    """Test the `key = value` format."""

    def test_sorted_keys(self, tmp_path):
        """Test keys are written in sorted order below a header comment."""
        path = write_key_values({"b": 1, "a": 2.5}, tmp_path / "x.report", "demo")
        assert path.read_text() == "# demo\na = 2.5\nb = 1\n"
        assert parse_key_values(path) == {"a": 2.5, "b": 1}

    def test_malformed_line(self, tmp_path):
        """Test a line without '=' names its line number."""
        path = tmp_path / "bad.report"
        path.write_text("# header\na = 1\nnot a pair\n")
        with pytest.raises(DataError, match="line 3"):
            parse_key_values(path)


class TestReports:
    """Test reports with CSV tables."""

    def setup_method(self):
        """Set up a report with one table."""
        self.report = Report(
            "train-attacker",
            {"attacker.final_loss": 0.125, "attacker.frozen": True},
            {"losses": Table(["epoch", "loss"], [[1, 0.5], [2, 0.125]])},
        )

    def test_emit_and_parse(self, tmp_path):
        """Test tables are written beside the report and read back."""
        paths = emit_report(self.report, tmp_path / "train-attacker.report")
        assert [p.name for p in paths] == ["train-attacker.report", "train-attacker.losses.csv"]

        parsed = parse_report(paths[0])
        assert parsed.command == "train-attacker"
        assert parsed.values == self.report.values
        assert parsed.tables["losses"].rows == [[1, 0.5], [2, 0.125]]

    def test_empty_report_is_header_only(self, tmp_path):
        """Test a report without values or tables writes just its header."""
        path = tmp_path / "empty.report"
        written = emit_report(Report("eval"), path)

        assert written == [path]
        assert path.read_text() == "# evanon report: eval\n"
        assert parse_report(path).values == {}

    def test_identical_bytes(self, tmp_path):
        """Test emitting the same report twice gives identical files."""
        a = emit_report(self.report, tmp_path / "a" / "r.report")
        b = emit_report(self.report, tmp_path / "b" / "r.report")
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]

    def test_summary(self):
        """Test the console summary lists every key."""
        summary = format_summary(self.report.values)
        assert "attacker.final_loss" in summary and "true" in summary
