"""Unit tests for logging setup and the diagnostics log."""

import json
import logging
import sys

import numpy as np

from src.navfgo.logging import (
    DIAGNOSTICS_LOGGER,
    JSONFormatter,
    close_diagnostics_log,
    get_logger,
    setup_diagnostics_log,
    setup_logging,
)


class TestJSONFormatter:
    """Test structured log formatting."""

    def test_extra_fields_serialized(self):
        """Test extra fields and numpy values appear in the JSON record."""
        record = logging.LogRecord("navfgo", logging.INFO, __file__, 1, "hello", None, None)
        record.operation = "optimize"
        record.cost = np.float64(1.5)
        record.residual = np.array([1.0, 2.0])
        data = json.loads(JSONFormatter().format(record))
        assert data["message"] == "hello"
        assert data["level"] == "INFO"
        assert data["operation"] == "optimize"
        assert data["cost"] == 1.5
        assert data["residual"] == [1.0, 2.0]

    def test_exception_included(self):
        """Test exception text is included."""
        try:
            raise ValueError("boom")
        except ValueError:
            record = logging.LogRecord(
                "navfgo", logging.ERROR, __file__, 1, "failed", None, sys.exc_info()
            )
        data = json.loads(JSONFormatter().format(record))
        assert "boom" in data["exception"]


class TestSetupLogging:
    """Test console logging setup."""

    def test_level_and_single_handler(self):
        """Test the level is applied and handlers are replaced, not stacked."""
        setup_logging("DEBUG", "text")
        logger = setup_logging("WARNING", "json")
        assert logger.level == logging.WARNING
        assert len(logger.handlers) == 1
        assert isinstance(logger.handlers[0].formatter, JSONFormatter)
        assert logger.propagate is False

    def test_unknown_level_defaults_to_info(self):
        """Test an unknown level name falls back to INFO."""
        logger = setup_logging("LOUD", "text", logger_name="navfgo.test")
        assert logger.level == logging.INFO

    def test_get_logger_default_name(self):
        """Test the default logger is the package logger."""
        assert get_logger().name == "navfgo"


class TestDiagnosticsLog:
    """Test the JSON-lines diagnostics file."""

    def test_records_written_as_json_lines(self, tmp_path):
        """Test each diagnostics record is one JSON object per line."""
        path = tmp_path / "out" / "diagnostics.jsonl"
        logger = setup_diagnostics_log(path)
        try:
            logger.info("optimization", extra={"t": 1.0, "iterations": 3})
            logger.info("optimization", extra={"t": 2.0, "iterations": 4})
        finally:
            close_diagnostics_log()
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        records = [json.loads(line) for line in lines]
        assert [r["t"] for r in records] == [1.0, 2.0]
        assert records[1]["iterations"] == 4

    def test_reopen_truncates(self, tmp_path):
        """Test setting up the log again starts a fresh file."""
        path = tmp_path / "diagnostics.jsonl"
        setup_diagnostics_log(path).info("first")
        setup_diagnostics_log(path).info("second")
        close_diagnostics_log()
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["message"] == "second"

    def test_close_detaches_handlers(self, tmp_path):
        """Test closing removes every file handler."""
        setup_diagnostics_log(tmp_path / "d.jsonl")
        close_diagnostics_log()
        assert logging.getLogger(DIAGNOSTICS_LOGGER).handlers == []
