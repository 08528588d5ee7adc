"""
Unit tests for logging setup
"""

import io
import json
import logging

import pytest

from src.infrastructure.logging_config import configure_logging


@pytest.fixture
def restore_root():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        root.removeHandler(handler)
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)


def test_json_records(restore_root):
    stream = io.StringIO()
    configure_logging("INFO", "json", stream)
    logging.getLogger("rbpos.test").info("resonator converged")

    record = json.loads(stream.getvalue().strip().splitlines()[-1])
    assert record["message"] == "resonator converged"
    assert record["levelname"] == "INFO"
    assert record["name"] == "rbpos.test"


def test_text_records_respect_level(restore_root):
    stream = io.StringIO()
    configure_logging("warning", "text", stream)
    logging.getLogger("rbpos.test").info("hidden")
    logging.getLogger("rbpos.test").warning("shown")

    output = stream.getvalue()
    assert "hidden" not in output
    assert "WARNING" in output and "shown" in output


def test_single_handler(restore_root):
    configure_logging("INFO", "text", io.StringIO())
    configure_logging("INFO", "text", io.StringIO())
    assert len(logging.getLogger().handlers) == 1


def test_unknown_format(restore_root):
    with pytest.raises(ValueError, match="log format"):
        configure_logging("INFO", "xml")
