# conftest.py

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))


def pytest_addoption(parser):
    parser.addoption(
        "--acceptance",
        action="store_true",
        default=False,
        help="run the full-size acceptance scenarios (minutes per test)",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: full-size end-to-end scenario, skipped unless --acceptance")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--acceptance"):
        return
    skip = pytest.mark.skip(reason="needs --acceptance")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)
