import os
import sys

import pytest

# Make the jointloc module directory importable for tests
_THIS_DIR = os.path.dirname(__file__)
_PKG_DIR = os.path.abspath(os.path.join(_THIS_DIR, "..", "jointloc"))
if _PKG_DIR not in sys.path:
    sys.path.insert(0, _PKG_DIR)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow scenario-scale tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scenario reproduction and timing checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
