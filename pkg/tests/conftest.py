import os

import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "extended: long-running reproduction, opt in with GASR_EXTENDED=1")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("GASR_EXTENDED"):
        return
    skip = pytest.mark.skip(reason="extended run; set GASR_EXTENDED=1")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)
