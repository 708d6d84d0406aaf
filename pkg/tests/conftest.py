import os

import numpy as np
import pytest

from aggdiff import config as cfgmod


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def fixture_cfg():
    def load(name):
        return cfgmod.load(f"fixture:{name}")
    return load


@pytest.fixture(autouse=True)
def _output_root(tmp_path, monkeypatch):
    # CLI runs never write into the working tree
    monkeypatch.setenv("AGGDIFF_OUTPUT_ROOT", str(tmp_path / "runs"))
    yield


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, printed whatever the capture mode
    try:
        from test_acceptance import RESULTS, print_results
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        print_results(terminalreporter.write_line)
