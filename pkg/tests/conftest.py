import numpy as np
import pytest
import torch

from tempomoe.kinematics import toy_skeleton


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def skel():
    return toy_skeleton()


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
