import numpy as np
import pytest

from irmap.radiometry import CalibrationProfile

# Capture plugin handle so acceptance tests can print their verdict lines
# even when stdout is being captured at the fd level.
CAPTURE_MANAGER = None


def pytest_configure(config):
    global CAPTURE_MANAGER
    CAPTURE_MANAGER = config.pluginmanager.getplugin("capturemanager")


@pytest.fixture
def profile():
    return CalibrationProfile()


@pytest.fixture
def rng():
    return np.random.default_rng(20260826)
