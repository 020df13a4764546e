# tests/conftest.py
import logging
import sys
from pathlib import Path

import numpy as np
import pytest

# Project root = parent of "tests"
ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"

# Prepend src/ to sys.path so `import gsprep` works
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs longer than a few seconds (deselect with -m 'not slow')")
    config.addinivalue_line("markers", "pipeline: desk-scale scan trend checks over several N")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def random_state(rng):
    def make(n, complex_=True):
        psi = rng.standard_normal(2 ** n)
        if complex_:
            psi = psi + 1j * rng.standard_normal(2 ** n)
        return psi / np.linalg.norm(psi)
    return make


@pytest.fixture(autouse=True)
def _restore_root_logger():
    # gsprep.main() installs its own handler on the root logger.
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
