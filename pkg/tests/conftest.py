import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crystalseg.raster import BitMask, GrayImage  # noqa: E402


def as_lists(arr):
    return [[bool(v) if arr.dtype == bool else int(v) for v in row] for row in np.asarray(arr)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def mask(rows, x0=0, y0=0):
    """BitMask from strings like '.#.'."""
    return BitMask(np.array([[c == "#" for c in r] for r in rows]), x0, y0)


def gray(rows):
    return GrayImage(np.array(rows, dtype=np.uint8))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
