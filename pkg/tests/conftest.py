import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20150127)


def pytest_terminal_summary(terminalreporter):
    import verdicts
    if verdicts.RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in verdicts.lines():
            terminalreporter.write_line(line)
