import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from earn.pool import synth_pool


@pytest.fixture(scope="session")
def pool3():
    return synth_pool(3, 120, 3, seed=2)


@pytest.fixture(scope="session")
def pool5():
    return synth_pool(5, 300, 4, seed=11)
