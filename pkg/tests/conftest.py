import shutil
import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"
MINI = FIXTURES / "mini"

sys.path.insert(0, str(TESTS))


@pytest.fixture
def mini(tmp_path: Path) -> Path:
    """A private copy of the 10-unit fixture, without the golden files."""
    dest = tmp_path / "mini"
    shutil.copytree(MINI, dest, ignore=shutil.ignore_patterns("golden_*"))
    return dest
ANN_DIR = FIXTURES / "annotations"
