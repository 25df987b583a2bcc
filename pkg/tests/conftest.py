import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hierdp.hierarchy import parse_hierarchy

VA_CSV = """node_id,parent_id,level,count
VA,,1,450
VA-100,VA,2,300
VA-200,VA,2,150
VA-100-1,VA-100,3,120
VA-100-2,VA-100,3,80
VA-100-3,VA-100,3,100
VA-200-1,VA-200,3,90
VA-200-2,VA-200,3,60
"""

# ten blocks inside one tract, heavily skewed on purpose
TRACT_BLOCKS = [500.0, 200.0, 100.0, 50.0, 50.0, 30.0, 30.0, 20.0, 10.0, 10.0]


@pytest.fixture(scope="session")
def va_csv() -> str:
    return VA_CSV


@pytest.fixture(scope="session")
def va_hierarchy():
    return parse_hierarchy(VA_CSV)


@pytest.fixture(scope="session")
def tract_blocks():
    return list(TRACT_BLOCKS)
