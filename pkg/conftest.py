import pytest

from src.gridworld import State, load_map, parse_map

# 2 item rows of 2 items each: 8 candidate sequences per destination
SMALL_MAP = """\
A.B.C
.....
.3.4.
.1.2.
SSSSS
"""

# one item, 3x4
TINY_MAP = """\
ABC
.1.
...
SSS
"""

WALL_MAP = """\
ABC
.#.
S.S
"""


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running sampler checks (deselect with -m 'not slow')")


@pytest.fixture(scope="session")
def grid():
    return load_map()


@pytest.fixture(scope="session")
def small_grid():
    return parse_map(SMALL_MAP)


@pytest.fixture(scope="session")
def tiny_grid():
    return parse_map(TINY_MAP)


@pytest.fixture(scope="session")
def wall_grid():
    return parse_map(WALL_MAP)


@pytest.fixture
def straight_b():
    # (5,0) .. (5,12): passes items 2, 5, 8 and ends at B
    return tuple(State(5, y) for y in range(13))
