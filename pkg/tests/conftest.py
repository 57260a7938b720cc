import pytest

from oamqkd import build_pmub


@pytest.fixture(scope="session")
def pmub3():
    return build_pmub(3)


@pytest.fixture(scope="session")
def pmub1():
    return build_pmub(1)
