import pytest

from wfhub.platform import Platform

from helpers import World


@pytest.fixture
def plat(tmp_path):
    return Platform(tmp_path / "root")


@pytest.fixture
def world(plat, tmp_path):
    return World(plat, tmp_path / "services")
