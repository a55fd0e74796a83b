import pytest

from featx.backbone import load_backbone


@pytest.fixture(scope="session")
def smallconv():
    return load_backbone("smallconv", "pool", seed=0)
