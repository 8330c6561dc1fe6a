"""Shared fixtures: one blob zoo per session, plus cheap helpers."""

import numpy as np
import pytest

from evasionlab import zoo


@pytest.fixture(scope="session")
def blob_zoo(tmp_path_factory):
    root = tmp_path_factory.mktemp("zoo")
    return zoo.build_zoo("blobs", root, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(7)
