"""
Shared fixtures for the engine test suite
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from utils.sampling import RngStream  # noqa: E402


@pytest.fixture
def rng():
    return RngStream(seed=20240601)


@pytest.fixture
def make_rng():
    def _make(seed: int = 1, stream_id: int = 0) -> RngStream:
        return RngStream(seed, stream_id)
    return _make


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    """Isolated output directory with engine env vars cleared."""
    for name in list(os.environ):
        if name.startswith('STRATMC_'):
            monkeypatch.delenv(name, raising=False)
    path = tmp_path / 'out'
    path.mkdir()
    return path
