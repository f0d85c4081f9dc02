import math

import numpy as np
import pytest

from app.core.config import reset_settings
from app.models.domain import Geometry, RoomSpec
from app.services import hrtf_service, sh_core


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale listening-test runs (deselect with -m \"not slow\")")


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch, tmp_path):
    """Default settings for every test; logs and outputs stay in the test's tmp dir."""
    monkeypatch.delenv("BINAURAL_LOG_DIR", raising=False)
    monkeypatch.setenv("BINAURAL_OUTPUT_BASE_DIR", str(tmp_path / "output"))
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid_10():
    return sh_core.make_grid(10)


@pytest.fixture(scope="session")
def synthetic_order_3():
    """Order-3 synthetic HRTF (set, truth) on an order-3 Gauss-Legendre grid."""
    grid = sh_core.make_grid(3)
    return hrtf_service.synthetic_hrtf(3, grid, seed=7, ir_length=32, sample_rate=48000.0)


@pytest.fixture
def small_room():
    return RoomSpec((5.0, 4.0, 3.0), 0.7, 0.3)


@pytest.fixture
def small_geometry():
    return Geometry((3.0, 2.0, 1.5), math.pi, (1.5, 1.2, 1.5))


@pytest.fixture
def free_field_room():
    return RoomSpec((20.0, 20.0, 20.0), 0.0)
