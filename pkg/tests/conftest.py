"""Fixtures for tests of the inverse source solver."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from traitlets.config import Config

from rte_qrm.basis import BasisSet, build_basis
from rte_qrm.config import RunConfig
from rte_qrm.geometry import AngleGrid, Domain, Grid2D


@pytest.fixture
def domain() -> Domain:
    return Domain()


@pytest.fixture
def grid(domain: Domain) -> Grid2D:
    """Coarse grid for tests that loop over nodes."""
    return Grid2D.build(domain, 10, 10)


@pytest.fixture
def angles(domain: Domain) -> AngleGrid:
    return AngleGrid.build(domain.d, 20)


@pytest.fixture(scope="session")
def basis() -> BasisSet:
    return build_basis(4, 5.0, 100)


@pytest.fixture(scope="session")
def basis12() -> BasisSet:
    """Basis of the default experiments."""
    return build_basis(12, 5.0, 400)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20231)


@pytest.fixture
def data_path() -> Path:
    return Path(__file__).parent / "data"


@pytest.fixture
def small_config(tmp_path: Path) -> RunConfig:
    """Configuration of a run small enough for unit tests."""
    config = Config()
    config.GridConfig.mx = 8
    config.GridConfig.my = 8
    config.GridConfig.m_alpha = 10
    config.GridConfig.min_step = 0.01
    config.BasisConfig.order = 3
    config.BasisConfig.quadrature = 60
    config.QRMSolver.method = "direct"
    config.OutputConfig.directory = str(tmp_path / "out")
    return RunConfig.from_config(config)
