"""Tests for grids, directions and inflow classification."""

from __future__ import annotations

import math

import numpy as np
import pytest

from rte_qrm.exceptions import PreconditionError
from rte_qrm.geometry import (
    AngleGrid,
    Domain,
    Flow,
    Grid2D,
    classify_inflow,
    direction_vector,
    inflow_mask,
    support_bound,
    trapezoid_weights,
)


def test_grid(domain: Domain) -> None:
    grid = Grid2D.build(domain, 100, 100)
    assert grid.shape == (101, 101)
    assert grid.h_x == pytest.approx(0.02)
    assert grid.h_y == pytest.approx(0.02)
    assert grid.x[0] == -1.0
    assert grid.x[-1] == pytest.approx(1.0)
    assert grid.y[0] == 1.0
    assert grid.y[-1] == pytest.approx(3.0)
    assert np.count_nonzero(grid.boundary) == 400
    assert np.count_nonzero(grid.interior) == 99 * 99

    xx, yy = grid.mesh()
    assert xx.shape == grid.shape
    assert xx[3, 5] == grid.x[3]
    assert yy[3, 5] == grid.y[5]


def test_grid_too_small(domain: Domain) -> None:
    with pytest.raises(PreconditionError):
        Grid2D.build(domain, 1, 10)


def test_domain() -> None:
    Domain().check()
    with pytest.raises(PreconditionError):
        Domain(a=3.0, b=3.0).check()
    with pytest.raises(PreconditionError):
        Domain(R=2.0, d=1.0).check()

    domain = Domain()
    inside = domain.contains(np.array([0.0, 1.0, 0.5]), np.array([2, 2, 1]))
    assert inside.tolist() == [True, False, False]


def test_angle_grid() -> None:
    angles = AngleGrid.build(5.0, 50)
    assert angles.nodes.size == 51
    assert angles.nodes[0] == -5.0
    assert angles.nodes[-1] == 5.0
    assert angles.step == pytest.approx(0.2)
    assert angles.weights.sum() == pytest.approx(10.0)
    assert angles.weights[0] == pytest.approx(0.1)

    with pytest.raises(PreconditionError):
        AngleGrid.build(5.0, 0)


def test_trapezoid_weights() -> None:
    values = np.linspace(0, 1, 11) ** 2
    weights = trapezoid_weights(11, 0.1)
    assert values @ weights == pytest.approx(1 / 3, abs=2e-3)


def test_direction_vector() -> None:
    nu_x, nu_y = direction_vector(1.0, 2.0, np.array([-5.0, 1.0, 5.0]))
    assert np.allclose(np.hypot(nu_x, nu_y), 1.0)
    assert nu_x[1] == 0.0
    assert nu_y[1] == 1.0
    assert nu_x[0] == pytest.approx(6 / math.sqrt(40))
    assert nu_x[2] < 0

    with pytest.raises(PreconditionError):
        direction_vector(0.0, 0.0, 1.0)


def test_classify_inflow(grid: Grid2D) -> None:
    # Light always travels upward, so the bottom enters and the top exits.
    assert classify_inflow(grid, 0.0, 1.0, 3.0) == Flow.INFLOW
    assert classify_inflow(grid, 0.0, 3.0, -3.0) == Flow.OUTFLOW

    assert classify_inflow(grid, -1.0, 2.0, -5.0) == Flow.INFLOW
    assert classify_inflow(grid, -1.0, 2.0, 5.0) == Flow.OUTFLOW
    assert classify_inflow(grid, 1.0, 2.0, 5.0) == Flow.INFLOW
    assert classify_inflow(grid, 1.0, 2.0, -5.0) == Flow.OUTFLOW

    # Corners need both edges to pass.
    assert classify_inflow(grid, -1.0, 1.0, -5.0) == Flow.INFLOW
    assert classify_inflow(grid, -1.0, 1.0, 5.0) == Flow.OUTFLOW
    assert classify_inflow(grid, 1.0, 3.0, 5.0) == Flow.OUTFLOW

    # Points within half a cell snap to the boundary.
    assert classify_inflow(grid, 0.0, 1.04, 0.0) == Flow.INFLOW

    with pytest.raises(PreconditionError):
        classify_inflow(grid, 0.0, 2.0, 0.0)


def test_inflow_mask(grid: Grid2D, angles: AngleGrid) -> None:
    mask = inflow_mask(grid, angles)
    assert mask.shape == (*grid.shape, angles.nodes.size)
    assert not np.any(mask[grid.interior])
    assert np.all(mask[1:-1, 0, :])
    assert not np.any(mask[:, -1, :])

    i_boundary, j_boundary = np.nonzero(grid.boundary)
    for i, j in zip(i_boundary, j_boundary, strict=True):
        for k, alpha in enumerate(angles.nodes):
            flow = classify_inflow(grid, grid.x[i], grid.y[j], alpha)
            assert mask[i, j, k] == (flow == Flow.INFLOW)


def test_support_bound(domain: Domain) -> None:
    bound = support_bound(domain)
    assert bound > 40.0
    assert bound == pytest.approx(40.0)
    assert 1 - (1 + domain.b / domain.a) * domain.d / bound > 0.5
    assert domain.a * bound / (2 * domain.b) > domain.R

    wide = Domain(R=20.0, a=1.0, b=3.0, d=20.0)
    assert support_bound(wide) == pytest.approx(160.0)
