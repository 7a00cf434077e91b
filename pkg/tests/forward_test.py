"""Tests for the forward radiative transfer solver."""

from __future__ import annotations

import os

import numpy as np
import pytest
from numpy.typing import NDArray
from traitlets import TraitError

from rte_qrm.exceptions import ConvergenceError, PreconditionError
from rte_qrm.forward import (
    BoundaryData,
    ForwardSolver,
    GriddedField,
    apply_noise,
    attenuation_weight,
    boundary_trace,
    ray_integral,
    solve_forward,
    worker_count,
    xray_data,
)
from rte_qrm.geometry import AngleGrid, Domain, Grid2D
from rte_qrm.media import (
    ConstantKernel,
    Disk,
    HenyeyGreenstein,
    Layer,
    MediaModel,
    PiecewiseField,
    preset,
)


def _gaussian(
    x: NDArray[np.float64], y: NDArray[np.float64]
) -> NDArray[np.float64]:
    return np.exp(-(x**2 + (y - 2.0) ** 2) / 0.18)


def _media(
    *, mu_a: float = 0.0, mu_s: float = 0.0, source: float | None = None
) -> MediaModel:
    return MediaModel(
        mu_a=PiecewiseField(background=mu_a),
        mu_s=PiecewiseField(background=mu_s),
        kernel=ConstantKernel(0.1),
        source=(
            _gaussian if source is None else PiecewiseField(background=source)
        ),
    )


def test_transparent(domain: Domain, angles: AngleGrid) -> None:
    grid = Grid2D.build(domain, 10, 80)
    radiance = solve_forward(_media(), grid, angles)
    assert radiance.iterations == 1
    assert radiance.values.shape == (11, 81, 21)
    assert np.all(radiance.values[:, 0, :] == 0)

    top = grid.y[-1]
    expected = np.array(
        [
            [
                ray_integral(_gaussian, x, top, alpha, start=1.0, steps=4000)
                for alpha in angles.nodes
            ]
            for x in grid.x
        ]
    )
    assert np.allclose(radiance.values[:, -1, :], expected, rtol=1e-2)


def test_attenuation_weight(grid: Grid2D, angles: AngleGrid) -> None:
    weight = attenuation_weight(_media(mu_a=0.5), grid, angles)
    x = grid.x[:, np.newaxis, np.newaxis]
    y = grid.y[np.newaxis, :, np.newaxis]
    alpha = angles.nodes[np.newaxis, np.newaxis, :]
    expected = np.exp(0.5 * (y - 1.0) * np.hypot(x - alpha, y) / y)
    assert np.allclose(weight, expected)
    assert np.all(weight >= 1)


def test_absorbing(domain: Domain, angles: AngleGrid) -> None:
    grid = Grid2D.build(domain, 10, 80)
    radiance = solve_forward(_media(mu_a=0.5, source=2.0), grid, angles)
    x = grid.x[:, np.newaxis, np.newaxis]
    y = grid.y[np.newaxis, :, np.newaxis]
    alpha = angles.nodes[np.newaxis, np.newaxis, :]
    factor = np.hypot(x - alpha, y) / y
    expected = 2.0 / 0.5 * (1 - np.exp(-factor * 0.5 * (y - 1.0)))
    assert np.allclose(radiance.values, expected, rtol=2e-3, atol=1e-12)


def test_scattering(grid: Grid2D, angles: AngleGrid) -> None:
    plain = solve_forward(_media(mu_a=0.15), grid, angles)
    radiance = solve_forward(_media(mu_a=0.1, mu_s=0.05), grid, angles)
    assert radiance.iterations > 1
    assert radiance.residual < 1e-10
    assert np.all(radiance.values >= plain.values - 1e-12)
    assert np.max(radiance.values - plain.values) > 0

    solver = ForwardSolver(max_iter=1)
    with pytest.raises(ConvergenceError) as excinfo:
        solver.solve(_media(mu_a=0.1, mu_s=0.05), grid, angles)
    assert excinfo.value.iterations == 1


def test_solver_traits() -> None:
    with pytest.raises(TraitError):
        ForwardSolver(tol=0.0)
    with pytest.raises(TraitError):
        ForwardSolver(max_iter=0)


def test_boundary_data(grid: Grid2D, angles: AngleGrid) -> None:
    radiance = solve_forward(_media(source=1.0), grid, angles)
    data = boundary_trace(radiance)
    assert not np.any(data.values[grid.interior])
    assert not np.any(data.values[data.inflow])
    assert np.all(data.values[:, -1, :] > 0)
    expected = grid.boundary[..., np.newaxis] & ~data.inflow
    assert np.array_equal(data.measured, expected)

    with pytest.raises(PreconditionError):
        BoundaryData.from_values(grid, angles, np.zeros((11, 11, 3)))


def test_noise(grid: Grid2D, angles: AngleGrid) -> None:
    data = boundary_trace(solve_forward(_media(source=1.0), grid, angles))
    assert apply_noise(data, 0.0) is data

    noisy = apply_noise(data, 0.1, seed=3)
    assert np.array_equal(noisy.values, apply_noise(data, 0.1, 3).values)
    measured = data.values != 0
    ratio = noisy.values[measured] / data.values[measured]
    assert np.all(np.abs(ratio - 1) <= 0.1)
    assert not np.all(ratio == 1)
    assert not np.any(noisy.values[~measured])

    with pytest.raises(PreconditionError):
        apply_noise(data, -0.1)


def test_xray(grid: Grid2D, angles: AngleGrid) -> None:
    media = preset("test1")
    radiance = xray_data(media, grid, angles)
    expected = solve_forward(media.transparent(), grid, angles)
    assert radiance.iterations == 1
    assert np.array_equal(radiance.values, expected.values)
    assert np.all(radiance.values >= 0)


def test_gridded_field(grid: Grid2D) -> None:
    xx, yy = grid.mesh()
    field = GriddedField(grid, xx + 2 * yy)
    x = np.array([0.13, -0.77, 0.0, 5.0])
    y = np.array([1.5, 2.91, 1.0, 2.0])
    assert np.allclose(field(x, y), [x[0] + 3.0, x[1] + 5.82, 2.0, 0.0])


def test_ray_integral() -> None:
    ones = PiecewiseField(background=1.0)
    assert ray_integral(ones, 3.0, 4.0, 0.0) == pytest.approx(5.0)
    assert ray_integral(ones, 3.0, 4.0, 0.0, start=2.0) == pytest.approx(2.5)
    with pytest.raises(PreconditionError):
        ray_integral(ones, 0.0, 0.0, 0.0)


def test_worker_count(monkeypatch: pytest.MonkeyPatch) -> None:
    default = os.cpu_count() or 1
    monkeypatch.delenv("RTE_QRM_THREADS", raising=False)
    assert worker_count() == default
    monkeypatch.setenv("RTE_QRM_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("RTE_QRM_THREADS", "0")
    assert worker_count() == 1
    monkeypatch.setenv("RTE_QRM_THREADS", "many")
    assert worker_count() == default


@pytest.mark.slow
def test_transparent_fine(domain: Domain) -> None:
    grid = Grid2D.build(domain, 100, 100)
    angles = AngleGrid.build(domain.d, 50)
    radiance = solve_forward(_media(), grid, angles)
    for j in (50, 100):
        expected = np.array(
            [
                [
                    ray_integral(
                        _gaussian, x, grid.y[j], alpha, start=1.0, steps=4000
                    )
                    for alpha in angles.nodes
                ]
                for x in grid.x[::5]
            ]
        )
        error = np.abs(radiance.values[::5, j, :] - expected)
        assert error.max() <= 0.02 * expected.max()


@pytest.mark.slow
@pytest.mark.parametrize("name", ["test2", "test3"])
def test_presets_converge(name: str, domain: Domain) -> None:
    grid = Grid2D.build(domain, 100, 100)
    angles = AngleGrid.build(domain.d, 50)
    radiance = ForwardSolver(max_iter=50).solve(preset(name), grid, angles)
    assert radiance.iterations <= 50
    assert radiance.residual < 1e-10
    assert np.all(np.isfinite(radiance.values))


@pytest.mark.slow
def test_inclusion_converges(domain: Domain) -> None:
    grid = Grid2D.build(domain, 100, 100)
    angles = AngleGrid.build(domain.d, 50)
    inclusion = Disk(0.0, 2.0, 0.5)
    media = MediaModel(
        mu_a=PiecewiseField((Layer(inclusion, 0.1),)),
        mu_s=PiecewiseField((Layer(inclusion, 0.05),)),
        kernel=HenyeyGreenstein(PiecewiseField(background=0.9), domain.d),
        source=preset("test3").source,
    )
    radiance = ForwardSolver(max_iter=50).solve(media, grid, angles)
    assert 1 < radiance.iterations <= 50
    assert radiance.residual < 1e-10
