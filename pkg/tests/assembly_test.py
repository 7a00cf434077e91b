"""Tests for the per-node coefficient matrices."""

from __future__ import annotations

import numpy as np
import pytest

from rte_qrm.assembly import assemble, check_conditioning, reduce_system
from rte_qrm.basis import BasisSet, build_basis
from rte_qrm.exceptions import PreconditionError
from rte_qrm.geometry import AngleGrid, Domain, Grid2D
from rte_qrm.media import (
    ConstantKernel,
    HenyeyGreenstein,
    MediaModel,
    PiecewiseField,
    ScatteringKernel,
)

from .support.oracles import dense_a_matrix


def _media(
    *,
    mu_a: float = 0.0,
    mu_s: float = 0.0,
    kernel: ScatteringKernel | None = None,
) -> MediaModel:
    return MediaModel(
        mu_a=PiecewiseField(background=mu_a),
        mu_s=PiecewiseField(background=mu_s),
        kernel=kernel or ConstantKernel(0.1),
        source=PiecewiseField(),
    )


def test_shapes(basis: BasisSet, grid: Grid2D, angles: AngleGrid) -> None:
    nodes = assemble(basis, _media(mu_a=0.1), grid, angles)
    assert nodes.order == 4
    assert nodes.a.shape == (11, 11, 4, 4)
    assert nodes.norms().shape == (11, 11, 3)
    assert np.array_equal(nodes.matrix, basis.matrix)
    assert np.array_equal(nodes.leading, basis.matrix - nodes.a)


def test_empty_media(
    basis: BasisSet, grid: Grid2D, angles: AngleGrid
) -> None:
    nodes = assemble(basis, _media(), grid, angles)
    assert not np.any(nodes.c)
    assert np.any(nodes.b)


def test_a_matrix(basis: BasisSet, grid: Grid2D, domain: Domain) -> None:
    angles = AngleGrid.build(domain.d, 400)
    nodes = assemble(basis, _media(), grid, angles)
    for i, j in ((0, 0), (5, 5), (10, 3), (2, 10)):
        expected = dense_a_matrix(basis, grid.x[i], grid.y[j])
        assert np.allclose(nodes.a[i, j], expected, atol=5e-3)


def test_single_function(grid: Grid2D, angles: AngleGrid) -> None:
    basis = build_basis(1, 5.0, 10)
    nodes = assemble(basis, _media(), grid, angles)
    report = check_conditioning(nodes)
    expected = np.abs(nodes.leading[..., 0, 0])
    assert np.allclose(report.singular_values, expected)
    assert report.minimum == pytest.approx(expected.min())
    assert expected[report.worst_node] == pytest.approx(expected.min())


def test_constant_kernel(
    basis: BasisSet, grid: Grid2D, angles: AngleGrid
) -> None:
    absorbing = assemble(basis, _media(mu_a=0.2), grid, angles)
    scattering = assemble(basis, _media(mu_s=0.2), grid, angles)
    assert np.allclose(absorbing.c, scattering.c, atol=1e-14)
    assert np.array_equal(absorbing.a, scattering.a)


def test_scattering_term(
    basis: BasisSet, grid: Grid2D, angles: AngleGrid
) -> None:
    kernel = HenyeyGreenstein(PiecewiseField(background=0.5), 5.0)
    media = _media(mu_a=0.1, mu_s=0.05, kernel=kernel)
    nodes = assemble(basis, media, grid, angles)

    i, j = 3, 7
    x, y = grid.x[i], grid.y[j]
    alpha = angles.nodes
    weights = angles.weights
    psi = basis.evaluate(alpha)
    dpsi = basis.evaluate(alpha, derivative=True)
    ratio = np.hypot(x - alpha, y) / y
    expected = np.zeros((4, 4))
    for m in range(4):
        for n in range(4):
            for k in range(alpha.size):
                derivative = ScatteringKernel.d_alpha(
                    kernel, np.array(x), np.array(y), alpha[k], alpha
                )
                inner = np.sum(weights * derivative * psi[n])
                integrand = -0.15 * dpsi[n, k] + 0.05 * inner
                expected[m, n] += weights[k] * ratio[k] * integrand * psi[m, k]
    assert np.allclose(nodes.c[i, j], expected, rtol=1e-6, atol=1e-9)


def test_reduce_system(
    basis: BasisSet, grid: Grid2D, angles: AngleGrid
) -> None:
    nodes = assemble(basis, _media(mu_a=0.1), grid, angles)
    report = check_conditioning(nodes)
    assert report.ok
    a1, a2 = reduce_system(nodes, report)
    assert np.allclose(nodes.leading @ a1, nodes.b)
    assert np.allclose(nodes.leading @ a2, nodes.c)

    strict = check_conditioning(nodes, threshold=1e6)
    assert not strict.ok
    assert np.all(strict.flagged)
    with pytest.raises(PreconditionError):
        reduce_system(nodes, strict)


def test_deterministic(
    basis: BasisSet, grid: Grid2D, angles: AngleGrid
) -> None:
    first = assemble(basis, _media(mu_a=0.1, mu_s=0.02), grid, angles)
    second = assemble(basis, _media(mu_a=0.1, mu_s=0.02), grid, angles)
    assert np.array_equal(first.a, second.a)
    assert np.array_equal(first.b, second.b)
    assert np.array_equal(first.c, second.c)


def test_source_line(basis: BasisSet, angles: AngleGrid) -> None:
    grid = Grid2D.build(Domain(a=0.0), 4, 4)
    with pytest.raises(PreconditionError):
        assemble(basis, _media(), grid, angles)


def _jump(basis: BasisSet, weight: np.ndarray) -> np.ndarray:
    """``[w psi_m psi_n]`` between the ends of the source segment."""
    lower, upper = basis.evaluate(np.array([-basis.d, basis.d])).T
    first = weight[..., 0, np.newaxis, np.newaxis] * np.outer(lower, lower)
    last = weight[..., 1, np.newaxis, np.newaxis] * np.outer(upper, upper)
    return last - first


def _assert_close(actual: np.ndarray, expected: np.ndarray) -> None:
    scale = np.abs(expected).max()
    assert np.allclose(actual, expected, rtol=1e-4, atol=1e-4 * scale)


def test_weak_form(basis: BasisSet, grid: Grid2D, domain: Domain) -> None:
    fine = AngleGrid.build(domain.d, 4000)
    strong = assemble(basis, _media(mu_a=0.15), grid, fine)
    media = _media(mu_a=0.1, mu_s=0.05)
    weak = assemble(basis, media, grid, fine, form="weak")
    assert weak.form.value == "weak"
    assert weak.flux is not None
    assert weak.flux.shape == (11, 11, 4)
    assert np.array_equal(weak.leading, -basis.matrix.T - weak.a)

    xx, yy = grid.mesh()
    ends = np.array([-basis.d, basis.d])
    x = xx[..., np.newaxis]
    y = yy[..., np.newaxis]
    offset = (x - ends) / y
    ratio = np.hypot(x - ends, y) / y

    _assert_close(weak.a, strong.a)
    _assert_close(
        weak.leading, strong.leading - _jump(basis, np.ones_like(offset))
    )
    _assert_close(weak.b, strong.b + _jump(basis, offset))

    lower, upper = basis.evaluate(ends).T
    assert np.allclose(
        weak.flux, ratio[..., 1:] * upper - ratio[..., :1] * lower
    )
    integrals = basis.psi @ basis.weights
    scattering = 0.05 * 0.1 * weak.flux[..., np.newaxis] * integrals
    expected = strong.c + 0.15 * _jump(basis, ratio) - scattering
    _assert_close(weak.c, expected)


def test_weak_empty_media(
    basis: BasisSet, grid: Grid2D, angles: AngleGrid
) -> None:
    nodes = assemble(basis, _media(), grid, angles, form="weak")
    assert not np.any(nodes.c)
    assert np.any(nodes.b)
    assert nodes.flux is not None
    assert np.all(np.linalg.norm(nodes.flux, axis=-1) > 0)


def test_weak_scattering_term(
    basis: BasisSet, grid: Grid2D, angles: AngleGrid
) -> None:
    kernel = HenyeyGreenstein(PiecewiseField(background=0.5), 5.0)
    media = _media(mu_s=0.05, kernel=kernel)
    nodes = assemble(basis, media, grid, angles, form="weak")

    i, j = 6, 2
    x, y = grid.x[i], grid.y[j]
    alpha = basis.nodes
    weights = basis.weights
    r = np.hypot(x - alpha, y)
    test = (r / y) * basis.dpsi - (x - alpha) / (r * y) * basis.psi
    expected = np.zeros((4, 4))
    for n in range(4):
        scattered = np.array(
            [
                np.sum(weights * kernel(x, y, a, alpha) * basis.psi[n])
                for a in alpha
            ]
        )
        integrand = 0.05 * basis.psi[n] - 0.05 * scattered
        for m in range(4):
            expected[m, n] = np.sum(weights * integrand * test[m])
    assert np.allclose(nodes.c[i, j], expected, rtol=1e-8, atol=1e-10)


def test_flux_projection(
    basis: BasisSet, grid: Grid2D, angles: AngleGrid
) -> None:
    kernel = HenyeyGreenstein(PiecewiseField(background=0.7), 5.0)
    media = _media(mu_a=0.1, mu_s=0.02, kernel=kernel)
    weak = assemble(basis, media, grid, angles, form="weak")
    assert weak.flux is not None
    unit = weak.flux / np.linalg.norm(weak.flux, axis=-1, keepdims=True)
    row = unit[..., np.newaxis, :]
    for block in weak.rows():
        scale = np.abs(block).max()
        assert np.allclose(row @ block, 0, atol=1e-12 * scale)

    leading = weak.rows()[0]
    removed = unit[..., :, np.newaxis] * (row @ weak.leading)
    assert np.allclose(leading + removed, weak.leading)

    strong = assemble(basis, media, grid, angles)
    assert strong.flux is None
    for block, expected in zip(
        strong.rows(), (strong.leading, strong.b, strong.c), strict=True
    ):
        assert np.array_equal(block, expected)
