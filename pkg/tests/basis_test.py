"""Tests for the orthonormal basis in the source variable."""

from __future__ import annotations

import math

import numpy as np
import pytest

from rte_qrm.basis import (
    BasisSet,
    build_basis,
    project,
    project_all,
    synthesize,
)
from rte_qrm.exceptions import PreconditionError
from rte_qrm.geometry import AngleGrid


def test_orthonormal(basis12: BasisSet) -> None:
    gram = basis12.gram_matrix()
    assert np.max(np.abs(gram - np.eye(12))) <= 1e-8


def test_derivative_matrix(basis12: BasisSet) -> None:
    matrix = basis12.matrix
    assert matrix.shape == (12, 12)
    assert np.allclose(np.diag(matrix), 1.0, atol=1e-8)
    assert np.max(np.abs(np.tril(matrix, k=-1))) <= 1e-8


def test_first_function() -> None:
    basis = build_basis(1, 5.0, 10)
    value = basis.evaluate(0.0)
    assert value.shape == (1,)
    assert value[0] == pytest.approx(1 / math.sqrt(math.sinh(10.0)))
    assert basis.matrix[0, 0] == pytest.approx(1.0)


def test_derivative(basis: BasisSet) -> None:
    alpha = np.array([-4.5, -1.0, 0.3, 2.0, 4.5])
    step = 1e-6
    finite = (basis.evaluate(alpha + step) - basis.evaluate(alpha - step)) / (
        2 * step
    )
    exact = basis.evaluate(alpha, derivative=True)
    assert exact.shape == (4, 5)
    assert np.allclose(finite, exact, rtol=1e-6, atol=1e-6)


def test_monomial_coefficients(basis: BasisSet) -> None:
    alpha = np.linspace(-5, 5, 21)
    coefficients = basis.monomial_coefficients()
    assert np.all(np.triu(coefficients, k=1) == 0)
    powers = alpha[np.newaxis, :] ** np.arange(4)[:, np.newaxis]
    values = (coefficients @ powers) * np.exp(alpha)
    assert np.allclose(values, basis.evaluate(alpha), rtol=1e-8, atol=1e-10)


def test_project(basis: BasisSet) -> None:
    angles = AngleGrid.build(5.0, 2000)
    samples = basis.evaluate(angles.nodes)
    coefficients = project_all(samples, angles, basis)
    assert coefficients.shape == (4, 4)
    assert np.allclose(coefficients, np.eye(4), atol=1e-4)
    assert project(samples[2], angles, basis, 3) == pytest.approx(
        1.0, abs=1e-4
    )
    assert project(samples[2], angles, basis, 1) == pytest.approx(
        0.0, abs=1e-4
    )


def test_synthesize(basis: BasisSet) -> None:
    alpha = np.array([-2.0, 0.0, 3.0])
    coefficients = np.array([[0.0, 1.0, 0.0, 0.0], [2.0, 0.0, 0.0, -1.0]])
    values = synthesize(coefficients, basis, alpha)
    table = basis.evaluate(alpha)
    assert values.shape == (2, 3)
    assert np.allclose(values[0], table[1])
    assert np.allclose(values[1], 2 * table[0] - table[3])

    derived = synthesize(coefficients, basis, alpha, derivative=True)
    assert np.allclose(derived[0], basis.evaluate(alpha, derivative=True)[1])


def test_errors(basis: BasisSet) -> None:
    with pytest.raises(PreconditionError):
        build_basis(0, 5.0)
    with pytest.raises(PreconditionError):
        build_basis(3, -1.0)
    with pytest.raises(PreconditionError):
        build_basis(12, 5.0, 20)
    with pytest.raises(PreconditionError):
        basis.evaluate(5.5)

    angles = AngleGrid.build(5.0, 10)
    samples = np.ones(11)
    with pytest.raises(PreconditionError):
        project(samples, angles, basis, 0)
    with pytest.raises(PreconditionError):
        project(samples, angles, basis, 5)
    with pytest.raises(PreconditionError):
        project_all(np.ones(12), angles, basis)
    with pytest.raises(PreconditionError):
        synthesize(np.ones(3), basis, 0.0)
