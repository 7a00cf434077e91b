"""Orthonormal exponential-polynomial basis in the source variable.

The basis is obtained by Gram-Schmidt orthonormalization of the family
``alpha**(n - 1) * exp(alpha)`` in ``L2(-d, d)``. Each basis function is
``exp(alpha)`` times a polynomial of degree ``n - 1``, and so is its
derivative, which gives the matrix of derivative coefficients its unit
upper-triangular structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre
from numpy.typing import NDArray

from .exceptions import IllConditionedBasisError, PreconditionError
from .geometry import AngleGrid

__all__ = [
    "BasisSet",
    "build_basis",
    "project",
    "project_all",
    "synthesize",
]

_INDEPENDENCE_THRESHOLD = 1e-13
"""Relative norm below which a raw function is deemed dependent."""

_ALPHA_SLACK = 1e-12
"""Relative slack allowed when checking that an abscissa is in range."""


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Truncated orthonormal basis and its derivative matrix.

    Basis functions are stored as coefficient rows against the family
    ``exp(alpha) * P_k(alpha / d)`` where ``P_k`` are Legendre polynomials.
    That family spans the same space as the monomial family and keeps the
    coefficients well scaled for large ``d``.
    """

    order: int
    """Number of basis functions, ``N``."""

    d: float
    """Half-length of the interval."""

    coefficients: NDArray[np.float64] = field(repr=False)
    """Coefficients of each basis function, indexed ``[n, k]``."""

    nodes: NDArray[np.float64] = field(repr=False)
    """Gauss-Legendre abscissas on ``[-d, d]``."""

    weights: NDArray[np.float64] = field(repr=False)
    """Gauss-Legendre weights on ``[-d, d]``."""

    psi: NDArray[np.float64] = field(repr=False)
    """Basis values at the quadrature nodes, indexed ``[n, q]``."""

    dpsi: NDArray[np.float64] = field(repr=False)
    """Basis derivatives at the quadrature nodes, indexed ``[n, q]``."""

    matrix: NDArray[np.float64] = field(repr=False)
    """Derivative matrix ``M_N[m, n] = integral of dpsi_n * psi_m``."""

    @property
    def derivative_coefficients(self) -> NDArray[np.float64]:
        """Coefficients of the derivatives in the same family."""
        return _derivative_coefficients(self.coefficients, self.d)

    def evaluate(
        self, alpha: float | NDArray[np.float64], *, derivative: bool = False
    ) -> NDArray[np.float64]:
        """Evaluate every basis function at the given abscissas.

        Parameters
        ----------
        alpha
            Abscissas in ``[-d, d]``.
        derivative
            Whether to evaluate derivatives instead of values.

        Returns
        -------
        numpy.ndarray
            Array of shape ``(N,) + alpha.shape``.

        Raises
        ------
        PreconditionError
            If an abscissa lies outside ``[-d, d]``.
        """
        alpha = np.asarray(alpha, dtype=np.float64)
        if np.any(np.abs(alpha) > self.d * (1 + _ALPHA_SLACK)):
            raise PreconditionError(f"Abscissa outside [-{self.d}, {self.d}]")
        if derivative:
            coefficients = self.derivative_coefficients
        else:
            coefficients = self.coefficients
        return _evaluate(coefficients, alpha, self.d)

    def gram_matrix(self) -> NDArray[np.float64]:
        """Inner products of the basis functions by Gauss quadrature."""
        return (self.psi * self.weights) @ self.psi.T

    def monomial_coefficients(self) -> NDArray[np.float64]:
        """Coefficients against ``alpha**k * exp(alpha)``, indexed ``[n, k]``.

        Notes
        -----
        The conversion amplifies rounding for large ``d`` and is meant for
        inspection, not evaluation.
        """
        result = np.zeros((self.order, self.order))
        scale = self.d ** -np.arange(self.order, dtype=np.float64)
        for n, row in enumerate(self.coefficients):
            power = legendre.leg2poly(row[: n + 1])
            result[n, : power.size] = power * scale[: power.size]
        return result


def build_basis(order: int, d: float, quadrature: int = 400) -> BasisSet:
    """Construct the orthonormal basis by Gram-Schmidt.

    Inner products use Gauss-Legendre quadrature on ``[-d, d]``. The raw
    functions are orthogonalized by modified Gram-Schmidt with a second full
    pass, then a Cholesky correction of the evaluated Gram matrix removes the
    remaining loss of orthogonality.

    Parameters
    ----------
    order
        Number of basis functions.
    d
        Half-length of the interval.
    quadrature
        Number of Gauss-Legendre nodes.

    Returns
    -------
    BasisSet
        The basis with its tables and derivative matrix.

    Raises
    ------
    PreconditionError
        If ``order < 1``, ``d <= 0`` or the quadrature cannot resolve the
        products of basis functions.
    IllConditionedBasisError
        If a raw function is numerically dependent on its predecessors.
    """
    if order < 1:
        raise PreconditionError(f"Basis order must be positive, got {order}")
    if d <= 0:
        raise PreconditionError(f"Interval half-length must be positive: {d}")
    if quadrature < 2 * order:
        raise PreconditionError(
            f"Quadrature with {quadrature} nodes cannot resolve order {order}"
        )
    t, w = legendre.leggauss(quadrature)
    nodes = d * t
    weights = d * w

    # Raw family exp(alpha) * P_k(alpha / d), scaled so the Euclidean inner
    # product of columns is the quadrature inner product.
    raw = legendre.legvander(t, order - 1) * np.exp(nodes)[:, np.newaxis]
    sampled = raw * np.sqrt(weights)[:, np.newaxis]
    r = _gram_schmidt(sampled)
    coefficients = np.linalg.inv(r).T

    psi = _evaluate(coefficients, nodes, d)
    gram = (psi * weights) @ psi.T
    correction = np.linalg.inv(np.linalg.cholesky(gram))
    coefficients = correction @ coefficients

    psi = _evaluate(coefficients, nodes, d)
    dpsi = _evaluate(_derivative_coefficients(coefficients, d), nodes, d)
    matrix = (psi * weights) @ dpsi.T
    for array in (coefficients, nodes, weights, psi, dpsi, matrix):
        array.setflags(write=False)
    return BasisSet(
        order=order,
        d=d,
        coefficients=coefficients,
        nodes=nodes,
        weights=weights,
        psi=psi,
        dpsi=dpsi,
        matrix=matrix,
    )


def project(
    samples: NDArray[np.float64],
    angles: AngleGrid,
    basis: BasisSet,
    n: int,
) -> float:
    """Fourier coefficient of sampled data against one basis function.

    Parameters
    ----------
    samples
        Function values at the angle grid nodes.
    angles
        Angle grid the samples live on.
    basis
        Basis to project on.
    n
        One-based index of the basis function.

    Returns
    -------
    float
        Trapezoid approximation of the integral of ``samples * psi_n``.

    Raises
    ------
    PreconditionError
        If ``n`` is out of range or the samples do not match the grid.
    """
    if not 1 <= n <= basis.order:
        raise PreconditionError(f"Index {n} outside 1..{basis.order}")
    return float(project_all(samples, angles, basis)[n - 1])


def project_all(
    samples: NDArray[np.float64], angles: AngleGrid, basis: BasisSet
) -> NDArray[np.float64]:
    """Project samples on every basis function at once.

    The last axis of ``samples`` runs over the angle grid and is replaced by
    an axis of length ``N`` in the result.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[-1] != angles.nodes.size:
        raise PreconditionError(
            f"Samples have {samples.shape[-1]} angles, grid has"
            f" {angles.nodes.size}"
        )
    table = basis.evaluate(angles.nodes) * angles.weights
    return samples @ table.T


def synthesize(
    coefficients: NDArray[np.float64],
    basis: BasisSet,
    alpha: float | NDArray[np.float64],
    *,
    derivative: bool = False,
) -> NDArray[np.float64]:
    """Evaluate a truncated Fourier series or its derivative.

    Parameters
    ----------
    coefficients
        Coefficients with the basis index last.
    basis
        Basis the coefficients refer to.
    alpha
        Abscissas in ``[-d, d]``.
    derivative
        Whether to differentiate the series in ``alpha``.

    Returns
    -------
    numpy.ndarray
        Series values of shape ``coefficients.shape[:-1] + alpha.shape``.
    """
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape[-1] != basis.order:
        raise PreconditionError(
            f"Expected {basis.order} coefficients, got"
            f" {coefficients.shape[-1]}"
        )
    table = basis.evaluate(alpha, derivative=derivative)
    return np.tensordot(coefficients, table, axes=(-1, 0))


def _derivative_coefficients(
    coefficients: NDArray[np.float64], d: float
) -> NDArray[np.float64]:
    # (exp(alpha) p(alpha / d))' = exp(alpha) (p + p' / d)
    result = np.array(coefficients, dtype=np.float64)
    derived = legendre.legder(coefficients, axis=1)
    result[:, : derived.shape[1]] += derived / d
    return result


def _evaluate(
    coefficients: NDArray[np.float64], alpha: NDArray[np.float64], d: float
) -> NDArray[np.float64]:
    values = legendre.legval(alpha / d, coefficients.T)
    return values * np.exp(alpha)


def _gram_schmidt(sampled: NDArray[np.float64]) -> NDArray[np.float64]:
    """Return the triangular factor of the columns of ``sampled``."""
    vectors = np.array(sampled, dtype=np.float64)
    count = vectors.shape[1]
    r = np.zeros((count, count))
    for n in range(count):
        original = np.linalg.norm(vectors[:, n])
        for _ in range(2):
            for m in range(n):
                overlap = vectors[:, m] @ vectors[:, n]
                r[m, n] += overlap
                vectors[:, n] -= overlap * vectors[:, m]
        norm = np.linalg.norm(vectors[:, n])
        if norm <= _INDEPENDENCE_THRESHOLD * original:
            raise IllConditionedBasisError(
                f"Raw basis function {n + 1} is numerically dependent on its"
                f" predecessors (relative norm {norm / original:.1e})"
            )
        r[n, n] = norm
        vectors[:, n] /= norm
    return r
