"""Per-node coefficient matrices of the truncated first-order system.

Differentiating the transport equation in the source position removes the
unknown source. Substituting the truncated Fourier series and projecting on
each basis function leaves, at every node, the first-order system

    M_N U_y = A U_y + B U_x + C U

for the vector ``U`` of Fourier coefficients. With ``r = |x - x_alpha|``
and ``sigma = mu_a + mu_s`` the matrices are

    A[m, n] = -integral (x - alpha) / r^2 psi_n psi_m
    B[m, n] = integral (-(x - alpha) / y psi_n' + y / r^2 psi_n) psi_m
    C[m, n] = integral (r / y) (-sigma psi_n'
              + mu_s integral K_alpha psi_n dbeta) psi_m

where every outer integral runs over ``alpha`` in ``[-d, d]``. This is the
strong form.

The weak form moves the derivative in ``alpha`` onto the test functions
``phi_m = (r / y) psi_m`` instead of the truncated series. Integrating the
transport equation against ``phi_m'`` gives

    (-M_N^T - A) U_y - B_w U_x - C_w U + f g = 0

with

    B_w[m, n] = integral ((x - alpha) / y psi_m'
                - (x - alpha)^2 / (y r^2) psi_m) psi_n
    C_w[m, n] = integral (sigma psi_n - mu_s integral K psi_n dbeta) phi_m'

and the source flux ``g[m] = phi_m(d) - phi_m(-d)``. The source ``f`` is
unknown but multiplies a known vector, so projecting each node's rows on the
orthogonal complement of ``g`` removes it. Weak-form integrals use the Gauss
rule of the basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from .basis import BasisSet
from .exceptions import PreconditionError
from .geometry import AngleGrid, Grid2D
from .media import MediaModel

__all__ = [
    "ConditioningReport",
    "Form",
    "NodeMatrices",
    "assemble",
    "check_conditioning",
    "reduce_system",
]

SINGULAR_THRESHOLD = 1e-8
"""Smallest singular value of the leading matrix below which a node is
flagged."""

_CHUNK = 256
"""Nodes processed together when integrating the scattering term."""

_WEAK_CHUNK = 16
"""Nodes processed together when integrating the scattering term on the
Gauss nodes of the basis."""


class Form(str, Enum):
    """How the truncated system is derived from the transport equation."""

    STRONG = "strong"
    WEAK = "weak"


@dataclass(frozen=True, eq=False)
class NodeMatrices:
    """Coefficient matrices at every grid node."""

    grid: Grid2D
    matrix: NDArray[np.float64] = field(repr=False)
    """Shared derivative matrix ``M_N``."""

    a: NDArray[np.float64] = field(repr=False)
    """Matrices ``A`` indexed ``[i, j, m, n]``."""

    b: NDArray[np.float64] = field(repr=False)
    """Matrices ``B`` indexed ``[i, j, m, n]``."""

    c: NDArray[np.float64] = field(repr=False)
    """Matrices ``C`` indexed ``[i, j, m, n]``."""

    form: Form = Form.STRONG

    flux: NDArray[np.float64] | None = field(default=None, repr=False)
    """Source flux vectors ``g`` of the weak form, indexed ``[i, j, m]``."""

    @property
    def order(self) -> int:
        return self.matrix.shape[0]

    @property
    def leading(self) -> NDArray[np.float64]:
        """Matrices multiplying ``U_y``.

        ``M_N - A`` in the strong form and ``-M_N^T - A`` in the weak form.
        """
        if self.form is Form.WEAK:
            return -self.matrix.T - self.a
        return self.matrix - self.a

    def rows(
        self,
    ) -> tuple[
        NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]
    ]:
        """Blocks multiplying ``U_y``, ``U_x`` and ``U`` in the residual.

        In the weak form every block is projected on the orthogonal
        complement of the source flux, so the residual of the exact field
        no longer depends on the source.
        """
        leading, b, c = self.leading, self.b, self.c
        if self.flux is None:
            return leading, b, c
        unit = self.flux / np.linalg.norm(self.flux, axis=-1, keepdims=True)
        column = unit[..., :, np.newaxis]
        row = unit[..., np.newaxis, :]
        return (
            leading - column * (row @ leading),
            b - column * (row @ b),
            c - column * (row @ c),
        )

    def norms(self) -> NDArray[np.float64]:
        """Spectral norms of ``A``, ``B`` and ``C``, indexed ``[i, j, 3]``."""
        return np.stack(
            [
                np.linalg.norm(self.a, ord=2, axis=(-2, -1)),
                np.linalg.norm(self.b, ord=2, axis=(-2, -1)),
                np.linalg.norm(self.c, ord=2, axis=(-2, -1)),
            ],
            axis=-1,
        )


@dataclass(frozen=True, eq=False)
class ConditioningReport:
    """Invertibility of the leading matrices across the grid."""

    singular_values: NDArray[np.float64] = field(repr=False)
    """Smallest singular value at each node, indexed ``[i, j]``."""

    threshold: float = SINGULAR_THRESHOLD
    """Value below which a node is flagged."""

    @property
    def minimum(self) -> float:
        return float(self.singular_values.min())

    @property
    def worst_node(self) -> tuple[int, int]:
        """Grid indices of the node with the smallest singular value."""
        index = np.unravel_index(
            np.argmin(self.singular_values), self.singular_values.shape
        )
        return int(index[0]), int(index[1])

    @property
    def flagged(self) -> NDArray[np.bool_]:
        """Mask of nodes where the leading matrix is numerically singular."""
        return self.singular_values < self.threshold

    @property
    def ok(self) -> bool:
        return not bool(np.any(self.flagged))


def assemble(
    basis: BasisSet,
    media: MediaModel,
    grid: Grid2D,
    angles: AngleGrid,
    *,
    form: Form | str = Form.STRONG,
) -> NodeMatrices:
    """Compute ``A``, ``B`` and ``C`` at every grid node.

    In the strong form, integrals in the source position use the trapezoid
    rule on the angle grid and the kernel derivative comes from
    `ScatteringKernel.d_alpha`, which is analytic for the built-in kernels.
    The weak form needs no kernel derivative and integrates with the Gauss
    rule of the basis.

    Parameters
    ----------
    basis
        Orthonormal basis.
    media
        Coefficients of the medium; the source is not used.
    grid
        Spatial grid, which must lie in ``y > 0``.
    angles
        Source positions used as quadrature nodes of the strong form.
    form
        ``strong`` or ``weak``.

    Returns
    -------
    NodeMatrices
        Matrices at every node.
    """
    if grid.domain.a <= 0:
        raise PreconditionError("Assembly needs a grid in y > 0")
    form = Form(form)
    xx, yy = grid.mesh()
    x = xx.reshape(-1, 1)
    y = yy.reshape(-1, 1)
    sampled = media.sample(grid)
    sigma = sampled.sigma.reshape(-1, 1)
    mu_s = sampled.mu_s.reshape(-1)

    flux = None
    if form is Form.WEAK:
        a, b, c, flux = _weak_matrices(basis, media, x, y, sigma, mu_s)
    else:
        a, b, c = _strong_matrices(basis, media, x, y, sigma, mu_s, angles)

    order = basis.order
    shape = (*grid.shape, order, order)
    result = NodeMatrices(
        grid=grid,
        matrix=np.array(basis.matrix),
        a=a.reshape(shape),
        b=b.reshape(shape),
        c=c.reshape(shape),
        form=form,
        flux=None if flux is None else flux.reshape(*grid.shape, order),
    )
    for array in (result.matrix, result.a, result.b, result.c):
        array.setflags(write=False)
    if result.flux is not None:
        result.flux.setflags(write=False)
    return result


def _strong_matrices(
    basis: BasisSet,
    media: MediaModel,
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    sigma: NDArray[np.float64],
    mu_s: NDArray[np.float64],
    angles: AngleGrid,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    alpha = angles.nodes
    weights = angles.weights
    psi = basis.evaluate(alpha)
    dpsi = basis.evaluate(alpha, derivative=True)

    # Products indexed [k, m, n], flattened over (m, n).
    plain = np.einsum("mk,nk->kmn", psi, psi).reshape(alpha.size, -1)
    derived = np.einsum("mk,nk->kmn", psi, dpsi).reshape(alpha.size, -1)

    offset = x - alpha
    r2 = offset**2 + y**2
    ratio = np.sqrt(r2) / y

    a = (-weights * offset / r2) @ plain
    b = (-weights * offset / y) @ derived + (weights * y / r2) @ plain
    c = (-weights * sigma * ratio) @ derived

    scattering = np.flatnonzero(mu_s)
    for start in range(0, scattering.size, _CHUNK):
        nodes = scattering[start : start + _CHUNK]
        c[nodes] += _scattering_term(
            media, x[nodes], y[nodes], ratio[nodes], angles, psi
        ) * mu_s[nodes, np.newaxis]
    return a, b, c


def _scattering_term(
    media: MediaModel,
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    ratio: NDArray[np.float64],
    angles: AngleGrid,
    psi: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Integral of ``(r / y) integral K_alpha psi_n dbeta psi_m``."""
    alpha = angles.nodes
    weights = angles.weights
    derivative = media.kernel.d_alpha(
        x[..., np.newaxis],
        y[..., np.newaxis],
        alpha[np.newaxis, :, np.newaxis],
        alpha[np.newaxis, np.newaxis, :],
    )
    inner = np.einsum("pkb,b,nb->pkn", derivative, weights, psi)
    outer = np.einsum("pk,k,pkn,mk->pmn", ratio, weights, inner, psi)
    return outer.reshape(x.shape[0], -1)


def _weak_matrices(
    basis: BasisSet,
    media: MediaModel,
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    sigma: NDArray[np.float64],
    mu_s: NDArray[np.float64],
) -> tuple[
    NDArray[np.float64],
    NDArray[np.float64],
    NDArray[np.float64],
    NDArray[np.float64],
]:
    alpha = basis.nodes
    weights = basis.weights
    psi = basis.psi
    dpsi = basis.dpsi
    count = x.shape[0]
    order = basis.order

    a = np.empty((count, order, order))
    b = np.empty((count, order, order))
    c = np.empty((count, order, order))
    for start in range(0, count, _CHUNK):
        part = slice(start, start + _CHUNK)
        offset = x[part] - alpha
        r2 = offset**2 + y[part] ** 2
        r = np.sqrt(r2)
        a[part] = _moment(-weights * offset / r2, psi, psi)
        b[part] = _moment(weights * offset / y[part], dpsi, psi) - _moment(
            weights * offset**2 / (y[part] * r2), psi, psi
        )
        test = _test_derivative(offset, r, y[part], psi, dpsi)
        c[part] = sigma[part, :, np.newaxis] * np.einsum(
            "pmq,q,nq->pmn", test, weights, psi, optimize=True
        )

    scattering = np.flatnonzero(mu_s)
    for start in range(0, scattering.size, _WEAK_CHUNK):
        nodes = scattering[start : start + _WEAK_CHUNK]
        c[nodes] -= _weak_scattering_term(
            media, x[nodes], y[nodes], basis
        ) * mu_s[nodes, np.newaxis, np.newaxis]

    ends = basis.evaluate(np.array([-basis.d, basis.d]))
    lower = np.hypot(x + basis.d, y) / y
    upper = np.hypot(x - basis.d, y) / y
    flux = upper * ends[:, 1] - lower * ends[:, 0]
    return a, b, c, flux


def _moment(
    weight: NDArray[np.float64],
    left: NDArray[np.float64],
    right: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Weighted integrals of ``left_m right_n`` at every node."""
    return np.einsum("pq,mq,nq->pmn", weight, left, right, optimize=True)


def _test_derivative(
    offset: NDArray[np.float64],
    r: NDArray[np.float64],
    y: NDArray[np.float64],
    psi: NDArray[np.float64],
    dpsi: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Derivative of ``(r / y) psi_m`` in ``alpha``, indexed ``[p, m, q]``."""
    scale = (r / y)[:, np.newaxis, :]
    slope = (offset / (r * y))[:, np.newaxis, :]
    return scale * dpsi - slope * psi


def _weak_scattering_term(
    media: MediaModel,
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    basis: BasisSet,
) -> NDArray[np.float64]:
    """Integral of ``integral K psi_n dbeta ((r / y) psi_m)'``."""
    alpha = basis.nodes
    weights = basis.weights
    kernel = media.kernel(
        x[..., np.newaxis],
        y[..., np.newaxis],
        alpha[np.newaxis, :, np.newaxis],
        alpha[np.newaxis, np.newaxis, :],
    )
    inner = np.einsum("pqb,b,nb->pqn", kernel, weights, basis.psi)
    offset = x - alpha
    r = np.hypot(offset, y)
    test = _test_derivative(offset, r, y, basis.psi, basis.dpsi)
    return np.einsum("pmq,q,pqn->pmn", test, weights, inner, optimize=True)
def check_conditioning(
    nodes: NodeMatrices, *, threshold: float = SINGULAR_THRESHOLD
) -> ConditioningReport:
    """Measure how close the leading matrices come to singularity.

    The leading matrix is ``M_N - A`` in the strong form.

    Invertibility is guaranteed only when the medium lies far enough from
    the source line. This only measures it and never fails.
    """
    values = np.linalg.svd(nodes.leading, compute_uv=False)
    return ConditioningReport(
        singular_values=values[..., -1], threshold=threshold
    )


def reduce_system(
    nodes: NodeMatrices, report: ConditioningReport | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Solve for ``U_y = A1 U_x + A2 U`` at every node.

    Returns
    -------
    tuple of numpy.ndarray
        ``A1 = (M_N - A)^-1 B`` and ``A2 = (M_N - A)^-1 C``, each indexed
        ``[i, j, m, n]``.

    Raises
    ------
    PreconditionError
        If the conditioning report flags any node.
    """
    report = report or check_conditioning(nodes)
    if not report.ok:
        i, j = report.worst_node
        raise PreconditionError(
            f"Leading matrix is singular at node ({i}, {j}),"
            f" smallest singular value {report.minimum:.2e}"
        )
    leading = nodes.leading
    return np.linalg.solve(leading, nodes.b), np.linalg.solve(leading, nodes.c)
