"""Fully discrete quasi-reversibility solver.

Unknowns are the Fourier coefficients ``U[i, j, m]`` at every grid node,
lined up into one vector with the node-major index
``p = (i (my + 1) + j) N + m`` (zero-based). The regularized solution
minimizes

    |L U|^2 + eps1 |U|^2 + eps2 (|Dx U|^2 + |Dy U|^2)

subject to ``U = F`` on the boundary nodes, where ``L`` applies the
forward-difference residual of the first-order system at every interior
node and ``F`` holds the projected boundary data. ``Dx`` and ``Dy`` hold
every forward difference that reaches an interior node, including those
starting on the left and bottom edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numpy.typing import NDArray
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg, spilu, spsolve
from traitlets import CaselessStrEnum, Float, Integer, TraitError, validate
from traitlets.config import LoggingConfigurable

from .assembly import Form, NodeMatrices
from .basis import BasisSet, project_all
from .exceptions import (
    ConvergenceError,
    NotPositiveDefiniteError,
    PreconditionError,
)
from .forward import BoundaryData
from .geometry import Grid2D

__all__ = [
    "FourierField",
    "LinedSystem",
    "Preconditioner",
    "QRMSolution",
    "QRMSolver",
    "SolveMethod",
    "apply_boundary",
    "build_operator",
    "discrete_norms",
    "functional_value",
    "line_up",
    "solve",
    "unline",
]


class SolveMethod(str, Enum):
    """Linear solver for the reduced normal equations."""

    CG = "cg"
    DIRECT = "direct"


class Preconditioner(str, Enum):
    """Preconditioner of conjugate gradients."""

    JACOBI = "jacobi"
    ILU = "ilu"


@dataclass(frozen=True, eq=False)
class FourierField:
    """Fourier coefficients of the radiance at every grid node."""

    grid: Grid2D
    values: NDArray[np.float64] = field(repr=False)
    """Coefficients indexed ``[i, j, m]``."""

    @property
    def order(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def from_vector(
        cls, grid: Grid2D, vector: NDArray[np.float64]
    ) -> FourierField:
        """Undo the line-up of a flat vector."""
        return cls(grid=grid, values=vector.reshape(*grid.shape, -1))

    def to_vector(self) -> NDArray[np.float64]:
        """Line up the coefficients into one flat vector."""
        return self.values.reshape(-1)


def line_up(
    i: int, j: int, m: int, mx: int, order: int, my: int | None = None
) -> int:
    """One-based flat index of component ``m`` at node ``(i, j)``.

    All arguments are one-based, ``1 <= i <= mx + 1``, ``1 <= j <= my + 1``
    and ``1 <= m <= order``. The index is
    ``(i - 1) (my + 1) N + (j - 1) N + m`` where ``my`` defaults to ``mx``.

    Raises
    ------
    PreconditionError
        If an index is out of range.
    """
    my = mx if my is None else my
    if not (1 <= i <= mx + 1 and 1 <= j <= my + 1 and 1 <= m <= order):
        raise PreconditionError(
            f"Index ({i}, {j}, {m}) outside grid {mx + 1}x{my + 1}x{order}"
        )
    return (i - 1) * (my + 1) * order + (j - 1) * order + m


def unline(
    index: int, mx: int, order: int, my: int | None = None
) -> tuple[int, int, int]:
    """Inverse of `line_up`, returning one-based ``(i, j, m)``."""
    my = mx if my is None else my
    size = (mx + 1) * (my + 1) * order
    if not 1 <= index <= size:
        raise PreconditionError(f"Flat index {index} outside 1..{size}")
    node, m = divmod(index - 1, order)
    i, j = divmod(node, my + 1)
    return i + 1, j + 1, m + 1


@dataclass(frozen=True, eq=False)
class LinedSystem:
    """Lined-up operators and data of the minimization problem."""

    grid: Grid2D
    order: int
    operator: sparse.csr_matrix = field(repr=False)
    """Residual operator ``L`` with rows only at interior nodes."""

    dx: sparse.csr_matrix = field(repr=False)
    """Forward x differences ending at interior or right-edge nodes."""

    dy: sparse.csr_matrix = field(repr=False)
    """Forward y differences ending at interior or top-edge nodes."""

    epsilon1: float = 1e-4
    epsilon2: float = 1e-4

    mask: NDArray[np.bool_] | None = field(default=None, repr=False)
    """Boundary constraint pattern ``D``, true at constrained unknowns."""

    data: NDArray[np.float64] | None = field(default=None, repr=False)
    """Lined-up boundary values, zero at interior unknowns."""

    @property
    def dimension(self) -> int:
        return self.operator.shape[1]

    def normal_operator(self) -> sparse.csr_matrix:
        """``L^T L + eps1 I + eps2 (Dx^T Dx + Dy^T Dy)``."""
        smoothing = self.dx.T @ self.dx + self.dy.T @ self.dy
        identity = sparse.identity(self.dimension, format="csr")
        result = (
            self.operator.T @ self.operator
            + self.epsilon1 * identity
            + self.epsilon2 * smoothing
        )
        return sparse.csr_matrix(result)


@dataclass(frozen=True, eq=False)
class QRMSolution:
    """Regularized solution with solver statistics."""

    fourier: FourierField
    method: SolveMethod
    iterations: int
    residual: float
    """Relative residual of the reduced normal equations."""

    history: list[float] = field(default_factory=list, repr=False)
    """Relative residual after each iteration."""


def _node_index(grid: Grid2D) -> NDArray[np.int64]:
    return np.arange(grid.shape[0] * grid.shape[1]).reshape(grid.shape)


def _blocks(
    rows: NDArray[np.int64],
    cols: NDArray[np.int64],
    blocks: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.int64], NDArray[np.int64]]:
    """Coordinates of dense ``N x N`` blocks placed at node pairs."""
    order = blocks.shape[-1]
    local = np.arange(order)
    row = rows[:, np.newaxis, np.newaxis] * order + local[:, np.newaxis]
    col = cols[:, np.newaxis, np.newaxis] * order + local[np.newaxis, :]
    row, col = np.broadcast_arrays(row, col)
    return blocks.reshape(-1), row.reshape(-1), col.reshape(-1)


def build_operator(
    nodes: NodeMatrices,
    grid: Grid2D,
    *,
    epsilon1: float = 1e-4,
    epsilon2: float = 1e-4,
) -> LinedSystem:
    """Line up the residual and difference operators.

    At every interior node ``(i, j)`` the rows of ``L`` compute

        L_y (U[i, j+1] - U[i, j]) / h_y
        - B (U[i+1, j] - U[i, j]) / h_x - C U[i, j]

    with the blocks of `NodeMatrices.rows`, where ``L_y`` is ``M_N - A`` in
    the strong form. The diagonal block is ``-L_y/h_y + B/h_x - C``, the
    block at ``(i, j+1)`` is ``L_y/h_y`` and the block at ``(i+1, j)`` is
    ``-B/h_x``. Rows of boundary unknowns are zero.

    Raises
    ------
    PreconditionError
        If the matrices were assembled on a different grid.
    """
    if nodes.a.shape[:2] != grid.shape:
        raise PreconditionError(
            f"Matrices cover {nodes.a.shape[:2]} nodes, grid has {grid.shape}"
        )
    order = nodes.order
    index = _node_index(grid)
    centre = index[1:-1, 1:-1].reshape(-1)
    east = index[2:, 1:-1].reshape(-1)
    north = index[1:-1, 2:].reshape(-1)

    leading, b, c = (
        block[1:-1, 1:-1].reshape(-1, order, order) for block in nodes.rows()
    )
    parts = [
        _blocks(centre, centre, -leading / grid.h_y + b / grid.h_x - c),
        _blocks(centre, north, leading / grid.h_y),
        _blocks(centre, east, -b / grid.h_x),
    ]
    dimension = index.size * order
    operator = _assemble(parts, dimension)
    dx = _difference(
        index[:-1, 1:-1], index[1:, 1:-1], grid.h_x, order, dimension
    )
    dy = _difference(
        index[1:-1, :-1], index[1:-1, 1:], grid.h_y, order, dimension
    )
    return LinedSystem(
        grid=grid,
        order=order,
        operator=operator,
        dx=dx,
        dy=dy,
        epsilon1=epsilon1,
        epsilon2=epsilon2,
    )


def _difference(
    start: NDArray[np.int64],
    end: NDArray[np.int64],
    step: float,
    order: int,
    dimension: int,
) -> sparse.csr_matrix:
    """Forward differences of every component, one row per start node."""
    start = start.reshape(-1)
    end = end.reshape(-1)
    identity = np.broadcast_to(np.eye(order), (start.size, order, order))
    return _assemble(
        [
            _blocks(start, end, identity / step),
            _blocks(start, start, -identity / step),
        ],
        dimension,
    )


def _assemble(
    parts: list[
        tuple[NDArray[np.float64], NDArray[np.int64], NDArray[np.int64]]
    ],
    dimension: int,
) -> sparse.csr_matrix:
    data = np.concatenate([part[0] for part in parts])
    rows = np.concatenate([part[1] for part in parts])
    cols = np.concatenate([part[2] for part in parts])
    matrix = sparse.coo_matrix(
        (data, (rows, cols)), shape=(dimension, dimension)
    )
    return matrix.tocsr()


def apply_boundary(
    system: LinedSystem, data: BoundaryData, basis: BasisSet
) -> LinedSystem:
    """Attach the Dirichlet constraint built from boundary data.

    Boundary unknowns receive the trapezoid projections of the data on each
    basis function; interior entries are zero.

    Raises
    ------
    PreconditionError
        If the data does not cover the grid of the system or the basis order
        differs.
    """
    if data.grid.shape != system.grid.shape:
        raise PreconditionError(
            f"Boundary data covers {data.grid.shape} nodes, system has"
            f" {system.grid.shape}"
        )
    if basis.order != system.order:
        raise PreconditionError(
            f"Basis order {basis.order} differs from system order"
            f" {system.order}"
        )
    boundary = system.grid.boundary
    coefficients = project_all(data.values, data.angles, basis)
    coefficients[~boundary] = 0.0
    mask = np.repeat(boundary.reshape(-1), system.order)
    return replace(system, mask=mask, data=coefficients.reshape(-1))


def solve(
    system: LinedSystem,
    *,
    tol: float = 1e-8,
    max_iter: int | None = None,
    method: SolveMethod | str = SolveMethod.DIRECT,
    preconditioner: Preconditioner | str = Preconditioner.ILU,
    x0: NDArray[np.float64] | None = None,
) -> QRMSolution:
    """Minimize the regularized functional under the boundary constraint.

    Constrained unknowns are eliminated. The remaining interior unknowns
    solve ``Q_II U_I = -Q_IB F_B`` where ``Q`` is the normal operator, by a
    sparse direct factorization or by preconditioned conjugate gradients.

    Parameters
    ----------
    system
        System with boundary data applied.
    tol
        Relative residual tolerance of conjugate gradients.
    max_iter
        Iteration cap, by default ``20 sqrt(n)`` for ``n`` interior unknowns.
    method
        ``direct`` or ``cg``.
    preconditioner
        ``ilu`` for an incomplete factorization of the reduced operator or
        ``jacobi`` for its diagonal.
    x0
        Initial guess for the interior unknowns.

    Returns
    -------
    QRMSolution
        The regularized solution.

    Raises
    ------
    PreconditionError
        If no boundary data was applied.
    NotPositiveDefiniteError
        If the normal operator cannot be positive definite.
    ConvergenceError
        If conjugate gradients stop before reaching the tolerance.
    """
    if system.mask is None or system.data is None:
        raise PreconditionError("Apply boundary data before solving")
    if system.epsilon1 <= 0:
        raise NotPositiveDefiniteError(
            f"epsilon1 must be positive, got {system.epsilon1}"
        )
    method = SolveMethod(method)
    normal = system.normal_operator()
    free = ~system.mask
    reduced = sparse.csr_matrix(normal[free][:, free])
    coupling = normal[free][:, system.mask]
    rhs = -(coupling @ system.data[system.mask])
    diagonal = reduced.diagonal()
    if np.any(diagonal <= 0):
        raise NotPositiveDefiniteError("Nonpositive pivot in normal operator")

    rhs_norm = float(np.linalg.norm(rhs))
    history: list[float] = []

    def relative(vector: NDArray[np.float64]) -> float:
        if rhs_norm == 0:
            return float(np.linalg.norm(reduced @ vector))
        return float(np.linalg.norm(rhs - reduced @ vector)) / rhs_norm

    if method is SolveMethod.DIRECT:
        interior = np.asarray(spsolve(reduced.tocsc(), rhs), dtype=np.float64)
        iterations = 1
    else:
        limit = max_iter or math.ceil(20 * math.sqrt(reduced.shape[0]))
        interior, info = cg(
            reduced,
            rhs,
            x0=x0,
            rtol=tol,
            atol=0.0,
            maxiter=limit,
            M=_preconditioner(reduced, Preconditioner(preconditioner)),
            callback=lambda xk: history.append(relative(xk)),
        )
        iterations = len(history)
        if info < 0:
            raise NotPositiveDefiniteError("Conjugate gradients broke down")
        if info > 0:
            raise ConvergenceError(
                "Conjugate gradients did not converge",
                iterations=iterations,
                residual=relative(interior),
                tolerance=tol,
            )

    vector = np.array(system.data)
    vector[free] = interior
    return QRMSolution(
        fourier=FourierField.from_vector(system.grid, vector),
        method=method,
        iterations=iterations,
        residual=relative(interior),
        history=history,
    )


def _preconditioner(
    reduced: sparse.csr_matrix, kind: Preconditioner
) -> LinearOperator:
    if kind is Preconditioner.JACOBI:
        inverse = 1 / reduced.diagonal()
        return LinearOperator(
            reduced.shape, matvec=lambda v: inverse * v, dtype=np.float64
        )
    factor = spilu(reduced.tocsc(), drop_tol=1e-6, fill_factor=20)
    return LinearOperator(reduced.shape, matvec=factor.solve, dtype=np.float64)


def functional_value(
    system: LinedSystem, solution: FourierField | NDArray[np.float64]
) -> float:
    """Value of the regularized functional at a candidate."""
    if isinstance(solution, FourierField):
        vector = solution.to_vector()
    else:
        vector = np.asarray(solution, dtype=np.float64)
    residual = system.operator @ vector
    smoothing = np.sum((system.dx @ vector) ** 2) + np.sum(
        (system.dy @ vector) ** 2
    )
    return float(
        residual @ residual
        + system.epsilon1 * (vector @ vector)
        + system.epsilon2 * smoothing
    )


def discrete_norms(fourier: FourierField) -> tuple[float, float]:
    """Discrete ``L2`` and ``H1`` norms of a coefficient field.

    Sums run over all nodes with cell weight ``h_x h_y``. The ``H1`` norm
    adds forward differences in both directions.
    """
    grid = fourier.grid
    cell = grid.h_x * grid.h_y
    values = fourier.values
    l2 = cell * float(np.sum(values**2))
    dx = np.diff(values, axis=0) / grid.h_x
    dy = np.diff(values, axis=1) / grid.h_y
    h1 = l2 + cell * float(np.sum(dx**2) + np.sum(dy**2))
    return math.sqrt(l2), math.sqrt(h1)


class QRMSolver(LoggingConfigurable):
    """Builds and solves the regularized problem with logging."""

    form = CaselessStrEnum(
        [f.value for f in Form],
        default_value=Form.WEAK.value,
        help="""
        Derivation of the per-node system: weak or strong.

        The weak form integrates by parts in the source position and
        projects out the source flux; the strong form differentiates the
        truncated series.
        """,
    ).tag(config=True)

    epsilon1 = Float(
        1e-4,
        help="Weight of the L2 penalty on the coefficient field.",
    ).tag(config=True)

    epsilon2 = Float(
        1e-4,
        help="Weight of the penalty on forward differences of the field.",
    ).tag(config=True)

    tol = Float(
        1e-8,
        help="Relative residual tolerance of conjugate gradients.",
    ).tag(config=True)

    max_iter = Integer(
        0,
        help="""
        Iteration cap of conjugate gradients.

        Zero selects ``20 sqrt(n)`` for ``n`` interior unknowns.
        """,
    ).tag(config=True)

    method = CaselessStrEnum(
        [m.value for m in SolveMethod],
        default_value=SolveMethod.DIRECT.value,
        help="Solver for the reduced normal equations: direct or cg.",
    ).tag(config=True)

    preconditioner = CaselessStrEnum(
        [p.value for p in Preconditioner],
        default_value=Preconditioner.ILU.value,
        help="Preconditioner of conjugate gradients: ilu or jacobi.",
    ).tag(config=True)

    @validate("epsilon1", "tol")
    def _validate_positive(self, proposal: dict) -> float:
        name = proposal["trait"].name
        if proposal["value"] <= 0:
            raise TraitError(f"qrm.{name} must be positive")
        return proposal["value"]

    @validate("epsilon2")
    def _validate_epsilon2(self, proposal: dict) -> float:
        if proposal["value"] < 0:
            raise TraitError("qrm.epsilon2 must not be negative")
        return proposal["value"]

    @validate("max_iter")
    def _validate_max_iter(self, proposal: dict) -> int:
        if proposal["value"] < 0:
            raise TraitError("qrm.max_iter must not be negative")
        return proposal["value"]

    def build(self, nodes: NodeMatrices, grid: Grid2D) -> LinedSystem:
        """Line up the operators with the configured weights."""
        system = build_operator(
            nodes, grid, epsilon1=self.epsilon1, epsilon2=self.epsilon2
        )
        self.log.debug(
            f"Lined-up operator: dimension {system.dimension},"
            f" {system.operator.nnz} nonzeros"
        )
        return system

    def solve(self, system: LinedSystem) -> QRMSolution:
        """Solve with the configured method and tolerance."""
        solution = solve(
            system,
            tol=self.tol,
            max_iter=self.max_iter or None,
            method=self.method,
            preconditioner=self.preconditioner,
        )
        self.log.info(
            f"QRM {solution.method.value} solve: {solution.iterations}"
            f" iterations, relative residual {solution.residual:.2e}"
        )
        return solution
