"""Domain, grids and direction geometry of the source line problem.

The medium occupies the rectangle ``(-R, R) x (a, b)`` and point sources
sit on the segment ``{(alpha, 0) : -d <= alpha <= d}`` below it. Everything
in this module is immutable and side-effect free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from numpy.typing import NDArray

from .exceptions import PreconditionError

__all__ = [
    "AngleGrid",
    "Domain",
    "Flow",
    "Grid2D",
    "classify_inflow",
    "direction_vector",
    "inflow_mask",
    "support_bound",
    "trapezoid_weights",
]


class Flow(str, Enum):
    """Classification of a boundary point for a given source position."""

    INFLOW = "inflow"
    OUTFLOW = "outflow"


@dataclass(frozen=True, slots=True)
class Domain:
    """Rectangular medium and the source segment below it.

    Construction does not check the ordering of the bounds, since the
    configuration layer reports those problems with better context. Use
    `check` when a domain is built by hand.
    """

    R: float = 1.0
    """Half-width of the rectangle in x."""

    a: float = 1.0
    """Lower y bound of the rectangle."""

    b: float = 3.0
    """Upper y bound of the rectangle."""

    d: float = 5.0
    """Half-extent of the source segment."""

    def check(self) -> None:
        """Reject a domain that cannot host the problem.

        Raises
        ------
        PreconditionError
            If ``a <= 0``, ``a >= b``, ``R <= 0`` or ``d < R``.
        """
        if self.R <= 0:
            raise PreconditionError(f"R must be positive, got {self.R}")
        if self.a <= 0:
            raise PreconditionError(f"a must be positive, got {self.a}")
        if not self.a < self.b:
            raise PreconditionError(f"Need a < b, got a={self.a} b={self.b}")
        if self.d < self.R:
            raise PreconditionError(f"Need d >= R, got d={self.d} R={self.R}")

    def contains(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.bool_]:
        """Return whether points lie in the open rectangle."""
        return (np.abs(x) < self.R) & (y > self.a) & (y < self.b)


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Uniform tensor grid on the closure of the domain.

    Node coordinates are stored rather than recomputed so every module sees
    bit-identical values.
    """

    domain: Domain
    """Domain the grid covers."""

    mx: int
    """Number of subintervals in x."""

    my: int
    """Number of subintervals in y."""

    x: NDArray[np.float64] = field(repr=False)
    """Node abscissas, ``x[i] = -R + i * h_x``."""

    y: NDArray[np.float64] = field(repr=False)
    """Node ordinates, ``y[j] = a + j * h_y``."""

    @classmethod
    def build(cls, domain: Domain, mx: int, my: int) -> Grid2D:
        """Construct the grid with ``mx`` by ``my`` cells.

        Raises
        ------
        PreconditionError
            If either cell count is below 2, leaving no interior node.
        """
        if mx < 2 or my < 2:
            raise PreconditionError(
                f"Grid needs at least 2 cells per axis, got {mx}x{my}"
            )
        h_x = 2 * domain.R / mx
        h_y = (domain.b - domain.a) / my
        x = -domain.R + np.arange(mx + 1) * h_x
        y = domain.a + np.arange(my + 1) * h_y
        x.setflags(write=False)
        y.setflags(write=False)
        return cls(domain=domain, mx=mx, my=my, x=x, y=y)

    @property
    def h_x(self) -> float:
        return 2 * self.domain.R / self.mx

    @property
    def h_y(self) -> float:
        return (self.domain.b - self.domain.a) / self.my

    @property
    def shape(self) -> tuple[int, int]:
        """Shape ``(mx + 1, my + 1)`` of nodal arrays."""
        return (self.mx + 1, self.my + 1)

    @cached_property
    def boundary(self) -> NDArray[np.bool_]:
        """Mask of boundary nodes, indexed ``[i, j]``."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[[0, -1], :] = True
        mask[:, [0, -1]] = True
        mask.setflags(write=False)
        return mask

    @property
    def interior(self) -> NDArray[np.bool_]:
        """Mask of interior nodes, indexed ``[i, j]``."""
        return ~self.boundary

    def mesh(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Return node coordinate arrays of shape `shape`."""
        return np.meshgrid(self.x, self.y, indexing="ij")


@dataclass(frozen=True, eq=False)
class AngleGrid:
    """Uniform grid of source positions on ``[-d, d]``."""

    d: float
    """Half-extent of the source segment."""

    m_alpha: int
    """Number of subintervals."""

    nodes: NDArray[np.float64] = field(repr=False)
    """Source abscissas, first ``-d`` and last ``d``."""

    @classmethod
    def build(cls, d: float, m_alpha: int) -> AngleGrid:
        """Construct the grid with ``m_alpha`` subintervals."""
        if m_alpha < 1:
            raise PreconditionError(f"Need m_alpha >= 1, got {m_alpha}")
        nodes = np.linspace(-d, d, m_alpha + 1)
        nodes.setflags(write=False)
        return cls(d=d, m_alpha=m_alpha, nodes=nodes)

    @property
    def step(self) -> float:
        return 2 * self.d / self.m_alpha

    @cached_property
    def weights(self) -> NDArray[np.float64]:
        """Trapezoid weights for integrals over ``[-d, d]``."""
        weights = trapezoid_weights(self.m_alpha + 1, self.step)
        weights.setflags(write=False)
        return weights


def trapezoid_weights(count: int, step: float) -> NDArray[np.float64]:
    """Weights of the composite trapezoid rule on ``count`` uniform nodes."""
    weights = np.full(count, step)
    weights[[0, -1]] = step / 2
    if count == 1:
        weights[0] = 0.0
    return weights


def direction_vector(
    x: float | NDArray[np.float64],
    y: float | NDArray[np.float64],
    alpha: float | NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Unit vector pointing from the source ``(alpha, 0)`` towards ``(x, y)``.

    Arguments broadcast against each other.

    Parameters
    ----------
    x
        Abscissa of the point.
    y
        Ordinate of the point, strictly positive.
    alpha
        Source position on the line ``y = 0``.

    Returns
    -------
    tuple of numpy.ndarray
        Components ``(nu_x, nu_y)``.

    Raises
    ------
    PreconditionError
        If any ``y`` is not positive, where the direction degenerates.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise PreconditionError("Direction undefined for y <= 0")
    dx = x - alpha
    norm = np.hypot(dx, y)
    return dx / norm, y / norm


def classify_inflow(
    grid: Grid2D, x: float, y: float, alpha: float
) -> Flow:
    """Classify a boundary point as inflow or outflow for a source.

    A point is inflow when the direction of propagation does not leave the
    domain, that is ``nu . n <= 0`` for the outward normal ``n``. Corners
    are inflow only when the test passes for both adjacent edges.

    Parameters
    ----------
    grid
        Grid whose spacing sets the snapping tolerance of half a cell.
    x
        Abscissa of the point.
    y
        Ordinate of the point.
    alpha
        Source position.

    Returns
    -------
    Flow
        Classification of the point.

    Raises
    ------
    PreconditionError
        If the point is not on the boundary of the domain.
    """
    domain = grid.domain
    tol_x = grid.h_x / 2
    tol_y = grid.h_y / 2
    within_x = -domain.R - tol_x <= x <= domain.R + tol_x
    within_y = domain.a - tol_y <= y <= domain.b + tol_y
    nu_x, nu_y = direction_vector(x, y, alpha)
    dots = []
    if within_y and abs(x + domain.R) <= tol_x:
        dots.append(-nu_x)
    if within_y and abs(x - domain.R) <= tol_x:
        dots.append(nu_x)
    if within_x and abs(y - domain.a) <= tol_y:
        dots.append(-nu_y)
    if within_x and abs(y - domain.b) <= tol_y:
        dots.append(nu_y)
    if not dots:
        raise PreconditionError(f"Point ({x}, {y}) is not on the boundary")
    if all(dot <= 0 for dot in dots):
        return Flow.INFLOW
    return Flow.OUTFLOW


def inflow_mask(grid: Grid2D, angles: AngleGrid) -> NDArray[np.bool_]:
    """Classify every boundary node for every source position.

    Returns
    -------
    numpy.ndarray
        Boolean array indexed ``[i, j, k]``, true at inflow boundary nodes.
        Interior nodes are always false.
    """
    xx, yy = grid.mesh()
    nu_x, nu_y = direction_vector(
        xx[..., np.newaxis], yy[..., np.newaxis], angles.nodes
    )
    mask = np.broadcast_to(grid.boundary[..., np.newaxis], nu_x.shape).copy()
    mask[0] &= -nu_x[0] <= 0
    mask[-1] &= nu_x[-1] <= 0
    mask[:, 0] &= -nu_y[:, 0] <= 0
    mask[:, -1] &= nu_y[:, -1] <= 0
    return mask


def support_bound(domain: Domain) -> float:
    """Abscissa beyond which the forward solution vanishes identically.

    Rays from any source to a point with ``|x| >= X`` miss the medium, so
    both the radiance and the attenuation weight vanish there. ``X`` is the
    smallest value satisfying ``1 - (1 + b/a) d / X > 1/2`` and
    ``a X / (2 b) > R``.
    """
    bound = max(
        2 * (1 + domain.b / domain.a) * domain.d,
        2 * domain.b * domain.R / domain.a,
    )
    return float(np.nextafter(bound, np.inf))
