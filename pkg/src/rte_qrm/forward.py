"""Forward radiative transfer solver.

Radiance is computed from the integral form of the transport equation along
the rays joining each grid node to each source position. Below the medium
the radiance vanishes, so the integrals run upward from ``y = a``:

    u(x, alpha) = s * integral_a^y exp(-s * tau(w, y)) (f + mu_s S u)(z(w)) dw

where ``s = |x - x_alpha| / y``, ``z(w) = (alpha + w (x - alpha) / y, w)``,
``tau`` is the integral of ``mu_a + mu_s`` in ``w`` between the two levels,
and ``S u`` is the in-scattered radiance. The equation is of Volterra type
in ``y`` and is solved by Picard iteration.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.interpolate import RegularGridInterpolator
from traitlets import Float, Integer, TraitError, validate
from traitlets.config import LoggingConfigurable

from .exceptions import ConvergenceError, PreconditionError
from .geometry import AngleGrid, Grid2D, inflow_mask, trapezoid_weights
from .media import MediaModel, ScalarField

__all__ = [
    "BoundaryData",
    "ForwardSolver",
    "GriddedField",
    "RadianceField",
    "apply_noise",
    "attenuation_weight",
    "boundary_trace",
    "ray_integral",
    "solve_forward",
    "worker_count",
    "xray_data",
]

THREADS_ENVIRONMENT = "RTE_QRM_THREADS"
"""Environment variable capping the number of worker threads."""


def worker_count() -> int:
    """Number of worker threads for per-angle sweeps."""
    default = os.cpu_count() or 1
    value = os.environ.get(THREADS_ENVIRONMENT)
    if not value:
        return default
    try:
        return max(1, min(default, int(value)))
    except ValueError:
        return default


@dataclass(frozen=True, eq=False)
class GriddedField:
    """Nodal values turned into a field by bilinear interpolation.

    The field vanishes outside the closure of the grid.
    """

    grid: Grid2D
    values: NDArray[np.float64] = field(repr=False)

    def __call__(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        interpolator = RegularGridInterpolator(
            (self.grid.x, self.grid.y),
            self.values,
            bounds_error=False,
            fill_value=0.0,
        )
        x, y = np.broadcast_arrays(
            np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        )
        points = np.stack([x.ravel(), y.ravel()], axis=-1)
        return interpolator(points).reshape(x.shape)


@dataclass(frozen=True, eq=False)
class RadianceField:
    """Radiance at every grid node and source position."""

    grid: Grid2D
    angles: AngleGrid
    values: NDArray[np.float64] = field(repr=False)
    """Radiance indexed ``[i, j, k]``."""

    iterations: int = 1
    """Picard iterations performed."""

    residual: float = 0.0
    """Sup-norm difference of the last two iterates."""


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Radiance measured on the boundary of the domain.

    Values at interior nodes are zero and ignored. Values at inflow nodes
    are zero by the boundary condition of the forward problem.
    """

    grid: Grid2D
    angles: AngleGrid
    values: NDArray[np.float64] = field(repr=False)
    """Data indexed ``[i, j, k]``."""

    @property
    def inflow(self) -> NDArray[np.bool_]:
        """Mask of inflow boundary nodes, indexed ``[i, j, k]``."""
        return inflow_mask(self.grid, self.angles)

    @property
    def measured(self) -> NDArray[np.bool_]:
        """Mask of boundary nodes carrying measurements."""
        return self.grid.boundary[..., np.newaxis] & ~self.inflow

    @classmethod
    def from_values(
        cls, grid: Grid2D, angles: AngleGrid, values: NDArray[np.float64]
    ) -> BoundaryData:
        """Build boundary data, discarding interior and inflow values.

        Raises
        ------
        PreconditionError
            If the array does not cover every node and angle.
        """
        expected = (*grid.shape, angles.nodes.size)
        values = np.asarray(values, dtype=np.float64)
        if values.shape != expected:
            raise PreconditionError(
                f"Boundary data has shape {values.shape}, expected {expected}"
            )
        data = cls(grid=grid, angles=angles, values=values)
        return replace(data, values=np.where(data.measured, values, 0.0))


class ForwardSolver(LoggingConfigurable):
    """Picard solver for the integral form of the transport equation."""

    tol = Float(
        1e-10,
        help="""
        Sup-norm tolerance on successive Picard iterates.

        Iteration stops once two successive iterates differ by less than
        this everywhere.
        """,
    ).tag(config=True)

    max_iter = Integer(
        100,
        help="Maximum number of Picard iterations before giving up.",
    ).tag(config=True)

    @validate("tol")
    def _validate_tol(self, proposal: dict) -> float:
        if proposal["value"] <= 0:
            raise TraitError("forward.tol must be positive")
        return proposal["value"]

    @validate("max_iter")
    def _validate_max_iter(self, proposal: dict) -> int:
        if proposal["value"] < 1:
            raise TraitError("forward.max_iter must be at least 1")
        return proposal["value"]

    def solve(
        self, media: MediaModel, grid: Grid2D, angles: AngleGrid
    ) -> RadianceField:
        """Compute the radiance field of the media.

        Parameters
        ----------
        media
            Coefficients and source.
        grid
            Spatial grid.
        angles
            Source positions.

        Returns
        -------
        RadianceField
            Fixed point of the integral equation.

        Raises
        ------
        ConvergenceError
            If the iterates do not settle within ``max_iter`` iterations.
        """
        sweep = _Sweep(media, grid, angles)
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            columns = list(pool.map(sweep.source_term, range(sweep.count)))
            base = np.stack(columns, axis=-1)
            mu_s = media.sample(grid).mu_s
            if not np.any(mu_s):
                self.log.debug("No scattering on the grid, single sweep")
                return RadianceField(grid=grid, angles=angles, values=base)

            current = base
            residual = float("inf")
            for iteration in range(2, self.max_iter + 1):
                scattered = sweep.in_scattering(current, mu_s)
                columns = list(
                    pool.map(
                        sweep.transport,
                        range(sweep.count),
                        (scattered[..., k] for k in range(sweep.count)),
                    )
                )
                updated = base + np.stack(columns, axis=-1)
                residual = float(np.max(np.abs(updated - current)))
                self.log.debug(f"Picard iteration {iteration}: {residual:.3e}")
                current = updated
                if not np.isfinite(residual):
                    break
                if residual < self.tol:
                    self.log.info(
                        f"Forward solve converged in {iteration} iterations"
                    )
                    return RadianceField(
                        grid=grid,
                        angles=angles,
                        values=current,
                        iterations=iteration,
                        residual=residual,
                    )
        raise ConvergenceError(
            "Forward Picard iteration did not converge",
            iterations=self.max_iter,
            residual=residual,
            tolerance=self.tol,
        )


class _Rays(NamedTuple):
    """Rays from one source to every node, sampled at the grid levels."""

    abscissas: NDArray[np.float64]
    """Ray abscissas indexed ``[i, j, l]`` at level ``y[l]``."""

    levels: NDArray[np.float64]
    """Levels ``y[l]`` broadcast to the shape of ``abscissas``."""

    decay: NDArray[np.float64]
    """Attenuation between level ``l`` and node ``j``, zero for ``l > j``."""

    factor: NDArray[np.float64]
    """Arc length per unit height, ``|x - x_alpha| / y``."""

    log_chi: NDArray[np.float64]
    """Logarithm of the attenuation weight at each node."""


class _Sweep:
    """Per-angle ray integration on a fixed grid."""

    def __init__(
        self, media: MediaModel, grid: Grid2D, angles: AngleGrid
    ) -> None:
        self.media = media
        self.grid = grid
        self.angles = angles
        self.count = angles.nodes.size
        levels = grid.y.size
        weights = np.zeros((levels, levels))
        for j in range(1, levels):
            weights[j, : j + 1] = trapezoid_weights(j + 1, grid.h_y)
        self.weights = weights

    def rays(self, k: int) -> _Rays:
        """Ray geometry and attenuation for source ``k``."""
        alpha = self.angles.nodes[k]
        x = self.grid.x[:, np.newaxis]
        y = self.grid.y[np.newaxis, :]
        levels = self.grid.y[np.newaxis, np.newaxis, :]
        abscissas = alpha + levels * ((x - alpha) / y)[..., np.newaxis]
        levels = np.broadcast_to(levels, abscissas.shape)
        factor = np.hypot(x - alpha, y) / y

        sigma = self.media.sigma(abscissas, levels)
        depth = cumulative_trapezoid(sigma, dx=self.grid.h_y, initial=0)
        index = np.arange(self.grid.y.size)
        total = depth[:, index, index]
        below = index[np.newaxis, :] <= index[:, np.newaxis]
        exponent = np.where(
            below,
            -factor[..., np.newaxis] * (total[..., np.newaxis] - depth),
            -np.inf,
        )
        return _Rays(
            abscissas=abscissas,
            levels=levels,
            decay=np.exp(exponent),
            factor=factor,
            log_chi=factor * total,
        )

    def _integrate(
        self, rays: _Rays, values: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        weighted = np.einsum("ijl,jl->ij", values * rays.decay, self.weights)
        return rays.factor * weighted

    def source_term(self, k: int) -> NDArray[np.float64]:
        """Radiance due to the source alone, attenuated along each ray."""
        rays = self.rays(k)
        values = self.media.source(rays.abscissas, rays.levels)
        return self._integrate(rays, values)

    def transport(
        self, k: int, emission: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        """Radiance due to a gridded emission term for source ``k``."""
        rays = self.rays(k)
        values = GriddedField(self.grid, emission)(rays.abscissas, rays.levels)
        return self._integrate(rays, values)

    def in_scattering(
        self, radiance: NDArray[np.float64], mu_s: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        """Emission ``mu_s * integral K u dbeta`` at every node and angle."""
        xx, yy = self.grid.mesh()
        x = xx[..., np.newaxis]
        y = yy[..., np.newaxis]
        weighted = radiance * self.angles.weights
        result = np.empty_like(radiance)
        for k, alpha in enumerate(self.angles.nodes):
            kernel = self.media.kernel(x, y, alpha, self.angles.nodes)
            result[..., k] = np.sum(kernel * weighted, axis=-1)
        return result * mu_s[..., np.newaxis]


def solve_forward(
    media: MediaModel,
    grid: Grid2D,
    angles: AngleGrid,
    *,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> RadianceField:
    """Solve the forward problem with a default-configured solver."""
    solver = ForwardSolver(tol=tol, max_iter=max_iter)
    return solver.solve(media, grid, angles)


def attenuation_weight(
    media: MediaModel, grid: Grid2D, angles: AngleGrid
) -> NDArray[np.float64]:
    """The weight ``chi = exp(s * integral of mu_a + mu_s)`` at each node.

    Returns
    -------
    numpy.ndarray
        Array indexed ``[i, j, k]``, at least one for nonnegative media.
    """
    sweep = _Sweep(media, grid, angles)
    logs = [sweep.rays(k).log_chi for k in range(sweep.count)]
    return np.exp(np.stack(logs, axis=-1))


def ray_integral(
    field: ScalarField,
    x: float,
    y: float,
    alpha: float,
    *,
    start: float = 0.0,
    steps: int = 1000,
) -> float:
    """Arc-length integral of a field along the ray from a source to a point.

    Parameters
    ----------
    field
        Field to integrate.
    x
        Abscissa of the end point.
    y
        Ordinate of the end point, positive.
    alpha
        Source position on the line ``y = 0``.
    start
        Lowest level of the integral in ``w``. Fields vanishing below
        ``y = a`` may start at ``a``.
    steps
        Number of trapezoid steps in ``w``.

    Returns
    -------
    float
        The integral.
    """
    if y <= 0:
        raise PreconditionError("Ray integral undefined for y <= 0")
    w = np.linspace(start, y, steps + 1)
    values = field(alpha + w * (x - alpha) / y, w)
    return float(np.hypot(x - alpha, y) / y * trapezoid(values, w))


def boundary_trace(radiance: RadianceField) -> BoundaryData:
    """Restrict a radiance field to the boundary of the domain."""
    return BoundaryData.from_values(
        radiance.grid, radiance.angles, radiance.values
    )


def apply_noise(
    data: BoundaryData, delta: float, seed: int | None = None
) -> BoundaryData:
    """Multiply measured values by ``1 + delta * (2 r - 1)``.

    ``r`` is uniform on ``[0, 1]`` and independent across nodes and angles.
    Inflow values stay zero.

    Raises
    ------
    PreconditionError
        If ``delta`` is negative.
    """
    if delta < 0:
        raise PreconditionError(f"Noise level must be nonnegative: {delta}")
    if delta == 0:
        return data
    rng = np.random.default_rng(seed)
    factor = 1 + delta * (2 * rng.random(data.values.shape) - 1)
    noisy = np.where(data.measured, data.values * factor, 0.0)
    return replace(data, values=noisy)


def xray_data(
    media: MediaModel, grid: Grid2D, angles: AngleGrid
) -> RadianceField:
    """Radiance of the source in a transparent medium.

    This is the incomplete X-ray transform of the source over the rays
    joining the source line to the grid nodes.
    """
    return solve_forward(media.transparent(), grid, angles)
