"""Source recovery from the regularized Fourier field.

The radiance is rebuilt from its Fourier coefficients, the transport
equation is evaluated for every source position, and the resulting source
estimates are averaged over source positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .basis import BasisSet
from .geometry import AngleGrid, Grid2D, direction_vector
from .media import MediaModel, ScalarField
from .qrm import FourierField

__all__ = [
    "Metrics",
    "Neighbourhood",
    "SourceEstimate",
    "compute_metrics",
    "post_process",
    "recover_source",
    "synthesize_radiance",
]


class Neighbourhood(str, Enum):
    """Neighbourhood of the smoothing step of post-processing."""

    BOX = "box"
    CROSS = "cross"

    @property
    def footprint(self) -> NDArray[np.float64]:
        if self is Neighbourhood.BOX:
            return np.ones((3, 3))
        return np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.float64)


@dataclass(frozen=True, slots=True)
class Metrics:
    """Quality of a reconstruction against the true source."""

    relative_l2: float
    """L2 error relative to the true source, or absolute if flagged."""

    centroid_offset: float
    """Distance between the mass centroids."""

    support_jaccard: float
    """Jaccard index of the thresholded supports."""

    absolute: bool = False
    """Whether ``relative_l2`` is absolute because the truth vanishes."""


@dataclass(frozen=True, eq=False)
class SourceEstimate:
    """Recovered source on the grid."""

    grid: Grid2D
    raw: NDArray[np.float64] = field(repr=False)
    """Average over source positions of the recovered source."""

    post: NDArray[np.float64] | None = field(default=None, repr=False)
    """Post-processed source, once computed."""

    metrics: Metrics | None = None

    @property
    def best(self) -> NDArray[np.float64]:
        """Post-processed source if available, else the raw one."""
        return self.raw if self.post is None else self.post


def synthesize_radiance(
    fourier: FourierField, basis: BasisSet, angles: AngleGrid
) -> NDArray[np.float64]:
    """Radiance from its Fourier coefficients, indexed ``[i, j, k]``."""
    table = basis.evaluate(angles.nodes)
    return np.einsum("ijn,nk->ijk", fourier.values, table)


def recover_source(
    fourier: FourierField,
    basis: BasisSet,
    media: MediaModel,
    angles: AngleGrid,
    *,
    edges: bool = False,
) -> SourceEstimate:
    """Substitute the synthesized radiance into the transport equation.

    For every source position ``alpha`` the source is
    ``nu . grad u + (mu_a + mu_s) u - mu_s integral K u dbeta``, with the
    gradient taken by central differences inside and first-order one-sided
    differences on the edges. The estimate is the trapezoid average over
    ``alpha``. The source is only sought inside the domain, so boundary
    nodes are zero unless ``edges`` is set.

    Parameters
    ----------
    fourier
        Regularized Fourier coefficients.
    basis
        Basis the coefficients refer to.
    media
        Known coefficients of the medium.
    angles
        Source positions to average over.
    edges
        Whether to keep the estimate on boundary nodes.

    Returns
    -------
    SourceEstimate
        Estimate with only the raw source filled in.
    """
    grid = fourier.grid
    radiance = synthesize_radiance(fourier, basis, angles)
    u_x, u_y = np.gradient(
        radiance, grid.h_x, grid.h_y, axis=(0, 1), edge_order=1
    )
    xx, yy = grid.mesh()
    x = xx[..., np.newaxis]
    y = yy[..., np.newaxis]
    nu_x, nu_y = direction_vector(x, y, angles.nodes)
    sampled = media.sample(grid)
    source = nu_x * u_x + nu_y * u_y
    source += sampled.sigma[..., np.newaxis] * radiance

    if np.any(sampled.mu_s):
        weighted = radiance * angles.weights
        scattered = np.empty_like(radiance)
        for k, alpha in enumerate(angles.nodes):
            kernel = media.kernel(x, y, alpha, angles.nodes)
            scattered[..., k] = np.sum(kernel * weighted, axis=-1)
        source -= sampled.mu_s[..., np.newaxis] * scattered

    raw = source @ angles.weights / (2 * angles.d)
    if not edges:
        raw[grid.boundary] = 0.0
    return SourceEstimate(grid=grid, raw=raw)


def post_process(
    estimate: SourceEstimate,
    *,
    threshold_fraction: float = 0.2,
    neighbourhood: Neighbourhood | str = Neighbourhood.BOX,
) -> SourceEstimate:
    """Threshold small values, then average over neighbouring nodes.

    Values not exceeding ``threshold_fraction`` times the maximum become
    zero. Each node is then replaced by the mean over the neighbourhood
    nodes that lie on the grid.
    """
    raw = estimate.raw
    peak = float(raw.max())
    kept = np.where(raw > threshold_fraction * peak, raw, 0.0)
    footprint = Neighbourhood(neighbourhood).footprint
    total = ndimage.correlate(kept, footprint, mode="constant", cval=0.0)
    count = ndimage.correlate(
        np.ones_like(kept), footprint, mode="constant", cval=0.0
    )
    return replace(estimate, post=total / count)


def _centroid(
    values: NDArray[np.float64], grid: Grid2D
) -> NDArray[np.float64]:
    mass = np.clip(values, 0, None)
    total = mass.sum()
    if total <= 0:
        domain = grid.domain
        return np.array([0.0, (domain.a + domain.b) / 2])
    xx, yy = grid.mesh()
    return np.array([(mass * xx).sum() / total, (mass * yy).sum() / total])


def _support(
    values: NDArray[np.float64], fraction: float
) -> NDArray[np.bool_]:
    peak = values.max()
    if peak <= 0:
        return np.zeros(values.shape, dtype=bool)
    return values > fraction * peak


def compute_metrics(
    estimate: SourceEstimate,
    truth: ScalarField | NDArray[np.float64],
    *,
    support_fraction: float = 0.2,
) -> Metrics:
    """Compare an estimate with the true source.

    Parameters
    ----------
    estimate
        Estimate whose post-processed source is compared if available.
    truth
        True source as a field or as nodal values.
    support_fraction
        Fraction of the maximum defining each support.

    Returns
    -------
    Metrics
        The quality metrics. When the true source vanishes, the ``L2`` error
        is absolute and flagged as such.
    """
    grid = estimate.grid
    if callable(truth):
        truth = np.asarray(truth(*grid.mesh()), dtype=np.float64)
    values = estimate.best
    cell = grid.h_x * grid.h_y
    error = np.sqrt(cell * np.sum((values - truth) ** 2))
    scale = np.sqrt(cell * np.sum(truth**2))
    absolute = bool(scale == 0)
    relative = float(error if absolute else error / scale)

    offset = float(
        np.linalg.norm(_centroid(values, grid) - _centroid(truth, grid))
    )
    ours = _support(values, support_fraction)
    theirs = _support(truth, support_fraction)
    union = np.count_nonzero(ours | theirs)
    if union == 0:
        jaccard = 1.0
    else:
        jaccard = np.count_nonzero(ours & theirs) / union
    return Metrics(
        relative_l2=relative,
        centroid_offset=offset,
        support_jaccard=float(jaccard),
        absolute=absolute,
    )
