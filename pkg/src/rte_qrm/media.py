"""Optical coefficients, scattering kernels and source models.

Fields are plain callables taking broadcastable coordinate arrays and
returning values of the broadcast shape. Shapes are described by signed
distance functions so that sharp and smoothed indicators share one code
path.
"""

from __future__ import annotations

import math
from abc import ABCMeta, abstractmethod
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from .exceptions import ConfigError, PreconditionError
from .geometry import AngleGrid, Domain, Grid2D

ScalarField = Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray]
"""Field ``(x, y) -> value`` evaluated on broadcastable arrays."""

__all__ = [
    "Bar",
    "ConstantKernel",
    "Disk",
    "HenyeyGreenstein",
    "Layer",
    "MediaModel",
    "PiecewiseField",
    "Preset",
    "Region",
    "SampledMedia",
    "ScalarField",
    "ScaledKernel",
    "ScatteringKernel",
    "Union",
    "custom_media",
    "normalize_kernel",
    "parse_layers",
    "preset",
]

_DISK_RADIUS = math.sqrt(0.8)
"""Radius of the absorbing and scattering disk around the origin."""

_CENTER = (0.0, 2.0)
"""Center of every preset inclusion."""

_BAR_HALF_WIDTH = 0.08
"""Half-width of the bars forming the X and Y inclusions."""


class Preset(str, Enum):
    """Built-in media configurations."""

    TEST1 = "test1"
    TEST2 = "test2"
    TEST3 = "test3"


class Region(metaclass=ABCMeta):
    """Planar region described by a signed distance function."""

    @abstractmethod
    def sdf(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        """Signed distance, negative inside the region."""


@dataclass(frozen=True, slots=True)
class Disk(Region):
    """Open disk."""

    cx: float
    cy: float
    radius: float

    def sdf(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        return np.hypot(x - self.cx, y - self.cy) - self.radius


@dataclass(frozen=True, slots=True)
class Bar(Region):
    """Rectangle centered at ``(cx, cy)`` rotated counterclockwise."""

    cx: float
    cy: float
    half_length: float
    half_width: float
    angle: float = 0.0
    """Rotation in degrees of the long axis from the x axis."""

    def sdf(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        theta = math.radians(self.angle)
        cos, sin = math.cos(theta), math.sin(theta)
        dx = np.asarray(x) - self.cx
        dy = np.asarray(y) - self.cy
        qx = np.abs(cos * dx + sin * dy) - self.half_length
        qy = np.abs(-sin * dx + cos * dy) - self.half_width
        outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
        inside = np.minimum(np.maximum(qx, qy), 0)
        return outside + inside


@dataclass(frozen=True, slots=True)
class Union(Region):
    """Union of regions."""

    parts: tuple[Region, ...]

    def sdf(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        return np.minimum.reduce([part.sdf(x, y) for part in self.parts])


@dataclass(frozen=True, slots=True)
class Layer:
    """Constant value on a region, optionally with a smoothed edge."""

    region: Region
    value: float
    smoothing: float = 0.0
    """Width of the ``tanh`` transition, zero for a sharp edge."""

    def indicator(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        distance = self.region.sdf(x, y)
        if self.smoothing > 0:
            return 0.5 * (1 + np.tanh(-distance / self.smoothing))
        return (distance < 0).astype(np.float64)


@dataclass(frozen=True)
class PiecewiseField:
    """Field built from layers over a background value.

    Layers are listed by priority: where layers overlap, the first one
    listed wins. Smoothed layers blend with whatever lies underneath.
    """

    layers: tuple[Layer, ...] = ()
    background: float = 0.0
    domain: Domain | None = None
    """If set, the field vanishes outside this domain."""

    def __call__(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        x, y = np.broadcast_arrays(
            np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        )
        result = np.full(x.shape, self.background)
        for layer in reversed(self.layers):
            weight = layer.indicator(x, y)
            result = result * (1 - weight) + layer.value * weight
        if self.domain is not None:
            result = np.where(self.domain.contains(x, y), result, 0.0)
        return result


class ScatteringKernel(metaclass=ABCMeta):
    """Phase function ``K(x, y, alpha, beta)`` of scattering from beta."""

    @abstractmethod
    def __call__(
        self,
        x: NDArray[np.float64],
        y: NDArray[np.float64],
        alpha: NDArray[np.float64] | float,
        beta: NDArray[np.float64] | float,
    ) -> NDArray[np.float64]:
        """Evaluate the kernel on broadcastable arguments."""

    def d_alpha(
        self,
        x: NDArray[np.float64],
        y: NDArray[np.float64],
        alpha: NDArray[np.float64] | float,
        beta: NDArray[np.float64] | float,
        *,
        step: float = 1e-5,
    ) -> NDArray[np.float64]:
        """Derivative in ``alpha``, by central differences unless overridden.

        Parameters
        ----------
        x
            Abscissas.
        y
            Ordinates.
        alpha
            Outgoing source positions.
        beta
            Incoming source positions.
        step
            Difference step in ``alpha``.
        """
        alpha = np.asarray(alpha, dtype=np.float64)
        forward = self(x, y, alpha + step, beta)
        backward = self(x, y, alpha - step, beta)
        return (forward - backward) / (2 * step)


@dataclass(frozen=True, slots=True)
class ConstantKernel(ScatteringKernel):
    """Kernel independent of position and directions."""

    value: float

    def __call__(
        self,
        x: NDArray[np.float64],
        y: NDArray[np.float64],
        alpha: NDArray[np.float64] | float,
        beta: NDArray[np.float64] | float,
    ) -> NDArray[np.float64]:
        shape = np.broadcast_shapes(
            np.shape(x), np.shape(y), np.shape(alpha), np.shape(beta)
        )
        return np.full(shape, self.value)

    def d_alpha(
        self,
        x: NDArray[np.float64],
        y: NDArray[np.float64],
        alpha: NDArray[np.float64] | float,
        beta: NDArray[np.float64] | float,
        *,
        step: float = 1e-5,
    ) -> NDArray[np.float64]:
        shape = np.broadcast_shapes(
            np.shape(x), np.shape(y), np.shape(alpha), np.shape(beta)
        )
        return np.zeros(shape)


@dataclass(frozen=True)
class HenyeyGreenstein(ScatteringKernel):
    """Two-dimensional Henyey-Greenstein kernel.

    ``K = (1 / 2d) (1 - g^2) / (1 + g^2 - 2 g cos(alpha - beta))`` with a
    spatially varying anisotropy factor ``g`` in ``[0, 1)``.
    """

    g: ScalarField
    d: float

    def __call__(
        self,
        x: NDArray[np.float64],
        y: NDArray[np.float64],
        alpha: NDArray[np.float64] | float,
        beta: NDArray[np.float64] | float,
    ) -> NDArray[np.float64]:
        g = self.g(x, y)
        denominator = 1 + g**2 - 2 * g * np.cos(np.subtract(alpha, beta))
        return (1 - g**2) / denominator / (2 * self.d)

    def d_alpha(
        self,
        x: NDArray[np.float64],
        y: NDArray[np.float64],
        alpha: NDArray[np.float64] | float,
        beta: NDArray[np.float64] | float,
        *,
        step: float = 1e-5,
    ) -> NDArray[np.float64]:
        g = self.g(x, y)
        difference = np.subtract(alpha, beta)
        denominator = 1 + g**2 - 2 * g * np.cos(difference)
        numerator = -(1 - g**2) * 2 * g * np.sin(difference)
        return numerator / denominator**2 / (2 * self.d)


class ScaledKernel(ScatteringKernel):
    """Kernel rescaled per point to unit double integral on an angle grid.

    Parameters
    ----------
    base
        Kernel to normalize.
    angles
        Grid whose trapezoid rule defines the double integral.
    """

    _CACHE_SIZE = 4

    def __init__(self, base: ScatteringKernel, angles: AngleGrid) -> None:
        if isinstance(base, ScaledKernel) and base.angles is angles:
            base = base.base
        self.base = base
        self.angles = angles
        self._cache: dict[tuple, NDArray[np.float64]] = {}

    def integral(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        """Trapezoid double integral of the base kernel at each point."""
        x, y = np.broadcast_arrays(
            np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        )
        key = (x.shape, x.tobytes(), y.tobytes())
        if key in self._cache:
            return self._cache[key]
        nodes = self.angles.nodes
        weights = self.angles.weights
        values = self.base(
            x[..., np.newaxis, np.newaxis],
            y[..., np.newaxis, np.newaxis],
            nodes[:, np.newaxis],
            nodes[np.newaxis, :],
        )
        total = np.einsum("...ab,a,b->...", values, weights, weights)
        if len(self._cache) >= self._CACHE_SIZE:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = total
        return total

    def _scale(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        x, y = np.broadcast_arrays(np.asarray(x), np.asarray(y))
        total = self.integral(x, y)
        with np.errstate(divide="ignore"):
            return np.where(total > 0, 1 / total, 0.0)

    def __call__(
        self,
        x: NDArray[np.float64],
        y: NDArray[np.float64],
        alpha: NDArray[np.float64] | float,
        beta: NDArray[np.float64] | float,
    ) -> NDArray[np.float64]:
        return self._scale(x, y) * self.base(x, y, alpha, beta)

    def d_alpha(
        self,
        x: NDArray[np.float64],
        y: NDArray[np.float64],
        alpha: NDArray[np.float64] | float,
        beta: NDArray[np.float64] | float,
        *,
        step: float = 1e-5,
    ) -> NDArray[np.float64]:
        derivative = self.base.d_alpha(x, y, alpha, beta, step=step)
        return self._scale(x, y) * derivative


def normalize_kernel(
    kernel: ScatteringKernel, angles: AngleGrid
) -> ScaledKernel:
    """Rescale a kernel so its double integral over the grid is one.

    Normalizing an already normalized kernel on the same grid returns an
    equivalent kernel, so the operation is idempotent. Points where the
    kernel vanishes identically keep a zero kernel; `MediaModel.normalized`
    rejects those inside the scattering region.
    """
    return ScaledKernel(kernel, angles)


@dataclass(frozen=True, eq=False)
class SampledMedia:
    """Media coefficients sampled once on a grid."""

    mu_a: NDArray[np.float64] = field(repr=False)
    mu_s: NDArray[np.float64] = field(repr=False)
    source: NDArray[np.float64] = field(repr=False)

    @property
    def sigma(self) -> NDArray[np.float64]:
        """Total attenuation ``mu_a + mu_s``."""
        return self.mu_a + self.mu_s


@dataclass(frozen=True)
class MediaModel:
    """Coefficients and source of one experiment."""

    mu_a: ScalarField
    """Absorption coefficient."""

    mu_s: ScalarField
    """Scattering coefficient."""

    kernel: ScatteringKernel
    """Scattering phase function."""

    source: ScalarField
    """True source ``f``."""

    name: str = "custom"
    """Label used in reports."""

    def sigma(
        self, x: NDArray[np.float64], y: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        """Total attenuation ``mu_a + mu_s``."""
        return self.mu_a(x, y) + self.mu_s(x, y)

    def sample(self, grid: Grid2D) -> SampledMedia:
        """Evaluate the spatial fields at the grid nodes."""
        xx, yy = grid.mesh()
        return SampledMedia(
            mu_a=np.asarray(self.mu_a(xx, yy), dtype=np.float64),
            mu_s=np.asarray(self.mu_s(xx, yy), dtype=np.float64),
            source=np.asarray(self.source(xx, yy), dtype=np.float64),
        )

    def without_source(self) -> MediaModel:
        """Same coefficients with a zero source."""
        return replace(self, source=PiecewiseField())

    def transparent(self) -> MediaModel:
        """Same source in a medium without absorption or scattering."""
        return replace(self, mu_a=PiecewiseField(), mu_s=PiecewiseField())

    def normalized(self, angles: AngleGrid, grid: Grid2D) -> MediaModel:
        """Copy with the kernel normalized on the given angle grid.

        Raises
        ------
        PreconditionError
            If the kernel vanishes at a node where scattering is present.
        """
        kernel = normalize_kernel(self.kernel, angles)
        xx, yy = grid.mesh()
        scattering = np.asarray(self.mu_s(xx, yy)) > 0
        if np.any(scattering & (kernel.integral(xx, yy) <= 0)):
            raise PreconditionError(
                "Scattering kernel vanishes where scattering is present"
            )
        return replace(self, kernel=kernel)


def preset(
    name: Preset | str,
    *,
    domain: Domain | None = None,
    smoothing: float = 0.04,
) -> MediaModel:
    """Return one of the built-in experiments.

    Parameters
    ----------
    name
        Preset identifier, ``test1``, ``test2`` or ``test3``.
    domain
        Domain outside which coefficients and source vanish.
    smoothing
        Transition width of smoothed shapes.

    Raises
    ------
    ConfigError
        If the preset is unknown.
    """
    domain = domain or Domain()
    try:
        name = Preset(name)
    except ValueError as e:
        raise ConfigError(
            f"Unknown media preset {name}",
            parameter="media.preset",
            constraint="one of test1, test2, test3",
        ) from e
    disk = Disk(0.0, 0.0, _DISK_RADIUS)
    in_disk = PiecewiseField((Layer(disk, 0.1),), domain=domain)
    scattering = PiecewiseField((Layer(disk, 0.01),), domain=domain)
    none = PiecewiseField(domain=domain)

    match name:
        case Preset.TEST1:
            inclusion = Layer(Disk(*_CENTER, 0.3), 1.0, smoothing)
            return MediaModel(
                mu_a=in_disk,
                mu_s=none,
                kernel=ConstantKernel(1 / (2 * domain.d)),
                source=PiecewiseField((inclusion,), domain=domain),
                name=name.value,
            )
        case Preset.TEST2:
            shape = Union(
                tuple(
                    Bar(*_CENTER, 0.4, _BAR_HALF_WIDTH, angle)
                    for angle in (45.0, -45.0)
                )
            )
            return MediaModel(
                mu_a=in_disk,
                mu_s=scattering,
                kernel=ConstantKernel(1 / (2 * domain.d)),
                source=PiecewiseField((Layer(shape, 1.0),), domain=domain),
                name=name.value,
            )
        case Preset.TEST3:
            shape = _y_shape()
            absorption = PiecewiseField(
                (Layer(shape, 0.15), Layer(disk, 0.1)), domain=domain
            )
            factor = PiecewiseField(
                (Layer(disk, 0.9, smoothing),), background=0.5
            )
            return MediaModel(
                mu_a=absorption,
                mu_s=scattering,
                kernel=HenyeyGreenstein(factor, domain.d),
                source=PiecewiseField(
                    (Layer(shape, 1.0, smoothing),), domain=domain
                ),
                name=name.value,
            )


def _y_shape() -> Union:
    arm = 0.35
    bars = []
    for angle in (270.0, 30.0, 150.0):
        theta = math.radians(angle)
        cx = _CENTER[0] + 0.5 * arm * math.cos(theta)
        cy = _CENTER[1] + 0.5 * arm * math.sin(theta)
        bars.append(Bar(cx, cy, 0.5 * arm, _BAR_HALF_WIDTH, angle))
    return Union(tuple(bars))


def parse_layers(text: str, *, smoothing: float = 0.0) -> tuple[Layer, ...]:
    """Parse a shape list into layers.

    The syntax is a semicolon-separated list of ``disk:cx,cy,r,value`` and
    ``rect:cx,cy,half_width,half_height,angle_deg,value`` entries, listed by
    decreasing priority.

    Raises
    ------
    ConfigError
        If an entry cannot be parsed.
    """
    layers = []
    for raw in text.split(";"):
        entry = raw.strip()
        if not entry:
            continue
        kind, _, arguments = entry.partition(":")
        try:
            numbers = [float(v) for v in arguments.split(",")]
        except ValueError as e:
            raise ConfigError(f"Invalid number in shape {entry}") from e
        match kind.strip(), numbers:
            case "disk", [cx, cy, radius, value]:
                region: Region = Disk(cx, cy, radius)
            case "rect", [cx, cy, half_width, half_height, angle, value]:
                region = Bar(cx, cy, half_width, half_height, angle)
            case _:
                raise ConfigError(
                    f"Invalid shape {entry}",
                    constraint="disk:cx,cy,r,value or"
                    " rect:cx,cy,hw,hh,angle_deg,value",
                )
        layers.append(Layer(region, value, smoothing))
    return tuple(layers)


def custom_media(
    *,
    domain: Domain,
    source: Sequence[Layer],
    mu_a: Iterable[Layer] = (),
    mu_s: Iterable[Layer] = (),
    kernel: ScatteringKernel | None = None,
) -> MediaModel:
    """Assemble a media model from layer lists.

    A missing kernel defaults to the isotropic ``1 / (2d)``.
    """
    if not source:
        raise ConfigError("Custom media needs a source", parameter="media")
    return MediaModel(
        mu_a=PiecewiseField(tuple(mu_a), domain=domain),
        mu_s=PiecewiseField(tuple(mu_s), domain=domain),
        kernel=kernel or ConstantKernel(1 / (2 * domain.d)),
        source=PiecewiseField(tuple(source), domain=domain),
    )
