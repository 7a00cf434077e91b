"""Run configuration.

Every section of the configuration is a traitlets configurable, so options
can come from a configuration file, from the command line, or from code.
Configuration files hold one ``section.key = value`` assignment per line,
with ``#`` starting a comment.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from traitlets import (
    Bool,
    CaselessStrEnum,
    Float,
    Integer,
    TraitError,
    Unicode,
    validate,
)
from traitlets.config import Config, Configurable
from traitlets.config.loader import DeferredConfigString

from .basis import BasisSet, build_basis
from .carleman import CarlemanConfig
from .exceptions import ConfigError, OutputError
from .forward import ForwardSolver
from .geometry import AngleGrid, Domain, Grid2D
from .media import (
    HenyeyGreenstein,
    MediaModel,
    PiecewiseField,
    Preset,
    custom_media,
    parse_layers,
    preset,
)
from .qrm import QRMSolver
from .reconstruction import Neighbourhood

__all__ = [
    "SECTIONS",
    "BasisConfig",
    "DomainConfig",
    "GridConfig",
    "MediaConfig",
    "NoiseConfig",
    "OutputConfig",
    "PostConfig",
    "RunConfig",
    "load_config_file",
]


def _positive(proposal: dict) -> float:
    if proposal["value"] <= 0:
        name = proposal["trait"].name
        raise TraitError(f"{name} must be positive, got {proposal['value']}")
    return proposal["value"]


class DomainConfig(Configurable):
    """Geometry of the medium and of the source line."""

    R = Float(1.0, help="Half-width of the rectangle in x.").tag(config=True)

    a = Float(1.0, help="Lower y bound of the rectangle.").tag(config=True)

    b = Float(3.0, help="Upper y bound of the rectangle.").tag(config=True)

    d = Float(5.0, help="Half-extent of the source segment.").tag(config=True)

    @validate("R", "a", "b", "d")
    def _validate_positive(self, proposal: dict) -> float:
        return _positive(proposal)

    def build(self) -> Domain:
        return Domain(R=self.R, a=self.a, b=self.b, d=self.d)


class GridConfig(Configurable):
    """Resolution of the spatial and source grids."""

    mx = Integer(100, help="Number of cells in x.").tag(config=True)

    my = Integer(100, help="Number of cells in y.").tag(config=True)

    m_alpha = Integer(
        50, help="Number of intervals of the source grid."
    ).tag(config=True)

    min_step = Float(
        0.01,
        help="""
        Smallest x step covered by the convergence theory.

        Steps outside ``[min_step, 1)`` produce a warning, not an error.
        """,
    ).tag(config=True)

    @validate("mx", "my")
    def _validate_cells(self, proposal: dict) -> int:
        if proposal["value"] < 2:
            name = proposal["trait"].name
            raise TraitError(f"grid.{name} must be at least 2")
        return proposal["value"]

    @validate("m_alpha")
    def _validate_m_alpha(self, proposal: dict) -> int:
        if proposal["value"] < 1:
            raise TraitError("grid.m_alpha must be at least 1")
        return proposal["value"]


class BasisConfig(Configurable):
    """Truncation of the Fourier series in the source variable."""

    order = Integer(12, help="Number of basis functions N.").tag(config=True)

    quadrature = Integer(
        400, help="Gauss-Legendre nodes used to build the basis."
    ).tag(config=True)

    @validate("order", "quadrature")
    def _validate_positive(self, proposal: dict) -> int:
        return int(_positive(proposal))

    def build(self, domain: Domain) -> BasisSet:
        return build_basis(self.order, domain.d, self.quadrature)


class MediaConfig(Configurable):
    """Coefficients of the medium and true source."""

    preset = CaselessStrEnum(
        [*(p.value for p in Preset), "custom"],
        default_value=Preset.TEST1.value,
        help="Built-in experiment, or custom to use the shape lists.",
    ).tag(config=True)

    smoothing = Float(
        0.0,
        help="""
        Transition width of smoothed shapes.

        Zero selects twice the x step of the grid.
        """,
    ).tag(config=True)

    normalize_kernel = Bool(
        False,
        help="Rescale the kernel to unit double integral on the source grid.",
    ).tag(config=True)

    source = Unicode(
        "",
        help="""
        Shapes of the custom source.

        Semicolon-separated ``disk:cx,cy,r,value`` and
        ``rect:cx,cy,half_width,half_height,angle_deg,value`` entries, the
        first listed winning where shapes overlap.
        """,
    ).tag(config=True)

    mu_a = Unicode(
        "", help="Shapes of the custom absorption coefficient."
    ).tag(config=True)

    mu_s = Unicode(
        "", help="Shapes of the custom scattering coefficient."
    ).tag(config=True)

    kernel = CaselessStrEnum(
        ["constant", "hg"],
        default_value="constant",
        help="Custom kernel: constant 1/(2d) or Henyey-Greenstein.",
    ).tag(config=True)

    hg_factor = Unicode(
        "", help="Shapes of the custom Henyey-Greenstein factor."
    ).tag(config=True)

    hg_background = Float(
        0.5, help="Henyey-Greenstein factor outside the factor shapes."
    ).tag(config=True)

    @validate("hg_background")
    def _validate_factor(self, proposal: dict) -> float:
        if not 0 <= proposal["value"] < 1:
            raise TraitError("media.hg_background must be in [0, 1)")
        return proposal["value"]

    def build(
        self, domain: Domain, grid: Grid2D, angles: AngleGrid
    ) -> MediaModel:
        """Construct the configured media model.

        Raises
        ------
        ConfigError
            If the preset is unknown or a shape list is malformed.
        """
        smoothing = self.smoothing or 2 * grid.h_x
        if self.preset == "custom":
            kernel = None
            if self.kernel == "hg":
                factor = PiecewiseField(
                    parse_layers(self.hg_factor, smoothing=smoothing),
                    background=self.hg_background,
                )
                kernel = HenyeyGreenstein(factor, domain.d)
            media = custom_media(
                domain=domain,
                source=parse_layers(self.source, smoothing=smoothing),
                mu_a=parse_layers(self.mu_a),
                mu_s=parse_layers(self.mu_s),
                kernel=kernel,
            )
        else:
            media = preset(self.preset, domain=domain, smoothing=smoothing)
        if self.normalize_kernel:
            media = media.normalized(angles, grid)
        return media


class NoiseConfig(Configurable):
    """Multiplicative noise on the boundary data."""

    delta = Float(
        0.0, help="Noise level, 0.6 meaning 60% noise."
    ).tag(config=True)

    seed = Integer(0, help="Seed of the noise generator.").tag(config=True)

    @validate("delta")
    def _validate_delta(self, proposal: dict) -> float:
        if proposal["value"] < 0:
            raise TraitError("noise.delta must not be negative")
        return proposal["value"]


class PostConfig(Configurable):
    """Post-processing of the recovered source."""

    threshold_fraction = Float(
        0.2,
        help="Values up to this fraction of the maximum are set to zero.",
    ).tag(config=True)

    kernel = CaselessStrEnum(
        [n.value for n in Neighbourhood],
        default_value=Neighbourhood.BOX.value,
        help="Smoothing neighbourhood: box (3x3) or cross (5 points).",
    ).tag(config=True)

    @validate("threshold_fraction")
    def _validate_threshold(self, proposal: dict) -> float:
        if not 0 <= proposal["value"] < 1:
            raise TraitError("post.threshold_fraction must be in [0, 1)")
        return proposal["value"]


class OutputConfig(Configurable):
    """Where and how artifacts are written."""

    directory = Unicode("out", help="Output directory.").tag(config=True)

    formats = Unicode(
        "csv,pgm", help="Comma-separated grid formats: csv, pgm."
    ).tag(config=True)

    dump_operator = Bool(
        False, help="Write the lined-up operator in Matrix Market format."
    ).tag(config=True)

    @validate("formats")
    def _validate_formats(self, proposal: dict) -> str:
        names = [n.strip().lower() for n in proposal["value"].split(",")]
        unknown = set(names) - {"csv", "pgm", ""}
        if unknown:
            raise TraitError(f"Unknown output formats {sorted(unknown)}")
        return ",".join(n for n in names if n)

    @property
    def format_list(self) -> list[str]:
        return [n for n in self.formats.split(",") if n]

    @property
    def path(self) -> Path:
        return Path(self.directory)


SECTIONS: dict[str, type[Configurable]] = {
    "domain": DomainConfig,
    "grid": GridConfig,
    "basis": BasisConfig,
    "media": MediaConfig,
    "noise": NoiseConfig,
    "forward": ForwardSolver,
    "qrm": QRMSolver,
    "post": PostConfig,
    "output": OutputConfig,
    "carleman": CarlemanConfig,
}
"""Configuration file sections and the classes they configure."""


def load_config_file(path: Path | str) -> Config:
    """Parse a flat configuration file.

    Values are kept as deferred strings so each trait parses its own value
    when the configurable is created.

    Raises
    ------
    ConfigError
        If a line is malformed or names an unknown section or key.
    OutputError
        If the file cannot be read.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise OutputError.from_exception(e, str(path)) from e
    config = Config()
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{number}"
        name, sep, value = line.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"{where}: expected section.key = value")
        if section not in SECTIONS:
            raise ConfigError(f"{where}: unknown section {section}")
        cls = SECTIONS[section]
        key = key.strip()
        if key not in cls.class_trait_names(config=True):
            raise ConfigError(
                f"{where}: unknown key {key} in section {section}",
                parameter=f"{section}.{key}",
            )
        config[cls.__name__][key] = DeferredConfigString(value.strip())
    return config


@dataclass(frozen=True)
class RunConfig:
    """All configuration sections of one run."""

    domain: DomainConfig
    grid: GridConfig
    basis: BasisConfig
    media: MediaConfig
    noise: NoiseConfig
    forward: ForwardSolver
    qrm: QRMSolver
    post: PostConfig
    output: OutputConfig
    carleman: CarlemanConfig

    @classmethod
    def from_config(
        cls,
        config: Config | None = None,
        *,
        parent: Configurable | None = None,
    ) -> RunConfig:
        """Instantiate every section from a traitlets configuration.

        Raises
        ------
        ConfigError
            If a value fails to parse or validate.
        """
        config = Config() if config is None else config
        sections = {}
        try:
            for name, section in SECTIONS.items():
                sections[name] = section(config=config, parent=parent)
        except (TraitError, ValueError) as e:
            raise ConfigError(f"Invalid configuration: {e!s}") from e
        return cls(**sections)

    def validate(self) -> list[str]:
        """Check constraints across options.

        Returns
        -------
        list of str
            Warnings about settings outside the range covered by theory.

        Raises
        ------
        ConfigError
            If the options cannot describe a solvable problem.
        """
        domain = self.domain
        warnings = []
        if domain.a < 1:
            raise ConfigError(
                f"Domain must lie above y = 1, got a = {domain.a}",
                parameter="domain.a",
                constraint="1 < a",
            )
        if domain.a == 1:
            warnings.append(
                "domain.a = 1 is at the edge of the constraint 1 < a;"
                " see the conditioning report"
            )
        if not domain.a < domain.b:
            raise ConfigError(
                f"Empty domain: a = {domain.a}, b = {domain.b}",
                parameter="domain.b",
                constraint="a < b",
            )
        if domain.d < domain.R:
            raise ConfigError(
                f"Source segment narrower than domain: d = {domain.d}",
                parameter="domain.d",
                constraint="d >= R",
            )
        if self.basis.quadrature < 2 * self.basis.order:
            raise ConfigError(
                "Too few quadrature nodes for the basis order",
                parameter="basis.quadrature",
                constraint="quadrature >= 2 * order",
            )
        h_x = 2 * domain.R / self.grid.mx
        if not self.grid.min_step <= h_x < 1:
            warnings.append(
                f"x step {h_x:g} outside [{self.grid.min_step:g}, 1)"
            )
        return warnings

    def build_domain(self) -> Domain:
        return self.domain.build()

    def build_grid(self) -> Grid2D:
        return Grid2D.build(self.build_domain(), self.grid.mx, self.grid.my)

    def build_angles(self) -> AngleGrid:
        return AngleGrid.build(self.domain.d, self.grid.m_alpha)
