"""Command-line interface.

``rte-qrm`` is a traitlets application with one subcommand per task. Every
option of every configuration section can be set from a configuration file
given with ``--config`` or directly on the command line, as in
``--QRMSolver.epsilon1=0.05``. Command-line values win over file values.
"""

from __future__ import annotations

import sys
from collections.abc import Sequence

import numpy as np
from traitlets import Float, Integer, List, Unicode
from traitlets.config import Application

from .carleman import TRIALS, TrialSummary, run_trials
from .config import SECTIONS, RunConfig, load_config_file
from .exceptions import ExitCode, exit_code_for
from .forward import apply_noise, boundary_trace
from .io import (
    export_basis,
    export_boundary,
    export_derivative_matrix,
    import_boundary,
)
from .pipeline import Pipeline, noise_sweep

__all__ = [
    "BasisCommand",
    "Command",
    "ForwardCommand",
    "PipelineCommand",
    "ReconstructCommand",
    "RteQrmApp",
    "VerifyCommand",
    "format_summaries",
    "main",
    "run",
]

_ALIASES = {
    "config": "Command.config_file",
    "seed": "NoiseConfig.seed",
    "out": "OutputConfig.directory",
    "preset": "MediaConfig.preset",
    "log-level": "Application.log_level",
}


class Command(Application):
    """Base of the subcommands: configuration loading and error handling."""

    classes = [*SECTIONS.values()]

    aliases = _ALIASES

    config_file = Unicode(
        "", help="Configuration file with section.key = value lines."
    ).tag(config=True)

    def start(self) -> None:
        """Load configuration, run the command and exit with its status."""
        try:
            config = self.load_run_config()
            status = self.execute(config)
        except Exception as e:
            self.log.error(str(e))
            self.log.debug("Command failed", exc_info=True)
            self.exit(exit_code_for(e))
        else:
            if status != ExitCode.SUCCESS:
                self.exit(status)

    def load_run_config(self) -> RunConfig:
        """Merge the configuration file under the command-line options.

        Raises
        ------
        ConfigError
            If the file or an option is invalid.
        """
        if self.config_file:
            self.log.debug(f"Loading configuration from {self.config_file}")
            self.update_config(load_config_file(self.config_file))
            self.update_config(self.cli_config)
        return RunConfig.from_config(self.config, parent=self)

    def execute(self, config: RunConfig) -> ExitCode:
        raise NotImplementedError


class BasisCommand(Command):
    """Write the orthonormal basis tables and the derivative matrix."""

    description = "Write basis function tables and the matrix M_N."

    def execute(self, config: RunConfig) -> ExitCode:
        pipeline = Pipeline(config, log=self.log)
        problem = pipeline.setup()
        basis = pipeline.basis(problem)
        error = np.max(np.abs(basis.gram_matrix() - np.eye(basis.order)))
        self.log.info(f"Basis of order {basis.order}, Gram error {error:.2e}")
        directory = config.output.path
        export_basis(basis, problem.angles.nodes, directory / "basis.csv")
        export_derivative_matrix(basis, directory / "derivative_matrix.csv")
        return ExitCode.SUCCESS


class ForwardCommand(Command):
    """Simulate boundary data of the configured media."""

    description = "Solve the forward problem and write boundary data."

    def execute(self, config: RunConfig) -> ExitCode:
        pipeline = Pipeline(config, log=self.log)
        problem = pipeline.setup()
        radiance = pipeline.forward(problem)
        data = boundary_trace(radiance)
        directory = config.output.path
        export_boundary(data, directory / "boundary.csv")
        noise = config.noise
        if noise.delta > 0:
            noisy = apply_noise(data, noise.delta, noise.seed)
            export_boundary(noisy, directory / "boundary_noisy.csv")
        self.log.info(
            f"Forward solve: {radiance.iterations} iterations, residual"
            f" {radiance.residual:.2e}"
        )
        return ExitCode.SUCCESS


class ReconstructCommand(Command):
    """Reconstruct the source from boundary data."""

    description = "Reconstruct the source from measured or simulated data."

    aliases = {**_ALIASES, "data": "ReconstructCommand.data"}

    data = Unicode(
        "",
        help="""
        Boundary data CSV written by the forward command.

        If empty, data is simulated from the configured media.
        """,
    ).tag(config=True)

    def execute(self, config: RunConfig) -> ExitCode:
        pipeline = Pipeline(config, log=self.log)
        data = None
        if self.data:
            problem = pipeline.setup()
            data = import_boundary(self.data, problem.grid, problem.angles)
        report = pipeline.run(data)
        self.log.info(f"Reconstruction written to {config.output.path}")
        for warning in report.warnings:
            self.log.warning(warning)
        return ExitCode.SUCCESS


class VerifyCommand(Command):
    """Randomized checks of the discrete Carleman estimates."""

    description = "Check the discrete Carleman estimates on random inputs."

    aliases = {**_ALIASES, "trials": "CarlemanConfig.trials"}

    def execute(self, config: RunConfig) -> ExitCode:
        directory = config.output.path
        summaries = []
        for name in TRIALS:
            path = directory / f"counterexamples_{name}.json"
            summaries.append(
                run_trials(name, config.carleman, counterexample_path=path)
            )
        print(format_summaries(summaries))
        if all(s.passed for s in summaries):
            return ExitCode.SUCCESS
        return ExitCode.NUMERICAL


def format_summaries(summaries: Sequence[TrialSummary]) -> str:
    """Format trial summaries as a pass/fail table."""
    lines = [
        f"{'check':<10} {'trials':>8} {'violations':>10} {'min slack':>12}"
        f"  result"
    ]
    for summary in summaries:
        result = "pass" if summary.passed else "FAIL"
        lines.append(
            f"{summary.name:<10} {summary.trials:>8} {summary.violations:>10}"
            f" {summary.min_slack:>12.3e}  {result}"
        )
    return "\n".join(lines)


class PipelineCommand(Command):
    """Full simulated reconstruction run."""

    description = "Simulate data, reconstruct the source and score it."

    sweep_deltas = List(
        Float(),
        help="""
        Noise levels of a noise sweep.

        If set, the command reconstructs at every noise level and seed and
        writes sweep.csv instead of the artifacts of a single run.
        """,
    ).tag(config=True)

    sweep_seeds = List(
        Integer(), [0], help="Noise seeds of a noise sweep."
    ).tag(config=True)

    def execute(self, config: RunConfig) -> ExitCode:
        if self.sweep_deltas:
            rows = noise_sweep(
                config, self.sweep_deltas, self.sweep_seeds, log=self.log
            )
            self.log.info(f"Noise sweep of {len(rows)} runs written")
            return ExitCode.SUCCESS
        report = Pipeline(config, log=self.log).run()
        metrics = report.metrics
        self.log.info(
            f"Run {report.name} finished: relative L2"
            f" {metrics.relative_l2:.3f}, centroid offset"
            f" {metrics.centroid_offset:.3f}"
        )
        return ExitCode.SUCCESS


class RteQrmApp(Application):
    """Inverse source problem for the radiative transfer equation."""

    name = "rte-qrm"

    description = (
        "Reconstruct sources of the radiative transfer equation from"
        " boundary data by the quasi-reversibility method."
    )

    subcommands = {
        "basis": (
            lambda parent: BasisCommand(parent=parent),
            BasisCommand.description,
        ),
        "forward": (
            lambda parent: ForwardCommand(parent=parent),
            ForwardCommand.description,
        ),
        "reconstruct": (
            lambda parent: ReconstructCommand(parent=parent),
            ReconstructCommand.description,
        ),
        "verify": (
            lambda parent: VerifyCommand(parent=parent),
            VerifyCommand.description,
        ),
        "pipeline": (
            lambda parent: PipelineCommand(parent=parent),
            PipelineCommand.description,
        ),
    }

    def start(self) -> None:
        if self.subapp is None:
            self.print_subcommands()
            self.exit(ExitCode.CONFIG)
        self.subapp.start()


def run(argv: Sequence[str] | None = None) -> int:
    """Run the command line and return its exit status.

    Parameters
    ----------
    argv
        Arguments without the program name, by default ``sys.argv[1:]``.
    """
    app = RteQrmApp()
    try:
        app.initialize(list(argv) if argv is not None else None)
    except SystemExit as e:
        return ExitCode.SUCCESS if not e.code else ExitCode.CONFIG
    try:
        app.start()
    except SystemExit as e:
        return int(e.code or 0)
    return ExitCode.SUCCESS


def main() -> None:
    """Entry point of the ``rte-qrm`` script."""
    sys.exit(run())
