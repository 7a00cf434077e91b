"""End-to-end reconstruction runs.

A run builds the basis, simulates boundary data of the true source, adds
noise, assembles and solves the regularized problem, recovers and
post-processes the source, scores it, and writes every artifact.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace
from functools import wraps
from pathlib import Path
from typing import Concatenate, ParamSpec, TypeVar

import numpy as np
from traitlets.log import get_logger

from .assembly import (
    ConditioningReport,
    NodeMatrices,
    assemble,
    check_conditioning,
)
from .basis import BasisSet
from .config import RunConfig
from .exceptions import StageError
from .forward import (
    BoundaryData,
    RadianceField,
    apply_noise,
    boundary_trace,
    xray_data,
)
from .geometry import AngleGrid, Domain, Grid2D
from .io import (
    GridFormat,
    dump_operator,
    export_boundary,
    export_grid,
    export_image,
    export_node_norms,
    write_table,
    write_timings,
)
from .media import MediaModel
from .qrm import LinedSystem, QRMSolution, apply_boundary
from .reconstruction import (
    Metrics,
    SourceEstimate,
    compute_metrics,
    post_process,
    recover_source,
)

P = ParamSpec("P")
T = TypeVar("T")

__all__ = [
    "STAGES",
    "Pipeline",
    "Problem",
    "RunReport",
    "noise_sweep",
    "run_pipeline",
]

STAGES = (
    "config",
    "basis",
    "forward",
    "noise",
    "assembly",
    "qrm",
    "recover",
    "post",
    "metrics",
    "output",
)
"""Stages of a full run, in execution order."""


@dataclass(frozen=True, eq=False)
class Problem:
    """Discretized problem shared by every reconstruction of a run."""

    domain: Domain
    grid: Grid2D
    angles: AngleGrid
    media: MediaModel


@dataclass(eq=False)
class RunReport:
    """Results of one run."""

    name: str
    """Label of the media."""

    estimate: SourceEstimate
    """Recovered source, post-processed and scored."""

    solution: QRMSolution
    """Regularized Fourier field with solver statistics."""

    conditioning: ConditioningReport

    forward_iterations: int = 0
    """Picard iterations of the simulated data, zero for supplied data."""

    forward_residual: float = 0.0

    timings: dict[str, float] = field(default_factory=dict)
    """Wall-clock seconds per stage."""

    artifacts: dict[str, Path] = field(default_factory=dict)
    """Written files by artifact name."""

    warnings: list[str] = field(default_factory=list)

    @property
    def metrics(self) -> Metrics:
        if self.estimate.metrics is None:
            raise RuntimeError("Run finished without metrics")
        return self.estimate.metrics

    def summary_row(self, config: RunConfig) -> dict[str, object]:
        """Deterministic summary of the run as one table row."""
        metrics = self.metrics
        return {
            "media": self.name,
            "mx": config.grid.mx,
            "my": config.grid.my,
            "m_alpha": config.grid.m_alpha,
            "order": config.basis.order,
            "delta": config.noise.delta,
            "seed": config.noise.seed,
            "epsilon1": config.qrm.epsilon1,
            "epsilon2": config.qrm.epsilon2,
            "forward_iterations": self.forward_iterations,
            "forward_residual": self.forward_residual,
            "min_singular_value": self.conditioning.minimum,
            "qrm_form": config.qrm.form,
            "qrm_method": self.solution.method.value,
            "qrm_iterations": self.solution.iterations,
            "qrm_residual": self.solution.residual,
            "relative_l2": metrics.relative_l2,
            "l2_absolute": metrics.absolute,
            "centroid_offset": metrics.centroid_offset,
            "support_jaccard": metrics.support_jaccard,
        }


def _stage(
    name: str,
) -> Callable[
    [Callable[Concatenate[Pipeline, P], T]],
    Callable[Concatenate[Pipeline, P], T],
]:
    """Time a pipeline method and attribute its failures to a stage."""

    def decorator(
        f: Callable[Concatenate[Pipeline, P], T]
    ) -> Callable[Concatenate[Pipeline, P], T]:
        @wraps(f)
        def wrapper(
            pipeline: Pipeline, *args: P.args, **kwargs: P.kwargs
        ) -> T:
            pipeline.log.debug(f"Starting stage {name}")
            start = time.perf_counter()
            try:
                return f(pipeline, *args, **kwargs)
            except StageError:
                raise
            except Exception as e:
                raise StageError.from_exception(name, e) from e
            finally:
                elapsed = time.perf_counter() - start
                pipeline.timings[name] = (
                    pipeline.timings.get(name, 0.0) + elapsed
                )

        return wrapper

    return decorator


class Pipeline:
    """Stages of a reconstruction run.

    Each stage method is timed, and any exception it raises is wrapped in a
    `~rte_qrm.exceptions.StageError` naming the stage.

    Parameters
    ----------
    config
        Validated or unvalidated run configuration.
    log
        Logger to use, by default the application logger.
    """

    def __init__(
        self, config: RunConfig, *, log: logging.Logger | None = None
    ) -> None:
        self.config = config
        self.log = log or get_logger()
        self.timings: dict[str, float] = {}
        self.warnings: list[str] = []

    @_stage("config")
    def setup(self) -> Problem:
        """Validate the configuration and discretize the problem."""
        self.warnings = self.config.validate()
        for warning in self.warnings:
            self.log.warning(warning)
        domain = self.config.build_domain()
        grid = self.config.build_grid()
        angles = self.config.build_angles()
        media = self.config.media.build(domain, grid, angles)
        self.log.info(
            f"Media {media.name} on {grid.shape[0]}x{grid.shape[1]} nodes"
            f" with {angles.nodes.size} source positions"
        )
        return Problem(domain=domain, grid=grid, angles=angles, media=media)

    @_stage("basis")
    def basis(self, problem: Problem) -> BasisSet:
        return self.config.basis.build(problem.domain)

    @_stage("forward")
    def forward(self, problem: Problem) -> RadianceField:
        """Simulate the radiance of the true source."""
        return self.config.forward.solve(
            problem.media, problem.grid, problem.angles
        )

    @_stage("noise")
    def noise(
        self, data: BoundaryData, delta: float, seed: int
    ) -> BoundaryData:
        if delta > 0:
            self.log.info(f"Adding {delta:.0%} noise with seed {seed}")
        return apply_noise(data, delta, seed)

    @_stage("assembly")
    def assembly(
        self, problem: Problem, basis: BasisSet
    ) -> tuple[NodeMatrices, ConditioningReport]:
        """Assemble node matrices and measure their conditioning."""
        nodes = assemble(
            basis,
            problem.media,
            problem.grid,
            problem.angles,
            form=self.config.qrm.form,
        )
        report = check_conditioning(nodes)
        if report.ok:
            self.log.info(
                f"Smallest singular value of the {nodes.form.value} leading"
                f" matrix: {report.minimum:.3e}"
            )
        else:
            i, j = report.worst_node
            self.log.warning(
                f"Leading matrix nearly singular at node ({i}, {j}):"
                f" {report.minimum:.3e}"
            )
        return nodes, report

    @_stage("qrm")
    def build_system(
        self, nodes: NodeMatrices, problem: Problem
    ) -> LinedSystem:
        return self.config.qrm.build(nodes, problem.grid)

    @_stage("qrm")
    def solve(
        self, system: LinedSystem, data: BoundaryData, basis: BasisSet
    ) -> tuple[LinedSystem, QRMSolution]:
        """Attach boundary data and compute the regularized solution."""
        constrained = apply_boundary(system, data, basis)
        return constrained, self.config.qrm.solve(constrained)

    @_stage("recover")
    def recover(
        self, solution: QRMSolution, basis: BasisSet, problem: Problem
    ) -> SourceEstimate:
        return recover_source(
            solution.fourier, basis, problem.media, problem.angles
        )

    @_stage("post")
    def post(self, estimate: SourceEstimate) -> SourceEstimate:
        return post_process(
            estimate,
            threshold_fraction=self.config.post.threshold_fraction,
            neighbourhood=self.config.post.kernel,
        )

    @_stage("metrics")
    def score(
        self, estimate: SourceEstimate, problem: Problem
    ) -> SourceEstimate:
        metrics = compute_metrics(
            estimate,
            problem.media.source,
            support_fraction=self.config.post.threshold_fraction,
        )
        self.log.info(
            f"Relative L2 error {metrics.relative_l2:.3f}, centroid offset"
            f" {metrics.centroid_offset:.3f}, support Jaccard"
            f" {metrics.support_jaccard:.3f}"
        )
        return replace(estimate, metrics=metrics)

    @_stage("output")
    def write(
        self,
        report: RunReport,
        problem: Problem,
        *,
        data: BoundaryData,
        system: LinedSystem,
        nodes: NodeMatrices,
        xray: RadianceField | None = None,
    ) -> dict[str, Path]:
        """Write grids, boundary data, tables and timings."""
        output = self.config.output
        directory = output.path
        grid = problem.grid
        sampled = problem.media.sample(grid)
        estimate = report.estimate
        grids = {
            "mu_a": sampled.mu_a,
            "mu_s": sampled.mu_s,
            "f_true": sampled.source,
            "f_comp": estimate.raw,
            "f_post": estimate.best,
        }
        artifacts: dict[str, Path] = {}
        for name, values in grids.items():
            for grid_format in output.format_list:
                path = directory / f"{name}.{grid_format}"
                export_grid(values, grid, path, grid_format)
                artifacts[f"{name}.{grid_format}"] = path
        artifacts["boundary"] = export_boundary(
            data, directory / "boundary.csv"
        )
        if xray is not None:
            trace = boundary_trace(xray)
            artifacts["xray"] = export_boundary(trace, directory / "xray.csv")
            if GridFormat.PGM.value in output.format_list:
                artifacts["xray.pgm"] = export_image(
                    trace.values[:, -1, :], directory / "xray.pgm"
                )
        artifacts["norms"] = export_node_norms(nodes, directory / "norms.csv")
        if output.dump_operator:
            artifacts["operator"] = dump_operator(
                system.operator, directory / "operator.mtx"
            )
        history = report.solution.history or [report.solution.residual]
        artifacts["solver"] = write_table(
            [
                {"iteration": n, "relative_residual": value}
                for n, value in enumerate(history, start=1)
            ],
            directory / "solver.csv",
        )
        artifacts["summary"] = write_table(
            [report.summary_row(self.config)], directory / "summary.csv"
        )
        artifacts["timings"] = directory / "timings.json"
        write_timings(self.timings, artifacts["timings"])
        self.log.info(f"Wrote {len(artifacts)} artifacts to {directory}")
        return artifacts

    def run(
        self, data: BoundaryData | None = None, *, write: bool = True
    ) -> RunReport:
        """Run every stage.

        Parameters
        ----------
        data
            Measured boundary data. If not given, data is simulated from the
            true source of the configured media.
        write
            Whether to write artifacts to the output directory.

        Returns
        -------
        RunReport
            Metrics, solver statistics, timings and written artifacts.

        Raises
        ------
        StageError
            If any stage fails, naming the stage.
        """
        start = time.perf_counter()
        problem = self.setup()
        basis = self.basis(problem)
        forward_iterations = 0
        forward_residual = 0.0
        xray = None
        if data is None:
            radiance = self.forward(problem)
            forward_iterations = radiance.iterations
            forward_residual = radiance.residual
            data = boundary_trace(radiance)
            if write:
                xray = self._xray(problem)
        noise = self.config.noise
        data = self.noise(data, noise.delta, noise.seed)
        nodes, conditioning = self.assembly(problem, basis)
        system = self.build_system(nodes, problem)
        system, solution = self.solve(system, data, basis)
        estimate = self.recover(solution, basis, problem)
        estimate = self.score(self.post(estimate), problem)
        report = RunReport(
            name=problem.media.name,
            estimate=estimate,
            solution=solution,
            conditioning=conditioning,
            forward_iterations=forward_iterations,
            forward_residual=forward_residual,
            timings=self.timings,
            warnings=self.warnings,
        )
        if write:
            self.timings["total"] = time.perf_counter() - start
            report.artifacts = self.write(
                report,
                problem,
                data=data,
                system=system,
                nodes=nodes,
                xray=xray,
            )
        return report

    @_stage("forward")
    def _xray(self, problem: Problem) -> RadianceField:
        return xray_data(problem.media, problem.grid, problem.angles)


def run_pipeline(
    config: RunConfig,
    *,
    data: BoundaryData | None = None,
    log: logging.Logger | None = None,
    write: bool = True,
) -> RunReport:
    """Run a full reconstruction with the given configuration.

    Runs are deterministic given the configuration, including the noise
    seed. See `Pipeline.run` for the parameters.
    """
    return Pipeline(config, log=log).run(data, write=write)


def noise_sweep(
    config: RunConfig,
    deltas: Iterable[float],
    seeds: Iterable[int],
    *,
    log: logging.Logger | None = None,
) -> list[dict[str, object]]:
    """Reconstruct from noisy data over a grid of noise levels and seeds.

    Clean data, node matrices and the lined-up operator are computed once.
    Rows are written to ``sweep.csv`` in the output directory.

    Returns
    -------
    list of dict
        One row per noise level and seed with the quality metrics.
    """
    pipeline = Pipeline(config, log=log)
    problem = pipeline.setup()
    basis = pipeline.basis(problem)
    clean = boundary_trace(pipeline.forward(problem))
    nodes, _ = pipeline.assembly(problem, basis)
    system = pipeline.build_system(nodes, problem)
    seeds = list(seeds)
    rows: list[dict[str, object]] = []
    for delta in deltas:
        for seed in seeds:
            data = pipeline.noise(clean, delta, seed)
            _, solution = pipeline.solve(system, data, basis)
            estimate = pipeline.recover(solution, basis, problem)
            estimate = pipeline.score(pipeline.post(estimate), problem)
            metrics = estimate.metrics
            if metrics is None:
                raise RuntimeError("Sweep reconstruction without metrics")
            rows.append(
                {
                    "delta": delta,
                    "seed": seed,
                    "relative_l2": metrics.relative_l2,
                    "centroid_offset": metrics.centroid_offset,
                    "support_jaccard": metrics.support_jaccard,
                    "qrm_iterations": solution.iterations,
                    "peak": float(np.max(estimate.best)),
                }
            )
    write_table(rows, config.output.path / "sweep.csv")
    return rows
