"""Checks of the discrete Carleman estimates for the forward difference.

Three inequalities are checked on a uniform grid ``y_j = a + j h``,
``j = 0..M``, with forward differences ``w'_j = (w_{j+1} - w_j) / h``:

* summation by parts,
  ``-2 h sum w_j w'_j >= -(w_M^2 - w_1^2)``, whose slack is exactly
  ``h^2 sum (w'_j)^2``;
* the weighted estimate with weight ``exp(2 lambda y)``;
* its corollary ``h sum e (u'_j)^2 >= c lambda^2 h sum e u_j^2`` for
  ``u_M = 0`` and ``lambda h < 1``, with ``c = 1/4`` (or the weaker
  ``1/8``).

All sums run over ``j = 1..M-1``.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from traitlets import Float, Integer, TraitError, validate
from traitlets.config import Configurable

from .exceptions import OutputError, PreconditionError

__all__ = [
    "CarlemanConfig",
    "CheckResult",
    "DiscreteFunction1D",
    "TrialSummary",
    "check_summation_by_parts",
    "check_weighted_poincare",
    "check_weighted_estimate",
    "decay_bound_holds",
    "summation_by_parts_slack",
    "run_trials",
]

RELATIVE_TOLERANCE = 1e-12
"""Relative slack granted to each inequality for rounding."""

_LOG_SHIFT_LIMIT = 300.0
"""Weight exponent range above which weights are rescaled from the top."""


@dataclass(frozen=True, eq=False)
class DiscreteFunction1D:
    """Values of a function on a uniform one-dimensional grid."""

    values: NDArray[np.float64] = field(repr=False)
    """Values ``w_0..w_M``."""

    h: float
    """Grid step."""

    a: float = 0.0
    """First grid point ``y_0``."""

    def __post_init__(self) -> None:
        if self.values.ndim != 1 or self.values.size < 3:
            raise PreconditionError("Discrete function needs M >= 2")
        if self.h <= 0:
            raise PreconditionError(f"Grid step must be positive: {self.h}")

    @property
    def size(self) -> int:
        """Number of subintervals ``M``."""
        return self.values.size - 1

    @property
    def points(self) -> NDArray[np.float64]:
        return self.a + self.h * np.arange(self.values.size)

    def derivative(self) -> NDArray[np.float64]:
        """Forward differences ``w'_0..w'_{M-1}``."""
        return np.diff(self.values) / self.h


@dataclass(frozen=True, slots=True)
class CheckResult:
    """Both sides of a checked inequality ``lhs >= rhs``."""

    lhs: float
    rhs: float
    holds: bool
    slack: float
    """``lhs - rhs``."""

    log_scale: float = 0.0
    """Both sides are multiplied by ``exp(-log_scale)``."""

    @property
    def ratio(self) -> float:
        """``lhs / rhs``, infinite when the right side is not positive."""
        if self.rhs <= 0:
            return math.inf
        return self.lhs / self.rhs


def _result(lhs: float, rhs: float, log_scale: float = 0.0) -> CheckResult:
    scale = max(abs(lhs), abs(rhs))
    holds = lhs >= rhs - RELATIVE_TOLERANCE * scale
    return CheckResult(
        lhs=lhs, rhs=rhs, holds=holds, slack=lhs - rhs, log_scale=log_scale
    )


def _weights(
    function: DiscreteFunction1D, lam: float
) -> tuple[NDArray[np.float64], float]:
    """Weights ``exp(2 lambda y_j)`` divided by ``exp(log_scale)``."""
    points = function.points
    span = lam * (points[-1] - points[0])
    shift = points[-1] if span > _LOG_SHIFT_LIMIT else points[0]
    return np.exp(2 * lam * (points - shift)), 2 * lam * shift


def check_summation_by_parts(w: DiscreteFunction1D) -> CheckResult:
    """Check summation by parts for the forward difference.

    The returned slack equals ``h^2 sum_{j=1}^{M-1} (w'_j)^2`` up to
    rounding.
    """
    values = w.values
    derivative = w.derivative()
    inner = slice(1, w.size)
    lhs = -2 * w.h * float(np.sum(values[inner] * derivative[inner]))
    rhs = -(values[-1] ** 2 - values[1] ** 2)
    return _result(lhs, float(rhs))


def summation_by_parts_slack(w: DiscreteFunction1D) -> float:
    """Exact slack ``h^2 sum_{j=1}^{M-1} (w'_j)^2`` of summation by parts."""
    derivative = w.derivative()[1 : w.size]
    return w.h**2 * float(np.sum(derivative**2))


def check_weighted_estimate(
    u: DiscreteFunction1D, lam: float, *, boundary_factor: float = 1.0
) -> CheckResult:
    """Check the discrete Carleman estimate with weight ``exp(2 lambda y)``.

    The right side is ``h q^2 sum e u_j^2 + c exp(-lambda h) q (e_1 u_1^2 -
    e_M u_M^2)`` with ``q = (1 - exp(-lambda h)) / h`` and ``c`` the
    boundary factor. Summation by parts yields ``c = 1``. The form with
    ``c = 2`` fails for functions whose weighted values decrease slowly,
    for example ``u = (0, 0.9, 0.3, 0.1)`` with ``h = 0.5`` and
    ``lambda = 2``.

    Parameters
    ----------
    u
        Function to check.
    lam
        Carleman parameter.
    boundary_factor
        Constant ``c`` in front of the boundary term.

    Raises
    ------
    PreconditionError
        If ``lam`` is not positive.
    """
    if lam <= 0:
        raise PreconditionError(f"Carleman parameter must be positive: {lam}")
    weights, log_scale = _weights(u, lam)
    values = u.values
    derivative = u.derivative()
    inner = slice(1, u.size)
    h = u.h
    q = -math.expm1(-lam * h) / h
    lhs = h * float(np.sum(weights[inner] * derivative[inner] ** 2))
    bulk = h * q**2 * float(np.sum(weights[inner] * values[inner] ** 2))
    edge = weights[1] * values[1] ** 2 - weights[-1] * values[-1] ** 2
    boundary = boundary_factor * math.exp(-lam * h) * q * float(edge)
    return _result(lhs, bulk + boundary, log_scale)


def check_weighted_poincare(
    u: DiscreteFunction1D, lam: float, *, factor: float = 0.25
) -> CheckResult:
    """Check the simplified estimate for functions vanishing at the top.

    Parameters
    ----------
    u
        Function with ``u_M = 0``.
    lam
        Carleman parameter with ``0 < lam * h < 1``.
    factor
        Constant in front of ``lambda^2``, at most ``1/4``.

    Raises
    ------
    PreconditionError
        If ``u_M != 0``, ``lam <= 0`` or ``lam * h >= 1``.
    """
    if u.values[-1] != 0:
        raise PreconditionError("Estimate requires u_M = 0")
    if lam <= 0 or lam * u.h >= 1:
        raise PreconditionError(
            f"Estimate requires 0 < lambda h < 1, got {lam * u.h}"
        )
    weights, log_scale = _weights(u, lam)
    inner = slice(1, u.size)
    derivative = u.derivative()
    lhs = u.h * float(np.sum(weights[inner] * derivative[inner] ** 2))
    weighted = float(np.sum(weights[inner] * u.values[inner] ** 2))
    rhs = factor * lam**2 * u.h * weighted
    return _result(lhs, rhs, log_scale)


def decay_bound_holds(lam: float, h: float) -> bool:
    """Whether ``(1 - exp(-lam h)) / h >= lam / 2``, true for ``lam h < 1``."""
    return -math.expm1(-lam * h) / h >= lam / 2


@dataclass(slots=True)
class TrialSummary:
    """Outcome of randomized trials of one inequality."""

    name: str
    trials: int
    violations: int = 0
    min_slack: float = math.inf
    """Smallest slack relative to the larger side."""

    min_ratio: float = math.inf
    """Smallest ``lhs / rhs`` over trials with a positive right side."""

    counterexamples: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0


class CarlemanConfig(Configurable):
    """Parameters of the randomized inequality checks."""

    trials = Integer(
        10000, help="Number of random trials per inequality."
    ).tag(config=True)

    seed = Integer(0, help="Seed of the trial generator.").tag(config=True)

    lambda_max = Float(
        10.0, help="Largest Carleman parameter drawn."
    ).tag(config=True)

    min_points = Integer(
        3, help="Smallest number of subintervals drawn."
    ).tag(config=True)

    max_points = Integer(
        200, help="Largest number of subintervals drawn."
    ).tag(config=True)

    boundary_factor = Float(
        1.0,
        help="""
        Constant in front of the boundary term of the weighted estimate.

        Summation by parts proves the estimate with 1. Setting 2 checks
        the stronger form, which random trials refute.
        """,
    ).tag(config=True)

    poincare_factor = Float(
        0.25,
        help="Constant in front of lambda^2 in the corollary, at most 1/4.",
    ).tag(config=True)

    @validate("trials", "lambda_max")
    def _validate_positive(self, proposal: dict) -> float:
        if proposal["value"] <= 0:
            name = proposal["trait"].name
            raise TraitError(f"carleman.{name} must be positive")
        return proposal["value"]

    @validate("min_points", "max_points")
    def _validate_points(self, proposal: dict) -> int:
        if proposal["value"] < 2:
            name = proposal["trait"].name
            raise TraitError(f"carleman.{name} must be at least 2")
        return proposal["value"]

    @validate("boundary_factor")
    def _validate_boundary_factor(self, proposal: dict) -> float:
        if proposal["value"] < 0:
            raise TraitError("carleman.boundary_factor must not be negative")
        return proposal["value"]

    @validate("poincare_factor")
    def _validate_poincare_factor(self, proposal: dict) -> float:
        if not 0 < proposal["value"] <= 0.25:
            raise TraitError("carleman.poincare_factor must be in (0, 1/4]")
        return proposal["value"]


_Check = Callable[
    [np.random.Generator, CarlemanConfig], tuple[CheckResult, dict]
]


def _random_function(
    rng: np.random.Generator, config: CarlemanConfig
) -> DiscreteFunction1D:
    size = int(rng.integers(config.min_points, config.max_points + 1))
    h = float(rng.uniform(1e-3, 0.5))
    a = float(rng.uniform(1.0, 3.0))
    values = rng.uniform(-1.0, 1.0, size + 1)
    return DiscreteFunction1D(values=values, h=h, a=a)


def _describe(function: DiscreteFunction1D, **extra: float) -> dict:
    return {
        "values": function.values.tolist(),
        "h": function.h,
        "a": function.a,
        **extra,
    }


def _by_parts_trial(
    rng: np.random.Generator, config: CarlemanConfig
) -> tuple[CheckResult, dict]:
    function = _random_function(rng, config)
    return check_summation_by_parts(function), _describe(function)


def _weighted_trial(
    rng: np.random.Generator, config: CarlemanConfig
) -> tuple[CheckResult, dict]:
    function = _random_function(rng, config)
    lam = float(rng.uniform(0, config.lambda_max)) or config.lambda_max
    result = check_weighted_estimate(
        function, lam, boundary_factor=config.boundary_factor
    )
    return result, _describe(function, lam=lam)


def _poincare_trial(
    rng: np.random.Generator, config: CarlemanConfig
) -> tuple[CheckResult, dict]:
    function = _random_function(rng, config)
    values = np.array(function.values)
    values[-1] = 0.0
    function = DiscreteFunction1D(values=values, h=function.h, a=function.a)
    upper = min(config.lambda_max, 1 / function.h)
    lam = float(rng.uniform(0, upper)) or upper / 2
    if lam * function.h >= 1:
        lam = upper / 2
    result = check_weighted_poincare(
        function, lam, factor=config.poincare_factor
    )
    return result, _describe(function, lam=lam)


TRIALS: dict[str, _Check] = {
    "by_parts": _by_parts_trial,
    "weighted": _weighted_trial,
    "poincare": _poincare_trial,
}
"""Randomized trial generators by check name."""


def run_trials(
    name: str,
    config: CarlemanConfig,
    *,
    counterexample_path: Path | None = None,
) -> TrialSummary:
    """Run randomized trials of one inequality.

    Parameters
    ----------
    name
        Check to run, one of the keys of `TRIALS`.
    config
        Number of trials, seed and parameter ranges.
    counterexample_path
        If given and a trial fails, the failing inputs are written there as
        JSON for reproduction.

    Returns
    -------
    TrialSummary
        Counts and extreme values over the trials.

    Raises
    ------
    PreconditionError
        If the check name is unknown or the size range is empty.
    OutputError
        If counterexamples cannot be written.
    """
    if name not in TRIALS:
        raise PreconditionError(f"Unknown check {name}")
    if config.min_points > config.max_points:
        raise PreconditionError(
            f"carleman.min_points = {config.min_points} exceeds"
            f" carleman.max_points = {config.max_points}"
        )
    trial = TRIALS[name]
    rng = np.random.default_rng(config.seed)
    summary = TrialSummary(name=name, trials=config.trials)
    for _ in range(config.trials):
        result, inputs = trial(rng, config)
        scale = max(abs(result.lhs), abs(result.rhs))
        if scale > 0:
            summary.min_slack = min(summary.min_slack, result.slack / scale)
        summary.min_ratio = min(summary.min_ratio, result.ratio)
        if not result.holds:
            summary.violations += 1
            summary.counterexamples.append(
                {"inputs": inputs, "result": asdict(result)}
            )
    if summary.counterexamples and counterexample_path:
        try:
            counterexample_path.write_text(
                json.dumps(summary.counterexamples, indent=2)
            )
        except OSError as e:
            path = str(counterexample_path)
            raise OutputError.from_exception(e, path) from e
    return summary
