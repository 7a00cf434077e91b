"""Reading and writing run artifacts.

Grids are written as CSV with one ``x,y,value`` row per node, ``j`` outer
and ``i`` inner, or as 8-bit binary PGM images. Tables use pandas so that
all CSV artifacts share one float format and are byte-identical across
runs with the same inputs.
"""

from __future__ import annotations

import json
from collections.abc import Iterator, Mapping, Sequence
from contextlib import contextmanager
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy import sparse
from scipy.io import mmwrite

from .assembly import NodeMatrices
from .basis import BasisSet
from .exceptions import OutputError, PreconditionError
from .forward import BoundaryData
from .geometry import AngleGrid, Grid2D

__all__ = [
    "FLOAT_FORMAT",
    "GridFormat",
    "dump_operator",
    "export_basis",
    "export_boundary",
    "export_derivative_matrix",
    "export_grid",
    "export_image",
    "export_node_norms",
    "import_boundary",
    "import_grid_csv",
    "write_table",
    "write_timings",
]

FLOAT_FORMAT = "%.17g"
"""Format of every float written to CSV, exact on reading back."""


class GridFormat(str, Enum):
    """File formats of exported grids."""

    CSV = "csv"
    PGM = "pgm"


@contextmanager
def _writing(path: Path) -> Iterator[Path]:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        yield path
    except OSError as e:
        raise OutputError.from_exception(e, str(path)) from e


@contextmanager
def _reading(path: Path) -> Iterator[Path]:
    try:
        yield path
    except OSError as e:
        raise OutputError.from_exception(e, str(path)) from e
    except (pd.errors.ParserError, KeyError, ValueError) as e:
        message = f"Malformed file {path}: {e!s}"
        raise OutputError(message, path=str(path)) from e


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    with _writing(path):
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _read_csv(path: Path) -> pd.DataFrame:
    with _reading(path):
        return pd.read_csv(path, float_precision="round_trip")


def export_grid(
    values: NDArray[np.float64],
    grid: Grid2D,
    path: Path | str,
    grid_format: GridFormat | str = GridFormat.CSV,
) -> Path:
    """Write nodal values of a grid.

    Parameters
    ----------
    values
        Values indexed ``[i, j]``.
    grid
        Grid the values live on.
    path
        Destination file.
    grid_format
        ``csv`` for exact text, ``pgm`` for a min-max normalized image with
        ``y`` increasing upward. A constant grid maps to black.

    Returns
    -------
    Path
        The written file.

    Raises
    ------
    PreconditionError
        If the values do not match the grid or are not finite.
    OutputError
        If the file cannot be written.
    """
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != grid.shape:
        raise PreconditionError(
            f"Values have shape {values.shape}, grid has {grid.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise PreconditionError(f"Refusing to write non-finite values: {path}")
    match GridFormat(grid_format):
        case GridFormat.CSV:
            xx, yy = grid.mesh()
            frame = pd.DataFrame(
                {
                    "x": xx.T.reshape(-1),
                    "y": yy.T.reshape(-1),
                    "value": values.T.reshape(-1),
                }
            )
            _write_csv(frame, path)
        case GridFormat.PGM:
            export_image(values, path)
    return path


def export_image(values: NDArray[np.float64], path: Path | str) -> Path:
    """Write a two-dimensional array as an 8-bit binary PGM image.

    Values are indexed ``[column, row]`` with rows increasing upward, and
    are min-max normalized. A constant array maps to black. The bounds of
    the normalization are recorded in a comment line.
    """
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    low = float(values.min())
    high = float(values.max())
    if high > low:
        scaled = np.rint(255 * (values - low) / (high - low))
    else:
        scaled = np.zeros_like(values)
    image = scaled.astype(np.uint8).T[::-1]
    height, width = image.shape
    header = (
        f"P5\n# min-max normalized: 0 = {low:.17g}, 255 = {high:.17g}\n"
        f"{width} {height}\n255\n"
    )
    with _writing(path):
        path.write_bytes(header.encode("ascii") + image.tobytes())
    return path


def import_grid_csv(
    path: Path | str,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Read a grid written by `export_grid` in CSV format.

    Returns
    -------
    tuple of numpy.ndarray
        Node abscissas, node ordinates and values indexed ``[i, j]``.

    Raises
    ------
    OutputError
        If the file cannot be read or is not a complete grid.
    """
    path = Path(path)
    frame = _read_csv(path)
    with _reading(path):
        x = np.unique(frame["x"].to_numpy())
        y = np.unique(frame["y"].to_numpy())
        if len(frame) != x.size * y.size:
            raise ValueError(f"{len(frame)} rows do not fill a grid")
        values = frame["value"].to_numpy().reshape(y.size, x.size).T
    return x, y, np.ascontiguousarray(values)


def export_boundary(data: BoundaryData, path: Path | str) -> Path:
    """Write boundary data as one row per boundary node and angle.

    Columns are the one-based indices ``i, j, k``, the coordinates and the
    value.
    """
    path = Path(path)
    i, j = np.nonzero(data.grid.boundary)
    count = data.angles.nodes.size
    k = np.tile(np.arange(count), i.size)
    i = np.repeat(i, count)
    j = np.repeat(j, count)
    frame = pd.DataFrame(
        {
            "i": i + 1,
            "j": j + 1,
            "k": k + 1,
            "x": data.grid.x[i],
            "y": data.grid.y[j],
            "alpha": data.angles.nodes[k],
            "value": data.values[i, j, k],
        }
    )
    _write_csv(frame, path)
    return path


def import_boundary(
    path: Path | str, grid: Grid2D, angles: AngleGrid
) -> BoundaryData:
    """Read boundary data written by `export_boundary`.

    Values at inflow nodes are discarded.

    Raises
    ------
    OutputError
        If the file cannot be read.
    PreconditionError
        If the indices do not fit the grid.
    """
    path = Path(path)
    frame = _read_csv(path)
    with _reading(path):
        i = frame["i"].to_numpy(dtype=np.int64) - 1
        j = frame["j"].to_numpy(dtype=np.int64) - 1
        k = frame["k"].to_numpy(dtype=np.int64) - 1
        value = frame["value"].to_numpy(dtype=np.float64)
    shape = (*grid.shape, angles.nodes.size)
    inside = (
        (i >= 0) & (i < shape[0]) & (j >= 0) & (j < shape[1])
        & (k >= 0) & (k < shape[2])
    )
    if not np.all(inside):
        raise PreconditionError(f"Boundary data in {path} does not fit grid")
    values = np.zeros(shape)
    values[i, j, k] = value
    return BoundaryData.from_values(grid, angles, values)


def export_basis(
    basis: BasisSet, alpha: NDArray[np.float64], path: Path | str
) -> Path:
    """Write the basis functions and their derivatives on ``alpha``.

    Columns are ``alpha``, ``psi_1`` to ``psi_N`` and ``dpsi_1`` to
    ``dpsi_N``.
    """
    path = Path(path)
    columns: dict[str, NDArray[np.float64]] = {"alpha": np.asarray(alpha)}
    psi = basis.evaluate(alpha)
    dpsi = basis.evaluate(alpha, derivative=True)
    for n in range(basis.order):
        columns[f"psi_{n + 1}"] = psi[n]
    for n in range(basis.order):
        columns[f"dpsi_{n + 1}"] = dpsi[n]
    _write_csv(pd.DataFrame(columns), path)
    return path


def export_derivative_matrix(basis: BasisSet, path: Path | str) -> Path:
    """Write ``M_N`` with one row per test function ``m``."""
    path = Path(path)
    names = [f"n_{n + 1}" for n in range(basis.order)]
    frame = pd.DataFrame(basis.matrix, columns=names)
    frame.insert(0, "m", np.arange(1, basis.order + 1))
    _write_csv(frame, path)
    return path


def export_node_norms(nodes: NodeMatrices, path: Path | str) -> Path:
    """Write spectral norms of ``A``, ``B`` and ``C`` at every node."""
    path = Path(path)
    grid = nodes.grid
    xx, yy = grid.mesh()
    norms = nodes.norms()
    frame = pd.DataFrame(
        {
            "x": xx.T.reshape(-1),
            "y": yy.T.reshape(-1),
            "norm_a": norms[..., 0].T.reshape(-1),
            "norm_b": norms[..., 1].T.reshape(-1),
            "norm_c": norms[..., 2].T.reshape(-1),
        }
    )
    _write_csv(frame, path)
    return path


def dump_operator(matrix: sparse.spmatrix, path: Path | str) -> Path:
    """Write a sparse matrix in Matrix Market coordinate format."""
    path = Path(path)
    with _writing(path), path.open("wb") as handle:
        mmwrite(
            handle,
            sparse.coo_matrix(matrix),
            comment="lined-up residual operator",
            field="real",
            precision=17,
            symmetry="general",
        )
    return path


def write_table(
    rows: Sequence[Mapping[str, object]], path: Path | str
) -> Path:
    """Write records as a CSV table, columns in first-seen order."""
    path = Path(path)
    _write_csv(pd.DataFrame.from_records(list(rows)), path)
    return path


def write_timings(timings: Mapping[str, float], path: Path | str) -> Path:
    """Write stage timings in seconds as JSON."""
    path = Path(path)
    with _writing(path):
        path.write_text(json.dumps(dict(timings), indent=2) + "\n")
    return path
