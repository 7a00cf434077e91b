"""Tests for artifact reading and writing."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy import sparse
from scipy.io import mmread

from rte_qrm.assembly import assemble
from rte_qrm.basis import BasisSet
from rte_qrm.exceptions import OutputError, PreconditionError
from rte_qrm.forward import BoundaryData
from rte_qrm.geometry import AngleGrid, Domain, Grid2D
from rte_qrm.io import (
    dump_operator,
    export_basis,
    export_boundary,
    export_derivative_matrix,
    export_grid,
    export_image,
    export_node_norms,
    import_boundary,
    import_grid_csv,
    write_table,
    write_timings,
)
from rte_qrm.media import preset


def _read_pgm(path: Path) -> tuple[list[bytes], np.ndarray]:
    magic, comment, size, depth, pixels = path.read_bytes().split(b"\n", 4)
    width, height = (int(v) for v in size.split())
    image = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)
    return [magic, comment, size, depth], image


def test_grid_csv(domain: Domain, tmp_path: Path) -> None:
    grid = Grid2D.build(domain, 2, 2)
    path = export_grid(np.zeros(grid.shape), grid, tmp_path / "zero.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["x", "y", "value"]
    assert len(frame) == 9
    assert frame["x"].tolist()[:3] == [-1.0, 0.0, 1.0]
    assert frame["y"].tolist()[:3] == [1.0, 1.0, 1.0]
    assert not frame["value"].any()


def test_grid_round_trip(
    grid: Grid2D, rng: np.random.Generator, tmp_path: Path
) -> None:
    values = rng.standard_normal(grid.shape) * 1e-3
    path = export_grid(values, grid, tmp_path / "nested" / "grid.csv")
    x, y, restored = import_grid_csv(path)
    assert np.array_equal(x, grid.x)
    assert np.array_equal(y, grid.y)
    assert np.array_equal(restored, values)


def test_grid_errors(grid: Grid2D, tmp_path: Path) -> None:
    values = np.zeros(grid.shape)
    values[2, 3] = np.nan
    with pytest.raises(PreconditionError, match="non-finite"):
        export_grid(values, grid, tmp_path / "nan.csv")
    with pytest.raises(PreconditionError):
        export_grid(np.zeros((3, 3)), grid, tmp_path / "small.csv")

    blocker = tmp_path / "blocker"
    blocker.write_text("")
    with pytest.raises(OutputError) as excinfo:
        export_grid(np.zeros(grid.shape), grid, blocker / "grid.csv")
    assert excinfo.value.path == str(blocker / "grid.csv")

    (tmp_path / "bad.csv").write_text("x,y\n1,2\n")
    with pytest.raises(OutputError, match="Malformed"):
        import_grid_csv(tmp_path / "bad.csv")
    with pytest.raises(OutputError):
        import_grid_csv(tmp_path / "missing.csv")


def test_image(tmp_path: Path) -> None:
    path = export_image(np.full((3, 2), 4.0), tmp_path / "c.pgm")
    header, image = _read_pgm(path)
    assert header[0] == b"P5"
    assert header[2] == b"3 2"
    assert header[3] == b"255"
    assert not image.any()

    values = np.array([[0.0, 1.0, 2.0]] * 3)
    header, image = _read_pgm(export_image(values, tmp_path / "g.pgm"))
    assert header[1] == b"# min-max normalized: 0 = 0, 255 = 2"
    assert image.tolist() == [[255] * 3, [128] * 3, [0] * 3]


def test_grid_pgm(grid: Grid2D, tmp_path: Path) -> None:
    xx, _ = grid.mesh()
    path = export_grid(xx, grid, tmp_path / "x.pgm", "pgm")
    _, image = _read_pgm(path)
    assert image.shape == (11, 11)
    assert image[0, 0] == 0
    assert image[0, -1] == 255


def test_boundary_round_trip(
    grid: Grid2D,
    angles: AngleGrid,
    rng: np.random.Generator,
    tmp_path: Path,
) -> None:
    data = BoundaryData.from_values(
        grid, angles, rng.random((*grid.shape, angles.nodes.size))
    )
    path = export_boundary(data, tmp_path / "boundary.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["i", "j", "k", "x", "y", "alpha", "value"]
    assert len(frame) == 40 * 21
    assert frame["i"].min() == 1
    assert frame["k"].max() == 21

    restored = import_boundary(path, grid, angles)
    assert np.array_equal(restored.values, data.values)

    small = Grid2D.build(grid.domain, 4, 4)
    with pytest.raises(PreconditionError):
        import_boundary(path, small, angles)


def test_basis_tables(
    basis: BasisSet, angles: AngleGrid, tmp_path: Path
) -> None:
    frame = pd.read_csv(
        export_basis(basis, angles.nodes, tmp_path / "basis.csv")
    )
    assert list(frame.columns) == [
        "alpha",
        *(f"psi_{n}" for n in range(1, 5)),
        *(f"dpsi_{n}" for n in range(1, 5)),
    ]
    assert len(frame) == 21
    expected = basis.evaluate(angles.nodes)[1]
    assert np.allclose(frame["psi_2"].to_numpy(), expected, rtol=1e-15)

    frame = pd.read_csv(
        export_derivative_matrix(basis, tmp_path / "matrix.csv")
    )
    assert list(frame.columns) == ["m", "n_1", "n_2", "n_3", "n_4"]
    assert frame["m"].tolist() == [1, 2, 3, 4]


def test_node_norms(
    basis: BasisSet, grid: Grid2D, angles: AngleGrid, tmp_path: Path
) -> None:
    nodes = assemble(basis, preset("test1"), grid, angles)
    frame = pd.read_csv(export_node_norms(nodes, tmp_path / "norms.csv"))
    assert list(frame.columns) == ["x", "y", "norm_a", "norm_b", "norm_c"]
    assert len(frame) == 121
    assert np.isfinite(frame[["norm_a", "norm_b", "norm_c"]].to_numpy()).all()


def test_dump_operator(tmp_path: Path) -> None:
    matrix = sparse.csr_matrix(np.array([[0.0, 2.5, 0.0], [1.0, 0.0, 0.0]]))
    path = dump_operator(matrix, tmp_path / "operator.mtx")
    lines = path.read_text().splitlines()
    assert lines[0] == "%%MatrixMarket matrix coordinate real general"
    restored = mmread(path)
    assert restored.shape == (2, 3)
    assert restored.nnz == 2
    assert np.array_equal(restored.toarray(), matrix.toarray())

    symmetric = sparse.csr_matrix(np.array([[1.0, 1 / 3], [1 / 3, 2.0]]))
    path = dump_operator(symmetric, tmp_path / "symmetric.mtx")
    assert "general" in path.read_text().splitlines()[0]
    assert np.array_equal(mmread(path).toarray(), symmetric.toarray())


def test_tables(tmp_path: Path) -> None:
    rows = [{"b": 1, "a": 0.1}, {"b": 2, "a": 0.2}]
    frame = pd.read_csv(write_table(rows, tmp_path / "t.csv"))
    assert list(frame.columns) == ["b", "a"]
    assert frame["a"].tolist() == pytest.approx([0.1, 0.2])

    path = write_timings({"basis": 0.5}, tmp_path / "timings.json")
    assert json.loads(path.read_text()) == {"basis": 0.5}
