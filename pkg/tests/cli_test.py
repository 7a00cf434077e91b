"""Tests for the rte-qrm command line."""

from __future__ import annotations

from pathlib import Path

import pandas as pd
import pytest

from rte_qrm.carleman import TRIALS, TrialSummary
from rte_qrm.cli import format_summaries, run
from rte_qrm.exceptions import ExitCode

_SMALL = [
    "--GridConfig.mx=8",
    "--GridConfig.my=8",
    "--GridConfig.m_alpha=10",
    "--BasisConfig.order=3",
    "--BasisConfig.quadrature=60",
    "--QRMSolver.method=direct",
]


def test_verify(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    status = run(["verify", "--trials=200", f"--out={tmp_path}"])
    assert status == ExitCode.SUCCESS
    lines = capsys.readouterr().out.splitlines()
    header = ["check", "trials", "violations", "min", "slack", "result"]
    assert lines[0].split() == header
    assert len(lines) == 1 + len(TRIALS)
    for line, name in zip(lines[1:], TRIALS, strict=True):
        fields = line.split()
        assert fields[0] == name
        assert fields[1] == "200"
        assert fields[-1] == "pass"


def test_format_summaries() -> None:
    summary = TrialSummary(
        name="weighted", trials=10, violations=2, min_slack=-0.5
    )
    table = format_summaries([summary])
    assert table.splitlines()[1].split() == [
        "weighted",
        "10",
        "2",
        "-5.000e-01",
        "FAIL",
    ]


def test_basis(tmp_path: Path) -> None:
    status = run(["basis", *_SMALL, f"--out={tmp_path}"])
    assert status == ExitCode.SUCCESS
    table = pd.read_csv(tmp_path / "basis.csv")
    assert len(table) == 11
    assert list(table.columns)[:2] == ["alpha", "psi_1"]
    matrix = pd.read_csv(tmp_path / "derivative_matrix.csv")
    assert matrix.shape == (3, 4)


def test_forward_and_reconstruct(data_path: Path, tmp_path: Path) -> None:
    config = data_path / "test1.cfg"
    data = tmp_path / "data"
    status = run(["forward", f"--config={config}", f"--out={data}"])
    assert status == ExitCode.SUCCESS
    assert (data / "boundary.csv").exists()
    assert (data / "boundary_noisy.csv").exists()

    out = tmp_path / "run"
    status = run(
        [
            "reconstruct",
            f"--config={config}",
            f"--data={data / 'boundary.csv'}",
            f"--out={out}",
            "--seed=3",
        ]
    )
    assert status == ExitCode.SUCCESS
    summary = pd.read_csv(out / "summary.csv")
    assert summary["seed"][0] == 3
    assert summary["forward_iterations"][0] == 0
    assert (out / "f_post.csv").exists()


def test_pipeline_sweep(data_path: Path, tmp_path: Path) -> None:
    status = run(
        [
            "pipeline",
            f"--config={data_path / 'test1.cfg'}",
            f"--out={tmp_path}",
            "--PipelineCommand.sweep_deltas=0.0",
            "--PipelineCommand.sweep_deltas=0.2",
        ]
    )
    assert status == ExitCode.SUCCESS
    assert len(pd.read_csv(tmp_path / "sweep.csv")) == 2


def test_errors(tmp_path: Path) -> None:
    assert run([]) == ExitCode.CONFIG

    missing = tmp_path / "missing.cfg"
    assert run(["basis", f"--config={missing}"]) == ExitCode.IO

    config = tmp_path / "bad.cfg"
    config.write_text("grid.mx = 8\ngrid.colour = red\n")
    assert run(["basis", f"--config={config}"]) == ExitCode.CONFIG

    config.write_text("domain.a = 0.5\n")
    args = ["basis", f"--config={config}", *_SMALL, f"--out={tmp_path}"]
    assert run(args) == ExitCode.CONFIG
    assert not (tmp_path / "basis.csv").exists()

    assert run(["basis", "--GridConfig.mx=1"]) == ExitCode.CONFIG
