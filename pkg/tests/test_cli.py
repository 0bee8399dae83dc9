import json

import numpy as np
import pytest
import scipy.io

from dpgamg.cli import (
    CONTRAST_VALUES,
    ConfigError,
    RunConfig,
    contrast_kappa,
    main,
    mesh_levels,
    parse_mesh_spec,
    run,
)
from dpgamg.mesh import QUAD, TRI
from dpgamg.report import CONSTANT_FIELDS, ROW_FIELDS, format_cell, parse_table


def test_quad_2x2_band():
    rep = run(RunConfig(mesh="cartesian:2,2,quad", refine=0, order=1))
    (row,) = rep.rows
    assert row["status"] == "converged"
    assert 3 <= row["iterations"] <= 20
    assert 0.0 < row["avg_reduction"] < 1.0


def test_zero_source_needs_no_iterations():
    rep = run(RunConfig(mesh="cartesian:2,2,quad", refine=1, source=0.0))
    assert [r["iterations"] for r in rep.rows] == [0, 0]
    assert rep.exit_code == 0


def test_rows_match_refinements():
    rep = run(RunConfig(mesh="cartesian:2,2,tri", refine=2, order=2, study="h_p_table"))
    assert sorted(rep.series()) == ["p1_r2", "p2_r3"]
    assert all(len(rows) == 3 for rows in rep.series().values())
    assert [r["elements"] for r in rep.series()["p1_r2"]] == [8, 32, 128]


def test_reduced_order_series():
    rep = run(RunConfig(mesh="cartesian:2,2,tri", refine=1, order=2, study="reduced_order"))
    assert sorted(rep.series()) == ["p1_r1", "p1_r2", "p2_r2", "p2_r3"]


def test_determinism_excluding_timings():
    cfg = dict(mesh="cartesian:2,2,quad", refine=1, contrast=100.0, seed=3)
    a = run(RunConfig(**cfg)).to_dict(timings=False)
    b = run(RunConfig(**cfg)).to_dict(timings=False)
    assert json.dumps(a["rows"], sort_keys=True) == json.dumps(b["rows"], sort_keys=True)
    assert a["config"] == b["config"]


def test_text_and_json_agree(tmp_path):
    out = tmp_path / "run.json"
    assert main(["--mesh", "cartesian:2,2,quad", "--refine", "1", "--study", "verify_suite", "--out-json", str(out)]) == 0
    data = json.loads(out.read_text())
    parsed = parse_table((tmp_path / "run.txt").read_text())
    rows = [p for p in parsed if "iterations" in p]
    consts = [p for p in parsed if "check" in p]
    assert len(rows) == len(data["rows"]) and len(consts) == len(data["constants"])
    for text, rec in zip(rows, data["rows"]):
        assert text == {f: format_cell(rec[f]) for f in ROW_FIELDS}
    for text, rec in zip(consts, data["constants"]):
        assert text == {f: format_cell(rec[f]) for f in CONSTANT_FIELDS}


def test_outputs_and_figures_written(tmp_path):
    out = tmp_path / "res" / "study.json"
    figs = tmp_path / "figs"
    code = main(["--refine", "1", "--out-json", str(out), "--figures", str(figs)])
    assert code == 0
    for suffix in (".json", ".txt", ".csv"):
        assert out.with_suffix(suffix).exists()
    assert (figs / "study_iterations.png").stat().st_size > 0


def test_export_matrices(tmp_path):
    assert main(["--refine", "0", "--export-matrices", str(tmp_path)]) == 0
    (d,) = tmp_path.iterdir()
    names = {p.name for p in d.iterdir()}
    assert {"A.mtx", "B0.mtx", "B1.mtx", "M.mtx", "S.mtx", "Pi.mtx", "C.mtx", "g.txt", "rt_partition.txt"} <= names
    A = scipy.io.mmread(d / "A.mtx")
    g = np.loadtxt(d / "g.txt")
    assert A.shape == (g.size, g.size)
    labels = set((d / "rt_partition.txt").read_text().split())
    assert labels <= {"f", "i"} and labels


def test_nonconvergence_exit_code(capsys):
    code = main(["--refine", "1", "--precond", "none", "--maxit", "1"])
    assert code == 2
    assert "did not converge" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["--contrast", "10"],
        ["--study", "contrast"],
        ["--study", "reduced_order", "--mesh", "cartesian:2,2,quad"],
        ["--mesh", "cartesian:2,quad"],
        ["--mesh", "file:/does/not/exist.mesh2d"],
        ["--order", "0"],
        ["--order", "2", "--test-order", "1"],
        ["--rtol", "2"],
        ["--precond", "jacobi"],
        ["--no-such-flag"],
    ],
)
def test_config_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "configuration error" in capsys.readouterr().err


def test_run_validates():
    with pytest.raises(ConfigError):
        run(RunConfig(study="contrast"))


def test_mesh_specs():
    assert parse_mesh_spec("cartesian:3,2,tri").nelems == 12
    assert parse_mesh_spec("sample:tri").kind == TRI
    assert parse_mesh_spec("sample:quad").kind == QUAD
    levels = mesh_levels(RunConfig(mesh="sample:quad", refine=2))
    assert [m.nelems for m in levels] == [216, 864, 3456]


def test_sample_mesh_solve():
    rep = run(RunConfig(mesh="sample:tri", refine=1, order=1))
    assert rep.all_converged


def test_contrast_draws_are_prefix_stable():
    a = contrast_kappa(100, 1e-4, seed=5)
    b = contrast_kappa(400, 1e-4, seed=5)
    np.testing.assert_array_equal(a, b[:100])
    assert set(np.unique(b)) == {1e-4, 1.0}
    assert 0.4 < np.mean(b == 1.0) < 0.6


def test_contrast_trend():
    rep = run(RunConfig(mesh="cartesian:4,4,quad", refine=2, study="contrast", seed=1))
    assert rep.all_converged
    finest = {r["kappa0"]: r["iterations"] for r in rep.rows if r["level"] == 2}
    assert set(finest) == set(CONTRAST_VALUES)
    assert finest[1e-6] > finest[1.0]
