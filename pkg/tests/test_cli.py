"""Command-line entry point: exit codes, files written, custom problems."""
import json

import numpy as np
import pytest

from qcipm.benchmark import CSV_COLUMNS, MassSpringSpec, mass_spring_ocp
from qcipm.cli import main
from qcipm.condensing import ocp_to_dense
from qcipm.model import DenseDims, DenseQcqp
from qcipm.problem_io import save_problem

X0 = np.random.default_rng(0).uniform(-1.0, 1.0, 4)


def infeasible_problem():
    # x >= 1 and -x >= 0.5 cannot both hold
    inf = np.inf
    return DenseQcqp(
        dims=DenseDims(nv=1, ne=0, nb=1, ng=1, nq=0, ns=0),
        hess=np.eye(1), grad=np.zeros(1),
        eq_mat=np.zeros((0, 1)), eq_rhs=np.zeros(0),
        box_idx=np.array([0]), gen_mat=np.array([[-1.0]]),
        lb=np.array([1.0, 0.5]), ub=np.array([inf, inf]),
        quads=[],
        Zl=np.zeros(0), Zu=np.zeros(0), zl=np.zeros(0), zu=np.zeros(0),
        sl_min=np.zeros(0), su_min=np.zeros(0),
        soft_map=np.array([-1, -1]), mask_lo=np.array([True, True]),
        mask_up=np.array([False, False]), eq_mark=np.array([False, False]))


def test_stdout_run_exits_zero(capsys):
    assert main(["run", "--suite", "table2"]) == 0
    out = capsys.readouterr().out
    lines = out.strip().split("\n")
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 5


def test_json_to_stdout(capsys):
    assert main(["run", "--suite", "table2", "--format", "json"]) == 0
    tree = json.loads(capsys.readouterr().out)
    assert [r["problem"] for r in tree["records"]] == \
        ["QCQP_inf", "QP_4", "QP_6", "QP_8"]


def test_out_file_and_fixed_iters(tmp_path):
    out = tmp_path / "report.csv"
    code = main(["run", "--suite", "table2", "--iters", "3",
                 "--out", str(out)])
    assert code == 0  # fixed budgets only require completed runs
    body = out.read_text().strip().split("\n")
    assert len(body) == 5
    assert all(row.split(",")[3] == "3" for row in body[1:])


def test_usage_errors_exit_two(tmp_path, capsys):
    assert main(["run", "--suite", "custom"]) == 2
    assert main(["run", "--problem-file", "x.yaml"]) == 2
    assert main(["run", "--plot"]) == 2
    assert main(["run", "--seed", "-1"]) == 2
    assert main(["run", "--iters", "0"]) == 2
    assert main(["run", "--iters", "soon"]) == 2
    assert main(["run", "--suite", "table3"]) == 2
    missing = tmp_path / "nope.yaml"
    assert main(["run", "--suite", "custom",
                 "--problem-file", str(missing)]) == 2
    err = capsys.readouterr().err
    assert "cannot load problem file" in err


def test_condense_rejected_for_dense_custom_problem(tmp_path, capsys):
    p = mass_spring_ocp(MassSpringSpec(config="QP_0", N=4), X0)
    dense, _ = ocp_to_dense(p)
    f = tmp_path / "flat.yaml"
    save_problem(dense, f)
    code = main(["run", "--suite", "custom", "--problem-file", str(f),
                 "--condense", "full"])
    assert code == 2
    assert "bench: error:" in capsys.readouterr().err


def test_custom_problem_round_trip(tmp_path, capsys):
    p = mass_spring_ocp(MassSpringSpec(config="QCQP_1", N=4), X0)
    f = tmp_path / "springs.yaml"
    save_problem(p, f)
    out = tmp_path / "run.json"
    code = main(["run", "--suite", "custom", "--problem-file", str(f),
                 "--format", "json", "--out", str(out)])
    assert code == 0
    tree = json.loads(out.read_text())
    assert len(tree["records"]) == 1
    rec = tree["records"][0]
    assert rec["problem"] == "springs"
    assert rec["status"] == "converged"


def test_unconverged_run_exits_one(tmp_path):
    f = tmp_path / "bad.yaml"
    save_problem(infeasible_problem(), f)
    assert main(["run", "--suite", "custom", "--problem-file", str(f)]) == 1


def test_plot_writes_figures(tmp_path, capsys):
    out = tmp_path / "rep.csv"
    code = main(["run", "--suite", "table2", "--out", str(out), "--plot"])
    assert code == 0
    times = tmp_path / "rep_times.png"
    residuals = tmp_path / "rep_residuals.png"
    assert times.is_file() and times.stat().st_size > 0
    assert residuals.is_file() and residuals.stat().st_size > 0
    err = capsys.readouterr().err
    assert f"wrote {times}" in err and f"wrote {residuals}" in err
