import io
import json
import os

import numpy as np
import pytest

from kronsketch import cli, sketching
from kronsketch.cli import FIELDS, TIMING_FIELDS, main, read_mm


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, out, err)
    return code, out.getvalue(), err.getvalue()


def test_gen_writes_files_with_exact_dims(tmp_path):
    code, out, _ = run(["gen", "300", "15", "300", "15", "--seed", "7", "--out-dir", str(tmp_path)])
    assert code == 0
    paths = out.split()
    assert [os.path.basename(p) for p in paths] == ["A1.mtx", "A2.mtx", "b.mtx"]
    assert read_mm(paths[0]).shape == (300, 15)
    assert read_mm(paths[1]).shape == (300, 15)
    assert read_mm(paths[2]).shape == (90000, 1)


def test_gen_is_bit_identical(tmp_path):
    for sub in ("a", "b"):
        assert run(["gen", "5", "2", "4", "3", "--seed", "3", "--out-dir", str(tmp_path / sub)])[0] == 0
    for name in ("A1.mtx", "A2.mtx", "b.mtx"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_small_response_length(tmp_path):
    run(["gen", "2", "1", "2", "1", "--out-dir", str(tmp_path)])
    assert read_mm(tmp_path / "b.mtx").size == 4


def test_gen_round_trips_values(tmp_path):
    run(["gen", "4", "2", "3", "2", "--seed", "9", "--out-dir", str(tmp_path)])
    factors, b = cli.generate_instance([4, 2, 3, 2], 9)
    np.testing.assert_array_equal(read_mm(tmp_path / "A1.mtx"), factors[0])
    np.testing.assert_array_equal(read_mm(tmp_path / "b.mtx").ravel(), b)


def test_csv_header_and_one_row_per_trial():
    code, out, err = run(["lp", "--gen", "20", "2", "20", "2", "--trials", "3", "-m", "200"])
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == ",".join(FIELDS)
    assert len(lines) == 4
    assert err.startswith("# lp: 3 trials")


def test_no_oracle_leaves_r_e_empty():
    code, out, _ = run(["l2", "--gen", "20", "2", "20", "2", "--no-oracle", "-m", "100"])
    assert code == 0
    row = out.strip().splitlines()[1].split(",")
    assert row[FIELDS.index("r_e")] == "" and row[FIELDS.index("oracle_objective")] == ""


def test_timings_columns_opt_in():
    _, out, _ = run(["l2", "--gen", "20", "2", "20", "2", "--timings", "-m", "100"])
    header, row = out.strip().splitlines()
    assert header.split(",") == FIELDS + TIMING_FIELDS
    assert float(row.split(",")[-1]) > 0


@pytest.mark.parametrize("argv", [
    ["lp", "--gen", "12", "2", "12", "2", "--p", "1.5", "--trials", "2", "--seed", "4"],
    ["l2", "--gen", "30", "2", "30", "2", "-m", "60", "--trials", "2", "--seed", "5"],
    ["allpairs", "--gen", "30", "2", "--trials", "2", "--seed", "6"],
    ["allpairs", "--gen", "30", "2", "--p", "2", "--seed", "6"],
    ["lra", "--gen", "10", "3", "10", "3", "--k", "2", "--trials", "2", "--seed", "7"],
    ["trank", "--gen", "3", "--k", "2", "--seed", "8"],
])
def test_csv_body_deterministic(argv):
    first, second = run(argv), run(argv)
    assert first[0] == 0 and first[1] == second[1]


def test_parallel_trials_match_sequential_body():
    argv = ["lp", "--gen", "12", "2", "12", "2", "--trials", "3", "--seed", "2"]
    seq = run(argv)
    par = run(argv + ["--parallel-trials"])
    assert seq[1] == par[1]
    assert "timings unreliable" in par[2]


def test_out_file_and_json(tmp_path):
    target = tmp_path / "res.csv"
    code, out, err = run(["l2", "--gen", "10", "2", "10", "2", "-m", "40", "--out", str(target), "--json"])
    assert code == 0 and out == ""
    assert target.read_text().splitlines()[0] == ",".join(FIELDS)
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload[0]["algorithm"] == "l2"


def test_reads_matrix_market_inputs(tmp_path):
    run(["gen", "10", "2", "8", "2", "--seed", "1", "--out-dir", str(tmp_path)])
    code, out, _ = run(["lp", "--factors", str(tmp_path / "A1.mtx"), str(tmp_path / "A2.mtx"),
                        "--b", str(tmp_path / "b.mtx")])
    assert code == 0 and len(out.strip().splitlines()) == 2


def test_allpairs_reads_csv(tmp_path):
    rng = np.random.default_rng(0)
    table = np.column_stack([rng.standard_normal((25, 2)), rng.standard_normal(25)])
    np.savetxt(tmp_path / "obs.csv", table, delimiter=",")
    code, out, _ = run(["allpairs", "--data", str(tmp_path / "obs.csv")])
    assert code == 0 and float(out.splitlines()[1].split(",")[FIELDS.index("r_e")]) >= 0


@pytest.mark.parametrize("argv", [
    ["lp", "--gen", "5", "1", "5", "1", "--p", "3"],
    ["lp", "--gen", "5", "1", "5", "1", "--p", "2"],
    ["l2", "--gen", "5", "1", "5", "1", "--p", "1"],
    ["lp", "--gen", "5", "1", "5", "1", "--eps", "0.7"],
    ["lp", "--gen", "5", "1", "5", "1", "--trials", "0"],
    ["lp", "--gen", "5", "1", "5"],
    ["lp"],
    ["trank", "--gen", "3", "3"],
    ["nonsense"],
])
def test_invalid_arguments_exit_2(argv):
    assert run(argv)[0] == 2


def test_oracle_budget_exit_3():
    code, _, err = run(["l2", "--gen", "40", "2", "40", "2", "--oracle-budget", "100", "-m", "50"])
    assert code == 3 and "budget" in err


def test_invariant_failure_exit_4(monkeypatch):
    original = cli.runner_l2

    def broken(args):
        oracle, trial, p, m = original(args)
        return oracle, lambda seed: (float("nan"), 1, 0.0), p, m

    monkeypatch.setitem(cli.RUNNERS, "l2", broken)
    code, _, err = run(["l2", "--gen", "10", "1", "10", "1", "-m", "20"])
    assert code == 4 and "invariant" in err


def test_selftest_clean_and_json():
    code, out, _ = run(["selftest"])
    assert code == 0 and all(line.startswith("PASS") for line in out.strip().splitlines())
    code, out, _ = run(["selftest", "--json"])
    summary = json.loads(out)
    assert code == 0 and summary["passed"] and len(summary["checks"]) >= 10


def test_selftest_names_corrupted_theta_table(monkeypatch):
    bad = sketching.THETA_TABLE.copy()
    bad[30:60] *= 1.05
    monkeypatch.setattr(sketching, "THETA_TABLE", bad)
    code, out, _ = run(["selftest"])
    assert code == 4
    assert "FAIL theta_table_matches_quadrature" in out


def test_record_metrics():
    rec = cli.BenchRecord(0, "lp", 1.0, 10, 0, 5, 110.0, 100.0, 0.2, 0.8)
    assert rec.r_e == pytest.approx(10.0) and rec.r_t == pytest.approx(0.25)
    assert cli.BenchRecord(0, "lp", 1.0, 10, 0, 5, 0.0, 0.0).r_e == 0.0
