import csv
import os

import pytest

from timedd.cli import ExperimentConfig, default_N, main, run_experiment


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_default_grid_coupling():
    assert default_N(4.0, 16, "direct") == 64      # tau = h exactly
    assert default_N(4.0, 16, "stationary") == 65  # N-1 = T*M interior levels
    assert default_N(4.0, 16, "gmres") == 65


def test_direct_mode_summary_row(tmp_path):
    cfg = ExperimentConfig(problem="example1", M=16, mode="direct",
                           K=(1,), out_dir=str(tmp_path))
    rows, ok = run_experiment(cfg)
    assert ok and len(rows) == 1
    row = rows[0]
    assert row["iters"] == 1
    assert row["status"] == "converged"
    assert row["N"] == 64
    assert 0 < row["err_y"] < 0.05  # second-order error at h = 1/16
    summary = read_csv(tmp_path / "summary.csv")
    assert summary[0] == ["problem", "variant", "levels", "K", "M", "N",
                          "gamma", "mode", "iters", "status", "wall_seconds",
                          "err_y", "err_p"]
    assert len(summary) == 2


def test_history_csv_contract(tmp_path):
    cfg = ExperimentConfig(problem="example1", M=16, mode="gmres",
                           variant="asn", levels=1, K=(2, 4),
                           rel_tol=1e-8, out_dir=str(tmp_path))
    rows, ok = run_experiment(cfg)
    assert ok
    for K in (2, 4):
        hist = read_csv(tmp_path / f"history_example1_gmres_asn_lv1_K{K}.csv")
        assert hist[0] == ["iter", "abs_residual", "rel_residual"]
        body = hist[1:]
        assert [r[0] for r in body] == [str(i) for i in range(len(body))]
        rel = [float(r[2]) for r in body]
        assert rel[0] == 1.0
        assert rel[-1] < 1e-8
        r0 = float(body[0][1])
        assert float(body[-1][1]) == pytest.approx(rel[-1] * r0)


def test_stationary_mode(tmp_path):
    cfg = ExperimentConfig(problem="example1", M=16, mode="stationary",
                           variant="msn", levels=1, K=(2,),
                           rel_tol=1e-4, out_dir=str(tmp_path))
    rows, ok = run_experiment(cfg)
    assert ok
    assert rows[0]["status"] == "converged"
    assert rows[0]["iters"] >= 1


def test_two_level_stationary_mode(tmp_path):
    cfg = ExperimentConfig(problem="example1", M=16, mode="stationary",
                           variant="aso", levels=2, K=(4,),
                           rel_tol=1e-4, out_dir=str(tmp_path))
    rows, ok = run_experiment(cfg)
    assert ok and rows[0]["status"] == "converged"


def test_max_iters_recorded_and_flagged(tmp_path):
    cfg = ExperimentConfig(problem="example1", M=16, mode="stationary",
                           variant="asn", levels=1, K=(2,),
                           rel_tol=1e-13, max_iters=4, out_dir=str(tmp_path))
    rows, ok = run_experiment(cfg)
    assert not ok
    assert rows[0]["status"] == "max_iters"
    assert rows[0]["iters"] == 4
    summary = read_csv(tmp_path / "summary.csv")
    assert summary[1][9] == "max_iters"


def test_determinism_byte_identical(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        cfg = ExperimentConfig(problem="example1", M=16, mode="gmres",
                               variant="msn", levels=1, K=(2,),
                               seed=42, out_dir=str(out))
        run_experiment(cfg)
    name = "history_example1_gmres_msn_lv1_K2.csv"
    assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    rows_a = read_csv(out_a / "summary.csv")
    rows_b = read_csv(out_b / "summary.csv")
    wall = rows_a[0].index("wall_seconds")
    for ra, rb in zip(rows_a, rows_b):
        assert [v for i, v in enumerate(ra) if i != wall] == \
               [v for i, v in enumerate(rb) if i != wall]


def test_summary_appends(tmp_path):
    for K in ((2,), (4,)):
        cfg = ExperimentConfig(problem="example1", M=16, mode="direct",
                               K=K, out_dir=str(tmp_path))
        run_experiment(cfg)
    summary = read_csv(tmp_path / "summary.csv")
    assert len(summary) == 3  # header + one row per run


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(problem="example9")
    with pytest.raises(ValueError):
        ExperimentConfig(variant="abc")
    with pytest.raises(ValueError):
        ExperimentConfig(mode="foo")
    with pytest.raises(ValueError):
        ExperimentConfig(K=())
    with pytest.raises(ValueError):
        ExperimentConfig(M=-4)


def test_main_exit_codes(tmp_path):
    out = str(tmp_path / "ok")
    code = main(["--problem", "example1", "--M", "16", "--mode", "gmres",
                 "--variant", "asn", "--K", "2", "--out", out])
    assert code == 0
    assert os.path.exists(os.path.join(out, "summary.csv"))
    # indivisible K is a configuration error (N-1 = 64 interior levels)
    code = main(["--problem", "example1", "--M", "16",
                 "--mode", "stationary", "--K", "7",
                 "--out", str(tmp_path / "bad")])
    assert code == 2
    # unconverged runs exit nonzero but still write their rows
    out2 = str(tmp_path / "stall")
    code = main(["--problem", "example1", "--M", "16", "--mode", "stationary",
                 "--variant", "asn", "--K", "2", "--tol", "1e-13",
                 "--max-iters", "3", "--out", out2])
    assert code == 1
    assert os.path.exists(os.path.join(out2, "summary.csv"))


def test_overlap_override(tmp_path):
    cfg = ExperimentConfig(problem="example1", M=16, mode="gmres",
                           variant="mso", levels=1, K=(2,), overlap_steps=2,
                           out_dir=str(tmp_path))
    rows, ok = run_experiment(cfg)
    assert ok and rows[0]["status"] == "converged"
