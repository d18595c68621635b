import csv

import numpy as np
import pytest

from otaccel.aam import StoppingRule
from otaccel.barycenter import BarycenterProblem, run_ibp
from otaccel.cli import (EXIT_CONFIG, EXIT_EXHAUSTED, EXIT_IO, EXIT_OK, ConfigError,
                         RunConfig, bench_csv, bench_stats, main, run_bench)
from otaccel.inputs import grid_cost
from otaccel.oracle import exact_ot_bruteforce


def write_hist(path, values):
    path.write_text(",".join(repr(float(v)) for v in values))
    return str(path)


def write_cost(path, C):
    path.write_text("\n".join(",".join(repr(float(x)) for x in row) for row in C))
    return str(path)


def summary(text):
    out = {}
    for line in text.strip().splitlines():
        key, _, val = line.partition(": ")
        out[key] = val
    return out


def read_trace(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_ot_matches_oracle(tmp_path, capsys):
    C = np.array([[0, 3, 5], [2, 0, 1], [4, 4, 0]], dtype=float)
    r, c = np.array([0.5, 0.3, 0.2]), np.array([0.2, 0.2, 0.6])
    out = tmp_path / "run"
    code = main(["ot", write_hist(tmp_path / "r.csv", r), write_hist(tmp_path / "c.csv", c),
                 "--cost", write_cost(tmp_path / "C.csv", C), "--eps", "0.05",
                 "--out", str(out)])
    assert code == EXIT_OK
    s = summary(capsys.readouterr().out)
    exact = exact_ot_bruteforce(C, r, c).optimal_cost
    assert exact <= float(s["cost"]) <= exact + 0.05
    plan = np.loadtxt(out / "plan.csv", delimiter=",")
    np.testing.assert_allclose(plan.sum(1), r, atol=1e-12)
    np.testing.assert_allclose(plan.sum(0), c, atol=1e-12)
    assert (out / "summary.txt").read_text() == "".join(
        f"{k}: {v}\n" for k, v in s.items())


@pytest.mark.parametrize("method", ["sinkhorn", "aam-sinkhorn", "apdagd-baseline"])
def test_trace_has_row_per_iteration(tmp_path, capsys, method):
    r = write_hist(tmp_path / "r.csv", [1, 2, 3, 4])
    c = write_hist(tmp_path / "c.csv", [4, 1, 1, 4])
    code = main(["ot", r, c, "--method", method, "--gamma", "0.2", "--eps", "1e-4",
                 "--out", str(tmp_path / method)])
    assert code == EXIT_OK
    s = summary(capsys.readouterr().out)
    rows = read_trace(tmp_path / method / "trace.csv")
    assert rows[0] == ["iter", "seconds", "dual", "feas_l1", "gap", "L", "A"]
    # iteration-0 row plus one row per iteration
    assert len(rows) - 1 == int(s["iterations"]) + 1
    assert [int(row[0]) for row in rows[1:]] == list(range(int(s["iterations"]) + 1))
    secs = [float(row[1]) for row in rows[1:]]
    assert secs == sorted(secs)


def test_zero_cost_immediate(tmp_path, capsys):
    r = write_hist(tmp_path / "r.csv", [1, 2, 3])
    c = write_hist(tmp_path / "c.csv", [3, 2, 1])
    code = main(["ot", r, c, "--cost", write_cost(tmp_path / "C.csv", np.zeros((3, 3)))])
    assert code == EXIT_OK
    s = summary(capsys.readouterr().out)
    assert float(s["cost"]) == 0.0 and int(s["iterations"]) <= 1


def test_exit_codes(tmp_path, capsys):
    r = write_hist(tmp_path / "r.csv", [1, 2, 3, 4])
    assert main(["ot", str(tmp_path / "missing.csv"), r]) == EXIT_IO
    assert main(["ot", r, r, "--method", "newton"]) == EXIT_CONFIG
    assert main(["ot", r, r, "--eps", "-1"]) == EXIT_CONFIG
    assert main(["ot", r, r, "--max-iters", "0"]) == EXIT_CONFIG
    assert main(["ot", r, write_hist(tmp_path / "c3.csv", [1, 2, 3])]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG
    bad = tmp_path / "neg.csv"
    bad.write_text("1,-2,3,4")
    assert main(["ot", str(bad), r]) == EXIT_IO
    c = write_hist(tmp_path / "c.csv", [4, 1, 1, 4])
    assert main(["ot", r, c, "--gamma", "0.01", "--eps", "1e-9",
                 "--max-iters", "3"]) == EXIT_EXHAUSTED
    capsys.readouterr()


def test_run_config_validation():
    RunConfig().validate()
    with pytest.raises(ConfigError):
        RunConfig(gamma=-1.0).validate()
    with pytest.raises(ConfigError):
        RunConfig(method="ibp").validate()
    RunConfig(method="ibp").validate(("ibp", "aam-ibp"))


def test_barycenter_identical_measures(tmp_path, capsys):
    p = np.array([1, 2, 3, 4, 3, 2, 1, 1, 3], dtype=float)
    paths = [write_hist(tmp_path / f"p{i}.csv", p) for i in range(3)]
    out = tmp_path / "bc"
    code = main(["barycenter", *paths, "--gamma", "0.1", "--eps", "1e-8",
                 "--method", "ibp", "--out", str(out)])
    assert code == EXIT_OK
    capsys.readouterr()
    q = np.loadtxt(out / "barycenter.csv")
    prob = BarycenterProblem([p / p.sum()] * 3, grid_cost(3), np.full(3, 1 / 3), 0.1)
    _, plans, _ = run_ibp(prob, StoppingRule(max_iters=2))
    np.testing.assert_allclose(q, plans[0].plan.sum(0), atol=1e-12)


def test_barycenter_solvers_agree(tmp_path, capsys):
    rng = np.random.default_rng(7)
    paths = [write_hist(tmp_path / f"p{i}.csv", rng.dirichlet(np.ones(16)))
             for i in range(3)]
    values = {}
    for method, eps in (("ibp", "1e-9"), ("aam-ibp", "1e-6")):
        code = main(["barycenter", *paths, "--gamma", "0.1", "--eps", eps,
                     "--method", method, "--max-iters", "50000"])
        assert code == EXIT_OK
        values[method] = float(summary(capsys.readouterr().out)["dual"])
    assert abs(values["ibp"] - values["aam-ibp"]) < 1e-6


def test_barycenter_weights_renormalized(tmp_path, capsys):
    paths = [write_hist(tmp_path / f"p{i}.csv", v) for i, v in
             enumerate([[1, 2, 3, 4], [4, 3, 2, 1]])]
    with pytest.warns(UserWarning, match="renormalized"):
        code = main(["barycenter", *paths, "--weights", "1,3", "--gamma", "0.2",
                     "--eps", "1e-6"])
    assert code == EXIT_OK
    capsys.readouterr()
    assert main(["barycenter", *paths, "--weights", "1,-3"]) == EXIT_CONFIG
    other = write_hist(tmp_path / "q.csv", [1, 2, 3])
    assert main(["barycenter", paths[0], other]) == EXIT_CONFIG


def test_bench_deterministic_and_empty(tmp_path, capsys):
    cfg = RunConfig(seed=3)
    res1, rows1 = run_bench(cfg, 2, 4, [0.05])
    res2, rows2 = run_bench(cfg, 2, 4, [0.05])
    assert res1 == res2 and bench_csv(rows1) == bench_csv(rows2)
    assert {m for _, m, *_ in res1} == {"sinkhorn", "aam-sinkhorn", "apdagd-baseline"}
    with pytest.raises(ConfigError):
        run_bench(cfg, 0, 4, [0.05])
    assert main(["bench", "--pairs", "0"]) == EXIT_CONFIG
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["bench", "--pairs", "2", "--side", "4", "--targets", "0.05",
                     "--out", str(d)]) == EXIT_OK
    assert (a / "bench.csv").read_bytes() == (b / "bench.csv").read_bytes()
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    capsys.readouterr()


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--n", "4", "--m", "2", "--points", "5"]) == EXIT_OK
    assert summary(capsys.readouterr().out)["status"] == "pass"


def test_bench_accelerated_mean_below_sinkhorn():
    results, _ = run_bench(RunConfig(seed=0), 5, 8, [0.01])
    stats = bench_stats(results)
    assert all(r[3] == "certified" for r in results)
    assert stats[("aam-sinkhorn", 0.01)][0] < stats[("sinkhorn", 0.01)][0]
