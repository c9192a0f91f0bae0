import numpy as np
import pytest

from tlvi.cli import main
from tlvi.data import write_csv
from tlvi.sim import DgpSpec, generate


@pytest.fixture(scope="module")
def csv_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cli") / "data.csv"
    write_csv(generate(DgpSpec(n=300, rho=0.5, seed=1)), p)
    return p


def _report(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


def test_estimate_tmle(csv_path, tmp_path, capsys):
    out, trace = tmp_path / "r.csv", tmp_path / "t.csv"
    code = main(["estimate", "--data", str(csv_path), "--interest-col", "x", "--m", "64",
                 "--output", str(out), "--trace-output", str(trace)])
    rep = _report(capsys.readouterr().out)
    assert code == 0
    assert np.isfinite(float(rep["se"])) and int(rep["k_n"]) >= 0 and rep["converged"] == "true"
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# tlvi") and "seed=0" in lines[0]
    assert lines[1] == "estimand,estimator,point,se,ci_lo,ci_hi,alpha,n_inf,k_n,converged,seed"
    assert trace.read_text().splitlines()[1] == "iter,epsilon,mean_eif,loglik,psi_hat"


@pytest.mark.parametrize("estimator", ["plugin", "onestep"])
@pytest.mark.parametrize("estimand", ["condperm", "loco", "margperm"])
def test_estimate_other_estimators(csv_path, capsys, estimator, estimand):
    code = main(["estimate", "--data", str(csv_path), "--interest-col", "x", "--m", "32",
                 "--estimator", estimator, "--estimand", estimand])
    assert code == 0
    assert _report(capsys.readouterr().out)["estimand"] == estimand


def test_estimate_crossfit(csv_path, capsys):
    assert main(["estimate", "--data", str(csv_path), "--interest-col", "x", "--m", "32",
                 "--crossfit", "--K", "4"]) == 0
    assert _report(capsys.readouterr().out)["fold_scheme"] == "kfold4"


def test_missing_interest_col_is_usage_error(csv_path, capsys):
    assert main(["estimate", "--data", str(csv_path)]) == 1
    assert "--interest-col" in capsys.readouterr().err


def test_bad_alpha(csv_path, capsys):
    assert main(["estimate", "--data", str(csv_path), "--interest-col", "x", "--alpha", "1.5"]) == 1
    assert "alpha" in capsys.readouterr().err


def test_unknown_column_and_missing_file(csv_path, tmp_path, capsys):
    assert main(["estimate", "--data", str(csv_path), "--interest-col", "w"]) == 1
    assert "data" in capsys.readouterr().err
    assert main(["estimate", "--data", str(tmp_path / "none.csv"), "--interest-col", "x"]) == 1


def test_non_convergence_exit_code(csv_path, capsys):
    code = main(["estimate", "--data", str(csv_path), "--interest-col", "x", "--m", "32",
                 "--max-iter", "1", "--tol-kind", "strict"])
    captured = capsys.readouterr()
    assert code == 2
    assert _report(captured.out)["converged"] == "false"
    assert "warning" in captured.err


def test_env_override(csv_path, capsys, monkeypatch):
    monkeypatch.setenv("TLVI_INTEREST_COL", "x")
    monkeypatch.setenv("TLVI_ALPHA", "0.1")
    monkeypatch.setenv("TLVI_M", "32")
    assert main(["estimate", "--data", str(csv_path)]) == 0
    assert _report(capsys.readouterr().out)["alpha"] == "0.1"


def test_check_eif_default(capsys):
    assert main(["check-eif"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()[1:]
    assert len(rows) == 4 and all(r.endswith("pass") for r in rows)


def test_check_eif_subset_and_bad_trials(capsys):
    assert main(["check-eif", "--kinds", "refloss", "--trials", "5"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 2
    assert main(["check-eif", "--trials", "0"]) == 1


def test_simulate_rows_and_determinism(tmp_path, capsys):
    args = ["simulate", "--reps", "2", "--rho", "0.1", "--n", "200", "--m", "16", "--plot"]
    assert main(args + ["--output-dir", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(args + ["--output-dir", str(tmp_path / "b"), "--threads", "2"]) == 0
    rows = (tmp_path / "a" / "rows.csv").read_text()
    assert rows.startswith("# tlvi")
    assert len(rows.strip().splitlines()) == 2 + 2 * 2
    for name in ("rows.csv", "aggregates.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "b" / "coverage_bias.svg").exists()


def test_simulate_bad_reps(capsys):
    assert main(["simulate", "--reps", "0"]) == 1
