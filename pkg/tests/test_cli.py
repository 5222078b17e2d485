"""End-to-end tests of the command-line surface and its file formats."""

import csv
import json
import math

import numpy as np
import pytest

from pwls import cli
from pwls.numerics import Dataset, ols_solve


def write_csv(path, header, rows, delimiter=","):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(header)
        writer.writerows(rows)
    return str(path)


@pytest.fixture
def slope_csv(tmp_path):
    # four points on the line y = x plus one gross outlier
    rows = [[x, y] for x, y in zip([1, 2, 3, 4, 5], [1, 2, 3, 4, 50])]
    return write_csv(tmp_path / "slope.csv", ["x", "y"], rows)


@pytest.fixture
def planted_csv(tmp_path):
    # noisy line with one planted shift on the first observation
    rng = np.random.default_rng(5)
    x = rng.standard_normal(20)
    y = 1.0 + 2.0 * x + 0.3 * rng.standard_normal(20)
    y[0] += 12.0
    rows = [[a, b] for a, b in zip(x, y)]
    return write_csv(tmp_path / "planted.csv", ["x", "y"], rows)


@pytest.fixture
def m_equiv_csv(tmp_path):
    rng = np.random.default_rng(5)
    x = rng.standard_normal(60)
    y = 1.0 + 2.0 * x + 0.5 * rng.standard_normal(60)
    y[:4] += 10.0
    rows = [[a, b] for a, b in zip(x, y)]
    return write_csv(tmp_path / "shifted.csv", ["x", "y"], rows)


class TestLoadCsv:
    def test_intercept_prepended(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["x", "y"],
                         [[1.0, 2.0], [2.0, 3.0], [3.0, 5.0]])
        data, obs = cli.load_csv(path, "y", ["x"])
        assert data.X.shape == (3, 2)
        assert np.array_equal(data.X[:, 0], np.ones(3))
        assert np.array_equal(data.X[:, 1], [1.0, 2.0, 3.0])
        assert np.array_equal(data.y, [2.0, 3.0, 5.0])
        assert obs.tolist() == [1, 2, 3]

    def test_tab_delimiter(self, tmp_path):
        path = write_csv(tmp_path / "d.tsv", ["x", "y"],
                         [[1.0, 2.0], [2.0, 3.0], [3.0, 5.0]], delimiter="\t")
        data, _ = cli.load_csv(path, "y", ["x"], delimiter="\t")
        assert data.X.shape == (3, 2)

    def test_blank_lines_are_skipped(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y\n1,2\n\n2,3\n3,5\n\n")
        data, obs = cli.load_csv(str(path), "y", ["x"])
        assert data.n == 3

    def test_duplicate_selection(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["x", "y"], [[1, 2]])
        with pytest.raises(Exception, match="column selected twice"):
            cli.load_csv(path, "y", ["y"])

    def test_unknown_column(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["x", "y"], [[1, 2]])
        with pytest.raises(Exception, match="unknown column: z"):
            cli.load_csv(path, "y", ["z"])

    def test_blank_field_names_the_row(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y\n1,2\n2,\n3,5\n4,6\n")
        with pytest.raises(Exception, match="row 2"):
            cli.load_csv(str(path), "y", ["x"])

    def test_non_numeric_names_row_and_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y\n1,2\n2,3\noops,5\n4,6\n")
        with pytest.raises(Exception, match="row 3.*column x"):
            cli.load_csv(str(path), "y", ["x"])

    def test_too_few_rows(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["x", "y"], [[1, 2], [2, 3]])
        with pytest.raises(Exception, match="fewer than p\\+1"):
            cli.load_csv(path, "y", ["x"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(Exception, match="not found"):
            cli.load_csv(str(tmp_path / "nope.csv"), "y", ["x"])


class TestFit:
    def run_fit(self, csv_path, out, extra):
        argv = ["fit", "--input", csv_path, "--response", "y",
                "--predictors", "x", "--out", str(out)] + extra
        return cli.main(argv)

    def test_json_round_trip(self, slope_csv, tmp_path, capsys):
        rc = self.run_fit(slope_csv, tmp_path / "o",
                          ["--lambda", "1", "--no-intercept", "--method", "apwls"])
        assert rc == 0
        dest = capsys.readouterr().out.strip()
        assert dest.endswith("fit.json")
        with open(dest) as fh:
            rep = json.load(fh)
        w = np.array(rep["w"])
        r = np.array(rep["residuals"])
        varpi = np.array(rep["varpi"])
        recomputed = float(np.sum((w * r) ** 2)
                           + rep["lambda"] * np.sum(varpi * np.abs(np.log(w))))
        assert recomputed == pytest.approx(rep["objective"], rel=1e-10)
        assert rep["flagged"] == [5]
        assert rep["converged"] is True
        beta = np.array(rep["beta"])
        X = np.arange(1.0, 6.0).reshape(-1, 1)
        y = np.array([1.0, 2, 3, 4, 50])
        assert np.allclose(r, y - X @ beta, atol=1e-12)

    def test_unit_scale_method(self, slope_csv, tmp_path, capsys):
        rc = self.run_fit(slope_csv, tmp_path / "o",
                          ["--lambda", "1", "--no-intercept", "--method", "pwls"])
        assert rc == 0
        with open(capsys.readouterr().out.strip()) as fh:
            rep = json.load(fh)
        assert rep["varpi"] == [1.0] * 5
        assert rep["flagged"] == [5]

    def test_large_lambda_reports_least_squares(self, planted_csv, tmp_path, capsys):
        rc = self.run_fit(planted_csv, tmp_path / "o", ["--lambda", "1e6"])
        assert rc == 0
        with open(capsys.readouterr().out.strip()) as fh:
            rep = json.load(fh)
        assert rep["flagged"] == []
        data, _ = cli.load_csv(planted_csv, "y", ["x"])
        assert np.allclose(rep["beta"], ols_solve(data), atol=1e-8)

    def test_csv_format(self, slope_csv, tmp_path, capsys):
        rc = self.run_fit(slope_csv, tmp_path / "o",
                          ["--lambda", "1", "--no-intercept", "--format", "csv"])
        assert rc == 0
        dest = capsys.readouterr().out.strip()
        assert dest.endswith("fit.csv")
        with open(dest, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["key", "index", "value"]
        table = {}
        for key, idx, val in rows[1:]:
            table.setdefault(key, []).append((idx, val))
        assert [i for i, _ in table["beta"]] == ["1"]
        assert len(table["w"]) == 5
        assert [v for _, v in table["flagged"]] == ["5"]

    def test_hpwls_reports_variance_model(self, tmp_path, capsys):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(40)
        scale = 0.5 + np.abs(x)
        y = 1.0 + 2.0 * x + scale * 0.3 * rng.standard_normal(40)
        path = write_csv(tmp_path / "h.csv", ["x", "y"],
                         [[a, b] for a, b in zip(x, y)])
        rc = self.run_fit(path, tmp_path / "o",
                          ["--lambda", "5", "--method", "hpwls",
                           "--g", "absolute", "--z-cols", "2"])
        assert rc == 0
        with open(capsys.readouterr().out.strip()) as fh:
            rep = json.load(fh)
        assert rep["variance"]["g"] == "absolute"
        assert rep["variance"]["z_cols"] == [2]
        assert len(rep["variance"]["theta"]) == 2

    def test_lambda_is_required(self, slope_csv, tmp_path, capsys):
        argv = ["fit", "--input", slope_csv, "--response", "y",
                "--predictors", "x", "--out", str(tmp_path)]
        assert cli.main(argv) == 2
        capsys.readouterr()


class TestPath:
    def read_groups(self, dest):
        """path.csv rows grouped by lambda in file order."""
        with open(dest, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["lambda", "obs_id", "weight"]
        groups = []
        for lam, obs_id, w in rows[1:]:
            if not groups or groups[-1][0] != lam:
                groups.append((lam, []))
            groups[-1][1].append((int(obs_id), float(w)))
        return groups

    def test_planted_row_drops_first(self, slope_csv, tmp_path, capsys):
        argv = ["path", "--input", slope_csv, "--response", "y",
                "--predictors", "x", "--no-intercept",
                "--out", str(tmp_path / "o")]
        assert cli.main(argv) == 0
        dest = capsys.readouterr().out.strip()
        assert dest.endswith("path.csv")
        groups = self.read_groups(dest)
        lambdas = [float(g[0]) for g in groups]
        assert all(a > b for a, b in zip(lambdas, lambdas[1:]))
        dropped = next(
            [i for i, w in entries if w < 1.0]
            for _, entries in groups
            if any(w < 1.0 for _, w in entries))
        assert dropped == [5]

    def test_row_count(self, planted_csv, tmp_path, capsys):
        argv = ["path", "--input", planted_csv, "--response", "y",
                "--predictors", "x", "--out", str(tmp_path / "o")]
        assert cli.main(argv) == 0
        groups = self.read_groups(capsys.readouterr().out.strip())
        assert len(groups) == 100
        assert all(len(entries) == 20 for _, entries in groups)


class TestTune:
    def test_bic_flags_planted_row(self, planted_csv, tmp_path, capsys):
        argv = ["tune", "--input", planted_csv, "--response", "y",
                "--predictors", "x", "--tuner", "bic",
                "--out", str(tmp_path / "o")]
        assert cli.main(argv) == 0
        dest = capsys.readouterr().out.strip()
        with open(dest) as fh:
            rep = json.load(fh)
        assert rep["tuner"] == "bic"
        assert rep["lambda_hat"] > 0
        assert 1 in rep["flagged"]
        assert len(rep["bic"]) == len(rep["lambdas"])
        assert rep["bic"][rep["argmin"]] == min(rep["bic"])

    def test_stability_outputs_reproduce(self, planted_csv, tmp_path, capsys):
        outs = []
        for name in ("a", "b"):
            argv = ["tune", "--input", planted_csv, "--response", "y",
                    "--predictors", "x", "--tuner", "stability",
                    "--B", "5", "--seed", "3", "--out", str(tmp_path / name)]
            assert cli.main(argv) == 0
            capsys.readouterr()
            outs.append(tmp_path / name)
        for fname in ("tune.json", "stability.csv", "probs.csv"):
            a = (outs[0] / fname).read_bytes()
            b = (outs[1] / fname).read_bytes()
            assert a == b, fname

    def test_stability_file_shapes(self, planted_csv, tmp_path, capsys):
        argv = ["tune", "--input", planted_csv, "--response", "y",
                "--predictors", "x", "--tuner", "stability",
                "--B", "4", "--seed", "1", "--out", str(tmp_path / "o")]
        assert cli.main(argv) == 0
        capsys.readouterr()
        with open(tmp_path / "o" / "stability.csv", newline="") as fh:
            srows = list(csv.reader(fh))
        assert srows[0] == ["lambda", "S"]
        assert len(srows) == 101
        assert all(-1.0 <= float(s) <= 1.0 for _, s in srows[1:])
        with open(tmp_path / "o" / "probs.csv", newline="") as fh:
            prows = list(csv.reader(fh))
        assert prows[0] == ["lambda", "obs_id", "prob"]
        assert len(prows) == 1 + 100 * 20
        probs = [float(p) for _, _, p in prows[1:]]
        assert min(probs) >= 0.0 and max(probs) <= 1.0
        # counts over 2B fits: every probability is a multiple of 1/8
        assert all(abs(p * 8 - round(p * 8)) < 1e-9 for p in probs)


class TestCheckTheorem1:
    def test_agreement_exit_zero(self, m_equiv_csv, capsys):
        argv = ["check-theorem1", "--input", m_equiv_csv, "--response", "y",
                "--predictors", "x", "--lambda", "8"]
        assert cli.main(argv) == 0
        rep = json.loads(capsys.readouterr().out.strip())
        assert rep["pass"] is True
        assert rep["beta_gap"] < 1e-6
        assert rep["sigma_gap"] < 1e-6

    def test_infeasible_lambda_exits_two(self, m_equiv_csv, capsys):
        argv = ["check-theorem1", "--input", m_equiv_csv, "--response", "y",
                "--predictors", "x", "--lambda", "1"]
        assert cli.main(argv) == 2
        err = capsys.readouterr().err
        assert err.startswith("error: scale collapses")
        assert err.count("\n") == 1


class TestBench:
    def test_single_job_matches_direct_run(self, tmp_path, capsys):
        from pwls import simbench
        job = {"example": "homo", "method": "pwls", "n": 60, "p": 2,
               "k": 3, "r": 6.0, "reps": 2, "base_seed": 0}
        cfg_path = tmp_path / "job.json"
        cfg_path.write_text(json.dumps(job))
        argv = ["bench", "--config", str(cfg_path), "--out", str(tmp_path / "o")]
        assert cli.main(argv) == 0
        dest = capsys.readouterr().out.strip()
        with open(dest) as fh:
            lines = fh.read().splitlines()
        assert lines[0] == "method,k,p,scenario,JD,M,S,reps,failures"
        cfg = simbench.HomoSimConfig(n=60, p=2, k=3, r=6.0)
        rep = simbench.run_benchmark("pwls", cfg, reps=2, base_seed=0)
        assert lines[1] == simbench.format_row("pwls", cfg, rep)

    def test_job_list_with_threads(self, tmp_path, capsys):
        jobs = [
            {"example": "homo", "method": "pwls", "n": 60, "p": 2,
             "k": 3, "r": 6.0, "reps": 2},
            {"example": "hetero", "method": "hpwls", "n": 60, "p": 2,
             "k": 3, "r": 8.0, "case": 1, "reps": 2},
        ]
        cfg_path = tmp_path / "jobs.json"
        cfg_path.write_text(json.dumps(jobs))
        argv = ["bench", "--config", str(cfg_path),
                "--out", str(tmp_path / "o"), "--threads", "2"]
        assert cli.main(argv) == 0
        capsys.readouterr()
        lines = (tmp_path / "o" / "bench.csv").read_text().splitlines()
        assert len(lines) == 3
        assert lines[1].startswith("pwls,3,2,homo-r6-noL,")
        assert lines[2].startswith("hpwls,3,2,hetero-case1-r8,")

    def test_missing_config_exits_two(self, tmp_path, capsys):
        argv = ["bench", "--config", str(tmp_path / "nope.json"),
                "--out", str(tmp_path)]
        assert cli.main(argv) == 2
        assert capsys.readouterr().err.startswith("error:")


class TestErrorSurface:
    def test_unknown_column_is_one_line(self, slope_csv, tmp_path, capsys):
        argv = ["fit", "--input", slope_csv, "--response", "nope",
                "--predictors", "x", "--lambda", "1", "--out", str(tmp_path)]
        assert cli.main(argv) == 2
        err = capsys.readouterr().err
        assert err == "error: unknown column: nope\n"

    def test_log_env_smoke(self, slope_csv, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("PWLS_LOG", "debug")
        argv = ["fit", "--input", slope_csv, "--response", "y",
                "--predictors", "x", "--lambda", "1", "--no-intercept",
                "--out", str(tmp_path / "o")]
        assert cli.main(argv) == 0
        capsys.readouterr()
