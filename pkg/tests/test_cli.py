import json
import subprocess
import sys

import pytest

from capstruct.cli import main
from capstruct.simulate import DgpConfig, simulate_panel
from capstruct.study import StudyConfig, run_study

DGP = dict(n_firms=60, n_years=20, recession_years=[1983, 1986, 1987, 1991, 1995, 1996], seed=7)
FACTORS = dict(firm_factors=["pr", "cashta", "as_ratio"], macro_factors=["intr", "infl", "cred"])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    simulate_panel(DgpConfig.from_dict(DGP)).write_csv(out)
    return out


def write_json(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


def data_args(data_dir):
    return ["--panel", str(data_dir / "panel.csv"), "--macro", str(data_dir / "macro.csv")]


class TestExitCodes:
    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--panel", "p.csv"])
        assert exc.value.code == 2

    def test_missing_config(self, tmp_path, capsys):
        assert main(["study", "--config", str(tmp_path / "none.json")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", {"dgp": DGP, "taus": [0.5, 0.2]})
        assert main(["study", "--config", str(cfg)]) == 2
        cfg = write_json(tmp_path / "d.json", {"dgp": DGP, "engine": "ols"})
        assert main(["study", "--config", str(cfg)]) == 2

    def test_bad_dgp_config(self, tmp_path):
        cfg = write_json(tmp_path / "dgp.json", {"speed": 2.0})
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_data_error(self, tmp_path, data_dir, capsys):
        bad = tmp_path / "panel.csv"
        bad.write_text("firm_id,year\nA,2000\n", encoding="utf-8")
        assert main(["ingest", "--panel", str(bad), "--macro", str(data_dir / "macro.csv")]) == 3
        assert "data error" in capsys.readouterr().err

    def test_study_data_error_recorded(self, tmp_path, data_dir):
        cfg = write_json(tmp_path / "s.json", {"panel": "missing.csv", "macro": str(data_dir / "macro.csv")})
        out = tmp_path / "out"
        assert main(["study", "--config", str(cfg), "--out", str(out)]) == 3
        report = json.loads((out / "report.json").read_text())
        assert report["errors"]["ingest"]["kind"] == "data"

    def test_estimation_failure(self, tmp_path, data_dir, capsys):
        macro = (data_dir / "macro.csv").read_text().splitlines()
        # flip every recession year to growth so the state dummy never varies
        lines = [macro[0]] + [",".join([r.split(",")[0], "1.0", *r.split(",")[2:]]) for r in macro[1:]]
        (tmp_path / "macro.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        args = ["fit", "--panel", str(data_dir / "panel.csv"), "--macro", str(tmp_path / "macro.csv"),
                "--engine", "mean"]
        assert main(args) == 4


class TestSubcommands:
    def test_simulate(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "dgp.json", {"n_firms": 5, "n_years": 6})
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
        written = json.loads(capsys.readouterr().out)
        assert set(written) == {"panel", "macro", "truth"}
        assert json.loads((tmp_path / "o" / "truth.json").read_text())["config"]["seed"] == 3

    def test_ingest_and_describe(self, data_dir, capsys):
        assert main(["ingest", *data_args(data_dir)]) == 0
        report = json.loads(capsys.readouterr().out)
        merge = report["diagnostics"]["merge"]
        assert merge["input_rows"] == merge["output_rows"] == 60 * 20
        assert main(["describe", *data_args(data_dir), "--format", "text"]) == 0
        text = capsys.readouterr().out
        assert "Pearson correlations" in text and "Mean values by year" in text

    def test_hausman(self, data_dir, capsys):
        assert main(["hausman", *data_args(data_dir), "--leverage", "ltdr"]) == 0
        h = json.loads(capsys.readouterr().out)["hausman"]["ltdr"]
        assert 0.0 <= h["p_value"] <= 1.0 and h["df"] >= 1

    def test_fit_formats(self, data_dir, tmp_path, capsys):
        args = ["fit", *data_args(data_dir), "--engine", "mean", "--engine", "qr", "--tau", "0.25,0.75",
                "--bootstrap", "3", "--seed", "1"]
        assert main(args) == 0
        adj = json.loads(capsys.readouterr().out)["adjustment"]["tdr"]
        assert [c["label"] for c in adj["cells"]] == ["mean_fe", "panel_qr@0.25", "panel_qr@0.75"]
        assert main(args + ["--format", "csv", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "speeds.csv").exists()

    def test_module_entry_point(self):
        done = subprocess.run([sys.executable, "-m", "capstruct", "--help"], capture_output=True, text=True)
        assert done.returncode == 0 and "simulate" in done.stdout


class TestStudy:
    def test_deterministic_bytes(self, tmp_path, data_dir):
        cfg = write_json(tmp_path / "s.json", {"panel": str(data_dir / "panel.csv"),
                                               "macro": str(data_dir / "macro.csv"),
                                               "taus": [0.25, 0.5], "bootstrap": 4, "seed": 5, **FACTORS})
        for run in ("a", "b"):
            assert main(["study", "--config", str(cfg), "--out", str(tmp_path / run)]) == 0
        assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()

    def test_projection(self):
        cfg = StudyConfig(dgp=DGP, leverage_forms=("ltdr",), engines=("panel_qr",), taus=(0.5,), bootstrap=3,
                          **FACTORS)
        report = run_study(cfg)
        assert report.ok
        assert list(report.adjustment) == ["ltdr"]
        cells = report.adjustment["ltdr"]["cells"]
        assert len(cells) == 1 and cells[0]["label"] == "panel_qr@0.5"

    def test_slowdown_pattern(self):
        dgp = dict(n_firms=300, n_years=30, speed=0.4, bad_speed_shift=-0.2, sigma_alpha=0.02, seed=2,
                   recession_years=[1984, 1985, 1990, 1991, 1997, 2001, 2002])
        cfg = StudyConfig(dgp=dgp, leverage_forms=("ltdr",), engines=("mean_fe",), **FACTORS)
        report = run_study(cfg)
        cell = report.adjustment["ltdr"]["cells"][0]
        assert cell["speeds"]["speed_bad"] < cell["speeds"]["speed_good"]
        assert cell["tests"]["delta_c"]["p_value"] < 0.05
        assert report.metadata["dgp_truth"] == {"speed_good": 0.4, "speed_bad": pytest.approx(0.2)}

    def test_config_paths_relative_to_file(self, tmp_path, data_dir):
        (tmp_path / "d").mkdir()
        for name in ("panel.csv", "macro.csv"):
            (tmp_path / "d" / name).write_bytes((data_dir / name).read_bytes())
        cfg = write_json(tmp_path / "s.json", {"panel": "d/panel.csv", "macro": "d/macro.csv", "lambda": 0.0,
                                               "engines": ["mean_fe"], "leverage_forms": ["stdr"], **FACTORS})
        assert main(["study", "--config", str(cfg), "--out", str(tmp_path / "o"), "--format", "text"]) == 0
        assert "ERROR" not in (tmp_path / "o" / "report.txt").read_text()
