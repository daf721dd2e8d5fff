import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import make_panel
from panelgap.cli import EXIT_DATA, EXIT_NOT_CONVERGED, EXIT_OK, main
from panelgap.panel import load_panel


def _json(path):
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--seed", "7", "--out-dir", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def null_sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("null")
    assert main(["simulate", "--seed", "3", "--effect", "zero", "--out-dir", str(out)]) == EXIT_OK
    return out


class TestSimulate:
    def test_default_dimensions(self, sim):
        panel = load_panel(sim / "panel.csv")
        assert panel.shape == (12, 212)
        truth = _json(sim / "truth.json")
        assert truth["t0"] == "2023-10" and len(truth["effect"]) == 23 and truth["seed"] == 7

    def test_same_seed_same_bytes(self, sim, tmp_path):
        assert main(["simulate", "--seed", "7", "--out-dir", str(tmp_path)]) == EXIT_OK
        for name in ("panel.csv", "truth.json"):
            assert (tmp_path / name).read_bytes() == (sim / name).read_bytes()

    def test_zero_effect(self, null_sim):
        assert _json(null_sim / "truth.json")["effect"] == [0.0] * 23

    def test_timestamps_in_sidecar_only(self, sim):
        meta = _json(sim / "simulate.meta.json")
        assert "finished_utc" in meta
        assert "utc" not in (sim / "truth.json").read_text()


class TestEstimate:
    def test_reports(self, sim, tmp_path):
        code = main(["estimate", "--input", str(sim / "panel.csv"), "--lambda-scale", "max-singular", "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        lines = (tmp_path / "effects.csv").read_text().splitlines()
        assert lines[0] == "period,tau" and len(lines) == 24
        eff = _json(tmp_path / "effects.json")
        assert abs(eff["effects"]["ate"] - 0.7) <= 0.15
        assert eff["horizons"]["windows"] == {"impact": [0, 2], "adjustment": [3, 11], "persistence": [12, 22]}
        assert eff["config"]["treated"] == "Israel" and eff["config"]["t0"] == "2023-10"
        assert eff["seed"] == 0 and "pre_fit" in eff
        fit = _json(tmp_path / "fit.json")
        assert fit["fit"]["converged"] is True
        cvr = _json(tmp_path / "cv.json")
        assert cvr["cv"]["selected_lambda"] in cvr["cv"]["plan"]["lambda_grid"]

    @pytest.mark.parametrize("lam", ["0.0001", "0.001"])
    def test_fixed_lambda(self, sim, tmp_path, lam):
        assert main(["estimate", "--input", str(sim / "panel.csv"), "--lambda", lam, "--out-dir", str(tmp_path)]) == EXIT_OK
        assert not (tmp_path / "cv.json").exists()
        assert _json(tmp_path / "fit.json")["config"]["lambda"] == lam

    def test_missing_treated_unit(self, sim, tmp_path, capsys):
        code = main(["estimate", "--input", str(sim / "panel.csv"), "--treated", "Atlantis", "--out-dir", str(tmp_path)])
        assert code == EXIT_DATA
        assert "Atlantis" in capsys.readouterr().err

    def test_unknown_donor(self, sim, tmp_path, capsys):
        code = main(["estimate", "--input", str(sim / "panel.csv"), "--donors", "Canada,Narnia", "--out-dir", str(tmp_path)])
        assert code == EXIT_DATA and "Narnia" in capsys.readouterr().err

    def test_bad_csv(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("unit,period,value\nIsrael,2020-1x,1\n")
        assert main(["estimate", "--input", str(bad), "--out-dir", str(tmp_path)]) == EXIT_DATA
        assert "row 2" in capsys.readouterr().err

    def test_non_convergence_still_writes(self, sim, tmp_path):
        code = main(
            ["estimate", "--input", str(sim / "panel.csv"), "--lambda", "0.0001", "--max-iters", "2", "--out-dir", str(tmp_path)]
        )
        assert code == EXIT_NOT_CONVERGED
        assert _json(tmp_path / "fit.json")["fit"]["converged"] is False
        assert (tmp_path / "effects.csv").exists()

    def test_donor_subset_and_windows(self, sim, tmp_path):
        code = main(
            [
                "estimate", "--input", str(sim / "panel.csv"), "--donors", "Canada,Japan,Norway,Sweden",
                "--lambda", "0.01", "--windows", "6:6:*", "--out-dir", str(tmp_path),
            ]
        )
        assert code == EXIT_OK
        fit = _json(tmp_path / "fit.json")
        assert fit["units"] == ["Israel", "Canada", "Japan", "Norway", "Sweden"]
        assert _json(tmp_path / "effects.json")["horizons"]["windows"]["persistence"] == [12, 22]

    def test_cv_command(self, sim, tmp_path):
        assert main(["cv", "--input", str(sim / "panel.csv"), "--lambda-grid", "0.001:0.1:3", "--out-dir", str(tmp_path)]) == EXIT_OK
        rep = _json(tmp_path / "cv.json")["cv"]
        assert len(rep["mean_mse"]) == 3 and not (tmp_path / "fit.json").exists()


class TestPlacebo:
    def test_space_effect_fixture_minimum_p(self, sim, tmp_path):
        code = main(["placebo", "--input", str(sim / "panel.csv"), "--lambda-scale", "max-singular", "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        rep = _json(tmp_path / "placebo.json")
        assert rep["placebo"]["n_runs"] == 11 and rep["placebo"]["p_value"] == pytest.approx(1 / 12)
        assert [r["n_boot"] for r in rep["resampling"]] == [100, 1000, 10000]
        assert (tmp_path / "placebo_paths.csv").read_text().startswith("run,step,tau\n")

    def test_space_null_fixture(self, null_sim, tmp_path):
        main(["placebo", "--input", str(null_sim / "panel.csv"), "--lambda", "0.01", "--out-dir", str(tmp_path)])
        assert _json(tmp_path / "placebo.json")["placebo"]["p_value"] > 0.1

    def test_time_with_dates(self, sim, tmp_path):
        code = main(
            ["placebo", "--kind", "time", "--input", str(sim / "panel.csv"), "--lambda", "0.001",
             "--pseudo-dates", "2015-01,2018-06", "--out-dir", str(tmp_path)]
        )
        assert code == EXIT_OK
        rep = _json(tmp_path / "placebo.json")["placebo"]
        assert [r["label"] for r in rep["runs"]] == ["2015-01", "2018-06"]

    def test_time_rejects_date_after_t0(self, sim, tmp_path, capsys):
        code = main(
            ["placebo", "--kind", "time", "--input", str(sim / "panel.csv"), "--lambda", "0.001",
             "--pseudo-dates", "2024-02", "--out-dir", str(tmp_path)]
        )
        assert code == EXIT_DATA
        assert "2024-02" in capsys.readouterr().err

    def test_jobs_do_not_change_bytes(self, sim, tmp_path):
        args = ["placebo", "--input", str(sim / "panel.csv"), "--lambda", "0.001", "--seed", "5"]
        main(args + ["--out-dir", str(tmp_path / "a")])
        main(args + ["--jobs", "2", "--out-dir", str(tmp_path / "b")])
        for name in ("placebo.json", "placebo_paths.csv"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            # Only the echoed config may differ between the two runs.
            a = a.replace(b'"jobs": 1', b'"jobs": 2').replace(str(tmp_path / "a").encode(), str(tmp_path / "b").encode())
            assert a == b


class TestSdid:
    def test_reports_and_zeta_echo(self, sim, tmp_path):
        code = main(["sdid", "--input", str(sim / "panel.csv"), "--zeta", "0.5", "--n-placebo", "20", "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        rep = _json(tmp_path / "sdid.json")
        assert rep["config"]["zeta"] == 0.5 and rep["sdid"]["weights"]["zeta"] == 0.5 and rep["zeta_mode"] == "fixed"
        assert rep["placebo"]["n_runs"] == 20
        lines = (tmp_path / "sdid_weights.csv").read_text().splitlines()
        assert lines[0] == "donor,weight" and len(lines) == 12

    def test_parallel_trends_fixture(self, tmp_path):
        rng = np.random.default_rng(0)
        a, g = rng.normal(size=5), rng.normal(size=40)
        y = a[:, None] + g[None, :]
        y[0, 30:] += 0.7
        panel = make_panel(y, units=["T", "A", "B", "C", "D"], start="2020-01")
        panel.to_csv(tmp_path / "pt.csv")
        code = main(
            ["sdid", "--input", str(tmp_path / "pt.csv"), "--treated", "T", "--t0", str(panel.periods[30]),
             "--donors", "all", "--out-dir", str(tmp_path)]
        )
        assert code == EXIT_OK
        assert _json(tmp_path / "sdid.json")["sdid"]["tau"] == pytest.approx(0.7, abs=1e-8)


def test_seed_env_fallback(sim, tmp_path, monkeypatch):
    monkeypatch.setenv("PANELGAP_SEED", "42")
    main(["sdid", "--input", str(sim / "panel.csv"), "--n-placebo", "5", "--out-dir", str(tmp_path)])
    assert _json(tmp_path / "sdid.json")["seed"] == 42
    main(["sdid", "--input", str(sim / "panel.csv"), "--n-placebo", "5", "--seed", "1", "--out-dir", str(tmp_path)])
    assert _json(tmp_path / "sdid.json")["seed"] == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "panelgap", "simulate", "--n-periods", "40", "--t0-index", "30", "--out-dir", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    assert load_panel(tmp_path / "panel.csv").shape == (12, 40)


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["estimate"])
    assert exc.value.code == 2
