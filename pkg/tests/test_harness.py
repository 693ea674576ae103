import json
import math

import numpy as np
import pytest

from fedconformal import harness
from fedconformal.cli import main
from fedconformal.harness import (
    CSV_COLUMNS,
    ConfigError,
    ScenarioConfig,
    cell_seed,
    export,
    run_scenario,
    sweep,
)


def small(**kw):
    base = dict(n_trials=40, n_test=50, K=5, N_d=10, M=10, T=30, seed=3)
    base.update(kw)
    return ScenarioConfig(**base)


def test_centralized_coverage_band():
    res = run_scenario(ScenarioConfig(method="centralized", alpha=0.1, K=20, N_d=20,
                                      n_test=400, n_trials=400, seed=2024))
    se = res.coverage_se
    assert 0.9 - 3 * se <= res.coverage <= 0.9 + 1 / 401 + 3 * se


def test_zero_noise_override_matches_quantized():
    kw = dict(snr_db=math.inf, h_min_sq=1e-12, n_trials=60)
    w = run_scenario(small(method="wfcp", sigma_sq_override=0.0, **kw))
    q = run_scenario(small(method="quantized", **kw))
    np.testing.assert_array_equal(w.coverages, q.coverages)
    np.testing.assert_array_equal(w.inefficiencies, q.inefficiencies)
    assert w.row()["coverage"] == q.row()["coverage"]


def test_byte_identical_exports(tmp_path):
    cfg = small(method="wfcp", snr_db=-5.0)
    a = export([run_scenario(cfg)], tmp_path / "a.csv")
    b = export([run_scenario(cfg)], tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)
    assert header == "method,alpha,M,T,K,snr_db,h_min_sq,coverage,coverage_se,ineff,ineff_norm,ineff_se,trials,flags"


def test_seed_changes_results():
    a = run_scenario(small(method="centralized"))
    b = run_scenario(small(method="centralized", seed=4))
    assert not np.array_equal(a.coverages, b.coverages)


def test_aggregates_are_plain_means():
    res = run_scenario(small(method="dqq", snr_db=10.0, T=60))
    for attr, values in (("coverage", res.coverages), ("ineff", res.inefficiencies)):
        assert abs(getattr(res, attr) - np.mean(values)) <= 1e-12
    assert res.ineff_norm == pytest.approx(res.ineff / 10)
    assert res.coverage_se == pytest.approx(np.std(res.coverages, ddof=1) / math.sqrt(40))
    assert np.all((res.coverages >= 0) & (res.coverages <= 1))
    assert np.all((res.inefficiencies >= 0) & (res.inefficiencies <= 10))


def test_pinned_channel_reuses_gains():
    res = run_scenario(small(method="wfcp", pin_channel=True, h_min_sq=0.5))
    assert len(set(res.diagnostic("K_a"))) == 1
    free = run_scenario(small(method="wfcp", h_min_sq=0.5))
    assert len(set(free.diagnostic("K_a"))) > 1


@pytest.mark.parametrize("method", ["centralized", "quantized", "fedqq_noiseless", "dqq", "wfcp"])
def test_guaranteed_methods_cover(method):
    res = run_scenario(ScenarioConfig(method=method, alpha=0.1, K=10, N_d=20, M=20, T=60,
                                      snr_db=0.0, n_test=100, n_trials=200, seed=99))
    assert res.coverage >= 0.9 - 3 * res.coverage_se


class TestFlags:
    def test_infeasible_correction_is_flagged(self):
        res = run_scenario(small(method="wfcp", alpha=0.05, snr_db=-20.0, M=30, T=30, h_min_sq=1e-6))
        assert res.flags["alpha_c_infeasible"] == 40
        assert res.ineff == 10.0
        assert "alpha_c_infeasible=40" in res.row()["flags"]

    def test_nonpositive_alpha_c_allowed(self):
        res = run_scenario(small(method="wfcp", alpha=0.05, snr_db=-20.0, M=30, T=30, h_min_sq=1e-6,
                                 allow_nonpositive_alpha_c=True))
        assert not res.flags
        assert np.all(res.diagnostic("alpha_c") <= 0)

    def test_no_active_devices_is_flagged(self):
        res = run_scenario(small(method="wfcp", h_min_sq=50.0))
        assert res.flags["no_active"] == 40

    def test_infeasible_levels(self):
        res = run_scenario(small(method="fedqq_noiseless", K=2, N_d=2, alpha=0.1))
        assert res.flags["levels_infeasible"] == 40


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = small(method="dqq", dirichlet_conc=[0.5] * 10, erasure_model="bernoulli")
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        back = ScenarioConfig.from_dict(harness.load_config(path))
        assert back == cfg

    @pytest.mark.parametrize("bad, msg", [
        (dict(method="magic"), "unknown method"),
        (dict(method="wfcp", M=40, T=30), "M <= T"),
        (dict(method="dqq", K=40, T=30), "floor"),
        (dict(alpha=1.5), "alpha"),
        (dict(N_d=0), "N_d"),
        (dict(test_csv="x.csv"), "calib_csv"),
    ])
    def test_validation(self, bad, msg):
        with pytest.raises(ConfigError, match=msg):
            small(**bad).validate()

    def test_unknown_fields_and_versions(self):
        with pytest.raises(ConfigError, match="unknown config fields"):
            ScenarioConfig.from_dict({"alpha": 0.1, "colour": "red"})
        with pytest.raises(ConfigError, match="schema_version"):
            ScenarioConfig.from_dict({"schema_version": 99})

    def test_config_must_be_object(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            harness.load_config(path)


class TestSweep:
    def test_long_format(self):
        res = sweep({"T": [20, 40], "snr_db": [0.0, 10.0]}, small(n_trials=5),
                    methods=["wfcp", "dqq"])
        assert len(res) == 8
        assert [(r.config.T, r.config.snr_db, r.config.method) for r in res[:4]] == [
            (20, 0.0, "wfcp"), (20, 0.0, "dqq"), (20, 10.0, "wfcp"), (20, 10.0, "dqq")]
        seeds = [r.config.seed for r in res]
        assert seeds[0] == seeds[1] == cell_seed(3, 0)
        assert len(set(seeds)) == 4

    def test_common_seed(self):
        res = sweep({"alpha": [0.1, 0.2]}, small(n_trials=5), common_seed=True)
        assert {r.config.seed for r in res} == {3}

    def test_errors(self):
        with pytest.raises(ConfigError):
            sweep({"n_test": [1]}, small())
        with pytest.raises(ConfigError):
            sweep({"M": [4]}, small(seed=None))

    def test_json_export(self, tmp_path):
        res = sweep({"M": [5, 10]}, small(n_trials=1), methods=["centralized"])
        data = json.loads(export(res, tmp_path / "out.json").read_text())
        assert data["schema_version"] == harness.SCHEMA_VERSION
        assert data["columns"] == list(CSV_COLUMNS)
        assert [row["M"] for row in data["rows"]] == [5, 10]
        # a single trial has no standard error
        assert data["rows"][0]["coverage_se"] is None
        assert data["rows"][0]["config"]["method"] == "centralized"

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            export(run_scenario(small(n_trials=1)), tmp_path / "x.parquet")


def test_csv_data_source(tmp_path):
    assert main(["gen-scores", "--n", "400", "--classes", "4", "--conc", "0.5",
                 "--seed", "1", "--out", str(tmp_path / "s.csv")]) == 0
    cfg = small(method="quantized", calib_csv=str(tmp_path / "s.csv"), n_classes=99)
    res = run_scenario(cfg)
    assert res.n_classes == 4
    assert res.coverage >= 0.9 - 3 * res.coverage_se
    with pytest.raises(ConfigError, match="rows"):
        run_scenario(small(method="quantized", calib_csv=str(tmp_path / "s.csv"), K=50))


class TestCli:
    def test_qq_bound(self, capsys):
        assert main(["qq-bound", "--N-d", "20", "--K", "20", "--alpha", "0.1"]) == 0
        out = capsys.readouterr().out
        assert "n=20" in out and "k=3" in out and "0.900813163" in out

    def test_qq_bound_infeasible(self, capsys):
        assert main(["qq-bound", "--N-d", "2", "--K", "2", "--alpha", "0.1"]) == 2
        assert "error" in capsys.readouterr().err

    def test_run_writes_csv_and_json(self, tmp_path, capsys):
        out = tmp_path / "r.json"
        args = ["run", "--seed", "5", "--method", "wfcp", "--n-trials", "10", "--n-test", "20",
                "--K", "5", "--N-d", "10", "--M", "10", "--T", "30", "--out", str(out)]
        assert main(args) == 0
        stdout = capsys.readouterr().out
        assert stdout.splitlines()[0] == ",".join(CSV_COLUMNS)
        assert json.loads(out.read_text())["rows"][0]["trials"] == 10
        assert main(args) == 0
        assert capsys.readouterr().out == stdout

    def test_run_from_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"method": "centralized", "n_trials": 3, "n_test": 10}))
        assert main(["run", "--seed", "1", "--config", str(cfg), "--alpha", "0.2"]) == 0
        row = capsys.readouterr().out.splitlines()[1].split(",")
        assert row[0] == "centralized" and row[1] == "0.2"

    def test_sweep(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        assert main(["sweep", "--seed", "1", "--n-trials", "3", "--n-test", "10", "--K", "4",
                     "--N-d", "5", "--grid", "M=5,10", "--grid", "snr_db=0,10",
                     "--methods", "wfcp,dqq", "--T", "40", "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 1 + 8
        capsys.readouterr()

    def test_errors_exit_2(self, capsys):
        assert main(["run", "--seed", "1", "--method", "wfcp", "--M", "40", "--T", "30"]) == 2
        assert "M <= T" in capsys.readouterr().err
        assert main(["sweep", "--seed", "1"]) == 2
        assert main(["sweep", "--seed", "1", "--grid", "M=a,b"]) == 2
        with pytest.raises(SystemExit) as info:
            main(["run"])
        assert info.value.code == 2
