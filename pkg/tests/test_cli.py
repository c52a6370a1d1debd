"""End-to-end command-line tests.

Every test drives ``survbayes.cli.main`` in process with an explicit argv
list and asserts exit codes, the files written, and what lands on stdout
and stderr. Numeric correctness of the fitted models is covered by the
run-layer tests; the subject here is plumbing: flag parsing, artifact
placement, the error-to-exit-code mapping, and byte determinism.
"""

import json
import os

import numpy as np
import pytest

from survbayes.cli import EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_DATA, EXIT_OK, main
from survbayes.data import SimSpec, load_csv, simulate_trial, write_csv
from survbayes.mcmc import ChainSet


@pytest.fixture(scope="module")
def trial_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "trial.csv"
    write_csv(simulate_trial(SimSpec(40, 40, 0.4, rate=0.1, cutoff=10.0, seed=3)), path)
    return str(path)


def read_chain_columns(path):
    arr = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.asarray(arr[name]) for name in arr.dtype.names}


class TestParser:
    def test_no_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_simulate_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--n-control", "10"])
        assert exc.value.code == 2


class TestSimulate:
    ARGS = [
        "simulate",
        "--n-control", "100",
        "--n-treatment", "100",
        "--log-hr", "0.3",
        "--rate", "0.1",
        "--cutoff", "12",
        "--seed", "9",
    ]

    def test_writes_readable_csv(self, tmp_path, capsys):
        out = str(tmp_path / "sim.csv")
        assert main(self.ARGS + ["--out", out]) == EXIT_OK
        lines = open(out, encoding="utf-8").read().splitlines()
        assert lines[0] == "id,time,event,arm"
        assert len(lines) == 201
        data = load_csv(out)
        assert data.n_by_arm == (100, 100)
        assert 0 < data.n_events <= 200
        out_text = capsys.readouterr().out
        assert "wrote 200 subjects (100 control, 100 treatment)" in out_text

    def test_same_seed_same_bytes(self, tmp_path):
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        assert main(self.ARGS + ["--out", a]) == EXIT_OK
        assert main(self.ARGS + ["--out", b]) == EXIT_OK
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_different_seed_differs(self, tmp_path):
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        assert main(self.ARGS + ["--out", a]) == EXIT_OK
        args = [x if x != "9" else "10" for x in self.ARGS]
        assert main(args + ["--out", b]) == EXIT_OK
        assert open(a, "rb").read() != open(b, "rb").read()


class TestBootstrap:
    def test_resample_preserves_arm_sizes(self, trial_csv, tmp_path, capsys):
        out = str(tmp_path / "boot.csv")
        assert main(["bootstrap", "--data", trial_csv, "--seed", "4", "--out", out]) == EXIT_OK
        original = load_csv(trial_csv)
        resampled = load_csv(out)
        assert resampled.n_by_arm == original.n_by_arm
        # every resampled (time, event) pair must come from the source rows
        source = {(r.time, r.event, r.arm) for r in original.records}
        assert all((r.time, r.event, r.arm) in source for r in resampled.records)
        assert "stratified resample" in capsys.readouterr().out

    def test_seed_determinism(self, trial_csv, tmp_path):
        a, b, c = (str(tmp_path / n) for n in ("a.csv", "b.csv", "c.csv"))
        main(["bootstrap", "--data", trial_csv, "--seed", "4", "--out", a])
        main(["bootstrap", "--data", trial_csv, "--seed", "4", "--out", b])
        main(["bootstrap", "--data", trial_csv, "--seed", "5", "--out", c])
        assert open(a, "rb").read() == open(b, "rb").read()
        assert open(a, "rb").read() != open(c, "rb").read()

    def test_malformed_data_exits_4(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,time,event,arm\n1,2.0,maybe,0\n")
        rc = main(["bootstrap", "--data", str(bad), "--seed", "1", "--out", str(tmp_path / "o.csv")])
        assert rc == EXIT_DATA
        assert capsys.readouterr().err.startswith("data error:")

    def test_missing_data_file_exits_4(self, tmp_path, capsys):
        rc = main(["bootstrap", "--data", str(tmp_path / "nope.csv"), "--seed", "1", "--out", str(tmp_path / "o.csv")])
        assert rc == EXIT_DATA
        assert "no such file" in capsys.readouterr().err


def write_toml(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


CONJUGATE_TOML = """
[data.simulate]
n_control = 30
n_treatment = 30
true_log_hr = 0.5
rate = 0.2
cutoff = 8.0
seed = 7

[[model]]
preset = "conjugate-vague"
"""


class TestFit:
    def test_conjugate_only_run(self, tmp_path, capsys):
        config = write_toml(tmp_path, CONJUGATE_TOML)
        out = str(tmp_path / "out")
        assert main(["fit", "--config", config, "--out", out]) == EXIT_OK
        stdout = capsys.readouterr().out
        table = open(os.path.join(out, "summary.txt"), encoding="utf-8").read()
        assert stdout.startswith(table)
        assert f"artifacts written to {out}" in stdout
        payload = json.loads(open(os.path.join(out, "summary.json"), encoding="utf-8").read())
        assert [m["label"] for m in payload["models"]] == ["conjugate-vague"]

    def test_unknown_preset_exits_2(self, tmp_path, capsys):
        config = write_toml(tmp_path, '[data.simulate]\nn_control = 10\nn_treatment = 10\ntrue_log_hr = 0.0\n\n[[model]]\npreset = "cauchy"\n')
        rc = main(["fit", "--config", config, "--out", str(tmp_path / "out")])
        assert rc == EXIT_CONFIG
        err = capsys.readouterr().err
        assert err.startswith("config error:")
        assert "conjugate-skeptical" in err  # the message lists valid presets

    def test_missing_config_exits_2(self, tmp_path, capsys):
        rc = main(["fit", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "out")])
        assert rc == EXIT_CONFIG
        assert capsys.readouterr().err.startswith("config error:")

    MCMC_TOML = """
[data.simulate]
n_control = 40
n_treatment = 40
true_log_hr = 0.4
rate = 0.1
cutoff = 10.0
seed = 3

[mcmc]
chains = 4
iterations = 600
thin = 1
seed = 17

[[model]]
preset = "exponential"
"""

    def test_nonconverged_exits_3_after_writing(self, tmp_path, capsys):
        # 600 iterations leave 300 saved draws per chain, below the 1000 gate
        config = write_toml(tmp_path, self.MCMC_TOML)
        out = str(tmp_path / "out")
        rc = main(["fit", "--config", config, "--out", out])
        assert rc == EXIT_CONVERGENCE
        captured = capsys.readouterr()
        assert "convergence failure:" in captured.err
        assert "--allow-nonconverged" in captured.err
        # the table is still printed and the artifacts still exist
        assert "exponential" in captured.out
        assert os.path.exists(os.path.join(out, "summary.json"))

    def test_allow_nonconverged_flips_to_exit_0(self, tmp_path):
        config = write_toml(tmp_path, self.MCMC_TOML)
        out = str(tmp_path / "out")
        rc = main(["fit", "--config", config, "--out", out, "--allow-nonconverged"])
        assert rc == EXIT_OK
        payload = json.loads(open(os.path.join(out, "summary.json"), encoding="utf-8").read())
        (record,) = payload["models"]
        assert record["converged"] is False

    BYTE_TOML = """
[data.simulate]
n_control = 40
n_treatment = 40
true_log_hr = 0.4
rate = 0.1
cutoff = 10.0
seed = 3

[mcmc]
chains = 4
iterations = 2000
thin = 2
seed = 29

[run]
allow_nonconverged = true

[[model]]
preset = "conjugate-vague"

[[model]]
preset = "exponential"
"""

    def test_identical_runs_identical_bytes(self, tmp_path):
        config = write_toml(tmp_path, self.BYTE_TOML)
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["fit", "--config", config, "--out", out_a]) == EXIT_OK
        assert main(["fit", "--config", config, "--out", out_b]) == EXIT_OK
        names = [
            "summary.json", "summary.txt", "forest.csv", "forest.svg",
            "diagnostics.json", "exponential.chains.csv",
        ]
        for name in names:
            a = open(os.path.join(out_a, name), "rb").read()
            b = open(os.path.join(out_b, name), "rb").read()
            assert a == b, name

    TIME_SCALE_TOML = """
[mcmc]
chains = 4
iterations = 2000
thin = 1
seed = 11

[run]
allow_nonconverged = true

[[model]]
preset = "exponential"
"""

    def test_time_scale_rescales_rate_not_hr(self, trial_csv, tmp_path):
        text = f'[data]\ncsv = "{trial_csv}"\n' + self.TIME_SCALE_TOML
        config = write_toml(tmp_path, text)
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["fit", "--config", config, "--out", out_a]) == EXIT_OK
        assert main(["fit", "--config", config, "--out", out_b, "--time-scale", "0.5"]) == EXIT_OK
        cols_a = read_chain_columns(os.path.join(out_a, "exponential.chains.csv"))
        cols_b = read_chain_columns(os.path.join(out_b, "exponential.chains.csv"))
        # halving every time doubles the event rate and leaves the ratio alone
        shift = cols_b["log_rate"].mean() - cols_a["log_rate"].mean()
        assert abs(shift - np.log(2.0)) < 0.05
        assert abs(cols_b["log_hr"].mean() - cols_a["log_hr"].mean()) < 0.02

    def test_spline_k_grid_rejects_non_integers(self, tmp_path, capsys):
        config = write_toml(tmp_path, CONJUGATE_TOML)
        rc = main(["fit", "--config", config, "--out", str(tmp_path / "out"), "--spline-k-grid", "2,x"])
        assert rc == EXIT_CONFIG
        assert "comma-separated integers" in capsys.readouterr().err

    def test_spline_k_grid_writes_search_report(self, tmp_path, capsys):
        text = CONJUGATE_TOML + "\n[mcmc]\nchains = 4\niterations = 2000\nthin = 2\nseed = 13\n\n[run]\nallow_nonconverged = true\n"
        config = write_toml(tmp_path, text)
        out = str(tmp_path / "out")
        rc = main(["fit", "--config", config, "--out", out, "--spline-k-grid", "2,3"])
        assert rc == EXIT_OK
        payload = json.loads(open(os.path.join(out, "spline_k_search.json"), encoding="utf-8").read())
        assert [row["k"] for row in payload["grid"]] == [2, 3]
        assert all(row["score"] >= row["mean_deviance"] for row in payload["grid"])
        stdout = capsys.readouterr().out
        assert "K=  2" in stdout and "K=  3" in stdout


class TestForest:
    def test_reemits_fit_artifacts_byte_identically(self, tmp_path, capsys):
        config = write_toml(tmp_path, CONJUGATE_TOML)
        fit_out = str(tmp_path / "fit")
        assert main(["fit", "--config", config, "--out", fit_out]) == EXIT_OK
        capsys.readouterr()
        forest_out = str(tmp_path / "forest")
        rc = main(["forest", "--summary", os.path.join(fit_out, "summary.json"), "--out", forest_out])
        assert rc == EXIT_OK
        assert "forest.csv and forest.svg written" in capsys.readouterr().out
        for name in ("forest.csv", "forest.svg"):
            a = open(os.path.join(fit_out, name), "rb").read()
            b = open(os.path.join(forest_out, name), "rb").read()
            assert a == b, name

    def test_missing_summary_exits_2(self, tmp_path, capsys):
        rc = main(["forest", "--summary", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
        assert rc == EXIT_CONFIG
        assert "summary file not found" in capsys.readouterr().err

    def test_empty_models_exits_2(self, tmp_path, capsys):
        from survbayes.report import summaries_to_json

        path = tmp_path / "summary.json"
        path.write_text(summaries_to_json([], 0.95))
        rc = main(["forest", "--summary", str(path), "--out", str(tmp_path / "o")])
        assert rc == EXIT_CONFIG
        assert "no models in summary" in capsys.readouterr().err

    def test_malformed_summary_exits_2(self, tmp_path, capsys):
        path = tmp_path / "summary.json"
        path.write_text("not json at all")
        rc = main(["forest", "--summary", str(path), "--out", str(tmp_path / "o")])
        assert rc == EXIT_CONFIG
        assert "malformed summary JSON" in capsys.readouterr().err


def chains_csv(tmp_path, n_chains=4, n_draws=1200, seed=42, name="chains.csv"):
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((n_chains, n_draws, 2))
    path = str(tmp_path / name)
    ChainSet(draws=draws, parameter_names=("log_hr", "nuisance")).to_csv(path)
    return path


class TestDiagnose:
    def test_iid_chains_pass(self, tmp_path, capsys):
        path = chains_csv(tmp_path)
        assert main(["diagnose", "--chains", path]) == EXIT_OK
        out = capsys.readouterr().out
        assert "diagnostics: PASS" in out
        assert "log_hr" in out and "nuisance" in out

    def test_out_writes_diagnostics_json(self, tmp_path):
        path = chains_csv(tmp_path)
        out = str(tmp_path / "diag")
        assert main(["diagnose", "--chains", path, "--out", out]) == EXIT_OK
        payload = json.loads(open(os.path.join(out, "diagnostics.json"), encoding="utf-8").read())
        (record,) = payload["models"]
        assert record["label"] == "chains.csv"
        assert record["passed"] is True
        assert {p["name"] for p in record["parameters"]} == {"log_hr", "nuisance"}

    def test_single_chain_fails(self, tmp_path, capsys):
        path = chains_csv(tmp_path, n_chains=1)
        assert main(["diagnose", "--chains", path]) == EXIT_CONVERGENCE
        out = capsys.readouterr().out
        assert "diagnostics: FAIL" in out
        assert "chain" in out

    def test_min_saved_gate_flips_with_flag(self, tmp_path, capsys):
        path = chains_csv(tmp_path, n_draws=500)
        assert main(["diagnose", "--chains", path]) == EXIT_CONVERGENCE
        assert "FAIL" in capsys.readouterr().out
        assert main(["diagnose", "--chains", path, "--min-saved", "400"]) == EXIT_OK
        assert "PASS" in capsys.readouterr().out

    def test_unknown_ess_param_exits_2(self, tmp_path, capsys):
        path = chains_csv(tmp_path)
        rc = main(["diagnose", "--chains", path, "--ess-params", "bogus"])
        assert rc == EXIT_CONFIG
        assert "unknown parameter 'bogus'" in capsys.readouterr().err

    def test_ess_params_flag_accepts_listed_names(self, tmp_path):
        path = chains_csv(tmp_path)
        assert main(["diagnose", "--chains", path, "--ess-params", "log_hr,nuisance"]) == EXIT_OK

    def test_missing_chains_file_exits_2(self, tmp_path, capsys):
        rc = main(["diagnose", "--chains", str(tmp_path / "nope.csv")])
        assert rc == EXIT_CONFIG
        assert "no such file" in capsys.readouterr().err

    def test_not_a_chain_csv_exits_2(self, tmp_path, capsys):
        path = tmp_path / "odd.csv"
        path.write_text("time,event\n1.0,1\n")
        rc = main(["diagnose", "--chains", str(path)])
        assert rc == EXIT_CONFIG
        assert "not a chain CSV" in capsys.readouterr().err
