"""Config parsing and the command-line surface."""

import json

import numpy as np
import pytest

from rwre import cli, config, env


TWO_STATE_TOML = """
[model]
parameterization = "two_state_chain"
support = [0.4, 0.8]
epsilon = 0.05

[model.bounds]
lower = [0.05, 0.05]
upper = [0.95, 0.95]
"""


@pytest.fixture()
def model_file(tmp_path):
    path = tmp_path / "model.toml"
    path.write_text(TWO_STATE_TOML)
    return str(path)


class TestModelConfig:
    def test_two_state_roundtrip(self, model_file):
        model = config.load_model(model_file)
        assert model.space.name == "two_state_chain"
        assert model.a0_index == 0
        np.testing.assert_allclose(model.space.support.values, [0.4, 0.8])

    def test_a0_by_value(self, tmp_path):
        path = tmp_path / "m.toml"
        path.write_text(TWO_STATE_TOML + "\n" + "")
        text = TWO_STATE_TOML.replace('support = [0.4, 0.8]', 'support = [0.4, 0.8]\na0 = 0.8')
        path.write_text(text)
        model = config.load_model(str(path))
        assert model.a0_index == 1

    def test_iid_scalar_bounds(self, tmp_path):
        path = tmp_path / "m.toml"
        path.write_text(
            """
[model]
parameterization = "iid_two_values"
support = [0.7, 0.8]
[model.bounds]
lower = 0.1
upper = 0.9
"""
        )
        model = config.load_model(str(path))
        assert model.space.dim == 1
        np.testing.assert_allclose(model.space.lower, [0.1])

    def test_free_entries_with_mask(self, tmp_path):
        path = tmp_path / "m.toml"
        path.write_text(
            """
[model]
parameterization = "free_entries"
support = [0.3, 0.6, 0.9]
[model.mask]
rows = [[1, 1, 0], [0, 1, 1], [1, 0, 1]]
"""
        )
        model = config.load_model(str(path))
        assert model.space.dim == 6
        kernel = model.space.kernel(model.space.center())
        assert np.count_nonzero(kernel.q) == 6

    def test_dna_constants(self, tmp_path):
        path = tmp_path / "m.toml"
        path.write_text(
            """
[model]
parameterization = "dna_unzipping"
[model.constants]
beta = 1.0
g1 = 2.0
"""
        )
        model = config.load_model(str(path))
        assert model.space.support.size == 10

    def test_parse_error_reports_file_and_line(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[model\nparameterization = 'x'\n")
        with pytest.raises(config.ConfigError) as excinfo:
            config.load_model(str(path))
        message = str(excinfo.value)
        assert "broken.toml" in message and "line" in message

    def test_schema_error_reports_key_path(self, tmp_path):
        path = tmp_path / "m.toml"
        path.write_text("[model]\nparameterization = 'two_state_chain'\n")
        with pytest.raises(config.ConfigError, match="support"):
            config.load_model(str(path))

    def test_unknown_parameterization(self, tmp_path):
        path = tmp_path / "m.toml"
        path.write_text("[model]\nparameterization = 'mystery'\nsupport = [0.4, 0.8]\n")
        with pytest.raises(config.ConfigError, match="parameterization"):
            config.load_model(str(path))

    def test_missing_file(self):
        with pytest.raises(config.ConfigError, match="no such file"):
            config.load_model("/nonexistent/model.toml")


class TestSimulateCommand:
    def test_writes_data_and_sidecar(self, model_file, tmp_path, capsys):
        out = str(tmp_path / "z.csv")
        code = cli.main(
            [
                "simulate", "--model", model_file, "--theta", "0.2,0.9",
                "--n", "200", "--seed", "5", "--out", out,
            ]
        )
        assert code == 0
        lines = open(out).read().strip().split("\n")
        assert lines[0] == "z" and lines[1] == "0"
        assert len(lines) == 202
        meta = json.loads(open(out + ".meta.json").read())
        assert meta["n"] == 200 and meta["seed"] == 5
        assert meta["diagnostics"]["ballistic"] is True
        assert meta["t_n"] >= 200

    def test_byte_identical_reruns(self, model_file, tmp_path, capsys):
        out_a = str(tmp_path / "a.csv")
        out_b = str(tmp_path / "b.csv")
        for out in (out_a, out_b):
            assert cli.main(
                [
                    "simulate", "--model", model_file, "--theta", "0.2,0.9",
                    "--n", "150", "--seed", "9", "--out", out,
                ]
            ) == 0
        assert open(out_a, "rb").read() == open(out_b, "rb").read()
        assert open(out_a + ".meta.json").read().replace("a.csv", "") == open(
            out_b + ".meta.json"
        ).read().replace("b.csv", "")

    def test_rejects_bad_model(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[model]\nparameterization = 'nope'\nsupport = [0.4,0.8]\n")
        code = cli.main(
            [
                "simulate", "--model", str(bad), "--theta", "0.2,0.9",
                "--n", "10", "--seed", "1", "--out", str(tmp_path / "z.csv"),
            ]
        )
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestLoglikCommand:
    def test_matches_library_value(self, model_file, tmp_path, capsys):
        out = str(tmp_path / "z.csv")
        cli.main(
            [
                "simulate", "--model", model_file, "--theta", "0.2,0.9",
                "--n", "100", "--seed", "3", "--out", out,
            ]
        )
        capsys.readouterr()
        code = cli.main(
            ["loglik", "--model", model_file, "--theta", "0.3,0.8", "--data", out, "--hessian"]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)

        from rwre import likelihood as lk

        model = config.load_model(model_file)
        z = cli._read_z(out)
        ev = lk.loglik(model.space, [0.3, 0.8], z, 0, want_hessian=True)
        assert payload["loglik"] == pytest.approx(ev.loglik, abs=1e-12)
        np.testing.assert_allclose(payload["grad"], ev.grad, atol=1e-10)
        np.testing.assert_allclose(payload["hessian"], ev.hessian, atol=1e-8)
        assert payload["a0"] == 0.4

    def test_bad_header_rejected(self, model_file, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("values\n1\n2\n")
        code = cli.main(
            ["loglik", "--model", model_file, "--theta", "0.3,0.8", "--data", str(bad)]
        )
        assert code == 2
        assert "header 'z'" in capsys.readouterr().err


class TestFitCommand:
    def test_reports_regions_and_diagnostics(self, model_file, tmp_path, capsys):
        out = str(tmp_path / "z.csv")
        cli.main(
            [
                "simulate", "--model", model_file, "--theta", "0.2,0.9",
                "--n", "400", "--seed", "6", "--out", out,
            ]
        )
        capsys.readouterr()
        code = cli.main(
            [
                "fit", "--model", model_file, "--data", out,
                "--n-starts", "2", "--gammas", "0.05,0.1",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert len(payload["theta_hat"]) == 2
        assert payload["n"] == 400
        assert len(payload["starts"]) == 2
        assert [r["gamma"] for r in payload["regions"]] == [0.05, 0.1]
        assert payload["regions"][0]["chi2"] == pytest.approx(5.9915, abs=1e-4)


class TestExperimentCommands:
    @pytest.fixture()
    def plan_file(self, tmp_path):
        path = tmp_path / "plan.toml"
        path.write_text(
            """
[experiment]
name = "cli-tiny"
replicates = 2
n_grid = [800]
gammas = [0.05]
master_seed = 31

[experiment.truth]
theta = [0.2, 0.9]

[model]
parameterization = "two_state_chain"
support = [0.4, 0.8]

[model.bounds]
lower = [0.05, 0.05]
upper = [0.95, 0.95]

[optimizer]
n_starts = 1
"""
        )
        return str(path)

    def test_run_and_summarize(self, plan_file, tmp_path, capsys):
        run_dir = str(tmp_path / "run")
        assert cli.main(["experiment", "run", "--plan", plan_file, "--out", run_dir]) == 0
        assert (tmp_path / "run" / "records.csv").exists()
        assert (tmp_path / "run" / "coverage.csv").exists()
        assert (tmp_path / "run" / "manifest.json").exists()
        tables = str(tmp_path / "tables")
        assert cli.main(["experiment", "summarize", "--in", run_dir, "--out", tables]) == 0
        assert (tmp_path / "tables" / "summary.csv").exists()
        assert (tmp_path / "tables" / "shape_compare.csv").exists()

    def test_reruns_identical_modulo_wall_clock(self, plan_file, tmp_path, capsys):
        dirs = [str(tmp_path / "r1"), str(tmp_path / "r2")]
        for d in dirs:
            assert cli.main(["experiment", "run", "--plan", plan_file, "--out", d]) == 0
        rec = [open(f"{d}/records.csv", "rb").read() for d in dirs]
        cov = [open(f"{d}/coverage.csv", "rb").read() for d in dirs]
        assert rec[0] == rec[1] and cov[0] == cov[1]
        manifests = []
        for d in dirs:
            m = json.loads(open(f"{d}/manifest.json").read())
            m.pop("wall_clock_seconds")
            manifests.append(m)
        assert manifests[0] == manifests[1]

    def test_bad_plan_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[experiment]\nname = 3\n")
        assert cli.main(["experiment", "run", "--plan", str(bad), "--out", str(tmp_path / "o")]) == 2
