"""Experiment harness: plans, execution, determinism, and summaries."""

import numpy as np
import pytest

from rwre import harness
from rwre.config import ConfigError
from rwre.estimate import OptimizerConfig


def _tiny_plan(**overrides):
    base = dict(
        name="tiny",
        model_table={
            "parameterization": "two_state_chain",
            "support": [0.4, 0.8],
            "bounds": {"lower": [0.05, 0.05], "upper": [0.95, 0.95]},
        },
        theta_star=np.array([0.2, 0.9]),
        n_grid=(150, 300),
        replicates=3,
        gammas=(0.05, 0.1),
        master_seed=99,
        workers=1,
        optimizer=OptimizerConfig(n_starts=2),
    )
    base.update(overrides)
    return harness.ExperimentPlan(**base)


@pytest.fixture(scope="module")
def tiny_report():
    return harness.run_experiment(_tiny_plan())


class TestPlanValidation:
    def test_grid_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            _tiny_plan(n_grid=(300, 150))

    def test_gamma_range(self):
        with pytest.raises(ValueError, match="gamma"):
            _tiny_plan(gammas=(0.0,))

    def test_plan_file_roundtrip(self, tmp_path):
        text = """
[experiment]
name = "demo"
replicates = 2
n_grid = [100]
gammas = [0.05]
master_seed = 5
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
        path = tmp_path / "plan.toml"
        path.write_text(text)
        plan = harness.load_plan(str(path))
        assert plan.replicates == 2 and plan.n_grid == (100,)
        assert plan.optimizer.n_starts == 1

    def test_truth_must_sit_in_box(self, tmp_path):
        text = """
[experiment]
name = "demo"
replicates = 1
n_grid = [100]
gammas = [0.05]
master_seed = 5
[experiment.truth]
theta = [0.99, 0.9]
[model]
parameterization = "two_state_chain"
support = [0.4, 0.8]
"""
        path = tmp_path / "plan.toml"
        path.write_text(text)
        with pytest.raises(ConfigError, match="outside"):
            harness.load_plan(str(path))

    def test_missing_table_reports_path(self, tmp_path):
        path = tmp_path / "plan.toml"
        path.write_text("[experiment]\nname='x'\n")
        with pytest.raises(ConfigError, match="plan.toml"):
            harness.load_plan(str(path))


class TestRunExperiment:
    def test_record_count_and_order(self, tiny_report):
        plan = tiny_report.plan
        assert len(tiny_report.records) == plan.replicates * len(plan.n_grid)
        keys = [(r.replicate, r.n) for r in tiny_report.records]
        assert keys == sorted(keys)

    def test_single_replicate_coverage_is_binary(self):
        report = harness.run_experiment(_tiny_plan(replicates=1, n_grid=(150,)))
        assert len(report.records) == 1
        for _, _, cov, used, _ in report.coverage():
            assert used == 1 and cov in (0.0, 1.0)

    def test_rerun_is_byte_identical(self, tiny_report):
        again = harness.run_experiment(_tiny_plan())
        assert harness.records_csv(again) == harness.records_csv(tiny_report)
        assert harness.coverage_csv(again) == harness.coverage_csv(tiny_report)

    def test_worker_count_does_not_change_results(self, tiny_report):
        parallel = harness.run_experiment(_tiny_plan(workers=2))
        assert harness.records_csv(parallel) == harness.records_csv(tiny_report)

    def test_coverage_monotone_in_gamma(self, tiny_report):
        rows = tiny_report.coverage()
        for n in tiny_report.plan.n_grid:
            covs = [cov for (nn, _, cov, _, _) in rows if nn == n]
            assert covs == sorted(covs, reverse=True)

    def test_non_ballistic_plan_refused(self):
        plan = _tiny_plan(
            model_table={
                "parameterization": "iid_two_values",
                "support": [0.1, 0.2],
                "bounds": {"lower": [0.05], "upper": [0.95]},
            },
            theta_star=np.array([0.5]),
        )
        from rwre.errors import ModelInvalidError

        with pytest.raises(ModelInvalidError, match="ballistic"):
            harness.run_experiment(plan)


class TestSerialization:
    def test_report_roundtrip(self, tiny_report, tmp_path):
        harness.write_report(tiny_report, tmp_path / "run", wall_clock=1.0)
        back = harness.read_report(tmp_path / "run")
        assert harness.records_csv(back) == harness.records_csv(tiny_report)
        assert back.plan.n_grid == tiny_report.plan.n_grid
        assert back.coverage() == tiny_report.coverage()

    def test_manifest_fields(self, tiny_report, tmp_path):
        import json

        harness.write_report(tiny_report, tmp_path / "run", wall_clock=2.5)
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["failure_count"] == tiny_report.failure_count
        assert manifest["plan"]["master_seed"] == 99
        assert manifest["version"].startswith("rwre-")
        assert "wall_clock_seconds" in manifest


class TestSummarize:
    def test_tables_shape(self, tiny_report):
        tables = harness.summarize(tiny_report)
        assert set(tables) == {"summary.csv", "coverage.csv", "shape_compare.csv"}
        summary_lines = tables["summary.csv"].strip().split("\n")
        # 2 theta coords + 3 sigma entries per n
        assert len(summary_lines) == 1 + 5 * len(tiny_report.plan.n_grid)
        coverage_lines = tables["coverage.csv"].strip().split("\n")
        assert coverage_lines[0] == "n,0.05,0.1"
        assert len(coverage_lines) == 1 + len(tiny_report.plan.n_grid)

    def test_quantiles_are_ordered(self, tiny_report):
        tables = harness.summarize(tiny_report)
        for line in tables["summary.csv"].strip().split("\n")[1:]:
            cells = line.split(",")
            values = [float(v) for v in cells[2:]]
            assert values == sorted(values)

    def test_empty_gamma_plan(self):
        report = harness.run_experiment(_tiny_plan(gammas=(), n_grid=(150,), replicates=1))
        tables = harness.summarize(report)
        assert tables["coverage.csv"].strip().split("\n")[0] == "n"

    def test_empty_report_rejected(self, tiny_report):
        empty = harness.ExperimentReport(plan=tiny_report.plan, records=[])
        with pytest.raises(ValueError):
            harness.summarize(empty)
