# tests/test_pipeline.py

import json

import numpy as np
import pytest

from app import main
from core.pipeline_flow import cmd_diagnose, cmd_hbi, cmd_learn, cmd_simulate
from core.state import init_run_config
from pde_discovery.errors import ConfigurationError
from pde_discovery.fields import read_field
from pde_discovery.pesbl import SparseModel
from pde_discovery.reports import inputs_digest, read_report, sparse_model_report, write_report


def _config(out, **overrides):
    raw = {
        "system": "burgers1d",
        "grid": {"nx": 33, "nt": 21, "t_max": 0.2},
        "noise_levels": [0.0, 0.1],
        "output_dir": str(out),
        "preprocess": {"denoise": False, "derivative_method": "finite-difference"},
    }
    raw.update(overrides)
    return init_run_config(raw)


class TestSimulate:

    def test_writes_clean_noisy_and_manifest(self, tmp_path):
        flow = cmd_simulate(_config(tmp_path))
        names = [p.name for p in flow.paths]
        assert names == ["burgers1d_manifest.txt", "burgers1d_clean.csv",
                         "burgers1d_noise000.csv", "burgers1d_noise010.csv"]
        manifest = read_report(flow.paths[0], "datasets")
        assert manifest.fields["datasets"] == "3"
        assert list(manifest.table("datasets")["provenance"]) == ["clean", "noisy", "noisy"]
        clean = read_field(flow.paths[1])
        assert clean.provenance == "clean"
        assert clean.grid.nx == 33

    def test_same_seed_same_noise(self, tmp_path):
        a = cmd_simulate(_config(tmp_path / "a"))
        b = cmd_simulate(_config(tmp_path / "b"))
        np.testing.assert_array_equal(read_field(a.paths[3]).values, read_field(b.paths[3]).values)
        c = cmd_simulate(_config(tmp_path / "c", seed=1))
        assert not np.array_equal(read_field(a.paths[3]).values, read_field(c.paths[3]).values)


class TestLearnAndDiagnose:

    def test_learn_writes_model_and_likelihood(self, tmp_path):
        config = _config(tmp_path)
        sim = cmd_simulate(config)
        flow = cmd_learn(config, sim.paths[3], clean=sim.paths[1])
        report_path, trace_path = flow.paths
        assert report_path.name == "burgers1d_noise010_model.txt"
        report = read_report(report_path, "sparse_model")
        assert report.fields["reference_terms"] == "uu_x u_xx"
        assert "residual_noise_after" in report.fields
        assert "inputs_sha256" in report.fields
        assert trace_path.exists()

    def test_diagnose_two_learned_models(self, tmp_path):
        config = _config(tmp_path)
        sim = cmd_simulate(config)
        a = cmd_learn(config, sim.paths[2]).paths[0]
        b = cmd_learn(config, sim.paths[3]).paths[0]
        if read_report(a).fields["terms"] != read_report(b).fields["terms"]:
            with pytest.raises(ConfigurationError):
                cmd_diagnose(config, a, b)
            return
        flow = cmd_diagnose(config, a, b)
        assert read_report(flow.paths[0], "shift").table("shift").shape[0] == len(flow.result.names)

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(ConfigurationError):
            cmd_learn(_config(tmp_path), tmp_path / "absent.csv")


class TestCommandLine:

    def test_simulate_succeeds(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"grid": {"nx": 33, "nt": 11, "t_max": 0.1}, "noise_levels": [0.1]}))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "runs")]) == 0
        assert "burgers1d_clean.csv" in capsys.readouterr().out

    def test_configuration_errors_exit_with_2(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"unknown": 1}))
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert main(["learn", str(tmp_path / "absent.csv"), "--out", str(tmp_path)]) == 2

    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            main([])


class TestHierarchical:

    def test_per_test_reports_hash_their_own_dataset(self, tmp_path):
        config = _config(tmp_path, system="kdv", grid={"nx": 32, "nt": 11, "t_max": 0.1},
                         hbi={"steps": 8, "n_models": 3, "n_select": 2, "noise_range": [0.0, 0.05]})
        population = cmd_simulate(config, population=True)
        manifest, files = population.paths[0], population.paths[1:]
        start = SparseModel(
            indices=(6, 4), names=("uu_x", "u_xxx"), mean=np.array([-1.0, -0.0025]),
            std=np.array([0.05, 0.0002]), covariance=np.diag([0.05**2, 0.0002**2]), alpha=np.ones(2),
            log_likelihood=0.0, iterations=2, converged=True, library_size=16,
        )
        model_path = write_report(sparse_model_report(start), tmp_path / "start_model.txt")

        flow = cmd_hbi(config, manifest, model_path)
        tests = [p for p in flow.paths if p.name.startswith("hbi_test_")]
        assert [p.name for p in tests] == ["hbi_test_000.txt", "hbi_test_001.txt"]
        digests = [read_report(p).fields["inputs_sha256"] for p in tests]
        assert digests == [inputs_digest([manifest, f]) for f in files]
        assert digests[0] != digests[1]
