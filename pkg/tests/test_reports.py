# tests/test_reports.py

import numpy as np
import pandas as pd
import pytest

from pde_discovery.bmu import BmuConfig, run_chains
from pde_discovery.errors import ConfigurationError
from pde_discovery.pesbl import PesblConfig, run
from pde_discovery.reports import (
    Report,
    config_digest,
    posterior_from_report,
    posterior_report,
    read_report,
    sparse_model_from_report,
    sparse_model_report,
    write_report,
)


def _sparse_model():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(200, 8)))
    t = 0.8 * q[:, 1] - 0.6 * q[:, 4] + 1e-3 * rng.standard_normal(200)
    return run(q, t, PesblConfig())


class TestFormat:

    def test_layout(self, tmp_path):
        report = Report("demo", {"converged": True, "value": 0.1}, {"rows": pd.DataFrame({"a": [1, 2]})},
                        {"seed": 3})
        path = write_report(report, tmp_path / "demo.txt")
        lines = path.read_text().splitlines()
        assert lines[0] == "report: demo"
        assert lines[1] == "converged: true"
        assert lines[2] == "value: 0.10000000000000001"
        assert lines[3].startswith("config_sha256: ")
        assert "[config]" in lines and "[table rows]" in lines

    def test_read_back(self, tmp_path):
        report = Report("demo", {"flag": False, "n": 4}, {"rows": pd.DataFrame({"a": [1.5, 2.5]})}, {"seed": 3})
        loaded = read_report(write_report(report, tmp_path / "demo.txt"), "demo")
        assert loaded.get_bool("flag") is False
        assert loaded.get_float("n") == 4.0
        assert loaded.config == {"seed": 3}
        np.testing.assert_array_equal(loaded.table("rows")["a"], [1.5, 2.5])

    def test_tables_read_back_bit_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        values = rng.standard_normal(2000) * 10.0 ** rng.uniform(-300, 300, 2000)
        report = Report("demo", tables={"rows": pd.DataFrame({"a": values})})
        loaded = read_report(write_report(report, tmp_path / "exact.txt"), "demo")
        np.testing.assert_array_equal(loaded.table("rows")["a"].to_numpy(), values)

    def test_wrong_kind(self, tmp_path):
        path = write_report(Report("demo"), tmp_path / "demo.txt")
        with pytest.raises(ConfigurationError):
            read_report(path, "posterior")

    def test_missing_table(self):
        with pytest.raises(ConfigurationError):
            Report("demo").table("coefficients")

    def test_not_a_report(self, tmp_path):
        path = tmp_path / "x.txt"
        path.write_text("hello: world\n")
        with pytest.raises(ConfigurationError):
            read_report(path)

    def test_config_digest_ignores_key_order(self):
        assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})
        assert config_digest({"a": 1}) != config_digest({"a": 2})

    def test_inputs_digest_tracks_content(self, tmp_path):
        data = tmp_path / "u.csv"
        data.write_text("1\n")
        first = read_report(write_report(Report("demo"), tmp_path / "a.txt", inputs=[data]))
        data.write_text("2\n")
        second = read_report(write_report(Report("demo"), tmp_path / "b.txt", inputs=[data]))
        assert first.fields["inputs_sha256"] != second.fields["inputs_sha256"]


class TestStageReports:

    def test_sparse_model_survives_the_file(self, tmp_path):
        model = _sparse_model()
        report = sparse_model_report(model, {"seed": 0}, reference=("term2", "term5"))
        assert report.fields["matches_reference"] is True
        loaded = sparse_model_from_report(read_report(write_report(report, tmp_path / "m.txt"), "sparse_model"))
        assert loaded.names == model.names
        assert loaded.indices == model.indices
        np.testing.assert_array_equal(loaded.mean, model.mean)
        np.testing.assert_array_equal(loaded.covariance, model.covariance)
        assert loaded.converged == model.converged
        assert loaded.L_trace == pytest.approx(model.L_trace)

    def test_posterior_survives_the_file(self, tmp_path):
        def line_error(xi):
            x = np.linspace(-1.0, 1.0, 20)
            return 2.0 * x - 1.0 - (xi[0] * x + xi[1])

        summary = run_chains(line_error, [2.0, -1.0], [0.5, 0.5], ("a", "b"), BmuConfig(steps=20), seed=0)
        loaded = posterior_from_report(read_report(write_report(posterior_report(summary), tmp_path / "p.txt")))
        assert loaded.names == ("a", "b")
        np.testing.assert_array_equal(loaded.mean, summary.mean)
        assert loaded.gelman_rubin == pytest.approx(summary.gelman_rubin)
        assert loaded.acceptance.shape == (2, 2)
