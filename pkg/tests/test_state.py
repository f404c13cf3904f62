# tests/test_state.py

import json

import pytest

from core.state import DEFAULT_RUN_CONFIG, init_run_config, load_run_config
from pde_discovery.errors import ConfigurationError


class TestInitRunConfig:

    def test_defaults(self):
        config = init_run_config()
        assert config == DEFAULT_RUN_CONFIG
        assert config is not DEFAULT_RUN_CONFIG

    def test_nested_override_keeps_siblings(self):
        config = init_run_config({"bmu": {"steps": 100}})
        assert config["bmu"]["steps"] == 100
        assert config["bmu"]["chains"] == 2
        assert DEFAULT_RUN_CONFIG["bmu"]["steps"] == 2000

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigurationError, match="noise_level"):
            init_run_config({"noise_level": 0.1})

    def test_unknown_nested_key_names_the_section(self):
        with pytest.raises(ConfigurationError, match="preprocess.denoiser"):
            init_run_config({"preprocess": {"denoiser": {"epochs": 10}}})

    def test_wrong_type(self):
        with pytest.raises(ConfigurationError, match="pesbl.tol1"):
            init_run_config({"pesbl": {"tol1": "small"}})
        with pytest.raises(ConfigurationError):
            init_run_config({"bmu": {"steps": 10.5}})
        with pytest.raises(ConfigurationError):
            init_run_config({"pesbl": {"update_noise": 1}})

    def test_integral_float_accepted_for_int(self):
        assert init_run_config({"bmu": {"steps": 100.0}})["bmu"]["steps"] == 100.0

    def test_open_sections_take_free_keys(self):
        config = init_run_config({"grid": {"nx": 64, "t_max": 0.5}, "coefficients": {"u_xx": 0.01}})
        assert config["grid"] == {"nx": 64, "t_max": 0.5}
        assert config["coefficients"] == {"u_xx": 0.01}

    def test_scalar_noise_level(self):
        assert init_run_config({"noise_levels": 0.2})["noise_levels"] == [0.2]

    def test_negative_noise_level(self):
        with pytest.raises(ConfigurationError):
            init_run_config({"noise_levels": [0.1, -0.1]})

    def test_jobs_at_least_one(self):
        with pytest.raises(ConfigurationError):
            init_run_config({"jobs": 0})


class TestLoadRunConfig:

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"system": "kdv", "seed": 4}))
        config = load_run_config(path, seed=9, out=str(tmp_path / "out"), jobs=2)
        assert config["system"] == "kdv"
        assert config["seed"] == 9
        assert config["output_dir"] == str(tmp_path / "out")
        assert config["jobs"] == 2

    def test_no_file_means_defaults(self):
        assert load_run_config()["seed"] == 0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_run_config(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{seed: 1")
        with pytest.raises(ConfigurationError):
            load_run_config(path)

    def test_top_level_must_be_an_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigurationError):
            load_run_config(path)
