# core/state.py

import copy
import json
from pathlib import Path
from typing import Mapping, Optional, Union

from pde_discovery.errors import ConfigurationError

# Keys whose values are free-form mappings, validated by the stage that consumes them.
OPEN_SECTIONS = {"grid", "coefficients"}

DEFAULT_RUN_CONFIG = {
    "system": "burgers1d",            # burgers1d | burgers1d_varied | kdv | burgers2d
    "coefficients": None,             # optional {term: value} override of the generating model
    "grid": {},                       # overrides of the system's grid preset (nx, nt, t_max, ...)
    "noise_levels": [0.1],            # fractions of std(u); one noisy dataset per level
    "seed": 0,                        # root seed; every stage derives its own from it
    "jobs": 1,                        # worker threads for chains, draws and datasets
    "output_dir": "runs",
    "solver": {
        "method": "auto",             # auto | spectral | finite-difference
        "substeps": 1,
        "safety": 0.5,
        "blowup_limit": 1.0e6,
    },
    "preprocess": {
        "denoise": True,
        "denoiser": {
            "method": "mlp",          # or "savgol"
            "hidden_layers": [32, 32, 32],
            "activation": "tanh",
            "train_fraction": 0.8,
            "patience": 50,
            "max_epochs": 2000,
            "learning_rate": 1.0e-2,
            "seed": 0,
            "max_train_points": 20000,   # network fit subset; keeps 2D fields desk-scale
            "residual_smoothing": True,  # add back the smoothed network misfit
            "savgol_window": 11,
            "savgol_order": 3,
        },
        "derivative_method": "polynomial",   # or "finite-difference"
        "derivative_window": None,
        "spectral": True,
        "cutoff": 0.3,                # retained fraction of each axis' spectrum
        "trim": 2,                    # boundary layers dropped before regression
    },
    "pesbl": {
        "max_iters": 1000,
        "tol1": 1.0e-4,
        "tol2": 1.0e-2,
        "complexity_penalty": True,
        "update_noise": False,
        "noise_floor": 1.0e-12,
        "debug_checks": False,
    },
    "bmu": {
        "chains": 2,
        "steps": 2000,
        "burn_in_fraction": 0.25,
        "coarsen": 0.5,
        "smooth_points": 5,
        "adapt_interval": 50,
        "target_acceptance": [0.2, 0.5],
        "start_spread": 0.05,
        "sigma_mu_e2": 1.0 / 9.0,
        "alpha_e": 1.0,
        "beta_e": 2.0,
        "gr_threshold": 1.1,
        "update_error_model": True,
        "sigma_e2_start": None,
    },
    "propagate": {
        "draws": 100,                 # thinned posterior samples, at least 30
        "section_axis": "x",          # axis held fixed
        "section_value": 0.5,
        "window": None,               # [lo, hi] on the free axis
    },
    "diagnose": {
        "threshold": 0.0,             # exceedance level for |δξ|
    },
    "hbi": {
        "chains": 2,
        "steps": 5000,
        "burn_in_fraction": 0.25,
        "coarsen": 0.5,
        "smooth_points": 5,
        "adapt_interval": 50,
        "target_acceptance": [0.2, 0.5],
        "start_spread": 0.05,
        "limit_factor": 5.0,          # hypermean limits: estimate ± factor·|estimate|
        "alpha_xi": 1.0,
        "beta_xi": 2.0,
        "gr_threshold": 1.1,
        "update_error_model": True,
        "n_models": 1000,
        "n_select": 10,
        "xi_mean": [-1.0, -0.0025],
        "xi_std": [0.05, 0.0002],
        "noise_range": [0.0, 0.5],
    },
}


def _check_type(path: str, default, value):
    if default is None or value is None:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            ok = value.is_integer()
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, (list, float, int)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigurationError(
            f"Config value '{path}' has the wrong type: expected {type(default).__name__}, "
            f"got {type(value).__name__} ({value!r})."
        )


def _merge(defaults: dict, raw: Mapping, prefix: str = "") -> dict:
    merged = copy.deepcopy(defaults)
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        where = f" in '{prefix.rstrip('.')}'" if prefix else ""
        raise ConfigurationError(
            f"Unknown config key(s){where}: {', '.join(unknown)}.\n"
            f"Allowed keys: {', '.join(defaults)}."
        )
    for key, value in raw.items():
        path = prefix + key
        default = defaults[key]
        if isinstance(default, dict) and key not in OPEN_SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigurationError(f"Config section '{path}' must be a mapping, got {value!r}.")
            merged[key] = _merge(default, value, path + ".")
        else:
            _check_type(path, default, value)
            merged[key] = copy.deepcopy(value)
    return merged


def init_run_config(raw: Optional[Mapping] = None) -> dict:
    """Merge user settings over DEFAULT_RUN_CONFIG, failing fast on unknown keys or bad types."""
    config = _merge(DEFAULT_RUN_CONFIG, raw or {})
    if isinstance(config["noise_levels"], (int, float)):
        config["noise_levels"] = [config["noise_levels"]]
    if any(level < 0 for level in config["noise_levels"]):
        raise ConfigurationError(f"Noise levels must be non-negative, got {config['noise_levels']}.")
    if config["jobs"] < 1:
        raise ConfigurationError(f"jobs must be at least 1, got {config['jobs']}.")
    return config


def load_run_config(path: Optional[Union[str, Path]] = None, seed: Optional[int] = None,
                    out: Optional[str] = None, jobs: Optional[int] = None) -> dict:
    """Read a JSON run config (or use the defaults) and apply CLI overrides."""
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path} must hold a JSON object at the top level.")
    overrides = {"seed": seed, "output_dir": out, "jobs": jobs}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return init_run_config(raw)
