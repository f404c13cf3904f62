# core/pipeline_flow.py

"""
One function per CLI subcommand.

Each flow reads its upstream artifacts, runs the matching pde_discovery stage
and writes reports next to them. Flows return their result objects so app.py
can turn convergence flags into exit codes.
"""

import logging
import subprocess
import sys
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd

from pde_discovery.bmu import BmuConfig, PosteriorSummary, run_bmu, write_trace
from pde_discovery.dynamics import (
    REFERENCE_COEFFICIENTS,
    SolverConfig,
    add_noise,
    make_grid,
    reference_model,
    simulate_system,
)
from pde_discovery.errors import ConfigurationError
from pde_discovery.fields import read_field, write_field
from pde_discovery.hbi import HbiConfig, generate_population, read_manifest, run_hbi, write_manifest
from pde_discovery.pesbl import PesblConfig, learn
from pde_discovery.preprocess import PreprocessConfig, prepare_regression
from pde_discovery.propagate import (
    Section,
    diagnose,
    propagate,
    thin_samples,
    write_envelope,
)
from pde_discovery.reports import (
    Report,
    envelope_report,
    hbi_report,
    hbi_test_report,
    posterior_from_report,
    posterior_report,
    read_report,
    shift_report,
    sparse_model_from_report,
    sparse_model_report,
    write_report,
)
from pde_discovery.rng import stage_seed

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

REPO_ROOT = Path(__file__).resolve().parent.parent


class FlowResult(NamedTuple):
    result: object                     # stage result (SparseModel, PosteriorSummary, ...)
    paths: List[Path]                  # files written, report first


def _require(path: PathLike, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Missing {what}: {path}\nRun the upstream subcommand first or fix the path.")
    return path


def _out_dir(config: dict) -> Path:
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _noise_tag(level: float) -> str:
    return f"noise{int(round(level * 100)):03d}"


def _system_base(system: str) -> str:
    return system.split("_")[0]


# ==========================================================
# 🌊 SIMULATE
# ==========================================================
def cmd_simulate(config: dict, population: bool = False) -> FlowResult:
    """Clean and noisy datasets plus a manifest echoing the resolved config."""
    if population:
        return _simulate_population(config)

    system = config["system"]
    out = _out_dir(config)
    grid = make_grid(system, **config["grid"])
    solver = SolverConfig.from_dict(config["solver"])
    clean = simulate_system(system, grid, solver, config["coefficients"])

    clean_path = write_field(clean, out / f"{system}_clean.csv")
    paths, rows = [clean_path], [{"file": clean_path.name, "provenance": "clean", "noise_level": 0.0, "seed": -1}]
    for level in config["noise_levels"]:
        seed = stage_seed(config["seed"], f"noise:{level}")
        noisy = add_noise(clean, float(level), seed)
        path = write_field(noisy, out / f"{system}_{_noise_tag(level)}.csv")
        paths.append(path)
        rows.append({"file": path.name, "provenance": "noisy", "noise_level": float(level), "seed": seed})

    manifest = Report("datasets", {"system": system, "datasets": len(paths)},
                      {"datasets": pd.DataFrame(rows)}, config)
    manifest_path = write_report(manifest, out / f"{system}_manifest.txt", inputs=paths)
    return FlowResult(clean, [manifest_path] + paths)


def _simulate_population(config: dict) -> FlowResult:
    system = config["system"]
    out = _out_dir(config) / "population"
    hbi_cfg = HbiConfig.from_dict(config["hbi"])
    grid = make_grid(system, **config["grid"])
    solver = SolverConfig.from_dict(config["solver"])
    members = generate_population(hbi_cfg, stage_seed(config["seed"], "population"), grid, solver, system)

    files = [write_field(m.noisy, out / f"test_{m.index:03d}.csv") for m in members]
    manifest_path = write_manifest(members, files, out / "manifest.csv")
    return FlowResult(members, [manifest_path] + files)


# ==========================================================
# 🧮 LEARN
# ==========================================================
def cmd_learn(config: dict, dataset: PathLike, clean: Optional[PathLike] = None) -> FlowResult:
    """preprocess → library → PeSBL; writes the model report and the log-likelihood trace."""
    dataset = _require(dataset, "dataset")
    series = read_field(dataset)
    problem = prepare_regression(series, PreprocessConfig.from_dict(config["preprocess"]))
    model = learn(problem, PesblConfig.from_dict(config["pesbl"]))

    system = config["system"]
    reference = reference_model(system).terms if system in REFERENCE_COEFFICIENTS else None
    report = sparse_model_report(model, config, reference)
    report.fields["dataset"] = dataset.name
    inputs = [dataset]
    if clean is not None:
        clean_path = _require(clean, "clean reference")
        truth = read_field(clean_path)
        if truth.grid != series.grid:
            raise ConfigurationError("The clean reference and the dataset live on different grids.")
        scale = float(np.std(truth.values))
        report.fields["residual_noise_before"] = float(np.std(series.values - truth.values)) / scale
        report.fields["residual_noise_after"] = float(np.std(problem.smoothed.values - truth.values)) / scale
        inputs.append(clean_path)
    if reference is not None and not report.fields["matches_reference"]:
        logger.warning("Learned terms %s differ from the reference %s", model.names, reference)

    stem = dataset.with_suffix("")
    trace_path = stem.parent / f"{stem.name}_likelihood.csv"
    report.tables["likelihood"].to_csv(trace_path, index=False, float_format="%.17g")
    report_path = write_report(report, stem.parent / f"{stem.name}_model.txt", inputs=inputs)
    return FlowResult(model, [report_path, trace_path])


# ==========================================================
# 🔁 BMU
# ==========================================================
def cmd_bmu(config: dict, model_report: PathLike, dataset: PathLike) -> FlowResult:
    model_path = _require(model_report, "model report")
    dataset = _require(dataset, "dataset")
    model = sparse_model_from_report(read_report(model_path, "sparse_model"))
    u_raw = read_field(dataset)

    summary = run_bmu(
        model, u_raw, BmuConfig.from_dict(config["bmu"]),
        seed=stage_seed(config["seed"], "bmu"),
        solver=SolverConfig.from_dict(config["solver"]),
        jobs=config["jobs"],
        system=_system_base(config["system"]),
    )
    stem = dataset.with_suffix("")
    trace_path = stem.parent / f"{stem.name}_trace.csv"
    write_trace(summary, trace_path)
    report = posterior_report(summary, config)
    report.fields["trace_file"] = trace_path.name
    report_path = write_report(report, stem.parent / f"{stem.name}_posterior.txt", inputs=[model_path, dataset])
    return FlowResult(summary, [report_path, trace_path])


def _load_posterior(path: Path) -> PosteriorSummary:
    report = read_report(path, "posterior")
    trace_path = _require(path.parent / report.fields["trace_file"], "chain trace")
    return posterior_from_report(report, pd.read_csv(trace_path, float_precision="round_trip"))


# ==========================================================
# 📈 PROPAGATE
# ==========================================================
def cmd_propagate(config: dict, posterior: PathLike, dataset: PathLike,
                  truth: Optional[PathLike] = None) -> FlowResult:
    """Forward-propagate thinned posterior draws; `truth` supplies the clean IC and coverage reference."""
    posterior = _require(posterior, "posterior report")
    dataset = _require(dataset, "dataset")
    summary = _load_posterior(posterior)
    series = read_field(dataset)
    reference = read_field(_require(truth, "clean reference")) if truth is not None else None

    settings = config["propagate"]
    window = tuple(settings["window"]) if settings["window"] is not None else None
    section = Section(settings["section_axis"], float(settings["section_value"]), window)
    samples = thin_samples(summary.samples(), settings["draws"])
    envelope = propagate(
        samples, summary.to_pde_model(_system_base(config["system"])), series.grid, section,
        reference if reference is not None else series,
        solver=SolverConfig.from_dict(config["solver"]), truth=reference, jobs=config["jobs"],
    )

    stem = posterior.with_suffix("")
    csv_path = write_envelope(envelope, stem.parent / f"{stem.name}_envelope.csv")
    inputs = [posterior, dataset] + ([Path(truth)] if truth is not None else [])
    report_path = write_report(envelope_report(envelope, config), stem.parent / f"{stem.name}_envelope.txt", inputs)
    return FlowResult(envelope, [report_path, csv_path])


# ==========================================================
# 🔍 DIAGNOSE
# ==========================================================
def _load_any_posterior(path: Path):
    report = read_report(path)
    if report.kind == "posterior":
        return posterior_from_report(report)
    if report.kind == "sparse_model":
        return sparse_model_from_report(report)
    raise ConfigurationError(f"{path} holds a '{report.kind}' report; diagnose needs posterior or model reports.")


def cmd_diagnose(config: dict, report_a: PathLike, report_b: PathLike) -> FlowResult:
    """Shift distribution between system A (baseline) and system B."""
    path_a, path_b = _require(report_a, "report A"), _require(report_b, "report B")
    shift = diagnose(_load_any_posterior(path_a), _load_any_posterior(path_b), config["diagnose"]["threshold"])
    out = _out_dir(config)
    report_path = write_report(shift_report(shift, config), out / f"shift_{path_a.stem}_vs_{path_b.stem}.txt",
                               inputs=[path_a, path_b])
    return FlowResult(shift, [report_path])


# ==========================================================
# 👥 HBI
# ==========================================================
def cmd_hbi(config: dict, manifest: PathLike, model_report: Optional[PathLike] = None) -> FlowResult:
    """
    Hierarchical inference over the datasets listed in a population manifest.

    The model form and starting values come from `model_report` or, when absent,
    from learning on the first dataset.
    """
    manifest = _require(manifest, "population manifest")
    frame = read_manifest(manifest)
    files = [_require(manifest.parent / name, "population dataset") for name in frame["dataset"]]
    datasets = [read_field(f) for f in files]

    if model_report is not None:
        start = sparse_model_from_report(read_report(_require(model_report, "model report"), "sparse_model"))
    else:
        problem = prepare_regression(datasets[0], PreprocessConfig.from_dict(config["preprocess"]))
        start = learn(problem, PesblConfig.from_dict(config["pesbl"]))
    model = start.to_pde_model(_system_base(config["system"]))

    result = run_hbi(
        datasets, model, cfg=HbiConfig.from_dict(config["hbi"]),
        seed=stage_seed(config["seed"], "hbi"),
        solver=SolverConfig.from_dict(config["solver"]),
        jobs=config["jobs"],
    )
    out = manifest.parent
    trace_path = out / "hbi_trace.csv"
    result.trace.to_csv(trace_path, index=False, float_format="%.17g")
    names = [f.name for f in files]
    paths = [write_report(hbi_report(result, config, names), out / "hbi_report.txt", inputs=[manifest] + files)]
    for t, name in enumerate(names):
        paths.append(write_report(hbi_test_report(result, t, name, config), out / f"hbi_test_{t:03d}.txt",
                                  inputs=[manifest, files[t]]))
    paths.append(trace_path)
    return FlowResult(result, paths)


# ==========================================================
# ✅ VERIFY
# ==========================================================
def cmd_verify(extra: Sequence[str] = ()) -> int:
    """Run the acceptance-marked test suite and return pytest's exit status."""
    command = [sys.executable, "-m", "pytest", "--acceptance", "-m", "acceptance", str(REPO_ROOT / "tests"), *extra]
    logger.info("Running acceptance suite: %s", " ".join(command))
    return subprocess.call(command, cwd=REPO_ROOT)
