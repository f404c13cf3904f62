# pde_discovery/reports.py

"""
Structured text reports shared by every stage.

Layout:

    report: sparse_model
    converged: true
    ...                          key: value lines
    [config]
    { resolved run config as JSON }
    [table coefficients]
    name,mean,std                CSV block
    ...

Blocks start at a line beginning with '['; the JSON config never does, so
the format parses without escaping.
"""

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from pde_discovery.bmu import PosteriorSummary
from pde_discovery.errors import ConfigurationError
from pde_discovery.hbi import HbiResult
from pde_discovery.pesbl import SparseModel
from pde_discovery.propagate import PredictiveEnvelope, ShiftReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class Report:
    kind: str
    fields: Dict[str, str] = field(default_factory=dict)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    config: Optional[dict] = None

    def get_float(self, key: str) -> float:
        return float(self.fields[key])

    def get_bool(self, key: str) -> bool:
        return self.fields[key].lower() == "true"

    def table(self, name: str) -> pd.DataFrame:
        if name not in self.tables:
            raise ConfigurationError(f"The {self.kind} report has no '{name}' table.")
        return self.tables[name]


# ------------------------------
# Hashing
# ------------------------------

def config_digest(config: Optional[Mapping]) -> str:
    text = json.dumps(config or {}, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def inputs_digest(paths: Sequence[PathLike]) -> str:
    """Content hash over input files in the given order."""
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                h.update(chunk)
    return h.hexdigest()


# ------------------------------
# Reading and writing
# ------------------------------

def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_report(report: Report, path: PathLike, inputs: Sequence[PathLike] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"report: {report.kind}"]
    lines += [f"{k}: {_format(v)}" for k, v in report.fields.items()]
    lines.append(f"config_sha256: {config_digest(report.config)}")
    if inputs:
        lines.append(f"inputs_sha256: {inputs_digest(inputs)}")
    if report.config is not None:
        lines.append("[config]")
        lines.append(json.dumps(report.config, indent=2, sort_keys=True, default=str))
    for name, frame in report.tables.items():
        lines.append(f"[table {name}]")
        lines.append(frame.to_csv(index=False, float_format="%.17g", lineterminator="\n").rstrip("\n"))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    logger.info("Wrote %s report to %s", report.kind, path)
    return path


def read_report(path: PathLike, kind: Optional[str] = None) -> Report:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Report not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read().splitlines()

    fields: Dict[str, str] = {}
    blocks: Dict[str, list] = {}
    current = None
    for line in text:
        if line.startswith("["):
            current = line.strip()[1:-1]
            blocks[current] = []
        elif current is None:
            if line.strip():
                key, _, value = line.partition(":")
                fields[key.strip()] = value.strip()
        else:
            blocks[current].append(line)

    found = fields.pop("report", None)
    if found is None:
        raise ConfigurationError(f"{path} is not a report (missing 'report:' line).")
    if kind is not None and found != kind:
        raise ConfigurationError(f"{path} holds a '{found}' report, expected '{kind}'.")

    config = json.loads("\n".join(blocks.pop("config"))) if "config" in blocks else None
    tables = {}
    for name, body in blocks.items():
        if name.startswith("table "):
            tables[name[len("table "):]] = pd.read_csv(io.StringIO("\n".join(body)), float_precision="round_trip")
    return Report(found, fields, tables, config)


# ------------------------------
# Stage reports
# ------------------------------

def sparse_model_report(model: SparseModel, config: Optional[dict] = None,
                        reference: Optional[Sequence[str]] = None) -> Report:
    fields = {
        "terms": " ".join(model.names),
        "indices": " ".join(str(i) for i in model.indices),
        "library_size": model.library_size,
        "log_likelihood": model.log_likelihood,
        "iterations": model.iterations,
        "converged": model.converged,
        "complexity": model.complexity,
        "sigma2": model.sigma2,
        "tol2_triggered": model.tol2_triggered,
    }
    if reference is not None:
        fields["reference_terms"] = " ".join(reference)
        fields["matches_reference"] = set(reference) == set(model.names)
    tables = {
        "coefficients": pd.DataFrame({"index": model.indices, "name": model.names, "mean": model.mean,
                                      "std": model.std, "alpha": model.alpha}),
        "covariance": pd.DataFrame(model.covariance, columns=list(model.names)),
        "likelihood": pd.DataFrame({"iteration": np.arange(len(model.L_trace)), "log_likelihood": model.L_trace}),
    }
    return Report("sparse_model", fields, tables, config)


def sparse_model_from_report(report: Report) -> SparseModel:
    coefs = report.table("coefficients")
    names = tuple(str(n) for n in coefs["name"])
    likelihood = report.tables.get("likelihood")
    return SparseModel(
        indices=tuple(int(i) for i in coefs["index"]),
        names=names,
        mean=coefs["mean"].to_numpy(dtype=float),
        std=coefs["std"].to_numpy(dtype=float),
        covariance=report.table("covariance")[list(names)].to_numpy(dtype=float),
        alpha=coefs["alpha"].to_numpy(dtype=float),
        log_likelihood=report.get_float("log_likelihood"),
        iterations=int(report.fields["iterations"]),
        converged=report.get_bool("converged"),
        library_size=int(report.fields["library_size"]),
        sigma2=report.get_float("sigma2"),
        L_trace=() if likelihood is None else tuple(likelihood["log_likelihood"].astype(float)),
        tol2_triggered=int(report.fields.get("tol2_triggered", 0)),
    )


def posterior_report(summary: PosteriorSummary, config: Optional[dict] = None) -> Report:
    fields = {
        "terms": " ".join(summary.names),
        "chains": summary.chains,
        "n_samples": summary.n_samples,
        "burn_in": summary.burn_in,
        "converged": summary.converged,
        "mu_e": summary.mu_e,
        "sigma_e2": summary.sigma_e2,
    }
    acceptance = np.asarray(summary.acceptance)
    tables = {
        "coefficients": pd.DataFrame({"name": summary.names, "mean": summary.mean, "std": summary.std}),
        "gelman_rubin": pd.DataFrame({"parameter": list(summary.gelman_rubin),
                                      "psrf": list(summary.gelman_rubin.values())}),
        "acceptance": pd.DataFrame(acceptance, columns=list(summary.names)),
    }
    return Report("posterior", fields, tables, config)


def posterior_from_report(report: Report, trace: Optional[pd.DataFrame] = None) -> PosteriorSummary:
    coefs = report.table("coefficients")
    names = tuple(str(n) for n in coefs["name"])
    gr = report.table("gelman_rubin")
    return PosteriorSummary(
        names=names,
        mean=coefs["mean"].to_numpy(dtype=float),
        std=coefs["std"].to_numpy(dtype=float),
        gelman_rubin=dict(zip(gr["parameter"].astype(str), gr["psrf"].astype(float))),
        n_samples=int(report.fields["n_samples"]),
        burn_in=int(report.fields["burn_in"]),
        converged=report.get_bool("converged"),
        chains=int(report.fields["chains"]),
        acceptance=report.table("acceptance")[list(names)].to_numpy(dtype=float),
        mu_e=report.get_float("mu_e"),
        sigma_e2=report.get_float("sigma_e2"),
        trace=trace,
    )


def shift_report(shift: ShiftReport, config: Optional[dict] = None) -> Report:
    tables = {
        "shift": pd.DataFrame({"name": shift.names, "mean": shift.mean, "variance": shift.variance,
                               "std": shift.std, "exceedance": shift.exceedance}),
    }
    return Report("shift", {"terms": " ".join(shift.names), "threshold": shift.threshold}, tables, config)


def envelope_report(envelope: PredictiveEnvelope, config: Optional[dict] = None) -> Report:
    fields = {
        "section_axis": envelope.section.axis,
        "section_value": envelope.section.value,
        "draws": envelope.n_draws,
        "dropped": envelope.dropped,
        "flagged": envelope.flagged,
    }
    if envelope.coverage is not None:
        fields["coverage"] = envelope.coverage
    return Report("envelope", fields, {"envelope": envelope.to_frame()}, config)


def hbi_report(result: HbiResult, config: Optional[dict] = None, datasets: Sequence[str] = ()) -> Report:
    """Hyper-level report: μ_ξ and σ_ξ posteriors plus the population fit of per-test means."""
    fields = {
        "terms": " ".join(result.names),
        "tests": result.n_tests,
        "n_samples": result.n_samples,
        "burn_in": result.burn_in,
        "converged": result.converged,
        "mu_e": result.mu_e,
        "sigma_e2": result.sigma_e2,
    }
    tables = {
        "hyper": pd.DataFrame({
            "name": result.names,
            "hyper_mean": result.hyper_mean,
            "hyper_mean_std": result.hyper_mean_std,
            "hyper_std": result.hyper_std,
            "hyper_std_std": result.hyper_std_std,
            "population_mean": result.population_mean,
            "population_std": result.population_std,
        }),
        "gelman_rubin": pd.DataFrame({"parameter": list(result.gelman_rubin),
                                      "psrf": list(result.gelman_rubin.values())}),
    }
    per_test = pd.DataFrame(result.test_means, columns=[f"mean:{n}" for n in result.names])
    for j, n in enumerate(result.names):
        per_test[f"std:{n}"] = result.test_stds[:, j]
    if datasets:
        per_test.insert(0, "dataset", list(datasets))
    tables["tests"] = per_test
    return Report("hbi", fields, tables, config)


def hbi_test_report(result: HbiResult, t: int, dataset: str = "", config: Optional[dict] = None) -> Report:
    fields = {"test": t, "terms": " ".join(result.names), "converged": result.converged}
    if dataset:
        fields["dataset"] = dataset
    tables = {"coefficients": pd.DataFrame({"name": result.names, "mean": result.test_means[t],
                                            "std": result.test_stds[t]})}
    return Report("hbi_test", fields, tables, config)
