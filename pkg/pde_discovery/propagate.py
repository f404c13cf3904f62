# pde_discovery/propagate.py

"""
Forward propagation of coefficient posteriors and shift diagnosis between systems.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from pde_discovery.dynamics import PdeModel, SolverConfig, solve_generic
from pde_discovery.errors import ConfigurationError, SolverInstabilityError
from pde_discovery.fields import FieldSeries, GridSpec

logger = logging.getLogger(__name__)

MIN_DRAWS = 30
DEFAULT_DRAWS = 100
DROP_FLAG_FRACTION = 0.10
BAND_WIDTH = 3.0


@dataclass(frozen=True)
class Section:
    """A line through the space-time grid: `axis` fixed at `value`, optionally windowed on the free axis."""
    axis: str
    value: float
    window: Optional[Tuple[float, float]] = None

    def free_axis(self, grid: GridSpec) -> str:
        free = [a for a in grid.axes if a != self.axis]
        if len(free) != 1:
            raise ConfigurationError("Sections are lines; on 2D grids fix time and use a 1D slice instead.")
        return free[0]

    def extract(self, values: np.ndarray, grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
        """(free-axis coordinates, values along the section) using the nearest grid line."""
        ax = grid.axis_index(self.axis)
        coords = grid.coords(self.axis)
        if not coords.min() - 1e-12 <= self.value <= coords.max() + grid.spacing(self.axis) + 1e-12:
            raise ConfigurationError(
                f"Section {self.axis}={self.value} lies outside the grid range "
                f"[{coords.min():.4g}, {coords.max():.4g}]."
            )
        index = int(np.argmin(np.abs(coords - self.value)))
        line = np.take(values, index, axis=ax)
        free = self.free_axis(grid)
        free_coords = grid.coords(free)
        if self.window is not None:
            lo, hi = self.window
            keep = (free_coords >= lo - 1e-12) & (free_coords <= hi + 1e-12)
            if not keep.any():
                raise ConfigurationError(f"Section window {self.window} selects no {free} samples.")
            free_coords, line = free_coords[keep], line[keep]
        return free_coords, line


@dataclass(frozen=True, eq=False)
class PredictiveEnvelope:
    section: Section
    coordinates: np.ndarray
    trajectories: np.ndarray           # (kept draws, points)
    mean: np.ndarray
    std: np.ndarray
    truth: Optional[np.ndarray] = None
    dropped: int = 0
    flagged: bool = False
    free_axis: str = "t"

    @property
    def n_draws(self) -> int:
        return self.trajectories.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self.mean - BAND_WIDTH * self.std

    @property
    def upper(self) -> np.ndarray:
        return self.mean + BAND_WIDTH * self.std

    @property
    def coverage(self) -> Optional[float]:
        """Fraction of section points whose truth lies inside mean ± 3 std."""
        if self.truth is None:
            return None
        inside = (self.truth >= self.lower) & (self.truth <= self.upper)
        return float(inside.mean())

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            self.free_axis: self.coordinates,
            "mean": self.mean,
            "std": self.std,
            "lower": self.lower,
            "upper": self.upper,
        })
        if self.truth is not None:
            frame["truth"] = self.truth
        return frame


def thin_samples(samples: np.ndarray, n: int = DEFAULT_DRAWS) -> np.ndarray:
    """Evenly spaced rows of a pooled sample array."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] <= n:
        return samples.copy()
    index = np.round(np.linspace(0, samples.shape[0] - 1, n)).astype(int)
    return samples[index]


def propagate(samples: np.ndarray, model: PdeModel, grid: GridSpec, section: Section,
              ic: Union[np.ndarray, FieldSeries], solver: Optional[SolverConfig] = None,
              truth: Optional[FieldSeries] = None, jobs: int = 1) -> PredictiveEnvelope:
    """
    Solve the model once per coefficient draw and summarize the section.

    Unstable draws are dropped; the envelope is flagged when more than 10% are lost.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < MIN_DRAWS:
        raise ConfigurationError(f"Propagation needs at least {MIN_DRAWS} draws, got {samples.shape[0]}.")
    if samples.shape[1] != len(model.terms):
        raise ConfigurationError(
            f"Draws have {samples.shape[1]} coefficients but the model has {len(model.terms)} terms."
        )
    u0 = ic.values[0] if isinstance(ic, FieldSeries) else np.asarray(ic, dtype=float)

    def _solve(draw):
        try:
            series = solve_generic(model.with_coefficients(draw), u0, grid, solver)
        except SolverInstabilityError:
            return None
        return section.extract(series.values, grid)[1]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            lines = list(pool.map(_solve, samples))
    else:
        lines = [_solve(draw) for draw in samples]

    kept = [line for line in lines if line is not None]
    dropped = len(lines) - len(kept)
    if not kept:
        raise SolverInstabilityError("Every posterior draw produced an unstable forward solve.")
    flagged = dropped > DROP_FLAG_FRACTION * len(lines)
    if dropped:
        logger.warning("Dropped %d of %d unstable draws%s", dropped, len(lines), " (envelope flagged)" if flagged else "")

    trajectories = np.vstack(kept)
    coords, _ = section.extract(np.zeros(grid.shape), grid)
    truth_line = None
    if truth is not None:
        if truth.grid != grid:
            raise ConfigurationError("The reference field must live on the propagation grid.")
        truth_line = section.extract(truth.values, grid)[1]

    envelope = PredictiveEnvelope(
        section=section,
        coordinates=coords,
        trajectories=trajectories,
        mean=trajectories.mean(axis=0),
        std=trajectories.std(axis=0, ddof=1) if trajectories.shape[0] > 1 else np.zeros(trajectories.shape[1]),
        truth=truth_line,
        dropped=dropped,
        flagged=flagged,
        free_axis=section.free_axis(grid),
    )
    logger.info(
        "Propagated %d draws through %s=%g%s", envelope.n_draws, section.axis, section.value,
        "" if envelope.coverage is None else f" (coverage {envelope.coverage:.3f})",
    )
    return envelope


def write_envelope(envelope: PredictiveEnvelope, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    envelope.to_frame().to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote envelope to %s", path)
    return path


# ------------------------------
# Diagnosis
# ------------------------------

@dataclass(frozen=True, eq=False)
class ShiftReport:
    names: Tuple[str, ...]
    mean: np.ndarray                   # μ_B − μ_A
    variance: np.ndarray               # σ_A² + σ_B²
    threshold: float
    exceedance: np.ndarray             # P(|δξ_i| > threshold)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def as_dict(self) -> Dict[str, Dict[str, float]]:
        return {
            n: {"mean": float(m), "variance": float(v), "exceedance": float(p)}
            for n, m, v, p in zip(self.names, self.mean, self.variance, self.exceedance)
        }


def diagnose(post_a, post_b, threshold: float = 0.0) -> ShiftReport:
    """
    Gaussian shift δξ_i ~ N(μ_B − μ_A, σ_A² + σ_B²) between two independent posteriors.

    Accepts anything with `names`, `mean` and `std` (posterior summaries or learned models).
    """
    if threshold < 0:
        raise ConfigurationError(f"Exceedance threshold must be non-negative, got {threshold}.")
    names_a, names_b = tuple(post_a.names), tuple(post_b.names)
    if set(names_a) != set(names_b):
        diff = sorted(set(names_a) ^ set(names_b))
        raise ConfigurationError(
            f"The two posteriors describe different model forms; terms not shared: {', '.join(diff)}."
        )
    order = [names_b.index(n) for n in names_a]
    mean_a, std_a = np.asarray(post_a.mean, dtype=float), np.asarray(post_a.std, dtype=float)
    mean_b = np.asarray(post_b.mean, dtype=float)[order]
    std_b = np.asarray(post_b.std, dtype=float)[order]

    mean = mean_b - mean_a
    variance = std_a**2 + std_b**2
    scale = np.sqrt(variance)
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = norm.sf((threshold - mean) / scale)
        lower = norm.cdf((-threshold - mean) / scale)
    exceedance = np.where(scale > 0, upper + lower, (np.abs(mean) > threshold).astype(float))
    for n, m, v in zip(names_a, mean, variance):
        logger.info("Shift of %s: N(%.6g, %.6g)", n, m, v)
    return ShiftReport(names_a, mean, variance, threshold, exceedance)
