# pde_discovery/fields.py

"""
Space-time grids and the sampled fields that live on them.

A FieldSeries is stored as a self-describing text container: `# key: value`
header lines followed by CSV rows in row-major order (t outer, then y, then x).
"""

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from pde_discovery.errors import ConfigurationError, DegenerateDataError

logger = logging.getLogger(__name__)

PROVENANCES = ("clean", "noisy", "denoised", "simulated")
MIN_POINTS = 8
CONTAINER_VERSION = "v1"


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    nx: int
    t_min: float
    t_max: float
    nt: int
    y_min: Optional[float] = None
    y_max: Optional[float] = None
    ny: Optional[int] = None
    periodic: bool = False

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ConfigurationError(f"Grid needs x_max > x_min, got [{self.x_min}, {self.x_max}].")
        if not self.t_max > self.t_min:
            raise ConfigurationError(f"Grid needs t_max > t_min, got [{self.t_min}, {self.t_max}].")
        if self.nx < MIN_POINTS or self.nt < MIN_POINTS:
            raise ConfigurationError(
                f"Grid needs at least {MIN_POINTS} points per axis, got nx={self.nx}, nt={self.nt}."
            )
        y_parts = (self.y_min, self.y_max, self.ny)
        if any(p is not None for p in y_parts):
            if any(p is None for p in y_parts):
                raise ConfigurationError("A 2D grid needs all of y_min, y_max and ny.")
            if not self.y_max > self.y_min:
                raise ConfigurationError(f"Grid needs y_max > y_min, got [{self.y_min}, {self.y_max}].")
            if self.ny < MIN_POINTS:
                raise ConfigurationError(f"Grid needs at least {MIN_POINTS} points along y, got ny={self.ny}.")

    # ------------------------------
    # Coordinates
    # ------------------------------

    @property
    def is_2d(self) -> bool:
        return self.ny is not None

    @property
    def spatial_shape(self) -> Tuple[int, ...]:
        return (self.ny, self.nx) if self.is_2d else (self.nx,)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.nt,) + self.spatial_shape

    @property
    def axes(self) -> Tuple[str, ...]:
        return ("t", "y", "x") if self.is_2d else ("t", "x")

    def axis_index(self, axis: str) -> int:
        """Position of a named axis in the values array."""
        if axis not in self.axes:
            raise ConfigurationError(f"Axis '{axis}' is not part of this grid (axes: {', '.join(self.axes)}).")
        return self.axes.index(axis)

    def _spatial_coords(self, lo: float, hi: float, n: int) -> np.ndarray:
        if self.periodic:
            return lo + (hi - lo) / n * np.arange(n)
        return np.linspace(lo, hi, n)

    @property
    def x(self) -> np.ndarray:
        return self._spatial_coords(self.x_min, self.x_max, self.nx)

    @property
    def y(self) -> np.ndarray:
        if not self.is_2d:
            raise ConfigurationError("This grid has no y axis.")
        return self._spatial_coords(self.y_min, self.y_max, self.ny)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.nt)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.nt - 1)

    def spacing(self, axis: str) -> float:
        return {"t": self.dt, "x": self.dx, "y": self.dy if self.is_2d else None}[axis]

    def coords(self, axis: str) -> np.ndarray:
        self.axis_index(axis)
        return getattr(self, axis)

    # ------------------------------
    # Derived grids
    # ------------------------------

    def with_time(self, t_min: float, t_max: float, nt: int) -> "GridSpec":
        return replace(self, t_min=t_min, t_max=t_max, nt=nt)

    def coarsened(self, factor: float) -> "GridSpec":
        """Same domain with roughly `factor` times the spatial points; time samples are kept."""
        if not 0 < factor <= 1:
            raise ConfigurationError(f"Coarsening factor must lie in (0, 1], got {factor}.")

        def _count(n: int) -> int:
            if self.periodic:
                return max(MIN_POINTS, int(round(n * factor)))
            return max(MIN_POINTS, int(round((n - 1) * factor)) + 1)

        if self.is_2d:
            return replace(self, nx=_count(self.nx), ny=_count(self.ny))
        return replace(self, nx=_count(self.nx))

    def trimmed(self, layers: int) -> "GridSpec":
        """The sub-grid left after dropping `layers` samples at both ends of every axis."""
        if layers <= 0:
            return self

        def _bounds(name: str, n: int):
            c = self.coords(name)
            hi = c[n - layers - 1]
            if name != "t" and self.periodic:
                hi = hi + (c[1] - c[0])
            return float(c[layers]), float(hi), n - 2 * layers

        x_min, x_max, nx = _bounds("x", self.nx)
        t_min, t_max, nt = _bounds("t", self.nt)
        changes = dict(x_min=x_min, x_max=x_max, nx=nx, t_min=t_min, t_max=t_max, nt=nt)
        if self.is_2d:
            y_min, y_max, ny = _bounds("y", self.ny)
            changes.update(y_min=y_min, y_max=y_max, ny=ny)
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigurationError(f"Unknown grid keys: {', '.join(sorted(unknown))}.")
        return cls(**known)


@dataclass(frozen=True, eq=False)
class FieldSeries:
    grid: GridSpec
    values: np.ndarray
    provenance: str = "simulated"
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ConfigurationError(
                f"Field values have shape {values.shape} but the grid expects {self.grid.shape}."
            )
        if not np.all(np.isfinite(values)):
            raise DegenerateDataError("Field values contain NaN or infinite entries.")
        if self.provenance not in PROVENANCES:
            raise ConfigurationError(
                f"Unknown provenance '{self.provenance}'. Use one of: {', '.join(PROVENANCES)}."
            )
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray, provenance: Optional[str] = None, **kwargs) -> "FieldSeries":
        return replace(self, values=values, provenance=provenance or self.provenance, **kwargs)

    def snapshot(self, index: int = 0) -> np.ndarray:
        """Spatial slice at time index `index`."""
        return self.values[index].copy()

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def trimmed(self, layers: int) -> "FieldSeries":
        if layers <= 0:
            return self
        return replace(self, grid=self.grid.trimmed(layers), values=trim_values(self.values, self.grid, layers))


def trim_values(values: np.ndarray, grid: GridSpec, layers: int) -> np.ndarray:
    """Drop `layers` samples at both ends of every axis of a grid-shaped array."""
    if layers <= 0:
        return values
    if any(n - 2 * layers < MIN_POINTS for n in grid.shape):
        raise ConfigurationError(f"Trimming {layers} layers would leave fewer than {MIN_POINTS} points on an axis.")
    index = tuple(slice(layers, -layers) for _ in grid.shape)
    return np.asarray(values)[index]


# ------------------------------
# Text container
# ------------------------------

def field_to_frame(series: FieldSeries) -> pd.DataFrame:
    grid = series.grid
    names = list(grid.axes)
    mesh = np.meshgrid(*(grid.coords(a) for a in names), indexing="ij")
    frame = pd.DataFrame({name: m.ravel() for name, m in zip(names, mesh)})
    frame["u"] = series.values.ravel()
    return frame


def write_field(series: FieldSeries, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "field_series": CONTAINER_VERSION,
        "provenance": series.provenance,
        "seed": "none" if series.seed is None else str(series.seed),
        "grid": json.dumps(series.grid.to_dict(), sort_keys=True),
        "meta": json.dumps(series.meta, sort_keys=True, default=str),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in header.items():
            fh.write(f"# {key}: {value}\n")
        field_to_frame(series).to_csv(fh, index=False, float_format="%.17g")
    logger.info("Wrote %s field to %s", series.provenance, path)
    return path


def read_field(path: Union[str, Path]) -> FieldSeries:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Field container not found: {path}")

    header = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].partition(":")
            header[key.strip()] = value.strip()

    if header.get("field_series") != CONTAINER_VERSION:
        raise ConfigurationError(f"{path} is not a field container (missing 'field_series: {CONTAINER_VERSION}').")

    grid = GridSpec.from_dict(json.loads(header["grid"]))
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    values = frame["u"].to_numpy(dtype=float).reshape(grid.shape)
    seed = None if header.get("seed", "none") == "none" else int(header["seed"])
    meta = json.loads(header.get("meta", "{}"))
    return FieldSeries(grid=grid, values=values, provenance=header["provenance"], seed=seed, meta=meta)


# ------------------------------
# Resampling between grids
# ------------------------------

def _periodic_extension(coords: np.ndarray, upper: float, values: np.ndarray, axis: int):
    coords = np.append(coords, upper)
    first = np.take(values, [0], axis=axis)
    return coords, np.concatenate([values, first], axis=axis)


def resample_values(values: np.ndarray, src: GridSpec, dst: GridSpec) -> np.ndarray:
    """
    Linearly interpolate a field from `src` onto `dst`.

    Both grids must cover the same domain; periodic grids are wrapped so the
    interpolant is defined up to the right edge.
    """
    if src.is_2d != dst.is_2d or src.periodic != dst.periodic:
        raise ConfigurationError("Cannot resample between grids of different dimension or boundary type.")
    if src.shape == dst.shape and src == dst:
        return np.array(values, dtype=float, copy=True)

    points = [src.t]
    data = np.asarray(values, dtype=float)
    spatial = [("y", src.y_min, src.y_max)] if src.is_2d else []
    spatial.append(("x", src.x_min, src.x_max))
    for name, _lo, hi in spatial:
        coords = src.coords(name)
        if src.periodic:
            coords, data = _periodic_extension(coords, hi, data, src.axis_index(name))
        points.append(coords)

    interpolator = RegularGridInterpolator(tuple(points), data, method="linear")
    mesh = np.meshgrid(*(dst.coords(a) for a in dst.axes), indexing="ij")
    query = np.stack([m.ravel() for m in mesh], axis=-1)
    return interpolator(query).reshape(dst.shape)
