# pde_discovery/preprocess.py

"""
Turning noisy measurements into a regression problem u_t = Θ(u) ξ.

Pipeline (see prepare_regression):
    denoise → differentiate → build library → trim edges → FFT cutoff → normalize
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import savgol_filter
from sklearn.exceptions import ConvergenceWarning
from sklearn.neural_network import MLPRegressor

from pde_discovery.errors import ConfigurationError, DegenerateDataError, DenoiserDivergedError
from pde_discovery.fields import FieldSeries
from pde_discovery.library_builder import Library, build_library_1d, build_library_2d
from pde_discovery.operators import fd_derivative
from pde_discovery.rng import make_rng

logger = logging.getLogger(__name__)

DENOISERS = ("mlp", "savgol")
DERIVATIVE_METHODS = ("finite-difference", "polynomial")


# ------------------------------
# Configuration
# ------------------------------

@dataclass(frozen=True)
class DenoiserConfig:
    method: str = "mlp"                                   # "mlp" or "savgol"
    hidden_layers: Tuple[int, ...] = (32, 32, 32)
    activation: str = "tanh"
    train_fraction: float = 0.8                           # rest is the early-stopping validation split
    patience: int = 50                                    # epochs without validation improvement
    max_epochs: int = 2000
    learning_rate: float = 1.0e-2
    seed: int = 0
    max_train_points: int = 20000                         # random subset the network is fitted on
    residual_smoothing: bool = True                       # add back the Savitzky-Golay smoothed misfit
    savgol_window: int = 11                               # fallback smoother, per axis
    savgol_order: int = 3

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.method not in DENOISERS:
            raise ConfigurationError(f"Unknown denoiser '{self.method}'. Use one of: {', '.join(DENOISERS)}.")
        if not self.hidden_layers or any(w < 1 for w in self.hidden_layers):
            raise ConfigurationError("The denoiser needs at least one hidden layer of positive width.")
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError(
                f"train_fraction must lie strictly between 0 and 1 so a validation split remains, "
                f"got {self.train_fraction}."
            )
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigurationError("Denoiser patience and max_epochs must be at least 1.")
        if self.max_train_points < 10:
            raise ConfigurationError(f"max_train_points must be at least 10, got {self.max_train_points}.")
        if self.savgol_order >= self.savgol_window:
            raise ConfigurationError("Savitzky-Golay order must be smaller than its window.")


@dataclass(frozen=True)
class PreprocessConfig:
    denoise: bool = True
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    derivative_method: str = "polynomial"
    derivative_window: Optional[int] = None               # polynomial window; None -> 2*(order+2)+1
    spectral: bool = True                                 # regress on the low-pass Fourier projection
    cutoff: Union[float, Tuple[float, ...]] = 0.3         # retained fraction of each axis' spectrum
    trim: int = 2                                         # boundary layers dropped before regression

    def __post_init__(self):
        if self.derivative_method not in DERIVATIVE_METHODS:
            raise ConfigurationError(
                f"Unknown derivative method '{self.derivative_method}'. "
                f"Use one of: {', '.join(DERIVATIVE_METHODS)}."
            )
        if self.trim < 0:
            raise ConfigurationError(f"trim must be non-negative, got {self.trim}.")

    @classmethod
    def from_dict(cls, data: Optional[Mapping] = None) -> "PreprocessConfig":
        data = dict(data or {})
        try:
            denoiser = DenoiserConfig(**data.pop("denoiser", {}))
            cutoff = data.pop("cutoff", 0.3)
            if isinstance(cutoff, (list, tuple)):
                cutoff = tuple(float(c) for c in cutoff)
            return cls(denoiser=denoiser, cutoff=cutoff, **data)
        except TypeError as exc:
            raise ConfigurationError(f"Invalid preprocess settings: {exc}") from exc


# ------------------------------
# Denoising
# ------------------------------

def _scaled_coordinates(series: FieldSeries) -> np.ndarray:
    grid = series.grid
    mesh = np.meshgrid(*(grid.coords(a) for a in grid.axes), indexing="ij")
    columns = []
    for axis, m in zip(grid.axes, mesh):
        c = grid.coords(axis)
        lo, hi = c.min(), c.max()
        columns.append(2.0 * (m.ravel() - lo) / (hi - lo) - 1.0)
    return np.column_stack(columns)


def _savgol_smooth(values: np.ndarray, series: FieldSeries, cfg: DenoiserConfig) -> np.ndarray:
    out = values
    for ax, name in enumerate(series.grid.axes):
        n = out.shape[ax]
        window = min(cfg.savgol_window, n if n % 2 == 1 else n - 1)
        if window <= cfg.savgol_order:
            continue
        mode = "wrap" if name != "t" and series.grid.periodic else "interp"
        out = savgol_filter(out, window, cfg.savgol_order, axis=ax, mode=mode)
    return out


def denoise(noisy: FieldSeries, cfg: Optional[DenoiserConfig] = None) -> FieldSeries:
    """
    Smooth a measured field by regressing u on its coordinates.

    The MLP sees (t, x[, y]) scaled to [-1, 1] and predicts the standardized
    field; training is full-batch Adam on at most `max_train_points` samples
    and stops once the validation score has not improved for `patience`
    epochs. With `residual_smoothing` the misfit between data and network is
    passed through the Savitzky-Golay smoother and added back, so structure
    the network misses is kept while white noise is not.
    """
    cfg = cfg or DenoiserConfig()
    values = noisy.values

    if cfg.method == "savgol":
        smoothed = _savgol_smooth(values, noisy, cfg)
        logger.info("Denoised field with Savitzky-Golay (window=%d, order=%d)", cfg.savgol_window, cfg.savgol_order)
        return noisy.with_values(smoothed, provenance="denoised", meta={**noisy.meta, "denoiser": "savgol"})

    center, scale = float(values.mean()), float(values.std())
    if scale == 0:
        return noisy.with_values(values.copy(), provenance="denoised", meta={**noisy.meta, "denoiser": "mlp"})

    X = _scaled_coordinates(noisy)
    y = (values.ravel() - center) / scale
    rows = np.arange(X.shape[0])
    if rows.size > cfg.max_train_points:
        rows = np.sort(make_rng(cfg.seed).choice(rows.size, cfg.max_train_points, replace=False))
    net = MLPRegressor(
        hidden_layer_sizes=cfg.hidden_layers,
        activation=cfg.activation,
        solver="adam",
        learning_rate_init=cfg.learning_rate,
        batch_size=rows.size,
        max_iter=cfg.max_epochs,
        early_stopping=True,
        validation_fraction=1.0 - cfg.train_fraction,
        n_iter_no_change=cfg.patience,
        tol=0.0,
        random_state=cfg.seed,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        try:
            net.fit(X[rows], y[rows])
        except ValueError as exc:
            raise DenoiserDivergedError(
                f"Denoiser training failed: {exc}\n"
                f"Try a smaller learning_rate (currently {cfg.learning_rate}) or the 'savgol' denoiser."
            ) from exc
    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        logger.warning("Denoiser hit max_epochs=%d before early stopping", cfg.max_epochs)

    losses = np.asarray(net.loss_curve_)
    prediction = net.predict(X)
    if not np.all(np.isfinite(losses)) or not np.all(np.isfinite(prediction)):
        raise DenoiserDivergedError(
            "Denoiser loss became non-finite during training.\n"
            f"Try a smaller learning_rate (currently {cfg.learning_rate}) or the 'savgol' denoiser."
        )

    smoothed = prediction.reshape(values.shape) * scale + center
    if cfg.residual_smoothing:
        smoothed = smoothed + _savgol_smooth(values - smoothed, noisy, cfg)
    logger.info(
        "Denoised field with MLP %s after %d epochs (best validation R^2 %.4f)",
        cfg.hidden_layers, net.n_iter_, net.best_validation_score_,
    )
    meta = {**noisy.meta, "denoiser": "mlp", "denoiser_epochs": int(net.n_iter_)}
    return noisy.with_values(smoothed, provenance="denoised", meta=meta)


# ------------------------------
# Differentiation
# ------------------------------

def differentiate(series: FieldSeries, axis: str, order: int, method: str = "finite-difference",
                  window: Optional[int] = None) -> FieldSeries:
    """
    Numerical derivative of `series` along `axis` ("t", "x" or "y").

    finite-difference: central stencils inside, one-sided at the edges.
    polynomial: derivative of a degree-(order+2) least-squares polynomial over a
    sliding window (Savitzky-Golay), wrapped on periodic spatial axes.
    """
    grid = series.grid
    ax = grid.axis_index(axis)
    if order not in (1, 2, 3):
        raise ConfigurationError(f"Derivative order must be 1, 2 or 3, got {order}.")
    if method not in DERIVATIVE_METHODS:
        raise ConfigurationError(f"Unknown derivative method '{method}'. Use one of: {', '.join(DERIVATIVE_METHODS)}.")
    n = grid.shape[ax]
    if n < 2 * order + 1:
        raise ConfigurationError(f"Axis '{axis}' has {n} points; order {order} needs at least {2 * order + 1}.")

    periodic = grid.periodic and axis != "t"
    h = grid.spacing(axis)
    if method == "finite-difference":
        values = fd_derivative(series.values, ax, order, h, periodic=periodic)
    else:
        polyorder = order + 2
        window = window or 2 * polyorder + 1
        if window % 2 == 0:
            window += 1
        if window > n:
            raise ConfigurationError(f"Polynomial window {window} exceeds the {n} samples along '{axis}'.")
        values = savgol_filter(series.values, window, polyorder, deriv=order, delta=h, axis=ax,
                               mode="wrap" if periodic else "interp")

    meta = {**series.meta, "derivative": f"{axis}^{order}", "derivative_method": method}
    return series.with_values(values, meta=meta)


def spatial_derivatives(series: FieldSeries, method: str, window: Optional[int] = None) -> dict:
    """Derivative fields keyed by descriptor, as build_library_1d/2d expect them."""
    wanted = [("x", "x", 1), ("xx", "x", 2), ("xxx", "x", 3)]
    if series.grid.is_2d:
        wanted = [("x", "x", 1), ("y", "y", 1), ("xx", "x", 2), ("yy", "y", 2)]
    return {key: differentiate(series, axis, order, method, window) for key, axis, order in wanted}


def trim_boundary(series: FieldSeries, layers: int) -> FieldSeries:
    return series.trimmed(layers)


# ------------------------------
# Fourier projection
# ------------------------------

@dataclass(frozen=True, eq=False)
class SpectralStack:
    target: np.ndarray                 # retained Fourier coefficients of u_t
    columns: np.ndarray                # retained coefficients, one column per library term
    mask: np.ndarray                   # boolean retained-frequency set in fftn layout
    cutoff: Tuple[float, ...]
    names: Tuple[str, ...]

    @property
    def n_retained(self) -> int:
        return int(self.mask.sum())

    def real_system(self) -> Tuple[np.ndarray, np.ndarray]:
        """Stack real parts over imaginary parts so the problem stays linear and real."""
        phi = np.vstack([self.columns.real, self.columns.imag])
        t = np.concatenate([self.target.real, self.target.imag])
        return phi, t


def _axis_cutoffs(cutoff, ndim: int) -> Tuple[float, ...]:
    values = tuple(cutoff) if isinstance(cutoff, (list, tuple)) else (float(cutoff),) * ndim
    if len(values) != ndim:
        raise ConfigurationError(f"Expected {ndim} cutoff fractions (one per axis), got {len(values)}.")
    bad = [c for c in values if not 0 < c <= 1]
    if bad:
        raise ConfigurationError(f"Frequency cutoffs must lie in (0, 1], got {bad}.")
    return values


def retained_mask(shape: Sequence[int], cutoff) -> np.ndarray:
    """Frequencies whose |k| is within cutoff x Nyquist on every axis (fftn layout)."""
    fractions = _axis_cutoffs(cutoff, len(shape))
    mask = np.ones(tuple(shape), dtype=bool)
    for ax, (n, c) in enumerate(zip(shape, fractions)):
        keep = np.abs(np.fft.fftfreq(n)) / 0.5 <= c + 1e-12
        view = [1] * len(shape)
        view[ax] = n
        mask &= keep.reshape(view)
    return mask


def spectral_project(u_t: FieldSeries, library: Library, cutoff=0.3) -> SpectralStack:
    """Low-pass Fourier projection of u_t and every library column onto a shared frequency set."""
    if u_t.grid != library.grid:
        raise ConfigurationError("u_t and the library must live on the same grid before projection.")
    shape = u_t.grid.shape
    mask = retained_mask(shape, cutoff)
    target = np.fft.fftn(u_t.values)[mask]
    columns = np.column_stack([np.fft.fftn(library.column_field(j))[mask] for j in range(library.size)])
    logger.debug("Retained %d of %d frequencies", int(mask.sum()), mask.size)
    return SpectralStack(target, columns, mask, _axis_cutoffs(cutoff, len(shape)), library.names)


def band_relative_error(estimate: np.ndarray, reference: np.ndarray, mask: np.ndarray) -> float:
    """Relative error of `estimate` against `reference` restricted to the retained frequency band."""
    e_hat = np.fft.fftn(estimate)[mask]
    r_hat = np.fft.fftn(reference)[mask]
    denom = np.linalg.norm(r_hat)
    if denom == 0:
        raise DegenerateDataError("Reference field has no energy in the retained band.")
    return float(np.linalg.norm(e_hat - r_hat) / denom)


# ------------------------------
# Normalization
# ------------------------------

class NormalizedSystem(NamedTuple):
    matrix: np.ndarray
    target: np.ndarray
    column_scales: np.ndarray
    target_scale: float


def normalize_columns(stack: Union[SpectralStack, np.ndarray], target: Optional[np.ndarray] = None,
                      names: Optional[Sequence[str]] = None) -> NormalizedSystem:
    """Divide every column and the target by its own L2 norm."""
    if isinstance(stack, SpectralStack):
        matrix, target = stack.real_system()
        names = stack.names
    else:
        matrix = np.asarray(stack, dtype=float)
        if target is None:
            raise ConfigurationError("normalize_columns needs a target vector alongside a raw matrix.")
    target = np.asarray(target, dtype=float)
    names = names or [f"column {j + 1}" for j in range(matrix.shape[1])]

    scales = np.linalg.norm(matrix, axis=0)
    zero = [names[j] for j in np.flatnonzero(scales == 0)]
    if zero:
        raise DegenerateDataError(
            f"Library term(s) {', '.join(zero)} evaluate to all zeros on this data.\n"
            "Drop them from the library or check the derivative settings."
        )
    t_scale = float(np.linalg.norm(target))
    if t_scale == 0:
        raise DegenerateDataError("The time-derivative target is identically zero.")
    return NormalizedSystem(matrix / scales, target / t_scale, scales, t_scale)


def unnormalize(coefficients: np.ndarray, system: NormalizedSystem, indices: Optional[Sequence[int]] = None):
    """Map coefficients of the normalized problem back to physical units (0-based `indices`)."""
    scales = system.column_scales if indices is None else system.column_scales[np.asarray(indices, dtype=int)]
    return np.asarray(coefficients) * system.target_scale / scales


# ------------------------------
# Full preprocessing chain
# ------------------------------

@dataclass(frozen=True, eq=False)
class RegressionProblem:
    library: Library                   # trimmed library on the regression grid
    u_t: FieldSeries                   # trimmed time derivative
    system: NormalizedSystem
    stack: Optional[SpectralStack]
    smoothed: FieldSeries              # denoised (or raw) field the library was built from

    @property
    def names(self) -> Tuple[str, ...]:
        return self.library.names


def prepare_regression(series: FieldSeries, cfg: Optional[PreprocessConfig] = None) -> RegressionProblem:
    cfg = cfg or PreprocessConfig()
    smoothed = denoise(series, cfg.denoiser) if cfg.denoise else series

    derivs = spatial_derivatives(smoothed, cfg.derivative_method, cfg.derivative_window)
    u_t = differentiate(smoothed, "t", 1, cfg.derivative_method, cfg.derivative_window)
    build = build_library_2d if smoothed.grid.is_2d else build_library_1d
    library = build(smoothed, derivs).trimmed(cfg.trim)
    u_t = trim_boundary(u_t, cfg.trim)

    if cfg.spectral:
        stack = spectral_project(u_t, library, cfg.cutoff)
        system = normalize_columns(stack)
    else:
        stack = None
        system = normalize_columns(library.matrix, u_t.values.ravel(), library.names)
    logger.info(
        "Prepared regression: %d rows x %d terms (denoise=%s, derivatives=%s, spectral=%s)",
        system.matrix.shape[0], system.matrix.shape[1], cfg.denoise, cfg.derivative_method, cfg.spectral,
    )
    return RegressionProblem(library, u_t, system, stack, smoothed)
