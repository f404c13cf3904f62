# pde_discovery/bmu.py

"""
Bayesian model updating of learned coefficients against raw measurements.

Metropolis-within-Gibbs over (ξ, μ_e, σ_e²):
    ξ_i    random-walk Metropolis, one forward solve per proposal
    μ_e    Gaussian full conditional
    σ_e²   inverse-gamma full conditional
with the normalized error e = (ũ − u(ξ)) / ‖ũ‖.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.ndimage import uniform_filter1d

from pde_discovery.dynamics import PdeModel, SolverConfig, solve_generic
from pde_discovery.errors import ConfigurationError, DegenerateDataError, SolverInstabilityError
from pde_discovery.fields import FieldSeries, resample_values
from pde_discovery.pesbl import SparseModel
from pde_discovery.rng import make_rng, split_seeds

logger = logging.getLogger(__name__)

Simulator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BmuConfig:
    chains: int = 2
    steps: int = 2000                      # full Gibbs sweeps per chain
    burn_in_fraction: float = 0.25
    coarsen: float = 0.5                   # forward-solve resolution relative to the data grid
    smooth_points: int = 5                 # moving average applied to initial/boundary data
    adapt_interval: int = 50               # sweeps between proposal-scale adjustments (burn-in only)
    target_acceptance: Tuple[float, float] = (0.2, 0.5)
    start_spread: float = 0.05             # dispersed starts: min(prior std, spread·|prior mean|)
    sigma_mu_e2: float = 1.0 / 9.0
    alpha_e: float = 1.0
    beta_e: float = 2.0
    gr_threshold: float = 1.1
    update_error_model: bool = True        # False freezes μ_e and σ_e² at their starting values
    sigma_e2_start: Optional[float] = None  # None: variance of the starting error vector

    def __post_init__(self):
        object.__setattr__(self, "target_acceptance", tuple(self.target_acceptance))
        if self.chains < 2:
            raise ConfigurationError(f"Convergence checks need at least 2 chains, got {self.chains}.")
        if self.steps < 4:
            raise ConfigurationError(f"A chain needs at least 4 steps, got {self.steps}.")
        if not 0 <= self.burn_in_fraction < 1:
            raise ConfigurationError(f"burn_in_fraction must lie in [0, 1), got {self.burn_in_fraction}.")
        lo, hi = self.target_acceptance
        if not 0 < lo < hi < 1:
            raise ConfigurationError(f"target_acceptance must satisfy 0 < low < high < 1, got {self.target_acceptance}.")
        if min(self.sigma_mu_e2, self.alpha_e, self.beta_e) <= 0:
            raise ConfigurationError("Error-model hyperpriors must be positive.")

    @property
    def burn_in(self) -> int:
        return int(self.burn_in_fraction * self.steps)

    @property
    def error_prior(self) -> "ErrorModel":
        return ErrorModel(sigma_mu_e2=self.sigma_mu_e2, alpha_e=self.alpha_e, beta_e=self.beta_e)

    @classmethod
    def from_dict(cls, data: Optional[Mapping] = None) -> "BmuConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown bmu keys: {', '.join(sorted(unknown))}.")
        return cls(**data)


@dataclass(frozen=True)
class ErrorModel:
    mu_e: float = 0.0
    sigma_e2: float = 1.0
    sigma_mu_e2: float = 1.0 / 9.0
    alpha_e: float = 1.0
    beta_e: float = 2.0

    def __post_init__(self):
        if not self.sigma_e2 > 0:
            raise ConfigurationError(f"Error variance must be positive, got {self.sigma_e2}.")


@dataclass
class ChainState:
    xi: np.ndarray
    mu_e: float
    sigma_e2: float
    error: np.ndarray                      # error vector of the current xi
    scales: np.ndarray                     # proposal std per coefficient
    iteration: int = 0
    accepted: np.ndarray = None
    proposed: np.ndarray = None
    window_accepted: np.ndarray = None
    window_proposed: np.ndarray = None

    def __post_init__(self):
        n = len(self.xi)
        for name in ("accepted", "proposed", "window_accepted", "window_proposed"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n, dtype=int))

    @property
    def acceptance(self) -> np.ndarray:
        return self.accepted / np.maximum(self.proposed, 1)


# ------------------------------
# Likelihood pieces
# ------------------------------

def error_vector(u_meas: Union[FieldSeries, np.ndarray], u_sim: Union[FieldSeries, np.ndarray]) -> np.ndarray:
    """e = (ũ − u(ξ)) / ‖ũ‖ flattened."""
    if isinstance(u_meas, FieldSeries) and isinstance(u_sim, FieldSeries) and u_meas.grid != u_sim.grid:
        raise ConfigurationError("Measured and simulated fields live on different grids.")
    meas = np.asarray(getattr(u_meas, "values", u_meas), dtype=float)
    sim = np.asarray(getattr(u_sim, "values", u_sim), dtype=float)
    if meas.shape != sim.shape:
        raise ConfigurationError(f"Measured shape {meas.shape} differs from simulated shape {sim.shape}.")
    norm = np.linalg.norm(meas)
    if norm == 0:
        raise DegenerateDataError("The measured field is identically zero; the normalized error is undefined.")
    return ((meas - sim) / norm).ravel()


def log_density(e: np.ndarray, xi_i: float, prior_mean: float, prior_var: float,
                mu_e: float, sigma_e2: float) -> float:
    """−½Σ((e−μ_e)²/σ_e²) − ½(ξ_i−μ_i)²/σ_i², up to a constant."""
    return float(-0.5 * np.sum((e - mu_e) ** 2) / sigma_e2 - 0.5 * (xi_i - prior_mean) ** 2 / prior_var)


def _conditional_at(xi: np.ndarray, i: int, state: ChainState, prior_mean: float, prior_var: float,
                    simulator: Simulator) -> Tuple[float, Optional[np.ndarray]]:
    try:
        e = simulator(xi)
    except SolverInstabilityError:
        return -np.inf, None
    return log_density(e, xi[i], prior_mean, prior_var, state.mu_e, state.sigma_e2), e


def log_conditional_xi(xi_i: float, i: int, state: ChainState, prior: SparseModel, simulator: Simulator) -> float:
    """Full conditional of ξ_i (one forward solve); −inf when the solve is unstable."""
    xi = state.xi.copy()
    xi[i] = xi_i
    return _conditional_at(xi, i, state, prior.mean[i], prior.std[i] ** 2, simulator)[0]


def gibbs_mu_e(e: np.ndarray, sigma_e2: float, rng: np.random.Generator, sigma_mu_e2: float = 1.0 / 9.0,
               size=None):
    """Draw μ_e ~ N(Σe / (N + σ_e²/σ_μe²), 1 / (N/σ_e² + 1/σ_μe²))."""
    e = np.asarray(e, dtype=float).ravel()
    n = e.size
    mean = e.sum() / (n + sigma_e2 / sigma_mu_e2)
    var = 1.0 / (n / sigma_e2 + 1.0 / sigma_mu_e2)
    return rng.normal(mean, np.sqrt(var), size=size)


def gibbs_sigma_e2(e: np.ndarray, mu_e: float, rng: np.random.Generator, alpha_e: float = 1.0,
                   beta_e: float = 2.0, size=None):
    """Draw σ_e² ~ InvGamma(N/2 + α_e, ½Σ(e−μ_e)² + β_e)."""
    e = np.asarray(e, dtype=float).ravel()
    shape = e.size / 2.0 + alpha_e
    scale = 0.5 * np.sum((e - mu_e) ** 2) + beta_e
    return scale / rng.gamma(shape, 1.0, size=size)


def mh_step_xi(state: ChainState, i: int, simulator: Simulator, prior_mean: Sequence[float],
               prior_var: Sequence[float], rng: np.random.Generator,
               proposal_scale: Optional[float] = None) -> ChainState:
    """Random-walk Metropolis update of ξ_i; unstable proposals are rejected."""
    scale = state.scales[i] if proposal_scale is None else proposal_scale
    proposal = state.xi.copy()
    proposal[i] += scale * rng.standard_normal()
    log_u = np.log(rng.uniform())

    current = log_density(state.error, state.xi[i], prior_mean[i], prior_var[i], state.mu_e, state.sigma_e2)
    candidate, e_new = _conditional_at(proposal, i, state, prior_mean[i], prior_var[i], simulator)

    state.proposed[i] += 1
    state.window_proposed[i] += 1
    if candidate - current >= log_u:
        state.xi = proposal
        state.error = e_new
        state.accepted[i] += 1
        state.window_accepted[i] += 1
    return state


def adapt_scales(state: ChainState, target: Tuple[float, float]):
    """Shrink or widen each proposal toward the target acceptance band, then reset the window."""
    lo, hi = target
    rate = state.window_accepted / np.maximum(state.window_proposed, 1)
    state.scales = np.where(rate < lo, state.scales * 0.7, np.where(rate > hi, state.scales * 1.4, state.scales))
    logger.debug("Adapted proposal scales to %s (window acceptance %s)", state.scales, np.round(rate, 3))
    state.window_accepted[:] = 0
    state.window_proposed[:] = 0


# ------------------------------
# Convergence
# ------------------------------

def gelman_rubin(chains: np.ndarray) -> float:
    """Potential scale reduction factor for one parameter; `chains` has shape (n_chains, length)."""
    chains = np.asarray(chains, dtype=float)
    n_chains, length = chains.shape
    if n_chains < 2 or length < 2:
        raise ConfigurationError("Gelman-Rubin needs at least 2 chains of length 2.")
    W = np.mean(np.var(chains, axis=1, ddof=1))
    means = chains.mean(axis=1)
    B = length / (n_chains - 1.0) * np.sum((means - means.mean()) ** 2)
    if W == 0:
        return 1.0 if B == 0 else np.inf
    V = W * (length - 1.0) / length + B * (n_chains + 1.0) / (length * n_chains)
    return float(np.sqrt(V / W))


# ------------------------------
# Forward model
# ------------------------------

def _smooth_spatial(values: np.ndarray, periodic: bool, size: int) -> np.ndarray:
    mode = "wrap" if periodic else "nearest"
    out = uniform_filter1d(values, size, axis=-1, mode=mode)
    if values.ndim == 2:
        out = uniform_filter1d(out, size, axis=-2, mode=mode)
    return out


class ForwardModel:
    """
    u(ξ) for a fixed model form, sampled on the measurement grid.

    Solves run on a coarsened copy of the grid; the initial condition is the
    smoothed first measured slice and Dirichlet edges are held at the time
    mean of the smoothed measured edges.
    """

    def __init__(self, model: PdeModel, measured: FieldSeries, solver: Optional[SolverConfig] = None,
                 coarsen: float = 0.5, smooth_points: int = 5):
        self.model = model
        self.measured = measured
        self.solver = solver or SolverConfig()
        grid = measured.grid
        self.grid = grid
        self.coarse = grid.coarsened(coarsen)

        first = _smooth_spatial(measured.values[0], grid.periodic, smooth_points)
        if not grid.periodic:
            edges = uniform_filter1d(measured.values, smooth_points, axis=0, mode="nearest")
            first[..., 0] = edges[..., 0].mean()
            first[..., -1] = edges[..., -1].mean()
            if grid.is_2d:
                first[0, :] = edges[:, 0, :].mean()
                first[-1, :] = edges[:, -1, :].mean()
        stacked = np.broadcast_to(first, grid.shape)
        self.ic = resample_values(stacked, grid, self.coarse)[0]
        self.solves = 0
        self._lock = threading.Lock()

    def simulate(self, xi: Sequence[float]) -> np.ndarray:
        with self._lock:
            self.solves += 1
        series = solve_generic(self.model.with_coefficients(xi), self.ic, self.coarse, self.solver)
        return resample_values(series.values, self.coarse, self.grid)

    def error(self, xi: Sequence[float]) -> np.ndarray:
        return error_vector(self.measured.values, self.simulate(xi))

    __call__ = error


# ------------------------------
# Chains and summaries
# ------------------------------

@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    names: Tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    gelman_rubin: Dict[str, float]
    n_samples: int
    burn_in: int
    converged: bool
    chains: int
    acceptance: np.ndarray                 # per chain x coefficient
    mu_e: float
    sigma_e2: float
    trace: pd.DataFrame = field(repr=False, default=None)

    @property
    def coefficients(self) -> Dict[str, float]:
        return dict(zip(self.names, (float(m) for m in self.mean)))

    def samples(self) -> np.ndarray:
        """Pooled post-burn-in ξ samples, shape (n_samples, n_coefficients)."""
        return self.trace[list(self.names)].to_numpy()

    def to_pde_model(self, system: str = "generic") -> PdeModel:
        return PdeModel(self.names, tuple(float(m) for m in self.mean), system)


def start_width(prior_mean: np.ndarray, prior_std: np.ndarray, spread: float) -> np.ndarray:
    width = np.minimum(prior_std, spread * np.abs(prior_mean))
    return np.where(width > 0, width, prior_std)


def _dispersed_start(simulator: Simulator, prior_mean: np.ndarray, prior_std: np.ndarray, spread: float,
                     rng: np.random.Generator, attempts: int = 20) -> Tuple[np.ndarray, np.ndarray]:
    width = start_width(prior_mean, prior_std, spread)
    for _ in range(attempts):
        start = prior_mean + width * rng.standard_normal(prior_mean.size)
        try:
            return start, simulator(start)
        except SolverInstabilityError:
            width = width / 2
    logger.warning("Could not find a stable dispersed start; starting at the prior mean")
    return prior_mean.copy(), simulator(prior_mean)


def _run_chain(simulator: Simulator, prior_mean: np.ndarray, prior_std: np.ndarray, cfg: BmuConfig,
               seed) -> Tuple[np.ndarray, np.ndarray]:
    rng = make_rng(seed)
    start, e0 = _dispersed_start(simulator, prior_mean, prior_std, cfg.start_spread, rng)
    width = start_width(prior_mean, prior_std, cfg.start_spread)
    sigma_e2 = cfg.sigma_e2_start if cfg.sigma_e2_start is not None else max(float(np.var(e0)), 1e-12)
    state = ChainState(xi=start, mu_e=float(np.mean(e0)) if cfg.update_error_model else 0.0,
                       sigma_e2=sigma_e2, error=e0, scales=0.5 * width)
    prior_var = prior_std**2
    P = prior_mean.size
    hyper = cfg.error_prior
    trace = np.empty((cfg.steps, P + 2))

    for step in range(cfg.steps):
        for i in range(P):
            mh_step_xi(state, i, simulator, prior_mean, prior_var, rng)
        if cfg.update_error_model:
            state.mu_e = float(gibbs_mu_e(state.error, state.sigma_e2, rng, hyper.sigma_mu_e2))
            state.sigma_e2 = float(gibbs_sigma_e2(state.error, state.mu_e, rng, hyper.alpha_e, hyper.beta_e))
        if step < cfg.burn_in and (step + 1) % cfg.adapt_interval == 0:
            adapt_scales(state, cfg.target_acceptance)
        if step + 1 == cfg.burn_in:
            state.accepted[:] = 0
            state.proposed[:] = 0
        trace[step, :P] = state.xi
        trace[step, P] = state.mu_e
        trace[step, P + 1] = state.sigma_e2
        state.iteration += 1
    return trace, state.acceptance


def summarize_chains(traces: Sequence[np.ndarray], names: Sequence[str], cfg: BmuConfig,
                     acceptance: Sequence[np.ndarray], extra: Sequence[str] = ("mu_e", "sigma_e2")) -> PosteriorSummary:
    """Pool post-burn-in samples and compute Gelman-Rubin for every traced parameter."""
    columns = list(names) + list(extra)
    kept = np.stack([tr[cfg.burn_in:] for tr in traces])        # (chains, kept, params)
    gr = {}
    for p, col in enumerate(columns):
        if col in extra and not cfg.update_error_model:
            continue
        gr[col] = gelman_rubin(kept[:, :, p])
    converged = all(v < cfg.gr_threshold for v in gr.values())

    frames = []
    for c, block in enumerate(kept):
        frame = pd.DataFrame(block, columns=columns)
        frame.insert(0, "step", np.arange(cfg.burn_in, cfg.burn_in + block.shape[0]))
        frame.insert(0, "chain", c)
        frames.append(frame)
    trace = pd.concat(frames, ignore_index=True)

    pooled = trace[list(names)].to_numpy()
    summary = PosteriorSummary(
        names=tuple(names),
        mean=pooled.mean(axis=0),
        std=pooled.std(axis=0, ddof=1),
        gelman_rubin=gr,
        n_samples=pooled.shape[0],
        burn_in=cfg.burn_in,
        converged=converged,
        chains=len(traces),
        acceptance=np.vstack(acceptance),
        mu_e=float(trace["mu_e"].mean()) if "mu_e" in trace else 0.0,
        sigma_e2=float(trace["sigma_e2"].mean()) if "sigma_e2" in trace else 0.0,
        trace=trace,
    )
    if not converged:
        logger.warning("Chains did not converge: Gelman-Rubin %s (threshold %.2f)",
                       {k: round(v, 3) for k, v in gr.items()}, cfg.gr_threshold)
    return summary


def run_chains(simulator: Simulator, prior_mean: Sequence[float], prior_std: Sequence[float],
               names: Sequence[str], cfg: Optional[BmuConfig] = None, seed: int = 0, jobs: int = 1) -> PosteriorSummary:
    """Independent Metropolis-within-Gibbs chains for any error simulator."""
    cfg = cfg or BmuConfig()
    prior_mean = np.asarray(prior_mean, dtype=float)
    prior_std = np.asarray(prior_std, dtype=float)
    if np.any(prior_std <= 0):
        raise ConfigurationError("Every prior standard deviation must be positive.")
    seeds = split_seeds(seed, cfg.chains)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda s: _run_chain(simulator, prior_mean, prior_std, cfg, s), seeds))
    else:
        results = [_run_chain(simulator, prior_mean, prior_std, cfg, s) for s in seeds]

    traces = [r[0] for r in results]
    acceptance = [r[1] for r in results]
    summary = summarize_chains(traces, names, cfg, acceptance)
    logger.info(
        "Finished %d chains x %d steps: %s", cfg.chains, cfg.steps,
        ", ".join(f"{n}={m:.6g}±{s:.3g}" for n, m, s in zip(summary.names, summary.mean, summary.std)),
    )
    return summary


def run_bmu(model: SparseModel, u_raw: FieldSeries, cfg: Optional[BmuConfig] = None, seed: int = 0,
            solver: Optional[SolverConfig] = None, jobs: int = 1, system: str = "generic") -> PosteriorSummary:
    """Refine a learned model's coefficients against the raw measurement `u_raw`."""
    cfg = cfg or BmuConfig()
    if not model.names:
        raise ConfigurationError("The learned model has no terms to update.")
    forward = ForwardModel(model.to_pde_model(system), u_raw, solver, cfg.coarsen, cfg.smooth_points)
    return run_chains(forward, model.mean, model.std, model.names, cfg, seed, jobs)


def write_trace(summary: PosteriorSummary, path) -> None:
    summary.trace.to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote chain trace to %s", path)
