# pde_discovery/hbi.py

"""
Hierarchical inference over a population of experiments.

Each test t has its own coefficients ξ_t ~ N(μ_ξ, diag(σ_ξ²)); the hypermeans
carry uniform priors on (μ^l, μ^u) and the hypervariances inverse-gamma
priors. One Metropolis-within-Gibbs sweep updates every ξ_it, then μ_ξ, σ_ξ²,
then the shared error model.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from pde_discovery.bmu import (
    ChainState,
    ErrorModel,
    ForwardModel,
    Simulator,
    adapt_scales,
    gelman_rubin,
    gibbs_mu_e,
    gibbs_sigma_e2,
    mh_step_xi,
    start_width,
)
from pde_discovery.dynamics import PdeModel, SolverConfig, add_noise, make_grid, reference_model, simulate_system
from pde_discovery.errors import ConfigurationError, SolverInstabilityError, TruncationMassError
from pde_discovery.fields import FieldSeries, GridSpec
from pde_discovery.rng import make_rng, split_seeds

logger = logging.getLogger(__name__)

MASS_FLOOR = 1e-12


@dataclass(frozen=True)
class HbiPriors:
    lower: Tuple[float, ...]               # μ^l per coefficient
    upper: Tuple[float, ...]               # μ^u per coefficient
    alpha_xi: float = 1.0
    beta_xi: float = 2.0
    error: ErrorModel = field(default_factory=ErrorModel)

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            raise ConfigurationError("Hypermean limits need one lower and one upper value per coefficient.")
        bad = [i + 1 for i, (lo, hi) in enumerate(zip(self.lower, self.upper)) if not lo < hi]
        if bad:
            raise ConfigurationError(f"Hypermean limits must satisfy lower < upper; check coefficient(s) {bad}.")
        if self.alpha_xi <= 0 or self.beta_xi <= 0:
            raise ConfigurationError("alpha_xi and beta_xi must be positive.")

    @classmethod
    def around(cls, estimate: Sequence[float], factor: float = 5.0, **kwargs) -> "HbiPriors":
        """Limits μ ± factor·|μ| around a single-dataset estimate."""
        estimate = np.asarray(estimate, dtype=float)
        width = factor * np.abs(estimate)
        width = np.where(width > 0, width, factor)
        return cls(tuple(estimate - width), tuple(estimate + width), **kwargs)


@dataclass(frozen=True)
class HbiConfig:
    chains: int = 2
    steps: int = 5000
    burn_in_fraction: float = 0.25
    coarsen: float = 0.5
    smooth_points: int = 5
    adapt_interval: int = 50
    target_acceptance: Tuple[float, float] = (0.2, 0.5)
    start_spread: float = 0.05
    limit_factor: float = 5.0              # default hypermean limits: estimate ± factor·|estimate|
    alpha_xi: float = 1.0                  # inverse-gamma prior on each σ_ξi²
    beta_xi: float = 2.0
    gr_threshold: float = 1.1
    update_error_model: bool = True
    n_models: int = 1000                   # generated population size
    n_select: int = 20                     # datasets actually used
    xi_mean: Tuple[float, ...] = (-1.0, -0.0025)
    xi_std: Tuple[float, ...] = (0.05, 0.0002)
    noise_range: Tuple[float, float] = (0.0, 0.5)

    def __post_init__(self):
        for name in ("target_acceptance", "xi_mean", "xi_std", "noise_range"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.chains < 2:
            raise ConfigurationError(f"Convergence checks need at least 2 chains, got {self.chains}.")
        if self.steps < 4:
            raise ConfigurationError(f"A chain needs at least 4 steps, got {self.steps}.")
        if not 0 <= self.burn_in_fraction < 1:
            raise ConfigurationError(f"burn_in_fraction must lie in [0, 1), got {self.burn_in_fraction}.")
        if self.n_select < 2 or self.n_select > self.n_models:
            raise ConfigurationError(
                f"n_select must lie in 2..n_models ({self.n_models}), got {self.n_select}."
            )

    @property
    def burn_in(self) -> int:
        return int(self.burn_in_fraction * self.steps)

    @classmethod
    def from_dict(cls, data: Optional[Mapping] = None) -> "HbiConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown hbi keys: {', '.join(sorted(unknown))}.")
        return cls(**data)


@dataclass
class HbiState:
    tests: List[ChainState]                # per-test ξ_t, error vector and proposal bookkeeping
    mu_xi: np.ndarray
    sigma_xi2: np.ndarray
    mu_e: float
    sigma_e2: float

    @property
    def Xi(self) -> np.ndarray:
        """Coefficients as an (N_ξ x N_t) matrix."""
        return np.column_stack([t.xi for t in self.tests])

    @property
    def errors(self) -> List[np.ndarray]:
        return [t.error for t in self.tests]


# ------------------------------
# Full conditionals
# ------------------------------

def sample_truncated_normal(mean: float, std: float, lower: float, upper: float, rng: np.random.Generator,
                            size=None):
    """Inverse-CDF draw from N(mean, std²) restricted to (lower, upper)."""
    za, zb = (lower - mean) / std, (upper - mean) / std
    u = rng.uniform(size=size)
    if za > 0:
        # interval sits in the upper tail; survival functions keep precision
        pa, pb = norm.sf(za), norm.sf(zb)
        mass = pa - pb
        z = norm.isf(pa - u * mass)
    else:
        pa, pb = norm.cdf(za), norm.cdf(zb)
        mass = pb - pa
        z = norm.ppf(pa + u * mass)
    if not mass >= MASS_FLOOR:
        raise TruncationMassError(
            f"The interval ({lower:.6g}, {upper:.6g}) holds probability {mass:.3g} under N({mean:.6g}, {std:.3g}^2).\n"
            "Widen the hypermean limits."
        )
    x = mean + std * z
    return np.clip(x, np.nextafter(lower, upper), np.nextafter(upper, lower))


def gibbs_mu_xi(xi_row: Sequence[float], sigma_xi2: float, limits: Tuple[float, float],
                rng: np.random.Generator, size=None):
    """μ_ξi ~ N(mean(ξ_i·), σ_ξi²/N_t) truncated to the hypermean limits."""
    xi_row = np.asarray(xi_row, dtype=float).ravel()
    n_t = xi_row.size
    if n_t < 1:
        raise ConfigurationError("gibbs_mu_xi needs at least one test.")
    return sample_truncated_normal(xi_row.mean(), np.sqrt(sigma_xi2 / n_t), limits[0], limits[1], rng, size)


def gibbs_sigma_xi2(xi_row: Sequence[float], mu_xi: float, rng: np.random.Generator, alpha_xi: float = 1.0,
                    beta_xi: float = 2.0, size=None):
    """σ_ξi² ~ InvGamma(N_t/2 + α_ξ, ½Σ(ξ_it − μ_ξi)² + β_ξ)."""
    xi_row = np.asarray(xi_row, dtype=float).ravel()
    shape = xi_row.size / 2.0 + alpha_xi
    scale = 0.5 * np.sum((xi_row - mu_xi) ** 2) + beta_xi
    return scale / rng.gamma(shape, 1.0, size=size)


def gibbs_mu_e_hbi(errors: Sequence[np.ndarray], sigma_e2: float, rng: np.random.Generator,
                   sigma_mu_e2: float = 1.0 / 9.0, size=None):
    return gibbs_mu_e(np.concatenate([np.ravel(e) for e in errors]), sigma_e2, rng, sigma_mu_e2, size)


def gibbs_sigma_e2_hbi(errors: Sequence[np.ndarray], mu_e: float, rng: np.random.Generator,
                       alpha_e: float = 1.0, beta_e: float = 2.0, size=None):
    return gibbs_sigma_e2(np.concatenate([np.ravel(e) for e in errors]), mu_e, rng, alpha_e, beta_e, size)


def mh_step_xi_it(state: HbiState, i: int, t: int, simulator_t: Simulator, rng: np.random.Generator) -> HbiState:
    """Metropolis update of coefficient i of test t under the current hyper-distribution."""
    test = state.tests[t]
    test.mu_e, test.sigma_e2 = state.mu_e, state.sigma_e2
    mh_step_xi(test, i, simulator_t, state.mu_xi, state.sigma_xi2, rng)
    return state


# ------------------------------
# Sampler
# ------------------------------

@dataclass(frozen=True, eq=False)
class HbiResult:
    names: Tuple[str, ...]
    test_means: np.ndarray                 # (N_t, N_ξ) posterior means per test
    test_stds: np.ndarray
    hyper_mean: np.ndarray                 # posterior mean of μ_ξ
    hyper_mean_std: np.ndarray
    hyper_std: np.ndarray                  # posterior mean of σ_ξ
    hyper_std_std: np.ndarray
    population_mean: np.ndarray            # Gaussian fit of the per-test means
    population_std: np.ndarray
    gelman_rubin: Dict[str, float]
    converged: bool
    n_samples: int
    burn_in: int
    mu_e: float
    sigma_e2: float
    trace: pd.DataFrame = field(repr=False, default=None)

    @property
    def n_tests(self) -> int:
        return self.test_means.shape[0]


def _initial_state(simulators: Sequence[Simulator], start: np.ndarray, priors: HbiPriors, cfg: HbiConfig,
                   rng: np.random.Generator) -> HbiState:
    width = start_width(start, np.maximum(np.abs(start), 1e-12), cfg.start_spread)
    tests = []
    for sim in simulators:
        for _ in range(20):
            xi = start + width * rng.standard_normal(start.size)
            try:
                e = sim(xi)
                break
            except SolverInstabilityError:
                width = width / 2
        else:
            xi, e = start.copy(), sim(start)
        tests.append(ChainState(xi=xi, mu_e=0.0, sigma_e2=1.0, error=e, scales=0.5 * width))

    Xi = np.column_stack([t.xi for t in tests])
    lower, upper = np.asarray(priors.lower), np.asarray(priors.upper)
    mu_xi = np.clip(Xi.mean(axis=1), lower + 1e-9 * (upper - lower), upper - 1e-9 * (upper - lower))
    sigma_xi2 = np.maximum(Xi.var(axis=1), (cfg.start_spread * np.abs(start)) ** 2) + 1e-30
    all_e = np.concatenate([t.error for t in tests])
    mu_e = float(all_e.mean()) if cfg.update_error_model else 0.0
    sigma_e2 = max(float(all_e.var()), 1e-12)
    return HbiState(tests, mu_xi, sigma_xi2, mu_e, sigma_e2)


def _run_chain(simulators: Sequence[Simulator], start: np.ndarray, priors: HbiPriors, cfg: HbiConfig,
               seed, jobs: int) -> np.ndarray:
    root, *test_seeds = split_seeds(seed, len(simulators) + 1)
    rng = make_rng(root)
    test_rngs = [make_rng(s) for s in test_seeds]
    state = _initial_state(simulators, start, priors, cfg, rng)
    n_xi, n_t = start.size, len(simulators)
    limits = list(zip(priors.lower, priors.upper))
    hyper = priors.error
    trace = np.empty((cfg.steps, n_xi * n_t + 2 * n_xi + 2))

    def _update_test(t):
        for i in range(n_xi):
            mh_step_xi_it(state, i, t, simulators[t], test_rngs[t])

    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for step in range(cfg.steps):
            if pool is not None:
                list(pool.map(_update_test, range(n_t)))
            else:
                for t in range(n_t):
                    _update_test(t)

            Xi = state.Xi
            for i in range(n_xi):
                state.mu_xi[i] = gibbs_mu_xi(Xi[i], state.sigma_xi2[i], limits[i], rng)
                state.sigma_xi2[i] = gibbs_sigma_xi2(Xi[i], state.mu_xi[i], rng, priors.alpha_xi, priors.beta_xi)
            if cfg.update_error_model:
                state.mu_e = float(gibbs_mu_e_hbi(state.errors, state.sigma_e2, rng, hyper.sigma_mu_e2))
                state.sigma_e2 = float(gibbs_sigma_e2_hbi(state.errors, state.mu_e, rng, hyper.alpha_e, hyper.beta_e))

            if step < cfg.burn_in and (step + 1) % cfg.adapt_interval == 0:
                for test in state.tests:
                    adapt_scales(test, cfg.target_acceptance)
            trace[step] = np.concatenate([Xi.T.ravel(), state.mu_xi, state.sigma_xi2, [state.mu_e, state.sigma_e2]])
    finally:
        if pool is not None:
            pool.shutdown()
    return trace


def _trace_columns(names: Sequence[str], n_t: int) -> List[str]:
    columns = [f"{n}[{t}]" for t in range(n_t) for n in names]
    columns += [f"mu_xi:{n}" for n in names] + [f"sigma_xi2:{n}" for n in names]
    return columns + ["mu_e", "sigma_e2"]


def run_hbi(datasets: Sequence[FieldSeries], model: PdeModel, priors: Optional[HbiPriors] = None,
            cfg: Optional[HbiConfig] = None, seed: int = 0, solver: Optional[SolverConfig] = None,
            jobs: int = 1, simulators: Optional[Sequence[Simulator]] = None) -> HbiResult:
    """
    Joint sampler over per-test coefficients, hyper-parameters and the error model.

    `model` fixes the shared form and supplies the starting coefficients.
    `simulators` replaces the forward solves (one error function per test).
    """
    cfg = cfg or HbiConfig()
    if simulators is None:
        if len(datasets) < 2:
            raise ConfigurationError(f"Hierarchical inference needs at least 2 datasets, got {len(datasets)}.")
        simulators = [ForwardModel(model, d, solver, cfg.coarsen, cfg.smooth_points) for d in datasets]
    elif len(simulators) < 2:
        raise ConfigurationError("Hierarchical inference needs at least 2 tests.")
    start = np.asarray(model.coefficients, dtype=float)
    priors = priors or HbiPriors.around(start, cfg.limit_factor, alpha_xi=cfg.alpha_xi, beta_xi=cfg.beta_xi)
    if len(priors.lower) != start.size:
        raise ConfigurationError(
            f"Priors describe {len(priors.lower)} coefficients but the model has {start.size} terms."
        )

    names, n_t = model.terms, len(simulators)
    seeds = split_seeds(seed, cfg.chains)
    traces = [_run_chain(simulators, start, priors, cfg, s, jobs) for s in seeds]
    kept = np.stack([tr[cfg.burn_in:] for tr in traces])
    columns = _trace_columns(names, n_t)

    gr = {}
    for p, col in enumerate(columns):
        if col in ("mu_e", "sigma_e2") and not cfg.update_error_model:
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

    n_xi = start.size
    per_test = trace[columns[: n_xi * n_t]].to_numpy().reshape(-1, n_t, n_xi)
    test_means = per_test.mean(axis=0)
    test_stds = per_test.std(axis=0, ddof=1)
    mu_xi = trace[[f"mu_xi:{n}" for n in names]].to_numpy()
    sigma_xi = np.sqrt(trace[[f"sigma_xi2:{n}" for n in names]].to_numpy())

    result = HbiResult(
        names=tuple(names),
        test_means=test_means,
        test_stds=test_stds,
        hyper_mean=mu_xi.mean(axis=0),
        hyper_mean_std=mu_xi.std(axis=0, ddof=1),
        hyper_std=sigma_xi.mean(axis=0),
        hyper_std_std=sigma_xi.std(axis=0, ddof=1),
        population_mean=test_means.mean(axis=0),
        population_std=test_means.std(axis=0, ddof=1),
        gelman_rubin=gr,
        converged=converged,
        n_samples=trace.shape[0],
        burn_in=cfg.burn_in,
        mu_e=float(trace["mu_e"].mean()),
        sigma_e2=float(trace["sigma_e2"].mean()),
        trace=trace,
    )
    if not converged:
        worst = max(gr, key=gr.get)
        logger.warning("Hierarchical chains did not converge (worst Gelman-Rubin %s=%.3f)", worst, gr[worst])
    logger.info(
        "Hierarchical inference over %d tests: %s", n_t,
        ", ".join(f"{n}: mu={m:.6g} sd={s:.3g}" for n, m, s in zip(names, result.hyper_mean, result.hyper_std)),
    )
    return result


# ------------------------------
# Population generation and manifest
# ------------------------------

@dataclass(frozen=True, eq=False)
class PopulationMember:
    index: int
    coefficients: Dict[str, float]
    noise_level: float
    seed: int
    clean: FieldSeries
    noisy: FieldSeries


def generate_population(cfg: Optional[HbiConfig] = None, seed: int = 0, grid: Optional[GridSpec] = None,
                        solver: Optional[SolverConfig] = None, system: str = "kdv") -> List[PopulationMember]:
    """
    Draw n_models coefficient vectors and noise levels, then simulate the first n_select.

    Coefficients follow N(xi_mean, xi_std²) per term; noise levels U(noise_range).
    """
    cfg = cfg or HbiConfig()
    terms = reference_model(system).terms
    if len(cfg.xi_mean) != len(terms) or len(cfg.xi_std) != len(terms):
        raise ConfigurationError(f"xi_mean and xi_std need one entry per term of {system} ({', '.join(terms)}).")
    rng = make_rng(seed)
    coefs = rng.normal(cfg.xi_mean, cfg.xi_std, size=(cfg.n_models, len(terms)))
    noise = rng.uniform(cfg.noise_range[0], cfg.noise_range[1], size=cfg.n_models)
    noise_seeds = rng.integers(0, 2**31 - 1, size=cfg.n_models)
    grid = grid or make_grid(system)

    members = []
    for k in range(cfg.n_select):
        coefficients = dict(zip(terms, (float(c) for c in coefs[k])))
        clean = simulate_system(system, grid, solver, coefficients)
        noisy = add_noise(clean, float(noise[k]), int(noise_seeds[k]))
        members.append(PopulationMember(k, coefficients, float(noise[k]), int(noise_seeds[k]), clean, noisy))
        logger.debug("Population member %d: %s, noise %.3f", k, coefficients, noise[k])
    logger.info("Generated %d of %d population members for %s", cfg.n_select, cfg.n_models, system)
    return members


def write_manifest(members: Sequence[PopulationMember], files: Sequence[Union[str, Path]],
                   path: Union[str, Path]) -> Path:
    """Index of population datasets: file, seed, noise level and generating coefficients."""
    rows = []
    for member, file in zip(members, files):
        rows.append({"dataset": Path(file).name, "seed": member.seed, "noise_level": member.noise_level,
                     **member.coefficients})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote population manifest with %d datasets to %s", len(rows), path)
    return path


def read_manifest(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Population manifest not found: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = {"dataset", "seed", "noise_level"} - set(frame.columns)
    if missing:
        raise ConfigurationError(f"{path} is missing manifest column(s): {', '.join(sorted(missing))}.")
    return frame
