# pde_discovery/pesbl.py

"""
Sequential sparse Bayesian regression with a complexity-penalized selection rule.

Each iteration scores three kinds of moves for every library term:
    re-estimate  - change the precision α of an active term
    add          - activate an inactive term
    delete       - deactivate an active term
and applies the one minimizing  ΔC − 2ΔL, where ΔL is the exact change of the
marginal log-likelihood and ΔC the change of  2·Σi²/M + 2·|active|.

All linear algebra works on the Gram matrix G = ΦᵀΦ and Φᵀt, so one iteration
costs O(M·k) for k active terms.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from pde_discovery.errors import (
    ConfigurationError,
    DegenerateDataError,
    FastUpdateMismatchError,
    PosteriorBreakdownError,
)
from pde_discovery.dynamics import PdeModel
from pde_discovery.library_builder import Library, term_complexity_sum
from pde_discovery.preprocess import RegressionProblem

logger = logging.getLogger(__name__)

ACTIONS = ("reestimate", "add", "delete")
DENOMINATOR_FLOOR = 1e-12
CONSISTENCY_TOL = 1e-8


@dataclass(frozen=True)
class PesblConfig:
    max_iters: int = 1000
    tol1: float = 1e-4                 # stop once the chosen move gains less log-likelihood
    tol2: float = 1e-2                 # additions gaining less than tol2·|L(i1)| are vetoed
    complexity_penalty: bool = True    # False reduces to plain sequential SBL
    update_noise: bool = False         # re-estimate σ² after every move
    noise_floor: float = 1e-12         # σ² never drops below noise_floor·var(t)
    debug_checks: bool = False         # compare fast updates with direct recomputation

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be at least 1, got {self.max_iters}.")
        if not (self.tol1 > 0 and self.tol2 > 0):
            raise ConfigurationError(f"tol1 and tol2 must be positive, got {self.tol1} and {self.tol2}.")
        if not self.noise_floor > 0:
            raise ConfigurationError("noise_floor must be positive.")

    @classmethod
    def from_dict(cls, data: Optional[Mapping] = None) -> "PesblConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown pesbl keys: {', '.join(sorted(unknown))}.")
        return cls(**data)


@dataclass
class SblState:
    gram: np.ndarray                   # ΦᵀΦ
    phi_t: np.ndarray                  # Φᵀt
    tt: float                          # tᵀt
    n_samples: int
    sigma2: float
    alpha: np.ndarray                  # np.inf marks an inactive term; never used in linear algebra
    Sigma: np.ndarray
    mu: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    active: List[int] = field(default_factory=list)    # 0-based, in activation order
    L_rec: List[float] = field(default_factory=list)
    L_first: Optional[float] = None
    var_t: float = 1.0

    @property
    def beta(self) -> float:
        return 1.0 / self.sigma2

    @property
    def size(self) -> int:
        return self.gram.shape[0]

    @property
    def is_active(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[self.active] = True
        return mask

    @property
    def log_likelihood(self) -> float:
        return self.L_rec[-1]


class CandidateStats(NamedTuple):
    s: np.ndarray
    q: np.ndarray
    theta: np.ndarray
    reestimate: np.ndarray             # i_r
    add: np.ndarray                    # i_+
    delete: np.ndarray                 # i_-


class ActionDeltas(NamedTuple):
    delta_L: np.ndarray                # NaN where a move is inadmissible
    delta_C: np.ndarray
    new_alpha: np.ndarray
    action: np.ndarray                 # object array of ACTIONS entries


class Selection(NamedTuple):
    index: Optional[int]
    action: Optional[str]
    delta_L: float
    converged: bool
    gated: bool


# ------------------------------
# Direct (reference) computations
# ------------------------------

def _posterior(state: SblState, alpha_active: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = state.active
    precision = np.diag(alpha_active) + state.beta * state.gram[np.ix_(a, a)]
    try:
        factor = linalg.cho_factor(precision, lower=True)
    except linalg.LinAlgError as exc:
        raise PosteriorBreakdownError(
            f"Posterior precision over terms {[i + 1 for i in a]} is not positive definite."
        ) from exc
    Sigma = linalg.cho_solve(factor, np.eye(len(a)))
    Sigma = 0.5 * (Sigma + Sigma.T)
    mu = state.beta * Sigma @ state.phi_t[a]
    return Sigma, mu


def direct_log_likelihood(state: SblState) -> float:
    """
    L = -1/2 [N log 2π + N log σ² - Σ log α + log|Σ⁻¹| + β tᵀt - β (Φ_aᵀt)ᵀ μ]
    """
    a = state.active
    N = state.n_samples
    value = N * np.log(2 * np.pi) + N * np.log(state.sigma2) + state.beta * state.tt
    if a:
        alpha_a = state.alpha[a]
        precision = np.diag(alpha_a) + state.beta * state.gram[np.ix_(a, a)]
        _sign, logdet = np.linalg.slogdet(precision)
        Sigma, mu = _posterior(state, alpha_a)
        value += -np.sum(np.log(alpha_a)) + logdet - state.beta * state.phi_t[a] @ mu
    return float(-0.5 * value)


def recompute(state: SblState) -> SblState:
    """Rebuild Σ, μ, S and Q from scratch for the current active set and α."""
    a = state.active
    beta = state.beta
    diag_g = np.diag(state.gram)
    if not a:
        state.Sigma = np.zeros((0, 0))
        state.mu = np.zeros(0)
        state.S = beta * diag_g
        state.Q = beta * state.phi_t
        return state
    Sigma, mu = _posterior(state, state.alpha[a])
    G_ma = state.gram[:, a]
    state.Sigma, state.mu = Sigma, mu
    state.S = beta * diag_g - beta**2 * np.einsum("ij,jk,ik->i", G_ma, Sigma, G_ma)
    state.Q = beta * state.phi_t - beta**2 * G_ma @ (Sigma @ state.phi_t[a])
    return state


def check_consistency(state: SblState, L_fast: float):
    """Raise if the incrementally updated state drifted from a direct recomputation."""
    direct = SblState(
        state.gram, state.phi_t, state.tt, state.n_samples, state.sigma2, state.alpha.copy(),
        state.Sigma, state.mu, state.S, state.Q, list(state.active), [], None, state.var_t,
    )
    recompute(direct)
    L_direct = direct_log_likelihood(direct)

    def _close(x, y):
        scale = max(1.0, float(np.max(np.abs(y)))) if np.size(y) else 1.0
        return np.allclose(x, y, rtol=CONSISTENCY_TOL, atol=CONSISTENCY_TOL * scale)

    problems = []
    if not _close(state.Sigma, direct.Sigma):
        problems.append("Sigma")
    if not _close(state.mu, direct.mu):
        problems.append("mu")
    if not _close(state.S, direct.S) or not _close(state.Q, direct.Q):
        problems.append("S/Q")
    if not _close(L_fast, L_direct):
        problems.append(f"L (fast {L_fast:.12g} vs direct {L_direct:.12g})")
    if problems:
        raise FastUpdateMismatchError(
            f"Incremental updates disagree with direct recomputation in: {', '.join(problems)}.\n"
            f"Active terms: {[i + 1 for i in state.active]}."
        )


# ------------------------------
# Learner steps
# ------------------------------

def init_state(Phi: np.ndarray, t: np.ndarray, sigma2: Optional[float] = None) -> SblState:
    """Empty model: every α infinite, C = σ²I, σ² = var(t)."""
    Phi = np.asarray(Phi, dtype=float)
    t = np.asarray(t, dtype=float).ravel()
    if Phi.ndim != 2 or Phi.shape[0] != t.size:
        raise ConfigurationError(f"Phi has shape {Phi.shape} but t has {t.size} entries.")
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(t))):
        raise DegenerateDataError("The regression system contains NaN or infinite entries.")
    var_t = float(np.var(t))
    if var_t == 0:
        raise DegenerateDataError("The regression target has zero variance; nothing to learn.")
    M = Phi.shape[1]
    state = SblState(
        gram=Phi.T @ Phi,
        phi_t=Phi.T @ t,
        tt=float(t @ t),
        n_samples=t.size,
        sigma2=var_t if sigma2 is None else float(sigma2),
        alpha=np.full(M, np.inf),
        Sigma=np.zeros((0, 0)),
        mu=np.zeros(0),
        S=np.zeros(M),
        Q=np.zeros(M),
        var_t=var_t,
    )
    recompute(state)
    state.L_rec.append(direct_log_likelihood(state))
    return state


def candidate_stats(state: SblState) -> CandidateStats:
    s, q = state.S.copy(), state.Q.copy()
    active = state.is_active
    singular = np.zeros(state.size, dtype=bool)
    for m in state.active:
        denom = state.alpha[m] - state.S[m]
        if abs(denom) < DENOMINATOR_FLOOR:
            singular[m] = True
            continue
        s[m] = state.alpha[m] * state.S[m] / denom
        q[m] = state.alpha[m] * state.Q[m] / denom
    theta = q**2 - s
    positive = theta > 0
    return CandidateStats(
        s=s,
        q=q,
        theta=theta,
        reestimate=active & positive & ~singular,
        add=~active & positive,
        delete=active & ~positive & ~singular,
    )


def action_deltas(state: SblState, stats: CandidateStats, cfg: Optional[PesblConfig] = None) -> ActionDeltas:
    """ΔL and ΔC for the admissible move of every term (NaN where there is none)."""
    cfg = cfg or PesblConfig()
    M = state.size
    two_dL = np.full(M, np.nan)
    dC = np.zeros(M)
    new_alpha = np.full(M, np.inf)
    action = np.empty(M, dtype=object)
    S, Q = state.S, state.Q

    def _skip(m, why):
        logger.warning("Skipping term %d this iteration: %s", m + 1, why)

    for m in np.flatnonzero(stats.reestimate):
        alpha_new = stats.s[m] ** 2 / stats.theta[m]
        d_alpha = 1.0 / alpha_new - 1.0 / state.alpha[m]
        action[m], new_alpha[m] = "reestimate", alpha_new
        if d_alpha == 0:
            two_dL[m] = 0.0
            continue
        denom = S[m] + 1.0 / d_alpha
        arg = 1.0 + S[m] * d_alpha
        if abs(denom) < DENOMINATOR_FLOOR:
            _skip(m, "re-estimation denominator vanishes")
        elif arg <= 0:
            _skip(m, "non-positive log argument in re-estimation")
        else:
            two_dL[m] = Q[m] ** 2 / denom - np.log(arg)

    for m in np.flatnonzero(stats.add):
        action[m], new_alpha[m] = "add", stats.s[m] ** 2 / stats.theta[m]
        if abs(S[m]) < DENOMINATOR_FLOOR:
            _skip(m, "sparsity factor vanishes")
            continue
        two_dL[m] = (Q[m] ** 2 - S[m]) / S[m] + np.log(S[m] / Q[m] ** 2)
        dC[m] = 2.0 * (m + 1) ** 2 / M + 2.0

    can_delete = len(state.active) > 1
    for m in np.flatnonzero(stats.delete):
        action[m] = "delete"
        if not can_delete:
            continue
        denom = S[m] - state.alpha[m]
        arg = 1.0 - S[m] / state.alpha[m]
        if abs(denom) < DENOMINATOR_FLOOR:
            _skip(m, "deletion denominator vanishes")
        elif arg <= 0:
            _skip(m, "non-positive log argument in deletion")
        else:
            two_dL[m] = Q[m] ** 2 / denom - np.log(arg)
            dC[m] = -(2.0 * (m + 1) ** 2 / M + 2.0)

    if not cfg.complexity_penalty:
        dC[:] = 0.0
    return ActionDeltas(two_dL / 2.0, dC, new_alpha, action)


def select_action(deltas: ActionDeltas, state: SblState, cfg: Optional[PesblConfig] = None) -> Selection:
    """
    Pick the move minimizing ΔC − 2ΔL (lowest index on ties).

    Additions gaining less than tol2·|L(i1)| are vetoed in favour of the best
    move on an already active term.
    """
    cfg = cfg or PesblConfig()
    admissible = np.isfinite(deltas.delta_L)
    if not admissible.any():
        return Selection(None, None, 0.0, True, False)

    aic = np.where(admissible, deltas.delta_C - 2.0 * deltas.delta_L, np.inf)
    winner = int(np.argmin(aic))
    gated = False
    if (deltas.action[winner] == "add" and state.L_first is not None
            and deltas.delta_L[winner] < cfg.tol2 * abs(state.L_first)):
        gated = True
        restricted = np.where(state.is_active, aic, np.inf)
        if not np.isfinite(restricted).any():
            return Selection(None, None, 0.0, True, True)
        winner = int(np.argmin(restricted))

    dL = float(deltas.delta_L[winner])
    return Selection(winner, deltas.action[winner], dL, dL < cfg.tol1, gated)


def apply_action(state: SblState, index: int, action: str, new_alpha: float) -> SblState:
    """Rank-one update of Σ, μ, S, Q (and α, active set) for one move."""
    if action not in ACTIONS:
        raise ConfigurationError(f"Unknown learner action '{action}'.")
    beta = state.beta
    a = state.active

    if action == "reestimate" and new_alpha == state.alpha[index]:
        return state
    if action == "reestimate":
        j = a.index(index)
        Sigma_j = state.Sigma[:, j]
        kappa = 1.0 / (state.Sigma[j, j] + 1.0 / (new_alpha - state.alpha[index]))
        mu_j = state.mu[j]
        comp = beta * state.gram[:, a] @ Sigma_j
        state.Sigma = state.Sigma - kappa * np.outer(Sigma_j, Sigma_j)
        state.mu = state.mu - kappa * mu_j * Sigma_j
        state.S = state.S + kappa * comp**2
        state.Q = state.Q + kappa * mu_j * comp
        state.alpha[index] = new_alpha

    elif action == "add":
        Sigma_ii = 1.0 / (new_alpha + state.S[index])
        mu_i = Sigma_ii * state.Q[index]
        k = len(a)
        if k:
            w = beta * state.Sigma @ state.gram[a, index]
            e_proj = beta * (state.gram[:, index] - state.gram[:, a] @ w)
            Sigma = np.empty((k + 1, k + 1))
            Sigma[:k, :k] = state.Sigma + Sigma_ii * np.outer(w, w)
            Sigma[:k, k] = Sigma[k, :k] = -Sigma_ii * w
            Sigma[k, k] = Sigma_ii
            mu = np.append(state.mu - mu_i * w, mu_i)
        else:
            e_proj = beta * state.gram[:, index]
            Sigma = np.array([[Sigma_ii]])
            mu = np.array([mu_i])
        state.Sigma, state.mu = Sigma, mu
        state.S = state.S - Sigma_ii * e_proj**2
        state.Q = state.Q - mu_i * e_proj
        state.alpha[index] = new_alpha
        state.active = a + [index]

    else:
        if len(a) <= 1:
            raise ConfigurationError("The learner keeps at least one active term; cannot delete the last one.")
        j = a.index(index)
        Sigma_j = state.Sigma[:, j]
        Sigma_jj = state.Sigma[j, j]
        mu_j = state.mu[j]
        comp = beta * state.gram[:, a] @ Sigma_j
        Sigma = state.Sigma - np.outer(Sigma_j, Sigma_j) / Sigma_jj
        mu = state.mu - (mu_j / Sigma_jj) * Sigma_j
        state.S = state.S + comp**2 / Sigma_jj
        state.Q = state.Q + (mu_j / Sigma_jj) * comp
        keep = [p for p in range(len(a)) if p != j]
        state.Sigma = Sigma[np.ix_(keep, keep)]
        state.mu = mu[keep]
        state.alpha[index] = np.inf
        state.active = [a[p] for p in keep]

    _ensure_positive_definite(state)
    return state


def _ensure_positive_definite(state: SblState):
    if not state.active:
        return
    try:
        np.linalg.cholesky(0.5 * (state.Sigma + state.Sigma.T))
    except np.linalg.LinAlgError:
        logger.warning("Posterior covariance lost positive definiteness; recomputing directly")
        recompute(state)


def _noise_settled(state: SblState, cfg: PesblConfig) -> bool:
    return len(state.L_rec) >= 2 and abs(state.L_rec[-1] - state.L_rec[-2]) < cfg.tol1


def _update_noise(state: SblState, cfg: PesblConfig):
    """σ² ← ‖t − Φμ‖² / (N − Σγ), γ_j = 1 − α_j Σ_jj, floored at noise_floor·var(t)."""
    a = state.active
    if a:
        mu = state.mu
        G_aa = state.gram[np.ix_(a, a)]
        residual = state.tt - 2.0 * mu @ state.phi_t[a] + mu @ G_aa @ mu
        gamma = 1.0 - state.alpha[a] * np.diag(state.Sigma)
    else:
        residual, gamma = state.tt, np.zeros(0)
    dof = max(state.n_samples - float(np.sum(gamma)), 1.0)
    state.sigma2 = max(float(residual) / dof, cfg.noise_floor * state.var_t)
    recompute(state)


# ------------------------------
# Driver
# ------------------------------

@dataclass(frozen=True, eq=False)
class SparseModel:
    indices: Tuple[int, ...]           # 1-based library indices, sorted
    names: Tuple[str, ...]
    mean: np.ndarray                   # physical units
    std: np.ndarray
    covariance: np.ndarray
    alpha: np.ndarray                  # precisions of the normalized problem
    log_likelihood: float
    iterations: int
    converged: bool
    library_size: int
    sigma2: float = 0.0
    L_trace: Tuple[float, ...] = ()
    tol2_triggered: int = 0
    actions: Tuple[Tuple[int, str, int, float], ...] = ()

    @property
    def coefficients(self) -> Dict[str, float]:
        return dict(zip(self.names, (float(m) for m in self.mean)))

    @property
    def complexity(self) -> float:
        return term_complexity_sum(self.indices, self.library_size)

    def to_pde_model(self, system: str = "generic") -> PdeModel:
        return PdeModel(self.names, tuple(float(m) for m in self.mean), system)


def run(Phi: np.ndarray, t: np.ndarray, cfg: Optional[PesblConfig] = None, library: Optional[Library] = None,
        column_scales: Optional[np.ndarray] = None, target_scale: float = 1.0) -> SparseModel:
    """
    Learn a sparse model from a column-normalized system (Phi, t).

    `column_scales` and `target_scale` are the norms divided out during
    normalization; coefficients are reported in the original units.
    """
    cfg = cfg or PesblConfig()
    state = init_state(Phi, t)
    M = state.size
    names = library.names if library is not None else tuple(f"term{j + 1}" for j in range(M))
    if len(names) != M:
        raise ConfigurationError(f"Library has {len(names)} terms but Phi has {M} columns.")

    actions: List[Tuple[int, str, int, float]] = []
    tol2_triggered = 0
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_iters + 1):
        stats = candidate_stats(state)
        deltas = action_deltas(state, stats, cfg)
        choice = select_action(deltas, state, cfg)
        tol2_triggered += int(choice.gated)
        if choice.converged and (choice.index is None or not cfg.update_noise or _noise_settled(state, cfg)):
            converged = True
            break

        apply_action(state, choice.index, choice.action, deltas.new_alpha[choice.index])
        L_new = state.L_rec[-1] + choice.delta_L
        if cfg.debug_checks:
            check_consistency(state, L_new)
        if cfg.update_noise:
            _update_noise(state, cfg)
            L_new = direct_log_likelihood(state)
        state.L_rec.append(L_new)
        if state.L_first is None:
            state.L_first = L_new
        actions.append((iteration, choice.action, choice.index + 1, choice.delta_L))
        logger.debug(
            "iter %d: %s term %d (%s) dL=%.6g L=%.6g", iteration, choice.action, choice.index + 1,
            names[choice.index], choice.delta_L, L_new,
        )

    if not converged:
        logger.warning("Learner stopped at max_iters=%d without converging", cfg.max_iters)

    return _summarize(state, names, cfg, iteration, converged, column_scales, target_scale,
                      tuple(actions), tol2_triggered)


def _summarize(state: SblState, names: Sequence[str], cfg: PesblConfig, iterations: int, converged: bool,
               column_scales: Optional[np.ndarray], target_scale: float,
               actions: Tuple, tol2_triggered: int) -> SparseModel:
    M = state.size
    if state.active:
        recompute(state)
    order = np.argsort(state.active)
    active = [state.active[p] for p in order]
    Sigma = state.Sigma[np.ix_(order, order)] if active else np.zeros((0, 0))
    mu = state.mu[order] if active else np.zeros(0)

    scales = np.ones(M) if column_scales is None else np.asarray(column_scales, dtype=float)
    factor = target_scale / scales[active] if active else np.zeros(0)
    mean = mu * factor
    covariance = Sigma * np.outer(factor, factor)
    std = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    if not active:
        logger.warning("Learner finished with no active terms")
    logger.info(
        "Learner %s after %d iterations: %s",
        "converged" if converged else "stopped", iterations,
        ", ".join(f"{names[i]}={m:.6g}" for i, m in zip(active, mean)) or "(empty model)",
    )
    return SparseModel(
        indices=tuple(i + 1 for i in active),
        names=tuple(names[i] for i in active),
        mean=mean,
        std=std,
        covariance=covariance,
        alpha=state.alpha[active] if active else np.zeros(0),
        log_likelihood=state.L_rec[-1],
        iterations=iterations,
        converged=converged,
        library_size=M,
        sigma2=state.sigma2,
        L_trace=tuple(state.L_rec),
        tol2_triggered=tol2_triggered,
        actions=actions,
    )


def learn(problem: RegressionProblem, cfg: Optional[PesblConfig] = None) -> SparseModel:
    """Run the learner on a prepared RegressionProblem and report physical coefficients."""
    system = problem.system
    return run(system.matrix, system.target, cfg, problem.library, system.column_scales, system.target_scale)
