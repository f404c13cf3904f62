# tests/test_pesbl.py

import itertools

import numpy as np
import pytest

from pde_discovery.errors import ConfigurationError, DegenerateDataError
from pde_discovery.pesbl import (
    ActionDeltas,
    PesblConfig,
    apply_action,
    check_consistency,
    direct_log_likelihood,
    init_state,
    run,
    select_action,
)


def _orthonormal_problem(noise=1e-3, seed=0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(200, 8)))
    t = 0.8 * q[:, 1] - 0.6 * q[:, 4] + noise * rng.standard_normal(200)
    return q, t


class TestRecovery:

    @pytest.mark.parametrize("penalty", [True, False])
    def test_recovers_support_on_orthonormal_columns(self, penalty):
        Phi, t = _orthonormal_problem()
        model = run(Phi, t, PesblConfig(complexity_penalty=penalty))
        assert model.indices == (2, 5)
        assert model.converged
        np.testing.assert_allclose(model.mean, [0.8, -0.6], atol=0.02)
        assert np.all(np.diff(model.L_trace) >= -1e-9)

    def test_reports_physical_units(self):
        Phi, t = _orthonormal_problem()
        scales = np.arange(1.0, 9.0)
        model = run(Phi, t, PesblConfig(), column_scales=scales, target_scale=2.0)
        plain = run(Phi, t, PesblConfig())
        np.testing.assert_allclose(model.mean, plain.mean * 2.0 / scales[[1, 4]])

    def test_debug_checks_pass_on_correlated_columns(self):
        rng = np.random.default_rng(3)
        base = rng.normal(size=(150, 6))
        base[:, 3] += 0.7 * base[:, 1]
        Phi = base / np.linalg.norm(base, axis=0)
        t = 2.0 * Phi[:, 1] - 1.0 * Phi[:, 3] + 0.5 * Phi[:, 5] + 0.01 * rng.standard_normal(150)
        model = run(Phi, t, PesblConfig(debug_checks=True, complexity_penalty=False))
        assert 2 in model.indices

    def test_noise_update_drives_exact_fit(self):
        rng = np.random.default_rng(5)
        phi = rng.normal(size=(1000, 1))
        model = run(phi, -phi[:, 0], PesblConfig(update_noise=True, noise_floor=1e-4))
        assert model.indices == (1,)
        assert model.mean[0] == pytest.approx(-1.0, abs=1e-5)
        assert model.sigma2 <= 1e-3 * np.var(phi)

    def test_constant_target_is_degenerate(self):
        with pytest.raises(DegenerateDataError):
            run(np.random.default_rng(0).normal(size=(50, 3)), np.ones(50))

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            run(np.ones((10, 3)), np.arange(9.0))


class TestLikelihood:

    def test_empty_model(self):
        rng = np.random.default_rng(1)
        Phi, t = rng.normal(size=(40, 3)), rng.normal(size=40)
        state = init_state(Phi, t)
        s2 = np.var(t)
        expected = -0.5 * (40 * np.log(2 * np.pi) + 40 * np.log(s2) + t @ t / s2)
        assert state.L_rec[0] == pytest.approx(expected)
        assert direct_log_likelihood(state) == pytest.approx(expected)

    def test_fast_updates_match_direct_recomputation(self):
        Phi, t = _orthonormal_problem(noise=0.05)
        state = init_state(Phi, t)
        apply_action(state, 1, "add", 2.0)
        apply_action(state, 4, "add", 3.0)
        apply_action(state, 1, "reestimate", 1.5)
        state.L_rec.append(direct_log_likelihood(state))
        check_consistency(state, state.L_rec[-1])


class TestSelection:

    def _state(self):
        rng = np.random.default_rng(2)
        return init_state(rng.normal(size=(30, 3)), rng.normal(size=30))

    def test_ties_pick_lowest_index(self):
        state = self._state()
        deltas = ActionDeltas(
            delta_L=np.array([1.0, 1.0, np.nan]),
            delta_C=np.zeros(3),
            new_alpha=np.ones(3),
            action=np.array(["add", "add", None], dtype=object),
        )
        choice = select_action(deltas, state)
        assert choice.index == 0 and choice.action == "add"
        assert not choice.converged

    def test_small_addition_is_vetoed(self):
        state = self._state()
        apply_action(state, 0, "add", 1.0)
        state.L_first = 100.0
        deltas = ActionDeltas(
            delta_L=np.array([0.0, 0.5, np.nan]),
            delta_C=np.zeros(3),
            new_alpha=np.ones(3),
            action=np.array(["reestimate", "add", None], dtype=object),
        )
        choice = select_action(deltas, state, PesblConfig(tol2=1e-2))
        assert choice.gated
        assert choice.index == 0 and choice.action == "reestimate"
        assert choice.converged

    def test_nothing_admissible_means_converged(self):
        state = self._state()
        deltas = ActionDeltas(np.full(3, np.nan), np.zeros(3), np.ones(3), np.array([None] * 3, dtype=object))
        choice = select_action(deltas, state)
        assert choice.index is None and choice.converged

    def test_last_term_cannot_be_deleted(self):
        state = self._state()
        apply_action(state, 0, "add", 1.0)
        with pytest.raises(ConfigurationError):
            apply_action(state, 0, "delete", np.inf)


class TestConfig:

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            PesblConfig.from_dict({"tolerance": 1e-3})

    @pytest.mark.parametrize("kwargs", [{"max_iters": 0}, {"tol1": 0.0}, {"noise_floor": -1.0}])
    def test_invalid_values(self, kwargs):
        with pytest.raises(ConfigurationError):
            PesblConfig(**kwargs)


def _correlated_problem(seed=4):
    """Random unit-norm design whose residual is orthogonal to every column."""
    rng = np.random.default_rng(seed)
    Phi = rng.normal(size=(200, 6))
    Phi /= np.linalg.norm(Phi, axis=0)
    e = 0.05 * rng.standard_normal(200)
    e -= Phi @ np.linalg.lstsq(Phi, e, rcond=None)[0]
    t = 1.5 * Phi[:, 1] - 1.0 * Phi[:, 4] + e
    return Phi, t


def _best_bic_subset(Phi, t):
    n, m = Phi.shape
    best, best_bic = None, np.inf
    for k in range(1, m + 1):
        for subset in itertools.combinations(range(m), k):
            cols = Phi[:, subset]
            residual = t - cols @ np.linalg.lstsq(cols, t, rcond=None)[0]
            bic = n * np.log(residual @ residual / n) + k * np.log(n)
            if bic < best_bic:
                best, best_bic = subset, bic
    return tuple(i + 1 for i in best)


class TestOracles:

    def test_support_matches_exhaustive_bic_search(self):
        Phi, t = _correlated_problem()
        oracle = _best_bic_subset(Phi, t)
        assert oracle == (2, 5)
        assert run(Phi, t, PesblConfig()).indices == oracle

    def test_add_then_delete_restores_statistics(self):
        Phi, t = _correlated_problem()
        state = init_state(Phi, t)
        apply_action(state, 1, "add", 2.0)
        S, Q, Sigma, mu = state.S.copy(), state.Q.copy(), state.Sigma.copy(), state.mu.copy()
        apply_action(state, 3, "add", 0.5)
        apply_action(state, 3, "delete", np.inf)
        assert state.active == [1]
        assert np.isinf(state.alpha[3])
        np.testing.assert_allclose(state.S, S, rtol=1e-10)
        np.testing.assert_allclose(state.Q, Q, rtol=1e-10, atol=1e-10 * np.max(np.abs(Q)))
        np.testing.assert_allclose(state.Sigma, Sigma, rtol=1e-10)
        np.testing.assert_allclose(state.mu, mu, rtol=1e-10)

    def test_rescaled_columns_give_the_same_support(self):
        Phi, t = _orthonormal_problem(noise=0.05)
        d = np.array([0.5, 2.0, 3.0, 0.8, 1.7, 1.0, 2.5, 0.6])
        plain = run(Phi, t, PesblConfig())
        scaled = run(Phi * d, t, PesblConfig())
        assert scaled.indices == plain.indices
        np.testing.assert_allclose(scaled.mean * d[np.array(scaled.indices) - 1], plain.mean, rtol=1e-6)
        assert scaled.log_likelihood == pytest.approx(plain.log_likelihood, rel=1e-9)

    def test_empty_model_sparsity_is_the_noise_precision(self):
        Phi, t = _correlated_problem()
        state = init_state(Phi, t)
        np.testing.assert_allclose(state.S, 1.0 / np.var(t))
        np.testing.assert_allclose(state.Q, Phi.T @ t / np.var(t))
        fixed = init_state(Phi, t, sigma2=0.25)
        np.testing.assert_allclose(fixed.S, 4.0)
