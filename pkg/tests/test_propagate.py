# tests/test_propagate.py

from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from pde_discovery.dynamics import PdeModel, solve_generic
from pde_discovery.errors import ConfigurationError
from pde_discovery.fields import GridSpec
from pde_discovery.propagate import Section, diagnose, propagate, thin_samples, write_envelope


def _heat_setup():
    grid = GridSpec(-1.0, 1.0, 32, 0.0, 1.0, 11, periodic=True)
    u0 = np.cos(np.pi * grid.x)
    model = PdeModel(("u_xx",), (0.01,))
    return grid, u0, model


class TestPropagate:

    def test_envelope_covers_the_generating_solution(self):
        grid, u0, model = _heat_setup()
        draws = np.random.default_rng(0).normal(0.01, 0.001, size=(40, 1))
        truth = solve_generic(model, u0, grid)
        section = Section("x", 0.0, window=(0.1, 1.0))
        envelope = propagate(draws, model, grid, section, u0, truth=truth)
        assert envelope.n_draws == 40
        assert envelope.free_axis == "t"
        np.testing.assert_allclose(envelope.coordinates, grid.t[1:])
        assert envelope.coverage == 1.0
        assert not envelope.flagged
        assert np.all(envelope.std > 0)

    def test_unstable_draws_are_dropped_and_flagged(self):
        grid = GridSpec(0.0, 1.0, 16, 0.0, 1.0, 11, periodic=True)
        draws = np.concatenate([np.zeros((35, 1)), np.full((5, 1), 50.0)])
        envelope = propagate(draws, PdeModel(("u",), (0.0,)), grid, Section("x", 0.5), np.ones(16))
        assert envelope.dropped == 5
        assert envelope.flagged
        assert envelope.n_draws == 35
        np.testing.assert_allclose(envelope.mean, 1.0)

    def test_needs_enough_draws(self):
        grid, u0, model = _heat_setup()
        with pytest.raises(ConfigurationError):
            propagate(np.full((10, 1), 0.01), model, grid, Section("x", 0.0), u0)

    def test_draw_width_must_match_model(self):
        grid, u0, model = _heat_setup()
        with pytest.raises(ConfigurationError):
            propagate(np.full((40, 2), 0.01), model, grid, Section("x", 0.0), u0)

    def test_threads_give_the_same_envelope(self):
        grid, u0, model = _heat_setup()
        draws = np.random.default_rng(1).normal(0.01, 0.001, size=(30, 1))
        a = propagate(draws, model, grid, Section("t", 0.5), u0, jobs=1)
        b = propagate(draws, model, grid, Section("t", 0.5), u0, jobs=3)
        np.testing.assert_array_equal(a.trajectories, b.trajectories)

    def test_envelope_file(self, tmp_path):
        grid, u0, model = _heat_setup()
        draws = np.random.default_rng(2).normal(0.01, 0.001, size=(30, 1))
        envelope = propagate(draws, model, grid, Section("t", 0.5), u0)
        frame = pd.read_csv(write_envelope(envelope, tmp_path / "env.csv"))
        assert list(frame.columns) == ["x", "mean", "std", "lower", "upper"]
        assert len(frame) == grid.nx


class TestSection:

    def test_outside_grid(self):
        grid, _, _ = _heat_setup()
        with pytest.raises(ConfigurationError):
            Section("t", 5.0).extract(np.zeros(grid.shape), grid)

    def test_empty_window(self):
        grid, _, _ = _heat_setup()
        with pytest.raises(ConfigurationError):
            Section("x", 0.0, window=(2.0, 3.0)).extract(np.zeros(grid.shape), grid)

    def test_plane_is_not_a_line(self):
        grid = GridSpec(0.0, 1.0, 8, 0.0, 1.0, 8, y_min=0.0, y_max=1.0, ny=8, periodic=True)
        with pytest.raises(ConfigurationError):
            Section("x", 0.5).free_axis(grid)


def test_thinning_keeps_endpoints():
    samples = np.arange(1000.0).reshape(-1, 1)
    thinned = thin_samples(samples, 100)
    assert thinned.shape == (100, 1)
    assert thinned[0, 0] == 0.0 and thinned[-1, 0] == 999.0
    assert thin_samples(samples[:20], 100).shape == (20, 1)


class TestDiagnose:

    def _post(self, names, mean, std):
        return SimpleNamespace(names=names, mean=np.array(mean), std=np.array(std))

    def test_shift_distribution(self):
        a = self._post(("uu_x", "u_xx"), [-1.0, 0.003], [0.1, 0.001])
        b = self._post(("u_xx", "uu_x"), [0.006, -0.5], [0.001, 0.1])
        shift = diagnose(a, b, threshold=0.3)
        np.testing.assert_allclose(shift.mean, [0.5, 0.003])
        np.testing.assert_allclose(shift.variance, [0.02, 2e-6])
        s = np.sqrt(0.02)
        expected = norm.sf((0.3 - 0.5) / s) + norm.cdf((-0.3 - 0.5) / s)
        assert shift.exceedance[0] == pytest.approx(expected)
        assert shift.exceedance[1] == pytest.approx(0.0, abs=1e-12)

    def test_zero_threshold_is_certain(self):
        a = self._post(("u",), [1.0], [0.1])
        b = self._post(("u",), [1.2], [0.1])
        assert diagnose(a, b).exceedance[0] == pytest.approx(1.0)

    def test_zero_spread(self):
        a = self._post(("u",), [1.0], [0.0])
        b = self._post(("u",), [1.2], [0.0])
        assert diagnose(a, b, threshold=0.1).exceedance[0] == 1.0

    def test_different_model_forms(self):
        a = self._post(("u",), [1.0], [0.1])
        b = self._post(("u_x",), [1.0], [0.1])
        with pytest.raises(ConfigurationError):
            diagnose(a, b)

    def test_negative_threshold(self):
        a = self._post(("u",), [1.0], [0.1])
        with pytest.raises(ConfigurationError):
            diagnose(a, a, threshold=-1.0)
