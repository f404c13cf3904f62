# tests/test_fields.py

import numpy as np
import pytest

from pde_discovery.errors import ConfigurationError, DegenerateDataError
from pde_discovery.fields import FieldSeries, GridSpec, read_field, resample_values, write_field
from pde_discovery.rng import make_rng, split_seeds, stage_seed


def _grid_1d(**kw):
    base = dict(x_min=-1.0, x_max=1.0, nx=33, t_min=0.0, t_max=1.0, nt=11)
    base.update(kw)
    return GridSpec(**base)


class TestGridSpec:

    def test_rejects_inverted_domain(self):
        with pytest.raises(ConfigurationError):
            _grid_1d(x_min=1.0, x_max=-1.0)

    def test_rejects_too_few_points(self):
        with pytest.raises(ConfigurationError):
            _grid_1d(nx=4)

    def test_partial_y_axis_is_rejected(self):
        with pytest.raises(ConfigurationError):
            _grid_1d(y_min=0.0, y_max=1.0)

    def test_periodic_x_excludes_right_endpoint(self):
        grid = _grid_1d(x_min=0.0, x_max=2.0, nx=16, periodic=True)
        assert grid.x[0] == 0.0
        assert grid.x[-1] < 2.0
        np.testing.assert_allclose(grid.dx, 2.0 / 16)

    def test_dirichlet_x_includes_both_endpoints(self):
        grid = _grid_1d()
        assert grid.x[0] == -1.0 and grid.x[-1] == 1.0

    def test_axes_and_shape(self):
        grid = _grid_1d()
        assert grid.axes == ("t", "x")
        assert grid.shape == (11, 33)
        grid2 = GridSpec(0.0, 1.0, 16, 0.0, 1.0, 10, y_min=0.0, y_max=2.0, ny=12, periodic=True)
        assert grid2.axes == ("t", "y", "x")
        assert grid2.shape == (10, 12, 16)

    def test_unknown_axis_raises(self):
        with pytest.raises(ConfigurationError):
            _grid_1d().axis_index("y")

    def test_coarsened_keeps_domain_and_time(self):
        grid = _grid_1d().coarsened(0.5)
        assert grid.nx == 17
        assert grid.nt == 11
        assert grid.x[-1] == 1.0

    def test_coarsen_factor_out_of_range(self):
        with pytest.raises(ConfigurationError):
            _grid_1d().coarsened(1.5)

    def test_trimmed_shape(self):
        grid = _grid_1d(nt=21).trimmed(2)
        assert grid.shape == (17, 29)
        np.testing.assert_allclose(grid.x[0], _grid_1d().x[2])

    def test_from_dict_rejects_unknown_keys(self):
        data = _grid_1d().to_dict()
        data["nz"] = 4
        with pytest.raises(ConfigurationError):
            GridSpec.from_dict(data)


class TestFieldSeries:

    def test_nan_values_rejected(self):
        grid = _grid_1d()
        values = np.zeros(grid.shape)
        values[3, 4] = np.nan
        with pytest.raises(DegenerateDataError):
            FieldSeries(grid, values)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            FieldSeries(_grid_1d(), np.zeros((3, 3)))

    def test_unknown_provenance_rejected(self):
        grid = _grid_1d()
        with pytest.raises(ConfigurationError):
            FieldSeries(grid, np.zeros(grid.shape), provenance="measured")

    def test_trimmed_series(self):
        grid = _grid_1d(nt=21)
        series = FieldSeries(grid, np.arange(np.prod(grid.shape), dtype=float).reshape(grid.shape))
        trimmed = series.trimmed(2)
        assert trimmed.values.shape == trimmed.grid.shape
        assert trimmed.values[0, 0] == series.values[2, 2]


class TestContainer:

    def test_write_then_read_preserves_everything(self, tmp_path):
        grid = _grid_1d()
        rng = np.random.default_rng(3)
        series = FieldSeries(grid, rng.normal(size=grid.shape), provenance="noisy", seed=17,
                             meta={"noise_level": 0.1})
        loaded = read_field(write_field(series, tmp_path / "u.csv"))
        assert loaded.grid == grid
        assert loaded.provenance == "noisy"
        assert loaded.seed == 17
        assert loaded.meta == {"noise_level": 0.1}
        np.testing.assert_array_equal(loaded.values, series.values)

    def test_two_dimensional_container(self, tmp_path):
        grid = GridSpec(0.0, 1.0, 8, 0.0, 1.0, 8, y_min=0.0, y_max=1.0, ny=10, periodic=True)
        values = np.random.default_rng(0).normal(size=grid.shape)
        loaded = read_field(write_field(FieldSeries(grid, values), tmp_path / "u2.csv"))
        np.testing.assert_array_equal(loaded.values, values)

    def test_missing_file_is_a_configuration_error(self, tmp_path):
        with pytest.raises(ConfigurationError):
            read_field(tmp_path / "nope.csv")

    def test_foreign_file_is_rejected(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ConfigurationError):
            read_field(path)


class TestResample:

    def test_linear_field_is_reproduced_exactly(self):
        src = _grid_1d()
        dst = src.coarsened(0.5)
        tt, xx = np.meshgrid(src.t, src.x, indexing="ij")
        values = 2.0 * xx - 0.5 * tt + 1.0
        out = resample_values(values, src, dst)
        tt2, xx2 = np.meshgrid(dst.t, dst.x, indexing="ij")
        np.testing.assert_allclose(out, 2.0 * xx2 - 0.5 * tt2 + 1.0, atol=1e-12)

    def test_periodic_wraparound(self):
        src = _grid_1d(x_min=0.0, x_max=1.0, nx=16, periodic=True)
        dst = src.coarsened(0.5)
        values = np.ones(src.shape) * 3.0
        np.testing.assert_allclose(resample_values(values, src, dst), 3.0)

    def test_mixed_boundary_types_rejected(self):
        src = _grid_1d()
        dst = _grid_1d(periodic=True)
        with pytest.raises(ConfigurationError):
            resample_values(np.zeros(src.shape), src, dst)


class TestSeeds:

    def test_same_seed_same_stream(self):
        a = make_rng(5).normal(size=10)
        b = make_rng(5).normal(size=10)
        np.testing.assert_array_equal(a, b)

    def test_split_streams_differ(self):
        s1, s2 = split_seeds(5, 2)
        assert not np.array_equal(make_rng(s1).normal(size=5), make_rng(s2).normal(size=5))

    def test_stage_seed_is_stable_and_stage_specific(self):
        assert stage_seed(0, "bmu") == stage_seed(0, "bmu")
        assert stage_seed(0, "bmu") != stage_seed(0, "hbi")
        assert stage_seed(0, "bmu") != stage_seed(1, "bmu")
