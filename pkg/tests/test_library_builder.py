# tests/test_library_builder.py

import numpy as np
import pytest

from pde_discovery.errors import ConfigurationError
from pde_discovery.fields import FieldSeries, GridSpec
from pde_discovery.library_builder import (
    build_library_1d,
    build_library_2d,
    evaluate_model_terms,
    lookup_terms,
    term_complexity_sum,
    vocabulary,
)

NAMES_1D = [
    "1", "u", "u^2", "u^3",
    "u_x", "uu_x", "u^2u_x", "u^3u_x",
    "u_xx", "uu_xx", "u^2u_xx", "u^3u_xx",
    "u_xxx", "uu_xxx", "u^2u_xxx", "u^3u_xxx",
]


def _fields_1d(seed=0):
    grid = GridSpec(0.0, 1.0, 16, 0.0, 1.0, 10, periodic=True)
    rng = np.random.default_rng(seed)
    u = FieldSeries(grid, rng.normal(size=grid.shape))
    derivs = {k: FieldSeries(grid, rng.normal(size=grid.shape)) for k in ("x", "xx", "xxx")}
    return u, derivs


class TestVocabulary:

    def test_one_dimensional_order(self):
        assert [t.name for t in vocabulary(1)] == NAMES_1D

    def test_indices_are_one_based_positions(self):
        terms = vocabulary(1)
        assert [t.index for t in terms] == list(range(1, 17))
        assert {t.name: t.index for t in terms}["uu_x"] == 6

    def test_two_dimensional_names(self):
        names = [t.name for t in vocabulary(2)]
        assert len(names) == 12
        assert names[5] == "(u.grad)u"
        assert names[8] == "lap(u)"

    def test_unsupported_dimension(self):
        with pytest.raises(ConfigurationError):
            vocabulary(3)

    def test_lookup_unknown_term(self):
        with pytest.raises(ConfigurationError, match="u_yy"):
            lookup_terms(["u_yy"], 1)


class TestBuildLibrary:

    def test_columns_are_products(self):
        u, derivs = _fields_1d()
        lib = build_library_1d(u, derivs)
        assert lib.matrix.shape == (160, 16)
        np.testing.assert_allclose(lib.column("u^2u_x"), u.values.ravel() * lib.column("uu_x"), atol=1e-12)
        np.testing.assert_allclose(lib.column("u_xxx"), derivs["xxx"].values.ravel())

    def test_constant_field(self):
        u, derivs = _fields_1d()
        ones = u.with_values(np.ones(u.grid.shape))
        zeros = {k: d.with_values(np.zeros(d.grid.shape)) for k, d in derivs.items()}
        lib = build_library_1d(ones, zeros)
        np.testing.assert_array_equal(lib.matrix[:, :4], 1.0)
        np.testing.assert_array_equal(lib.matrix[:, 4:], 0.0)

    def test_missing_derivative(self):
        u, derivs = _fields_1d()
        del derivs["xxx"]
        with pytest.raises(ConfigurationError):
            build_library_1d(u, derivs)

    def test_derivative_on_other_grid(self):
        u, derivs = _fields_1d()
        other = GridSpec(0.0, 2.0, 16, 0.0, 1.0, 10, periodic=True)
        derivs["x"] = FieldSeries(other, derivs["x"].values)
        with pytest.raises(ConfigurationError):
            build_library_1d(u, derivs)

    def test_two_dimensional_zero_field(self):
        grid = GridSpec(0.0, 1.0, 8, 0.0, 1.0, 8, y_min=0.0, y_max=1.0, ny=8, periodic=True)
        zero = FieldSeries(grid, np.zeros(grid.shape))
        derivs = {k: zero for k in ("x", "y", "xx", "yy")}
        lib = build_library_2d(zero, derivs)
        assert lib.size == 12
        np.testing.assert_array_equal(lib.matrix[:, 0], 1.0)
        np.testing.assert_array_equal(lib.matrix[:, 1:], 0.0)

    def test_two_dimensional_aggregates(self):
        grid = GridSpec(0.0, 1.0, 8, 0.0, 1.0, 8, y_min=0.0, y_max=1.0, ny=8, periodic=True)
        rng = np.random.default_rng(1)
        u = FieldSeries(grid, rng.normal(size=grid.shape))
        parts = {k: FieldSeries(grid, rng.normal(size=grid.shape)) for k in ("x", "y", "xx", "yy")}
        lib = build_library_2d(u, parts)
        expected = u.values * (parts["x"].values + parts["y"].values)
        np.testing.assert_allclose(lib.column("(u.grad)u"), expected.ravel())

    def test_trimmed_library_matches_trimmed_fields(self):
        u, derivs = _fields_1d()
        lib = build_library_1d(u, derivs).trimmed(1)
        assert lib.grid.shape == (8, 14)
        np.testing.assert_allclose(lib.column("u"), u.values[1:-1, 1:-1].ravel())


class TestComplexity:

    def test_reference_values(self):
        assert term_complexity_sum([], 16) == 0.0
        assert term_complexity_sum([1], 16) == pytest.approx(2.125)
        assert term_complexity_sum([6, 9], 16) == pytest.approx(2 * (36 + 81) / 16 + 4)

    def test_out_of_range_index(self):
        with pytest.raises(ConfigurationError):
            term_complexity_sum([17], 16)
        with pytest.raises(ConfigurationError):
            term_complexity_sum([0], 16)


def test_evaluate_model_terms_matches_library_product():
    u, derivs = _fields_1d()
    lib = build_library_1d(u, derivs)
    terms = lookup_terms(["uu_x", "u_xx"], 1)
    rhs = evaluate_model_terms(terms, [-1.0, 0.1], u.values, {k: d.values for k, d in derivs.items()})
    expected = -lib.column("uu_x") + 0.1 * lib.column("u_xx")
    np.testing.assert_allclose(rhs.ravel(), expected, atol=1e-12)
