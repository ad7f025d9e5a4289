import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anonprev.errors import ConfigError, DataError, ParseError
from anonprev.grid import (
    Raster,
    TransformSpec,
    build_fine_grid,
    cell_at,
    load_ascii_grid,
    nearest_populated_cell,
    write_ascii_grid,
)

from conftest import flat_raster


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")


HEADER_2X2 = [
    "ncols 2",
    "nrows 2",
    "xllcorner 0",
    "yllcorner 0",
    "cellsize 5",
    "NODATA_value -9999",
]


class TestAsciiGrid:
    def test_header_echo(self, tmp_path):
        p = tmp_path / "g.asc"
        write_lines(p, HEADER_2X2 + ["1 2", "3 4"])
        r = load_ascii_grid(p)
        assert (r.n_rows, r.n_cols, r.cell_size) == (2, 2, 5.0)
        assert r.nodata == -9999.0
        # top row first in the file; internal row 0 is the bottom row
        assert list(r.grid2d()[1]) == [1.0, 2.0]
        assert list(r.grid2d()[0]) == [3.0, 4.0]

    def test_row_length_mismatch_names_line(self, tmp_path):
        p = tmp_path / "g.asc"
        write_lines(p, HEADER_2X2 + ["1 2 3", "4 5"])
        with pytest.raises(ParseError, match="line 7"):
            load_ascii_grid(p)

    def test_non_numeric_token_names_line(self, tmp_path):
        p = tmp_path / "g.asc"
        write_lines(p, HEADER_2X2 + ["1 2", "3 oops"])
        with pytest.raises(ParseError, match="line 8"):
            load_ascii_grid(p)

    def test_bad_header_names_line(self, tmp_path):
        p = tmp_path / "g.asc"
        write_lines(p, ["ncols 2", "wrong 2"] + HEADER_2X2[2:] + ["1 2", "3 4"])
        with pytest.raises(ParseError, match="line 2"):
            load_ascii_grid(p)

    def test_missing_rows(self, tmp_path):
        p = tmp_path / "g.asc"
        write_lines(p, HEADER_2X2 + ["1 2"])
        with pytest.raises(ParseError, match="expected 2 data rows"):
            load_ascii_grid(p)

    def test_round_trip_random_raster(self, tmp_path):
        rng = np.random.default_rng(3)
        r = Raster(10, 10, -3.25, 7.5, 0.7, -1.0, rng.standard_normal(100) * 1e3)
        p = tmp_path / "rt.asc"
        write_ascii_grid(r, p)
        back = load_ascii_grid(p)
        assert back.same_geotransform(r)
        assert np.array_equal(back.values, r.values)

    @given(st.integers(0, 2**52))
    def test_round_trip_17_digits(self, mantissa):
        v = float(np.float64(mantissa) * 1e-13)
        assert float("%.17g" % v) == v


class TestBuildFineGrid:
    def make_stack(self, pop_vals, cov_vals, n=10):
        pop = flat_raster(pop_vals, n, n)
        cov = flat_raster(cov_vals, n, n)
        urb = flat_raster(np.zeros(n * n), n, n)
        reg = flat_raster(np.zeros(n * n), n, n)
        adm = flat_raster(np.zeros(n * n), n, n)
        return [cov], pop, urb, reg, adm

    def test_count_follows_support(self):
        pop_vals = np.zeros(100)
        pop_vals[[3, 14, 15, 41, 62, 77, 99]] = 2.0
        covs, pop, urb, reg, adm = self.make_stack(pop_vals, np.arange(100.0))
        grid = build_fine_grid(covs, pop, urb, reg, adm, TransformSpec(["identity"], [True]))
        assert grid.n_cells == 7

    def test_constant_covariate_errors(self):
        covs, pop, urb, reg, adm = self.make_stack(np.ones(100), np.full(100, 3.0))
        with pytest.raises(DataError, match="zero standard deviation"):
            build_fine_grid(covs, pop, urb, reg, adm, TransformSpec(["identity"], [True]))

    def test_log1p_normalization_hand_computed(self):
        # 5 populated cells in a 1x5 raster; recompute (x - mean)/sd by hand
        vals = np.array([0.0, 1.0, 3.0, 7.0, 15.0])
        pop = flat_raster(np.ones(5), 1, 5)
        cov = flat_raster(vals, 1, 5)
        urb = flat_raster(np.zeros(5), 1, 5)
        reg = flat_raster(np.zeros(5), 1, 5)
        adm = flat_raster(np.zeros(5), 1, 5)
        spec = TransformSpec(["log1p"], [True])
        grid = build_fine_grid([cov], pop, urb, reg, adm, spec)
        t = np.log1p(vals)
        expected = (t - t.mean()) / t.std(ddof=1)
        assert np.allclose(grid.covariates[:, 0], expected, atol=1e-14)
        assert t[0] == 0.0  # log1p(0) = 0 feeds the mean/sd

    def test_geotransform_mismatch(self):
        covs, pop, urb, reg, adm = self.make_stack(np.ones(100), np.arange(100.0))
        bad = flat_raster(np.zeros(81), 9, 9)
        with pytest.raises(ConfigError, match="geotransform"):
            build_fine_grid(covs, pop, urb, reg, bad, TransformSpec(["identity"], [True]))

    def test_nodata_on_populated_cell_named(self):
        pop_vals = np.zeros(100)
        pop_vals[55] = 1.0
        cov_vals = np.arange(100.0)
        cov_vals[55] = -9999.0
        covs, pop, urb, reg, adm = self.make_stack(pop_vals, cov_vals)
        with pytest.raises(DataError, match=r"row 5, col 5"):
            build_fine_grid(covs, pop, urb, reg, adm, TransformSpec(["identity"], [True]))

    @given(st.integers(0, 2**31 - 1))
    def test_normalized_columns_standardized(self, seed):
        rng = np.random.default_rng(seed)
        pop_vals = rng.uniform(0, 1, 64)
        pop_vals[pop_vals < 0.3] = 0.0
        if np.count_nonzero(pop_vals) < 3:
            pop_vals[:3] = 1.0
        cov_vals = rng.standard_normal(64)
        pop = flat_raster(pop_vals, 8, 8)
        cov = flat_raster(cov_vals, 8, 8)
        zero = flat_raster(np.zeros(64), 8, 8)
        grid = build_fine_grid([cov], pop, zero, zero, zero,
                               TransformSpec(["identity"], [True]))
        col = grid.covariates[:, 0]
        assert abs(col.mean()) < 1e-10
        assert abs(col.std(ddof=1) - 1.0) < 1e-10


class TestCellAt:
    def test_center_lookup_inverse(self, tiny_grid):
        for i in range(tiny_grid.n_cells):
            assert cell_at(tiny_grid, tiny_grid.coords[i]) == i

    def test_outside_raster(self, tiny_grid):
        assert cell_at(tiny_grid, (-0.5, 1.0)) is None
        assert cell_at(tiny_grid, (1.0, 4.0001)) is None

    def test_unpopulated_cell_is_none(self):
        pop_vals = np.array([1.0, 0.0, 1.0, 1.0])
        pop = flat_raster(pop_vals, 2, 2)
        z = flat_raster(np.zeros(4), 2, 2)
        cov = flat_raster(np.arange(4.0), 2, 2)
        grid = build_fine_grid([cov], pop, z, z, z, TransformSpec(["identity"], [True]))
        assert cell_at(grid, (1.5, 0.5)) is None

    def test_shared_edge_goes_to_larger_index(self, tiny_grid):
        # cells are half-open: the edge x=2 belongs to column 2, y=3 to row 3
        idx = cell_at(tiny_grid, (2.0, 3.0))
        assert idx == 4 * 3 + 2

    def test_nearest_populated(self, tiny_grid):
        assert nearest_populated_cell(tiny_grid, (-10.0, -10.0)) == 0
