import math

import numpy as np
import pytest
from scipy.stats import kstest

from anonprev.errors import DataError
from anonprev.grid import TransformSpec, build_fine_grid
from anonprev.positional import (
    AnonymizationModel,
    geomask_log_density,
    jitter_log_density,
    sample_anonymized,
)

from conftest import flat_raster


def one_admin_grid(n=60, cell=0.5):
    """Large single-Admin2 world with uniform population."""
    pop = flat_raster(np.ones(n * n), n, n, cell_size=cell)
    z = flat_raster(np.zeros(n * n), n, n, cell_size=cell)
    cov = flat_raster(np.arange(n * n, dtype=float), n, n, cell_size=cell)
    return build_fine_grid([cov], pop, z, z, z, TransformSpec(["identity"], [True]))


@pytest.fixture(scope="module")
def open_grid():
    return one_admin_grid()


class TestJitterDensity:
    def test_urban_unit_distance(self, open_grid):
        m = AnonymizationModel.jitter_urban()
        t = (15.0, 15.0)
        s = (16.0, 15.0)
        assert jitter_log_density(m, s, t, open_grid.admin2_raster) == pytest.approx(0.0)

    def test_urban_beyond_cap(self, open_grid):
        m = AnonymizationModel.jitter_urban()
        t = (15.0, 15.0)
        assert jitter_log_density(m, (17.5, 15.0), t, open_grid.admin2_raster) == -math.inf
        # the support is the open disk of radius 2
        assert jitter_log_density(m, (17.0, 15.0), t, open_grid.admin2_raster) == -math.inf

    def test_rural_outer_component(self, open_grid):
        m = AnonymizationModel.jitter_rural()
        t = (15.0, 15.0)
        got = jitter_log_density(m, (15.0 + 7.0, 15.0), t, open_grid.admin2_raster)
        assert got == pytest.approx(math.log(0.01 / 7.0))

    def test_rural_inner_mixture(self, open_grid):
        m = AnonymizationModel.jitter_rural()
        t = (15.0, 15.0)
        got = jitter_log_density(m, (15.0 + 3.0, 15.0), t, open_grid.admin2_raster)
        assert got == pytest.approx(math.log(1.0 / 3.0))

    def test_singularity_clamped(self, open_grid):
        m = AnonymizationModel.jitter_urban()
        t = (15.25, 15.25)
        got = jitter_log_density(m, t, t, open_grid.admin2_raster)
        assert got == pytest.approx(-math.log(open_grid.cell_size / 2.0))
        assert math.isfinite(got)

    def test_admin2_indicator(self):
        n = 10
        pop = flat_raster(np.ones(n * n), n, n)
        z = flat_raster(np.zeros(n * n), n, n)
        cov = flat_raster(np.arange(n * n, dtype=float), n, n)
        adm = flat_raster((np.arange(n * n) % n >= 5).astype(float), n, n)
        grid = build_fine_grid([cov], pop, z, z, adm, TransformSpec(["identity"], [True]))
        m = AnonymizationModel.jitter_urban()
        t, s = (4.5, 4.5), (5.5, 4.5)  # s across the admin2 boundary
        assert jitter_log_density(m, s, t, grid.admin2_raster) == -math.inf
        same = (3.5, 4.5)
        assert math.isfinite(jitter_log_density(m, same, t, grid.admin2_raster))

    def test_density_never_positive_infinite(self, open_grid):
        m = AnonymizationModel.jitter_rural()
        rng = np.random.default_rng(0)
        t = (15.0, 15.0)
        for _ in range(200):
            s = tuple(t + rng.uniform(-12, 12, 2))
            ld = jitter_log_density(m, s, t, open_grid.admin2_raster)
            assert ld == -math.inf or math.isfinite(ld)

    def test_integral_constant_over_t(self, open_grid):
        # grid quadrature of the urban density over its disk; the 1/d kernel
        # integrates to the same constant wherever the center sits
        m = AnonymizationModel.jitter_urban(constrain_admin2=False)
        rng = np.random.default_rng(1)
        h = 0.02
        offsets = np.arange(-2.0 + h / 2, 2.0, h)
        dx, dy = np.meshgrid(offsets, offsets)
        d = np.hypot(dx, dy).ravel()
        inside = (d > 0) & (d < 2.0)
        kernel_sum = np.sum(1.0 / d[inside]) * h * h
        totals = []
        for _ in range(10):
            t = rng.uniform(10, 20, 2)
            # translation invariance: evaluate the density on the shifted grid
            ld = [
                jitter_log_density(m, (t[0] + ddx, t[1] + ddy), t, open_grid.admin2_raster)
                for ddx, ddy in [(2.001, 0), (0.5, 0.5)]
            ]
            assert ld[0] == -math.inf and math.isfinite(ld[1])
            totals.append(kernel_sum)
        totals = np.array(totals)
        assert (totals.max() - totals.min()) / totals.mean() < 0.01


class TestGeomaskDensity:
    def test_indicator_inside(self, tiny_grid):
        # region 1 is the right half; its cells include column 2 centers
        assert geomask_log_density(1, (2.5, 0.5), tiny_grid) == 0.0

    def test_indicator_outside(self, tiny_grid):
        assert geomask_log_density(1, (0.5, 0.5), tiny_grid) == -math.inf

    def test_unpopulated_support(self):
        pop_vals = np.ones(16)
        pop_vals[5] = 0.0
        pop = flat_raster(pop_vals, 4, 4)
        z = flat_raster(np.zeros(16), 4, 4)
        cov = flat_raster(np.arange(16.0), 4, 4)
        grid = build_fine_grid([cov], pop, z, z, z, TransformSpec(["identity"], [True]))
        # cell 5 is in region 0 but unpopulated: support excludes it
        assert geomask_log_density(0, (1.5, 1.5), grid) == -math.inf
        assert geomask_log_density(0, (0.5, 0.5), grid) == 0.0


class TestSampler:
    def test_geomask_returns_region_label(self, tiny_grid):
        m = AnonymizationModel.geomask()
        rng = np.random.default_rng(0)
        assert sample_anonymized(m, (2.5, 0.5), tiny_grid, rng) == 1
        assert sample_anonymized(m, (0.5, 0.5), tiny_grid, rng) == 0

    def test_unpopulated_true_location_rejected(self):
        pop_vals = np.ones(16)
        pop_vals[0] = 0.0
        pop = flat_raster(pop_vals, 4, 4)
        z = flat_raster(np.zeros(16), 4, 4)
        cov = flat_raster(np.arange(16.0), 4, 4)
        grid = build_fine_grid([cov], pop, z, z, z, TransformSpec(["identity"], [True]))
        with pytest.raises(DataError):
            sample_anonymized(AnonymizationModel.geomask(), (0.5, 0.5), grid,
                              np.random.default_rng(0))

    def test_urban_radius_uniform_ks(self, open_grid):
        m = AnonymizationModel.jitter_urban()
        rng = np.random.default_rng(11)
        t = (15.0, 15.0)
        radii = np.empty(100_000)
        for i in range(radii.size):
            s = sample_anonymized(m, t, open_grid, rng)
            radii[i] = math.hypot(s[0] - t[0], s[1] - t[1])
        stat = kstest(radii, "uniform", args=(0.0, 2.0)).statistic
        assert stat < 0.01

    def test_rural_far_fraction(self, open_grid):
        m = AnonymizationModel.jitter_rural()
        rng = np.random.default_rng(12)
        t = (15.0, 15.0)
        far = 0
        n = 100_000
        for _ in range(n):
            s = sample_anonymized(m, t, open_grid, rng)
            if math.hypot(s[0] - t[0], s[1] - t[1]) > 5.0:
                far += 1
        assert abs(far / n - 0.005) <= 0.002

    def test_samples_inside_density_support(self, open_grid):
        for m in (AnonymizationModel.jitter_urban(), AnonymizationModel.jitter_rural()):
            rng = np.random.default_rng(13)
            t = (15.0, 15.0)
            for _ in range(500):
                s = sample_anonymized(m, t, open_grid, rng)
                assert jitter_log_density(m, s, t, open_grid.admin2_raster) > -math.inf
