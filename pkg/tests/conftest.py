import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from anonprev.grid import Raster, TransformSpec, build_fine_grid
from anonprev.simulate import SimulationConfig, simulate_world

settings.register_profile(
    "ci",
    max_examples=40,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

# PASS/FAIL lines the acceptance module appends; printed in the summary
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


def flat_raster(values, n_rows, n_cols, cell_size=1.0, x0=0.0, y0=0.0, nodata=-9999.0):
    return Raster(n_rows, n_cols, x0, y0, cell_size, nodata, np.asarray(values, float))


@pytest.fixture(scope="session")
def small_world():
    cfg = SimulationConfig(
        n_rows=20, n_cols=20, cell_size=2.0, region_rows=2, region_cols=2,
        admin2_rows=4, admin2_cols=4, clusters_per_stratum=5,
    )
    return simulate_world(cfg, np.random.default_rng(42)), cfg


@pytest.fixture()
def tiny_grid():
    """4x4 grid, 1 km cells, two regions (left/right halves), all populated."""
    n = 16
    pop = flat_raster(np.arange(1, n + 1, dtype=float), 4, 4)
    cov = flat_raster(np.linspace(-1.0, 1.0, n), 4, 4)
    urb = flat_raster((np.arange(n) % 4 >= 2).astype(float), 4, 4)
    reg = flat_raster((np.arange(n) % 4 >= 2).astype(float), 4, 4)
    adm = flat_raster((np.arange(n) % 2).astype(float), 4, 4)
    spec = TransformSpec(["identity"], [True])
    return build_fine_grid([cov], pop, urb, reg, adm, spec)
