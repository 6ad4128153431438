import numpy as np
import pytest

from ecoforecast import emissions, network, traffic_sim as ts


@pytest.fixture(scope="session")
def grid3():
    return network.generate_grid(3, 3, spacing=200.0, seed=3)


@pytest.fixture(scope="session")
def small_run(grid3):
    """A congested-but-short scenario on a 3x3 grid, with emissions attached."""
    od = ts.generate_od_pairs(grid3, 8, seed=1)
    sc = ts.scale_scenario(200, 1.0, "uniform", 300.0, od)
    res = ts.run_scenario(grid3, sc, seed=7)
    rec = emissions.add_emissions(res.records)
    return sc, res, rec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
