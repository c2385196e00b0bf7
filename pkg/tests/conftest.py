import numpy as np
import pytest

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def central_diff(f, x, h):
    """Central difference of a scalar or array valued f at scalar x."""
    return (f(x + h) - f(x - h)) / (2 * h)


BS_BOX = (0.001, 300.0)


@pytest.fixture(scope="session")
def bs_setup():
    """Option portfolio, 1000 GBM paths on 100 dates and per-date GP models.

    Shared by the exposure and acceptance tests because the fits dominate
    their runtime.
    """
    from gpcva import xva
    from gpcva.kernels import squared_exponential
    from gpcva.optim import OptimizerCfg
    from gpcva.paths import simulate_gbm

    port = xva.bs_portfolio()
    paths = simulate_gbm(100.0, 0.0, 0.3, 2.0, 100, 1000, seed=2024)
    grid = np.linspace(*BS_BOX, 100)[:, None]
    models = xva.fit_date_models(port, paths.grid[1:], lambda inst, t: grid, squared_exponential(0.2),
                                 noise0=1e-3, opt=OptimizerCfg(300, 0.1, 2, seed=5), x_bounds=BS_BOX)
    exact = xva.exposure_cube(xva.ExactValuer(port, BS_BOX), paths)
    surrogate = xva.exposure_cube(xva.GpValuer(port, models), paths)
    return {"portfolio": port, "paths": paths, "models": models, "exact": exact, "gp": surrogate}
