import numpy as np
import pytest
from scipy.special import ndtr

from lart.model import PopulationParams

ACCEPTANCE_LINES: list[str] = []


def random_params(gen: np.random.Generator, j: int, rho: float | None = None) -> PopulationParams:
    """Item parameters from the default simulation laws."""
    return PopulationParams(
        a=gen.uniform(0.5, 1.0, j),
        b=gen.normal(0.0, np.sqrt(0.5), j),
        omega=gen.normal(0.0, 1.0, j),
        phi=gen.uniform(0.5, 1.5, j),
        lam=gen.uniform(0.5, 2.0, j),
        rho=gen.uniform(-0.9, 0.9) if rho is None else rho,
    )


def random_subject(gen: np.random.Generator, params: PopulationParams):
    """(r_row, logT_row) for one subject drawn from the model."""
    rho = params.rho
    theta = gen.standard_normal()
    tau = rho * theta + np.sqrt(1 - rho * rho) * gen.standard_normal()
    p = ndtr(params.a * theta + params.b)
    r = (gen.uniform(size=params.n_items) < p).astype(int)
    logt = params.omega - params.phi * tau + np.sqrt(params.lam) * gen.standard_normal(params.n_items)
    return r, logt


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
