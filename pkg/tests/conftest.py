"""Shared fixtures: the desk-scale system (300 MHz, 2 x 2 m BS, 0.5 x 0.5 m
user aperture, two streams) and small helpers used across the suite."""
import numpy as np
import pytest

from capa_inr.geometry import Aperture, PhysicalConfig, UserRegion
from capa_inr.inr import SamplingConfig, SystemSetup

DESK_POWER = 1000.0
DESK_SIGMA2 = 5.6e-3


def desk_phys(power=DESK_POWER, streams=2):
    return PhysicalConfig(300e6, DESK_SIGMA2, power, streams)


def desk_setup(power=DESK_POWER, streams=2, bs_len=2.0, ue_len=0.5):
    return SystemSetup(desk_phys(power, streams),
                       Aperture((0.0, 0.0, 0.0), bs_len, bs_len),
                       Aperture((0.0, 0.0, 0.0), ue_len, ue_len),
                       UserRegion((-5.0, 5.0), (-5.0, 5.0), (20.0, 30.0)))


def random_position(rng):
    return np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(20, 30)])


def random_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def setup():
    return desk_setup()


@pytest.fixture
def phys():
    return desk_phys()


@pytest.fixture
def sampling():
    return SamplingConfig(m_ug=6, m_bg=24, m_us=144, m_bs=2304, sobol_seed=7)


@pytest.fixture
def small_sampling():
    return SamplingConfig(m_ug=3, m_bg=8, m_us=16, m_bs=64, sobol_seed=3)


# --- acceptance reporting -----------------------------------------------------------

ACCEPTANCE_RESULTS = {}


def report(criterion, passed, detail):
    """Record one acceptance verdict; printed again in the terminal summary."""
    ACCEPTANCE_RESULTS[criterion] = (bool(passed), detail)
    print(f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[criterion]
        terminalreporter.write_line(f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
