"""测试共用的网格、模型与初值"""
import pytest

from core.evolve import SchemeConfig
from core.field_state import Grid, build_initial
from core.model_kernel import preset
from tests.helpers import constants_for, gaussian


@pytest.fixture
def grid():
    """[-16, 16]，dx = dt = 0.1"""
    return Grid(-16.0, 16.0, 320)


@pytest.fixture
def thirring():
    return preset("thirring", 1.0, 1.0)


@pytest.fixture
def gross_neveu():
    return preset("gross_neveu", 1.0, 1.0)


@pytest.fixture
def thirring_constants(thirring):
    return constants_for(thirring)


@pytest.fixture
def small_profiles():
    """两个相向运动、会相互作用的小振幅波包"""
    return (gaussian("u", -2.0, 0.05), gaussian("v", 2.0, 0.05, phase=0.4))


@pytest.fixture
def small_scheme(grid):
    return SchemeConfig(grid, 4.0, diagnostics_stride=5)


@pytest.fixture
def small_init(grid, small_profiles):
    return build_initial(grid, small_profiles, final_time=4.0)
