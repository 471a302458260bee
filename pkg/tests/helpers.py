"""测试辅助函数"""
import numpy as np
from scipy.integrate import quad_vec

from core.field_state import ProfileSpec
from core.model_kernel import derive_constants
from core.oracles import profile_value, thirring_m0_exact

# 测试中常数估计使用较少的采样点
TEST_SAMPLES = 50_000
TEST_SEED = 7


def gaussian(component, center, amplitude, width=1.0, phase=0.0):
    return ProfileSpec("gaussian", center, width, amplitude, phase, component)


def constants_for(params):
    return derive_constants(params, TEST_SAMPLES, TEST_SEED)


def random_field_arrays(n, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    u = scale * (rng.normal(size=n) + 1j * rng.normal(size=n))
    v = scale * (rng.normal(size=n) + 1j * rng.normal(size=n))
    return u, v


def slow_phase_solution(u0, v0, alpha, t, grid, params=None):
    """u 的相位积分把相对速度错取为 1（宗量 x - t + s）的闭式解"""
    exact = thirring_m0_exact(u0, v0, alpha, t, grid, params)
    phase, _ = quad_vec(lambda s: np.abs(profile_value(v0, grid.x - t + s)) ** 2, 0.0, t)
    return exact.replace(u=profile_value(u0, grid.x - t) * np.exp(-1j * alpha * phase))
