"""独立参考解 - m=0 Thirring 闭式解、全耦合谱参考解、O(N²) 暴力泛函与网格加密收敛研究"""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad_vec

from config import BRUTE_FORCE_MAX_CELLS, ORACLE_QUAD_TOL, REFERENCE_STEP, SPECTRAL_DX
from core.errors import ConfigError, ConfigIssue, OracleSizeError, UnsupportedOracleError
from core.evolve import SchemeConfig, run_trajectory
from core.field_state import Grid, ProfileSpec, SpinorField, build_initial, component_profile
from core.model_kernel import ModelParams, derive_constants, eval_N, preset

logger = logging.getLogger(__name__)

REFINEMENT_COLUMNS = ("level", "n_cells", "l2_error", "observed_order")

Profiles = Union[ProfileSpec, Sequence[ProfileSpec]]


def _as_list(spec: Profiles) -> List[ProfileSpec]:
    return [spec] if isinstance(spec, ProfileSpec) else list(spec)


def profile_value(spec: Profiles, x) -> np.ndarray:
    """一个或多个剖面在任意点的值之和（忽略 component 字段）"""
    specs = _as_list(spec)
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x, dtype=complex)
    for s in specs:
        total = total + s.evaluate(x)
    return total


def _check_oracle_params(params: Optional[ModelParams]):
    if params is None:
        return
    if params.preset_tag != "thirring" or params.mass != 0.0:
        raise UnsupportedOracleError(
            f"闭式解只适用于 m=0 的 Thirring 模型 (当前: {params.preset_tag}, m={params.mass})"
        )


def thirring_m0_exact(u0_spec: Profiles, v0_spec: Profiles, alpha: float, t: float, grid: Grid,
                      params: Optional[ModelParams] = None) -> SpinorField:
    """
    m=0 Thirring 模型的闭式解:
    u(t,x) = u0(x-t) exp(-i alpha ∫_0^t |v0(x-t+2s)|^2 ds)
    v(t,x) = v0(x+t) exp(-i alpha ∫_0^t |u0(x+t-2s)|^2 ds)
    相位积分用自适应求积 (quad_vec)

    :param params: 可选；给出时必须是 m=0 的 Thirring
    :raises: UnsupportedOracleError
    """
    _check_oracle_params(params)
    x = grid.x
    u_base = profile_value(u0_spec, x - t)
    v_base = profile_value(v0_spec, x + t)
    if t == 0.0 or alpha == 0.0:
        return SpinorField(u_base, v_base, grid, t)

    def v_mod(s):
        return np.abs(profile_value(v0_spec, x - t + 2.0 * s)) ** 2

    def u_mod(s):
        return np.abs(profile_value(u0_spec, x + t - 2.0 * s)) ** 2

    phase_u, _ = quad_vec(v_mod, 0.0, t, epsabs=ORACLE_QUAD_TOL, epsrel=ORACLE_QUAD_TOL)
    phase_v, _ = quad_vec(u_mod, 0.0, t, epsabs=ORACLE_QUAD_TOL, epsrel=ORACLE_QUAD_TOL)
    return SpinorField(
        u_base * np.exp(-1j * alpha * phase_u),
        v_base * np.exp(-1j * alpha * phase_v),
        grid, t,
    )


def _fine_factor(grid: Grid) -> int:
    """细网格加密倍数: 取奇数，使粗网格单元中心恰好落在细网格单元中心上"""
    p = max(1, math.ceil(grid.dx / SPECTRAL_DX - 1e-9))
    return p if p % 2 else p + 1


def _interaction_rk4(u: np.ndarray, v: np.ndarray, params: ModelParams, t: float, dx: float,
                     ds: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    u_t + u_x = i m v - i N1(u, v)，v_t - v_x = i m u - i N2(u, v) 的周期谱解

    平移在 Fourier 空间精确吸收: a = e^{iks} û, b = e^{-iks} v̂ 沿各自的特征线变化，
    只对耦合项做定步长 RK4。每一级都用两个分量的当前值，不假设模长沿特征线不变。
    """
    n = max(1, int(math.ceil(t / ds - 1e-9)))
    h = t / n
    k = 2.0 * np.pi * np.fft.fftfreq(u.size, d=dx)
    m = params.mass

    def rhs(s, a, b):
        right, left = np.exp(1j * k * s), np.exp(-1j * k * s)
        ur = np.fft.ifft(left * a)
        vr = np.fft.ifft(right * b)
        n1, n2 = eval_N(params, ur, vr)
        return (right * np.fft.fft(1j * m * vr - 1j * n1),
                left * np.fft.fft(1j * m * ur - 1j * n2))

    a, b = np.fft.fft(u), np.fft.fft(v)
    for i in range(n):
        s = i * h
        k1a, k1b = rhs(s, a, b)
        k2a, k2b = rhs(s + 0.5 * h, a + 0.5 * h * k1a, b + 0.5 * h * k1b)
        k3a, k3b = rhs(s + 0.5 * h, a + 0.5 * h * k2a, b + 0.5 * h * k2b)
        k4a, k4b = rhs(s + h, a + h * k3a, b + h * k3b)
        a = a + h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
        b = b + h / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)
    return np.fft.ifft(np.exp(-1j * k * t) * a), np.fft.ifft(np.exp(1j * k * t) * b)


def coupled_reference(profiles: Sequence[ProfileSpec], params: ModelParams, t: float, grid: Grid,
                      ds: float = REFERENCE_STEP) -> SpinorField:
    """
    全耦合方程的独立参考解（任意质量与三次项）

    在间距不超过 SPECTRAL_DX 的细网格上做伪谱积分，再取粗网格单元中心处的值。
    区域按周期处理，初值与解在边界附近必须可忽略。

    :param profiles: 带 component 的初值剖面
    :param ds: RK4 步长
    :return: grid 上 t 时刻的场
    """
    if t == 0.0:
        return build_initial(grid, profiles)
    p = _fine_factor(grid)
    fine = Grid(grid.x_min, grid.x_max, grid.n_cells * p)
    u0 = component_profile(profiles, "u", fine.x)
    v0 = component_profile(profiles, "v", fine.x)
    u, v = _interaction_rk4(u0, v0, params, t, fine.dx, ds)
    offset = (p - 1) // 2
    return SpinorField(u[offset::p], v[offset::p], grid, t)


def characteristic_reference(u0_spec: Profiles, v0_spec: Profiles, alpha: float, t: float, grid: Grid,
                             ds: float = REFERENCE_STEP) -> SpinorField:
    """
    m=0 Thirring 的耦合参考解，用于校验闭式解

    沿特征线同时推进 u、v，每个分量的相位由另一分量的当前模长驱动；
    闭式解依赖的“模长只做平移”在这里不作为前提。
    """
    u0 = [replace(s, component="u") for s in _as_list(u0_spec)]
    v0 = [replace(s, component="v") for s in _as_list(v0_spec)]
    return coupled_reference(u0 + v0, preset("thirring", alpha, 0.0), t, grid, ds)


def _size_guard(field: SpinorField):
    if field.grid.n_cells > BRUTE_FORCE_MAX_CELLS:
        raise OracleSizeError(f"n_cells={field.grid.n_cells} 超出暴力求和上限 {BRUTE_FORCE_MAX_CELLS}")


def _ordered_pair_sum(a: np.ndarray, b: np.ndarray) -> float:
    """sum_{i<j} a_i b_j，逐对求和"""
    return float(np.sum(np.triu(np.outer(a, b), k=1)))


def brute_force_Q0(field: SpinorField) -> float:
    """Q0 的直接双重求和"""
    _size_guard(field)
    dx = field.grid.dx
    return _ordered_pair_sum(field.density_u, field.density_v) * dx * dx


def brute_force_Q1(field_a: SpinorField, field_b: SpinorField) -> float:
    """Q1 的直接双重求和"""
    _size_guard(field_a)
    dx = field_a.grid.dx
    dU = np.abs(field_a.u - field_b.u) ** 2
    dV = np.abs(field_a.v - field_b.v) ** 2
    w_u = field_a.density_u + field_b.density_u
    w_v = field_a.density_v + field_b.density_v
    return (_ordered_pair_sum(dU, w_v) + _ordered_pair_sum(w_u, dV)) * dx * dx


@dataclass(frozen=True)
class RefinementProblem:
    """加密研究的问题描述；第 l 层使用 base_grid.n_cells * 2^l 个单元"""
    base_grid: Grid
    profiles: tuple
    params: ModelParams
    t_final: float
    substep_order: str = "strang"
    nonlinear_integrator: str = "exact_preset"

    @property
    def has_closed_form(self) -> bool:
        return self.params.preset_tag == "thirring" and self.params.mass == 0.0


@dataclass
class RefinementRow:
    level: int
    n_cells: int
    l2_error: float
    observed_order: Optional[float]

    def to_row(self) -> list:
        return [self.level, self.n_cells, self.l2_error,
                "" if self.observed_order is None else self.observed_order]


def restrict(fine: SpinorField, coarse_grid: Grid) -> SpinorField:
    """相邻两个细单元取平均，限制到粗网格"""
    if fine.grid.n_cells != 2 * coarse_grid.n_cells:
        raise ValueError("细网格单元数必须是粗网格的 2 倍")
    u = 0.5 * (fine.u[0::2] + fine.u[1::2])
    v = 0.5 * (fine.v[0::2] + fine.v[1::2])
    return SpinorField(u, v, coarse_grid, fine.t)


def l2_error(a: SpinorField, b: SpinorField) -> float:
    return math.sqrt(float(np.sum(np.abs(a.u - b.u) ** 2 + np.abs(a.v - b.v) ** 2) * a.grid.dx))


def _solve_level(problem: RefinementProblem, grid: Grid) -> SpinorField:
    scheme = SchemeConfig(grid, problem.t_final, problem.substep_order, problem.nonlinear_integrator,
                          diagnostics_stride=max(1, int(round(problem.t_final / grid.dx))))
    init = build_initial(grid, problem.profiles, problem.t_final)
    constants = derive_constants(problem.params)
    return run_trajectory(init, problem.params, scheme, constants).final


def refinement_study(problem: RefinementProblem, levels: int) -> List[RefinementRow]:
    """
    在 n_cells x {1, 2, 4, ...} 上运行同一问题，测量 L² 误差与收敛阶

    有闭式解时与 thirring_m0_exact 比较；否则第 l 层与第 l+1 层（平均限制后）比较

    :param levels: 层数，至少 3
    :return: 每层一行；observed_order = log2(e_{l-1} / e_l)
    """
    if levels < 3:
        raise ConfigError(ConfigIssue("oracle.levels", None, f"加密层数至少为 3: {levels}"))
    grids = [problem.base_grid.refined(2 ** level) for level in range(levels)]
    solutions = []
    for grid in grids:
        logger.info("加密研究: n_cells=%d", grid.n_cells)
        solutions.append(_solve_level(problem, grid))

    errors = []
    if problem.has_closed_form:
        u0 = [p for p in problem.profiles if p.component == "u"]
        v0 = [p for p in problem.profiles if p.component == "v"]
        for grid, sol in zip(grids, solutions):
            exact = thirring_m0_exact(u0, v0, problem.params.coupling, problem.t_final, grid, problem.params)
            errors.append(l2_error(sol, exact))
    else:
        for level in range(levels - 1):
            errors.append(l2_error(solutions[level], restrict(solutions[level + 1], grids[level])))

    rows = []
    for level, err in enumerate(errors):
        order = None
        if level > 0 and err > 0 and errors[level - 1] > 0:
            order = math.log2(errors[level - 1] / err)
        rows.append(RefinementRow(level, grids[level].n_cells, err, order))
        logger.info("层 %d: n_cells=%d, 误差=%.6e, 阶=%s", level, grids[level].n_cells, err,
                    "-" if order is None else f"{order:.3f}")
    return rows
