"""时间推进 - CFL=1 特征线平移与逐点精确旋转的 Strang 组合"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from config import DEFAULT_INTEGRATOR, DEFAULT_STRIDE, DEFAULT_SUBSTEP_ORDER, OUTFLOW_EPS
from core.errors import ConfigError, ConfigIssue, LightConeOverflowError, NonFiniteFieldError
from core.field_state import Grid, SpinorField
from core.functionals import ConeFluxAccumulator, FunctionalRecord, RecordBuilder
from core.model_kernel import ModelConstants, ModelParams, derive_constants, eval_N

logger = logging.getLogger(__name__)

SUBSTEP_ORDERS = ("strang", "lie")
INTEGRATORS = ("exact_preset", "rk4")


@dataclass(frozen=True)
class SchemeConfig:
    """
    推进格式配置；dt 恒等于 dx，不可单独设置

    :param t_final: 终止时间，必须是 dt 的非负整数倍
    :param diagnostics_stride: 每隔多少步记录一次快照
    """
    grid: Grid
    t_final: float
    substep_order: str = DEFAULT_SUBSTEP_ORDER
    nonlinear_integrator: str = DEFAULT_INTEGRATOR
    diagnostics_stride: int = DEFAULT_STRIDE

    def __post_init__(self):
        issues = []
        if self.substep_order not in SUBSTEP_ORDERS:
            issues.append(ConfigIssue("scheme.substep_order", None,
                                      f"必须是 {'/'.join(SUBSTEP_ORDERS)}: {self.substep_order}"))
        if self.nonlinear_integrator not in INTEGRATORS:
            issues.append(ConfigIssue("scheme.nonlinear_integrator", None,
                                      f"必须是 {'/'.join(INTEGRATORS)}: {self.nonlinear_integrator}"))
        if int(self.diagnostics_stride) != self.diagnostics_stride or self.diagnostics_stride < 1:
            issues.append(ConfigIssue("scheme.diagnostics_stride", None, "必须是正整数"))
        if not np.isfinite(self.t_final) or self.t_final < 0:
            issues.append(ConfigIssue("scheme.t_final", None, f"必须非负: {self.t_final}"))
        else:
            ratio = self.t_final / self.grid.dx
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                issues.append(ConfigIssue(
                    "scheme.t_final", None,
                    f"t_final={self.t_final} 不是 dt=dx={self.grid.dx} 的整数倍",
                ))
        if issues:
            raise ConfigError(issues)
        object.__setattr__(self, "diagnostics_stride", int(self.diagnostics_stride))

    @property
    def dt(self) -> float:
        return self.grid.dx

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def to_dict(self) -> dict:
        return {
            **self.grid.to_dict(),
            "dt": self.dt,
            "t_final": self.t_final,
            "n_steps": self.n_steps,
            "substep_order": self.substep_order,
            "nonlinear_integrator": self.nonlinear_integrator,
            "diagnostics_stride": self.diagnostics_stride,
        }


def transport_shift(field: SpinorField, reverse: bool = False) -> SpinorField:
    """
    一步精确特征线平移: u_j <- u_{j-1}, v_j <- v_{j+1}，入流端补零

    :param reverse: 逆向平移（时间反演）
    :raises: LightConeOverflowError 如果流出单元的幅值不可忽略
    """
    u, v = field.u, field.v
    if reverse:
        lost = max(abs(u[0]), abs(v[-1]))
    else:
        lost = max(abs(u[-1]), abs(v[0]))
    if lost >= OUTFLOW_EPS:
        raise LightConeOverflowError(f"t={field.t:g} 时场到达边界，流出幅值 {lost:.3e}")

    new_u = np.zeros_like(u)
    new_v = np.zeros_like(v)
    if reverse:
        new_u[:-1] = u[1:]
        new_v[1:] = v[:-1]
    else:
        new_u[1:] = u[:-1]
        new_v[:-1] = v[1:]
    dt = field.grid.dx
    # 时间对齐到 dt 的整数倍，避免累积舍入
    n = round(field.t / dt) + (-1 if reverse else 1)
    return SpinorField(new_u, new_v, field.grid, n * dt)


def mass_rotation(field: SpinorField, m: float, dt: float) -> SpinorField:
    """i u_t = -m v, i v_t = -m u 在 dt 上的精确解"""
    if m == 0.0 or dt == 0.0:
        return field
    c, s = math.cos(m * dt), math.sin(m * dt)
    u, v = field.u, field.v
    return field.replace(u=u * c + 1j * v * s, v=v * c + 1j * u * s)


def _rk4(params: ModelParams, u: np.ndarray, v: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    def rhs(a, b):
        n1, n2 = eval_N(params, a, b)
        return -1j * n1, -1j * n2

    k1u, k1v = rhs(u, v)
    k2u, k2v = rhs(u + 0.5 * dt * k1u, v + 0.5 * dt * k1v)
    k3u, k3v = rhs(u + 0.5 * dt * k2u, v + 0.5 * dt * k2v)
    k4u, k4v = rhs(u + dt * k3u, v + dt * k3v)
    return (
        u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u),
        v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
    )


def nonlinear_substep(field: SpinorField, params: ModelParams, dt: float,
                      integrator: str = DEFAULT_INTEGRATOR) -> SpinorField:
    """
    逐点求解 i u_t = N1(u, v), i v_t = N2(u, v)

    exact_preset: Thirring 为纯相位旋转；Gross-Neveu 中 rho = 2Re(conj(u) v) 沿流不变，
    解为角度 2 alpha rho dt 的旋转。rk4: 经典四级 Runge-Kutta。

    :raises: ConfigError 如果对自定义模型请求 exact_preset
    """
    if dt == 0.0:
        return field
    u, v = field.u, field.v
    if integrator == "rk4":
        with np.errstate(over="ignore", invalid="ignore"):
            nu, nv = _rk4(params, u, v, dt)
        return field.replace(u=nu, v=nv)
    if integrator != "exact_preset":
        raise ConfigError(ConfigIssue("scheme.nonlinear_integrator", None, f"未知的积分器: {integrator}"))
    if not params.is_preset:
        raise ConfigError(ConfigIssue("scheme.nonlinear_integrator", None,
                                      "自定义模型不能使用 exact_preset，请改用 rk4"))
    a = params.coupling
    if params.preset_tag == "thirring":
        return field.replace(
            u=u * np.exp(-1j * a * np.abs(v) ** 2 * dt),
            v=v * np.exp(-1j * a * np.abs(u) ** 2 * dt),
        )
    rho = 2.0 * (np.conj(u) * v).real
    theta = 2.0 * a * rho * dt
    c, s = np.cos(theta), np.sin(theta)
    return field.replace(u=u * c - 1j * v * s, v=v * c - 1j * u * s)


def _half_step_in(field, params, dt, integrator):
    return nonlinear_substep(mass_rotation(field, params.mass, dt), params, dt, integrator)


def _half_step_out(field, params, dt, integrator):
    return mass_rotation(nonlinear_substep(field, params, dt, integrator), params.mass, dt)


def step(field: SpinorField, params: ModelParams, scheme: SchemeConfig) -> SpinorField:
    """
    推进一步 dt = dx

    strang: M(dt/2) N(dt/2) T N(dt/2) M(dt/2)（回文组合）；lie: M(dt) N(dt) T
    """
    dt = scheme.dt
    integrator = scheme.nonlinear_integrator
    if scheme.substep_order == "strang":
        half = 0.5 * dt
        field = _half_step_in(field, params, half, integrator)
        field = transport_shift(field)
        return _half_step_out(field, params, half, integrator)
    field = _half_step_in(field, params, dt, integrator)
    return transport_shift(field)


def reverse_step(field: SpinorField, params: ModelParams, scheme: SchemeConfig) -> SpinorField:
    """step 的逆: 子步倒序，旋转取 -dt，平移反向"""
    dt = scheme.dt
    integrator = scheme.nonlinear_integrator
    if scheme.substep_order == "strang":
        half = -0.5 * dt
        field = _half_step_in(field, params, half, integrator)
        field = transport_shift(field, reverse=True)
        return _half_step_out(field, params, half, integrator)
    field = transport_shift(field, reverse=True)
    return _half_step_out(field, params, -dt, integrator)


def iterate_steps(init: SpinorField, params: ModelParams, scheme: SchemeConfig) -> Iterator[Tuple[int, SpinorField]]:
    """
    逐步推进的生成器，产出 (步数, 场)，从 (0, init) 开始

    :raises: LightConeOverflowError / NonFiniteFieldError，带出错步数
    """
    if scheme.nonlinear_integrator == "exact_preset" and not params.is_preset:
        raise ConfigError(ConfigIssue("scheme.nonlinear_integrator", None,
                                      "自定义模型不能使用 exact_preset，请改用 rk4"))
    if init.grid != scheme.grid:
        raise ConfigError(ConfigIssue("scheme", None, "初值网格与格式网格不一致"))
    field = init
    yield 0, field
    for n in range(1, scheme.n_steps + 1):
        try:
            field = step(field, params, scheme)
        except LightConeOverflowError as e:
            raise LightConeOverflowError(f"第 {n} 步: {e}", step_index=n) from e
        except NonFiniteFieldError as e:
            raise NonFiniteFieldError(f"第 {n} 步出现非有限值 (t={n * scheme.dt:g})", step_index=n) from e
        yield n, field


@dataclass
class Trajectory:
    """一次运行的快照、记录流与（可选）逐步密度历史"""
    params: ModelParams
    scheme: SchemeConfig
    constants: ModelConstants
    snapshots: List[SpinorField] = field(default_factory=list)
    records: List[FunctionalRecord] = field(default_factory=list)
    density_u: Optional[np.ndarray] = None
    density_v: Optional[np.ndarray] = None

    @property
    def grid(self) -> Grid:
        return self.scheme.grid

    @property
    def times(self) -> List[float]:
        return [s.t for s in self.snapshots]

    @property
    def initial(self) -> SpinorField:
        return self.snapshots[0]

    @property
    def final(self) -> SpinorField:
        return self.snapshots[-1]


def is_snapshot_step(n: int, scheme: SchemeConfig) -> bool:
    return n % scheme.diagnostics_stride == 0 or n == scheme.n_steps


def run_trajectory(init: SpinorField, params: ModelParams, scheme: SchemeConfig,
                   constants: Optional[ModelConstants] = None, keep_density: bool = False,
                   on_step: Optional[Callable[[int, SpinorField], None]] = None) -> Trajectory:
    """
    完整运行，每 diagnostics_stride 步（以及最后一步）保存快照与 FunctionalRecord

    :param init: t=0 初值
    :param constants: 模型常数；缺省时由 derive_constants 推导
    :param keep_density: 保存每一步的 |u|^2, |v|^2，供任意光锥的 line_integrals 使用
    :param on_step: 每步回调
    :return: Trajectory
    """
    if constants is None:
        constants = derive_constants(params)
    traj = Trajectory(params=params, scheme=scheme, constants=constants)
    builder = RecordBuilder(params.mass, constants.c)
    cones = ConeFluxAccumulator(init)
    if keep_density:
        traj.density_u = np.empty((scheme.n_steps + 1, scheme.grid.n_cells))
        traj.density_v = np.empty_like(traj.density_u)

    report_every = max(1, scheme.n_steps // 10)
    logger.info("开始推进: %d 步, dt=%.6g, %s/%s", scheme.n_steps, scheme.dt,
                scheme.substep_order, scheme.nonlinear_integrator)
    for n, current in iterate_steps(init, params, scheme):
        if n > 0:
            cones.observe(current)
        builder.track(current)
        if keep_density:
            traj.density_u[n] = current.density_u
            traj.density_v[n] = current.density_v
        if is_snapshot_step(n, scheme):
            traj.snapshots.append(current)
            builder.add(current, cones)
        if on_step is not None:
            on_step(n, current)
        if n and n % report_every == 0:
            logger.debug("进度 %d/%d, L0=%.12e", n, scheme.n_steps, builder.records[-1].L0)

    traj.records = builder.records
    logger.info("推进完成: %d 个快照, L0 %.12e -> %.12e", len(traj.snapshots),
                traj.records[0].L0, traj.records[-1].L0)
    return traj
