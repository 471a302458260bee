"""内置校验 - 每个函数由 register_check 注册到对应的实验类型"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from config import INEQUALITY_REL_TOL
from core.evolve import Trajectory
from core.executor import Status, Verdict, register_check
from core.functionals import InequalityCheck, bony_budget_check, cone_check, line_integrals, linf_envelope
from core.model_kernel import (
    A2Report,
    ModelConstants,
    ModelParams,
    a2_term_residuals,
    closed_form_c,
    difference_bound_excess,
    modulus_bound_excess,
)
from core.oracles import RefinementRow
from core.stability_lab import CauchyOutcome, PairOutcome

logger = logging.getLogger(__name__)

# 解析常数与采样常数的最大相对偏差
CONSTANT_AGREEMENT = 0.01
# 模型逐点估计的采样点数
POINTWISE_SAMPLES = 10_000
# 收敛阶的接受区间
ORDER_RANGE = (1.9, 2.1)
# 低于该值的误差/残差视为舍入噪声，不计算收敛阶
ROUNDOFF_FLOOR = 1e-11


@dataclass
class ExperimentContext:
    """传给各校验函数的实验结果"""
    config: object
    params: ModelParams
    constants: ModelConstants
    a2: Optional[A2Report] = None
    trajectory: Optional[Trajectory] = None
    pair: Optional[PairOutcome] = None
    cauchy: Optional[CauchyOutcome] = None
    refinement: Optional[List[RefinementRow]] = None
    oracle_validation: Optional[float] = None
    weak_residuals: List[float] = field(default_factory=list)
    cone_samples: list = field(default_factory=list)

    @property
    def seed(self) -> int:
        return getattr(self.config, "seed", self.constants.seed)


def verdict_from(code: str, title: str, check: InequalityCheck) -> Verdict:
    """把 InequalityCheck 转换为 Verdict"""
    if check.status is Status.NOT_APPLICABLE:
        logger.warning("[%s] 不适用: %s", code, check.detail)
    elif check.status is Status.INFO and check.worst is not None and check.worst < -check.tolerance:
        logger.warning("[%s] 参考形式不成立: %s", code, check.detail)
    return Verdict(
        code=code,
        title=title,
        status=check.status,
        detail=check.detail,
        worst_margin=check.worst,
        tolerance=check.tolerance,
        samples=len(check.margins),
    )


# ============ validate ============

@register_check("A2-identity", "(A2) 零结构恒等式", experiments=("validate", "run", "pair", "cauchy", "oracle"))
def check_a2_identity(ctx: ExperimentContext):
    report = ctx.a2
    if report is None:
        return None
    detail = f"最大相对残差 {report.max_rel:.3e}（{report.n_points} 点, seed={report.seed}）"
    return Verdict("A2-identity", "(A2) 零结构恒等式", Status.PASS if report.passes else Status.FAIL,
                   detail, worst_margin=-report.max_rel, tolerance=0.0, samples=report.n_points)


@register_check("A2-per-term", "(A2) 分项残差", experiments=("validate",))
def check_a2_per_term(ctx: ExperimentContext):
    report = ctx.a2
    if report is None:
        return None
    rng = np.random.default_rng(ctx.seed)
    u = rng.uniform(-1, 1, 1000) + 1j * rng.uniform(-1, 1, 1000)
    v = rng.uniform(-1, 1, 1000) + 1j * rng.uniform(-1, 1, 1000)
    ru, rv = a2_term_residuals(ctx.params, u, v)
    worst = float(max(np.abs(ru).max(), np.abs(rv).max()))
    return Verdict("A2-per-term", "(A2) 分项残差", Status.INFO,
                   f"单项 Re(i conj(u) N1), Re(i conj(v) N2) 的最大绝对值 {worst:.3e}",
                   worst_margin=-worst, samples=1000)


@register_check("constants", "常数 c, delta, c★, K", experiments=("validate",))
def check_constants(ctx: ExperimentContext):
    k = ctx.constants
    verdicts = []
    margin = -1.0 - (-2.0 + 2.0 * k.delta * k.c)
    verdicts.append(Verdict(
        "constants-delta", "delta 选择 -2 + 2 delta c < -1",
        Status.PASS if margin > 0 else Status.FAIL,
        f"c={k.c:.6g}, delta={k.delta:.6g}, c★={k.c_star:.6g}, K={k.K:.6g}"
        + ("（c=0，小数据检查为空条件）" if k.vacuous else ""),
        worst_margin=margin, tolerance=0.0,
    ))
    closed = closed_form_c(ctx.params)
    if closed is not None and closed > 0:
        rel = abs(k.c_sampled - closed) / closed
        verdicts.append(Verdict(
            "constants-closed-form", "采样常数与解析值一致",
            Status.PASS if rel <= CONSTANT_AGREEMENT else Status.FAIL,
            f"解析 c={closed:.6g}, 采样 c={k.c_sampled:.6g}, 相对偏差 {rel:.3e}",
            worst_margin=CONSTANT_AGREEMENT - rel, tolerance=0.0, samples=k.n_samples,
        ))
    return verdicts


def _sample_pointwise(ctx: ExperimentContext):
    rng = np.random.default_rng(ctx.seed + 2)
    n = POINTWISE_SAMPLES

    def draw():
        return rng.uniform(-2, 2, n) + 1j * rng.uniform(-2, 2, n)

    u, v, up, vp = draw(), draw(), draw(), draw()
    modulus = modulus_bound_excess(ctx.params, ctx.constants, u, v)
    diff = difference_bound_excess(ctx.params, ctx.constants, u, v, up, vp)
    return modulus, diff


@register_check("pointwise-estimates", "模方程与差系统的逐点估计", experiments=("validate",))
def check_pointwise_estimates(ctx: ExperimentContext):
    modulus, diff = _sample_pointwise(ctx)
    # 样本量级 |u|,|v| <= 2*sqrt(2)，超出量按 1e-12 相对尺度容忍
    tol = 1e-12 * 64.0 * max(1.0, ctx.constants.c_star)
    modulus_status = Status.PASS if modulus <= tol else Status.FAIL
    if not ctx.params.is_preset:
        modulus_status = Status.INFO
    worst_diff = max(diff.values())
    return [
        Verdict("modulus-source", "s_u, s_v <= r0", modulus_status,
                f"最大超出量 {modulus:.3e}", worst_margin=-modulus, tolerance=tol, samples=POINTWISE_SAMPLES),
        Verdict("difference-source", "|R| <= c★ r2 与 r1 估计",
                Status.PASS if worst_diff <= tol else Status.FAIL,
                ", ".join(f"{k}={v:.3e}" for k, v in diff.items()),
                worst_margin=-worst_diff, tolerance=tol, samples=POINTWISE_SAMPLES),
    ]


# ============ run ============

@register_check("charge", "电荷守恒", experiments=("run",))
def check_charge(ctx: ExperimentContext):
    records = ctx.trajectory.records
    L0 = records[0].L0
    drift = max(abs(r.L0 - L0) for r in records)
    rel = drift / L0 if L0 > 0 else drift
    tol = 1e-10
    exact = ctx.trajectory.scheme.nonlinear_integrator == "exact_preset"
    status = (Status.PASS if rel <= tol else Status.FAIL) if exact else Status.INFO
    return Verdict("charge", "电荷守恒", status, f"最大相对漂移 {rel:.3e}",
                   worst_margin=tol - rel, tolerance=tol, samples=len(records))


@register_check("bony-budget", "Bony 泛函预算", experiments=("run",))
def check_bony_budget(ctx: ExperimentContext):
    records = ctx.trajectory.records
    check = bony_budget_check(records, ctx.params.mass, records[0].L0, ctx.constants.delta)
    return verdict_from("bony-budget", "Q0(t) + ∫D0 <= 2m L0(0)^2 t + Q0(0)", check)


@register_check("bony-ordering", "Q0 的乘积上界", experiments=("run",))
def check_bony_ordering(ctx: ExperimentContext):
    records = ctx.trajectory.records
    margins = []
    for r in records:
        product = r.sum_u * r.sum_v
        margins.append(min(product - r.Q0, 0.25 * r.L0 ** 2 - product))
    scale = max((0.25 * r.L0 ** 2 for r in records), default=0.0)
    tol = 1e-12 * max(scale, 1e-300)
    check = InequalityCheck("bony_ordering", Status.PASS if min(margins) >= -tol else Status.FAIL,
                            margins, tol)
    return verdict_from("bony-ordering", "Q0 <= (∫|u|^2)(∫|v|^2) <= (L0/2)^2", check)


def _random_cones(ctx: ExperimentContext) -> List[InequalityCheck]:
    traj = ctx.trajectory
    n_cones = getattr(ctx.config.checks, "cones", 0)
    if n_cones == 0 or traj.density_u is None or traj.scheme.n_steps == 0:
        return []
    grid = traj.grid
    rng = np.random.default_rng(ctx.seed)
    n_steps = traj.scheme.n_steps
    margins = []
    L0 = traj.records[0].L0
    if L0 > ctx.constants.delta:
        return [InequalityCheck("random_cones", Status.NOT_APPLICABLE,
                                detail=f"L0(0)={L0:.4e} > delta={ctx.constants.delta:.4e}")]
    for _ in range(n_cones):
        n0 = int(rng.integers(1, n_steps + 1))
        if 2 * n0 > grid.n_cells - 1:
            n0 = (grid.n_cells - 1) // 2
        i0 = int(rng.integers(n0, grid.n_cells - n0))
        res = line_integrals(traj, grid.x[i0], n0 * grid.dx, ctx.params.mass, ctx.constants.c)
        ctx.cone_samples.append((grid.x[i0], n0 * grid.dx, res.gammaR, res.gammaL, res.q_bound))
        margins.append(res.q_bound - max(res.gammaR, res.gammaL))
    tol = INEQUALITY_REL_TOL * max(L0, 1e-300)
    status = Status.PASS if min(margins) >= -tol else Status.FAIL
    return [InequalityCheck("random_cones", status, margins, tol, detail=f"{n_cones} 个随机光锥")]


@register_check("cone-integrals", "特征线积分 gammaR, gammaL <= q(t0)", experiments=("run",))
def check_cones(ctx: ExperimentContext):
    verdicts = [verdict_from("cone-integrals", "所有光锥的特征线积分上界",
                             cone_check(ctx.trajectory.records, ctx.constants.delta))]
    for check in _random_cones(ctx):
        verdicts.append(verdict_from("cone-integrals-random", "随机光锥的特征线积分上界", check))
    return verdicts


@register_check("linf-envelope", "L∞ 包络", experiments=("run",))
def check_linf(ctx: ExperimentContext):
    traj = ctx.trajectory
    check = linf_envelope(traj.records, ctx.params.mass, ctx.constants.c, traj.scheme.t_final,
                          ctx.constants.delta)
    return verdict_from("linf-envelope", "max(sup|u|^2, sup|v|^2) <= 包络", check)


@register_check("modulus-source-run", "模方程右端的逐点界", experiments=("run",))
def check_modulus_on_run(ctx: ExperimentContext):
    excess = max(modulus_bound_excess(ctx.params, ctx.constants, s.u, s.v) for s in ctx.trajectory.snapshots)
    scale = max(r.linf_sq for r in ctx.trajectory.records)
    tol = 1e-12 * max(scale, 1e-300)
    status = Status.PASS if excess <= tol else Status.FAIL
    if not ctx.params.is_preset:
        status = Status.INFO
    return Verdict("modulus-source-run", "s_u, s_v <= r0（快照上）", status, f"最大超出量 {excess:.3e}",
                   worst_margin=-excess, tolerance=tol, samples=len(ctx.trajectory.snapshots))


@register_check("h1-monitor", "H1 半范数监测", experiments=("run",))
def check_h1(ctx: ExperimentContext):
    records = ctx.trajectory.records
    h0 = records[0].h1_semi
    peak = max(r.h1_semi for r in records)
    return Verdict("h1-monitor", "H1 半范数监测", Status.INFO,
                   f"h1_semi: 初值 {h0:.6e}, 最大 {peak:.6e}", samples=len(records))


@register_check("weak-residual", "弱形式残差", experiments=("run", "cauchy"))
def check_weak_residual(ctx: ExperimentContext):
    res = ctx.weak_residuals
    if not res:
        return None
    if len(res) == 1:
        return Verdict("weak-residual", "弱形式残差", Status.INFO, f"残差 {res[0]:.6e}", samples=1)
    coarse, fine = res[0], res[1]
    if coarse < ROUNDOFF_FLOOR:
        return Verdict("weak-residual", "弱形式残差收敛阶", Status.INFO,
                       f"残差 {coarse:.3e} -> {fine:.3e}，低于舍入量级", samples=2)
    order = math.log2(coarse / fine) if fine > 0 else float("inf")
    return Verdict("weak-residual", "弱形式残差收敛阶", Status.PASS if order >= ORDER_RANGE[0] else Status.FAIL,
                   f"残差 {coarse:.3e} -> {fine:.3e}，阶 {order:.3f}",
                   worst_margin=order - ORDER_RANGE[0], tolerance=0.0, samples=2)


# ============ pair ============

PAIR_TITLES = {
    "initial_q1": ("pair-initial-q1", "Q1(0) <= L1(0)(L0(0) + L0'(0))"),
    "l2_stability": ("pair-l2-stability", "L1(t) <= h4(t) L1(0)，h4 含 exp(K h3)"),
    "l2_stability_literal": ("pair-l2-literal", "L1(t) <= h4(t) L1(0)（字面 exp(h3)）"),
    "h3_closed": ("pair-h3-closed", "h3 <= 闭式上界（含 c）"),
    "h3_closed_literal": ("pair-h3-literal", "h3 <= 闭式上界（字面形式）"),
    "lyapunov": ("pair-lyapunov", "Lyapunov 区间不等式（含 K）"),
    "lyapunov_literal": ("pair-lyapunov-literal", "Lyapunov 区间不等式（字面右端）"),
    "pair_dissipation": ("pair-dissipation", "∫D1 的上界"),
}


@register_check("pair-inequalities", "双解稳定性不等式", experiments=("pair",))
def check_pair(ctx: ExperimentContext):
    out = []
    for check in ctx.pair.checks:
        code, title = PAIR_TITLES.get(check.name, (check.name, check.name))
        out.append(verdict_from(code, title, check))
    return out


@register_check("pair-difference-source", "差系统逐点估计（快照上）", experiments=("pair",))
def check_pair_difference(ctx: ExperimentContext):
    a, b = ctx.pair.final_base, ctx.pair.final_perturbed
    diff = difference_bound_excess(ctx.params, ctx.constants, a.u, a.v, b.u, b.v)
    worst = max(diff.values())
    scale = max(float(np.max(a.density_u + a.density_v)), float(np.max(b.density_u + b.density_v)))
    tol = 1e-12 * max(scale, 1e-300) ** 2 * max(1.0, ctx.constants.c_star)
    return Verdict("pair-difference-source", "差系统逐点估计（终态）",
                   Status.PASS if worst <= tol else Status.FAIL,
                   ", ".join(f"{k}={v:.3e}" for k, v in diff.items()),
                   worst_margin=-worst, tolerance=tol, samples=a.grid.n_cells)


# ============ cauchy ============

CAUCHY_TITLES = {
    "cauchy_bound": ("cauchy-bound", "d_kj <= sqrt(h4(T)) d0_kj"),
    "cauchy_limit_monotone": ("cauchy-limit-monotone", "到极限的距离随 k 递减"),
    "cauchy_limit_ratio": ("cauchy-ratio", "相邻距离比接近扰动比"),
    "triangle_inequality": ("cauchy-triangle", "距离矩阵满足三角不等式"),
}


@register_check("cauchy-inequalities", "Cauchy 序列校验", experiments=("cauchy",))
def check_cauchy(ctx: ExperimentContext):
    out = []
    for check in ctx.cauchy.checks:
        code, title = CAUCHY_TITLES.get(check.name, (check.name, check.name))
        out.append(verdict_from(code, title, check))
    return out


# ============ oracle ============

@register_check("oracle-self-validation", "闭式解与特征线参考积分一致", experiments=("oracle",))
def check_oracle_validation(ctx: ExperimentContext):
    if ctx.oracle_validation is None:
        return Verdict("oracle-self-validation", "闭式解自校验", Status.NOT_APPLICABLE,
                       "无闭式解（仅 m=0 Thirring）")
    tol = 1e-9
    err = ctx.oracle_validation
    return Verdict("oracle-self-validation", "闭式解与特征线参考积分一致",
                   Status.PASS if err <= tol else Status.FAIL, f"L2 偏差 {err:.3e}",
                   worst_margin=tol - err, tolerance=tol, samples=1)


@register_check("refinement-order", "加密收敛阶", experiments=("oracle",))
def check_refinement(ctx: ExperimentContext):
    rows = ctx.refinement or []
    if not rows:
        return None
    if max(r.l2_error for r in rows) < ROUNDOFF_FLOOR:
        return Verdict("refinement-order", "加密收敛阶", Status.PASS,
                       "所有层误差低于舍入量级（精确平移）", worst_margin=0.0, tolerance=ROUNDOFF_FLOOR,
                       samples=len(rows))
    orders = [r.observed_order for r in rows if r.observed_order is not None]
    lo, hi = ORDER_RANGE
    margins = [min(o - lo, hi - o) for o in orders]
    status = Status.PASS if orders and min(margins) >= 0 else Status.FAIL
    return Verdict("refinement-order", "加密收敛阶", status,
                   "观测阶: " + ", ".join(f"{o:.3f}" for o in orders),
                   worst_margin=min(margins, default=None), tolerance=0.0, samples=len(rows))
