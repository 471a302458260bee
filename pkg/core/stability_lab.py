"""稳定性实验 - 双解 L² 稳定性、Cauchy 序列收敛与弱形式残差"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, ConfigIssue, NumericalAbort, TestSupportError
from core.evolve import SchemeConfig, is_snapshot_step, iterate_steps, run_trajectory
from core.executor import Status
from core.field_state import Grid, ProfileSpec, SpinorField, build_initial, component_profile
from core.functionals import (
    InequalityCheck,
    PairRecord,
    PairRecordBuilder,
    dissipation_check,
    initial_q1_check,
    lyapunov_check,
    pointwise_functionals,
    stability_envelopes,
)
from core.model_kernel import ModelConstants, ModelParams, eval_N

logger = logging.getLogger(__name__)

DISTANCE_COLUMNS = ("k", "j", "t_sup", "d_initial", "d_sup", "bound", "verdict")
# 相邻距离比相对扰动比的允许偏差（扰动减半时即 [1.8, 2.2]）
RATIO_BAND = 0.1


@dataclass(frozen=True)
class PerturbationSpec:
    """扰动: 剖面之和乘以 epsilon"""
    profiles: Tuple[ProfileSpec, ...]
    epsilon: float = 1e-3

    def apply(self, base: SpinorField, epsilon: Optional[float] = None) -> SpinorField:
        eps = self.epsilon if epsilon is None else epsilon
        x = base.grid.x
        du = component_profile(self.profiles, "u", x)
        dv = component_profile(self.profiles, "v", x)
        return base.replace(u=base.u + eps * du, v=base.v + eps * dv)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "profiles": [p.to_dict() for p in self.profiles]}


@dataclass
class PairExperiment:
    """两个初值在同一网格与格式上的对比实验"""
    base_init: SpinorField
    perturbed_init: SpinorField
    params: ModelParams
    scheme: SchemeConfig
    constants: ModelConstants
    perturbation: Optional[PerturbationSpec] = None

    def __post_init__(self):
        if self.base_init.grid != self.perturbed_init.grid or self.base_init.grid != self.scheme.grid:
            raise ConfigError(ConfigIssue("stability", None, "两个初值必须使用同一网格"))

    @classmethod
    def from_profiles(cls, grid: Grid, profiles: Sequence[ProfileSpec], perturbation: PerturbationSpec,
                      params: ModelParams, scheme: SchemeConfig, constants: ModelConstants) -> "PairExperiment":
        base = build_initial(grid, profiles, scheme.t_final)
        build_initial(grid, perturbation.profiles, scheme.t_final)
        return cls(base, perturbation.apply(base), params, scheme, constants, perturbation)


@dataclass
class PairOutcome:
    """双解实验结果"""
    records: List[PairRecord]
    checks: List[InequalityCheck]
    L0: float
    L0_prime: float
    stride: int
    final_base: SpinorField
    final_perturbed: SpinorField

    @property
    def small_data(self) -> bool:
        return all(c.status is not Status.NOT_APPLICABLE for c in self.checks)


def _lockstep(inits: Sequence[SpinorField], params: ModelParams, scheme: SchemeConfig, labels: Sequence[str]):
    """同步推进多个解，产出 (步数, [场])；任一解中止时带上成员标签"""
    iterators = [iterate_steps(f, params, scheme) for f in inits]
    while True:
        fields = []
        n = None
        for it, label in zip(iterators, labels):
            try:
                n, f = next(it)
            except StopIteration:
                return
            except NumericalAbort as e:
                raise e.with_context(label) from e
            fields.append(f)
        yield n, fields


def pair_checks(records: Sequence[PairRecord], params: ModelParams, constants: ModelConstants,
                L0: float, L0p: float) -> List[InequalityCheck]:
    checks = [initial_q1_check(records[0], L0, L0p)]
    checks += stability_envelopes(records, L0, L0p, constants.delta)
    checks += lyapunov_check(records, params.mass, constants.c, constants.K, L0, L0p, constants.delta)
    checks.append(dissipation_check(records, params.mass, constants.delta, L0, L0p))
    return checks


def pair_run(exp: PairExperiment) -> PairOutcome:
    """
    同步推进两个解，每个快照生成 PairRecord，最后给出不等式校验

    :return: PairOutcome
    :raises: NumericalAbort 任一解溢出或出现非有限值
    """
    scheme, params, constants = exp.scheme, exp.params, exp.constants
    builder = PairRecordBuilder(params.mass, constants.c, constants.K)
    final = (exp.base_init, exp.perturbed_init)
    for n, (a, b) in _lockstep((exp.base_init, exp.perturbed_init), params, scheme, ("基准解", "扰动解")):
        builder.track(a, b)
        if is_snapshot_step(n, scheme):
            builder.add(a, b)
        final = (a, b)
    records = builder.records
    L0, L0p = builder.L0, builder.L0p
    checks = pair_checks(records, params, constants, L0, L0p)
    logger.info("双解实验完成: L1 %.6e -> %.6e, h4(T)=%.6g", records[0].L1, records[-1].L1, records[-1].h4)
    return PairOutcome(records, checks, L0, L0p, scheme.diagnostics_stride, final[0], final[1])


@dataclass
class CauchyExperiment:
    """
    K 个初值组成的序列，最后一个成员为极限候选

    :param epsilons: 每个成员的扰动幅度（极限成员为 0）
    :param streaming: True 时所有成员同步推进、每个快照即时计算距离；False 时并发运行后统一计算
    """
    members: Tuple[SpinorField, ...]
    params: ModelParams
    scheme: SchemeConfig
    constants: ModelConstants
    epsilons: Tuple[float, ...] = ()
    streaming: bool = True
    workers: int = 4

    def __post_init__(self):
        if len(self.members) < 2:
            raise ConfigError(ConfigIssue("stability.members", None, "Cauchy 实验至少需要 2 个成员"))
        grids = {m.grid for m in self.members}
        if len(grids) != 1 or self.scheme.grid not in grids:
            raise ConfigError(ConfigIssue("stability", None, "所有成员必须使用同一网格"))
        limit = self.members[-1]
        dist = [_l2(m, limit) for m in self.members[:-1]]
        for k in range(1, len(dist)):
            if dist[k] > dist[k - 1] * (1.0 + 1e-12):
                raise ConfigError(ConfigIssue(
                    "stability.members", None,
                    f"成员到极限的初始距离必须递减: d{k - 1}={dist[k - 1]:.3e} < d{k}={dist[k]:.3e}",
                ))

    @classmethod
    def geometric(cls, grid: Grid, profiles: Sequence[ProfileSpec], perturbation: PerturbationSpec,
                  n_members: int, params: ModelParams, scheme: SchemeConfig, constants: ModelConstants,
                  streaming: bool = True, workers: int = 4) -> "CauchyExperiment":
        """成员 k = 0..K-2 的扰动为 epsilon * 2^-k，最后一个成员是未扰动的极限"""
        if n_members < 2:
            raise ConfigError(ConfigIssue("stability.members", None, "Cauchy 实验至少需要 2 个成员"))
        base = build_initial(grid, profiles, scheme.t_final)
        build_initial(grid, perturbation.profiles, scheme.t_final)
        eps = tuple(perturbation.epsilon * 2.0 ** (-k) for k in range(n_members - 1)) + (0.0,)
        members = tuple(perturbation.apply(base, e) for e in eps)
        return cls(members, params, scheme, constants, eps, streaming, workers)


@dataclass
class DistanceRow:
    k: int
    j: int
    t_sup: float
    d_initial: float
    d_sup: float
    bound: float
    verdict: Status

    def to_row(self) -> list:
        return [self.k, self.j, self.t_sup, self.d_initial, self.d_sup, self.bound, self.verdict.value]


@dataclass
class CauchyOutcome:
    """距离矩阵与极限校验"""
    rows: List[DistanceRow]
    d_sup: np.ndarray
    d_initial: np.ndarray
    h4_final: np.ndarray
    charges: List[float]
    checks: List[InequalityCheck] = field(default_factory=list)
    stride: int = 1

    @property
    def limit_distances(self) -> np.ndarray:
        return self.d_sup[:-1, -1]


def _l2(a: SpinorField, b: SpinorField) -> float:
    return math.sqrt(float(np.sum(np.abs(a.u - b.u) ** 2 + np.abs(a.v - b.v) ** 2) * a.grid.dx))


def _member_snapshots_streaming(exp: CauchyExperiment):
    labels = [f"成员 {k}" for k in range(len(exp.members))]
    for n, fields in _lockstep(exp.members, exp.params, exp.scheme, labels):
        if is_snapshot_step(n, exp.scheme):
            yield fields


def _member_snapshots_posthoc(exp: CauchyExperiment):
    def run_one(k):
        try:
            return run_trajectory(exp.members[k], exp.params, exp.scheme, exp.constants).snapshots
        except NumericalAbort as e:
            raise e.with_context(f"成员 {k}") from e

    with ThreadPoolExecutor(max_workers=max(1, exp.workers)) as pool:
        trajectories = list(pool.map(run_one, range(len(exp.members))))
    for fields in zip(*trajectories):
        yield list(fields)


def cauchy_experiment(exp: CauchyExperiment) -> CauchyOutcome:
    """
    推进全部成员，计算两两距离 d_kj = sup_t sqrt(L1_kj(t))（在快照上取 sup）

    结论: d_kj <= sqrt(h4_kj(T)) d0_kj；d_{k,极限} 随 k 递减；距离满足三角不等式
    """
    params, constants = exp.params, exp.constants
    K = len(exp.members)
    pairs = [(k, j) for k in range(K) for j in range(k + 1, K)]
    builders = {p: PairRecordBuilder(params.mass, constants.c, constants.K) for p in pairs}
    d_sup = np.zeros((K, K))
    t_sup = np.zeros((K, K))
    source = _member_snapshots_streaming(exp) if exp.streaming else _member_snapshots_posthoc(exp)
    for fields in source:
        for (k, j), builder in builders.items():
            rec = builder.add(fields[k], fields[j])
            d = math.sqrt(max(rec.L1, 0.0))
            if d > d_sup[k, j]:
                d_sup[k, j] = d_sup[j, k] = d
                t_sup[k, j] = t_sup[j, k] = rec.t

    d_initial = np.zeros((K, K))
    h4 = np.ones((K, K))
    for (k, j), builder in builders.items():
        d_initial[k, j] = d_initial[j, k] = math.sqrt(max(builder.records[0].L1, 0.0))
        h4[k, j] = h4[j, k] = builder.records[-1].h4
    charges = [pointwise_functionals(m).L0 for m in exp.members]
    small = max(charges) <= constants.delta

    rows, margins = [], []
    tol_scale = float(d_initial.max()) if K > 1 else 0.0
    tol = 1e-6 * tol_scale + 1e-300
    for k, j in pairs:
        bound = math.sqrt(h4[k, j]) * d_initial[k, j]
        if small:
            margin = bound - d_sup[k, j]
            margins.append(margin)
            verdict = Status.PASS if margin >= -tol else Status.FAIL
        else:
            verdict = Status.NOT_APPLICABLE
        rows.append(DistanceRow(k, j, float(t_sup[k, j]), float(d_initial[k, j]),
                                float(d_sup[k, j]), bound, verdict))

    outcome = CauchyOutcome(rows, d_sup, d_initial, h4, charges, stride=exp.scheme.diagnostics_stride)
    if small:
        outcome.checks.append(InequalityCheck("cauchy_bound", Status.PASS if min(margins) >= -tol else Status.FAIL,
                                              margins, tol))
    else:
        outcome.checks.append(InequalityCheck(
            "cauchy_bound", Status.NOT_APPLICABLE,
            detail=f"最大电荷 {max(charges):.4e} > delta={constants.delta:.4e}",
        ))
    outcome.checks.append(_limit_monotone_check(outcome))
    outcome.checks.append(limit_ratio_check(outcome.limit_distances, exp.epsilons))
    outcome.checks.append(triangle_check(d_sup))
    logger.info("Cauchy 实验完成: %d 个成员, d(k, 极限) = %s", K,
                ", ".join(f"{d:.3e}" for d in outcome.limit_distances))
    return outcome


def _limit_monotone_check(outcome: CauchyOutcome) -> InequalityCheck:
    d = outcome.limit_distances
    margins = [float(d[k - 1] - d[k]) for k in range(1, len(d))]
    ratios = [float(d[k - 1] / d[k]) for k in range(1, len(d)) if d[k] > 0]
    tol = 1e-12
    status = Status.PASS if min(margins, default=0.0) >= -tol else Status.FAIL
    detail = "相邻比值: " + ", ".join(f"{r:.3f}" for r in ratios) if ratios else ""
    return InequalityCheck("cauchy_limit_monotone", status, margins, tol, detail)


def _common_ratio(epsilons: Sequence[float]) -> Optional[float]:
    """扰动幅度构成等比数列（末项为极限成员的 0）时返回公比 eps_{k-1} / eps_k"""
    perturbed = list(epsilons[:-1])
    if len(perturbed) < 2 or epsilons[-1] != 0.0 or min(perturbed) <= 0.0:
        return None
    ratios = [perturbed[k - 1] / perturbed[k] for k in range(1, len(perturbed))]
    if max(ratios) - min(ratios) > 1e-12 * ratios[0]:
        return None
    return ratios[0]


def limit_ratio_check(d: np.ndarray, epsilons: Sequence[float], band: float = RATIO_BAND) -> InequalityCheck:
    """
    等比扰动下，相邻成员到极限的距离比应接近扰动比 r: d_{k-1} / d_k ∈ [(1-band) r, (1+band) r]

    :param d: 各扰动成员到极限成员的距离
    :param epsilons: 全部成员的扰动幅度（含极限成员）
    """
    r = _common_ratio(epsilons) if len(epsilons) == len(d) + 1 else None
    if r is None:
        return InequalityCheck("cauchy_limit_ratio", Status.NOT_APPLICABLE, detail="扰动幅度不是等比数列")
    if not np.all(d > 0.0):
        return InequalityCheck("cauchy_limit_ratio", Status.NOT_APPLICABLE, detail="存在零距离成员")
    lo, hi = (1.0 - band) * r, (1.0 + band) * r
    ratios = [float(d[k - 1] / d[k]) for k in range(1, len(d))]
    margins = [min(q - lo, hi - q) for q in ratios]
    status = Status.PASS if min(margins) >= 0.0 else Status.FAIL
    detail = f"期望比值 {r:.3f}，区间 [{lo:.3f}, {hi:.3f}]，实际: " + ", ".join(f"{q:.3f}" for q in ratios)
    return InequalityCheck("cauchy_limit_ratio", status, margins, 0.0, detail)


def triangle_check(d: np.ndarray, tol: float = 1e-12) -> InequalityCheck:
    """d_kj <= d_kl + d_lj + tol，对所有三元组"""
    # margins[k, j, l] = d[k, l] + d[l, j] - d[k, j]
    margins = d[:, None, :] + d.T[None, :, :] - d[:, :, None]
    worst = float(margins.min()) if margins.size else 0.0
    status = Status.PASS if worst >= -tol else Status.FAIL
    return InequalityCheck("triangle_inequality", status, [worst], tol)


@dataclass(frozen=True)
class TestFunctionSpec:
    """
    检验函数 phi(t, x) = b((x - x_center)/x_radius) b((t - t_center)/t_radius)，
    b(s) = exp(1 - 1/(1 - s^2))，|s| < 1
    """
    __test__ = False

    x_center: float
    x_radius: float
    t_center: float
    t_radius: float

    def __post_init__(self):
        if not (self.x_radius > 0 and self.t_radius > 0):
            raise ConfigError(ConfigIssue("checks.test_function", None, "检验函数半径必须为正"))

    def to_dict(self) -> dict:
        return {"x_center": self.x_center, "x_radius": self.x_radius,
                "t_center": self.t_center, "t_radius": self.t_radius}


def _bump(s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """b(s) 与 b'(s)"""
    s = np.asarray(s, dtype=float)
    b = np.zeros_like(s)
    db = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    w = 1.0 - si * si
    b[inside] = np.exp(1.0 - 1.0 / w)
    db[inside] = b[inside] * (-2.0 * si / (w * w))
    return b, db


class WeakResidualAccumulator:
    """
    弱形式残差（导数移到检验函数上）的逐时刻累加器:
    r1 = ∫∫ [-i u (phi_t + phi_x) + m v phi - N1 phi]
    r2 = ∫∫ [-i v (phi_t - phi_x) + m u phi - N2 phi]
    x 方向中点求积；t 方向的求积权重由调用方给出

    :raises: TestSupportError 如果检验函数支集触及区域边界或时间范围
    """

    def __init__(self, spec: TestFunctionSpec, params: ModelParams, grid: Grid, t_start: float, t_end: float):
        if spec.x_center - spec.x_radius <= grid.x_min or spec.x_center + spec.x_radius >= grid.x_max:
            raise TestSupportError(f"检验函数的空间支集超出区域 [{grid.x_min:g}, {grid.x_max:g}]")
        if spec.t_center - spec.t_radius < t_start or spec.t_center + spec.t_radius > t_end:
            raise TestSupportError(f"检验函数的时间支集超出 [{t_start:g}, {t_end:g}]")
        self.spec = spec
        self.params = params
        self.dx = grid.dx
        bx, dbx = _bump((grid.x - spec.x_center) / spec.x_radius)
        self._bx = bx
        self._dbx = dbx / spec.x_radius
        self.r1 = 0j
        self.r2 = 0j

    def observe(self, field: SpinorField, weight: float):
        bt, dbt = _bump(np.array([(field.t - self.spec.t_center) / self.spec.t_radius]))
        bt, dbt = float(bt[0]), float(dbt[0]) / self.spec.t_radius
        if weight == 0.0 or (bt == 0.0 and dbt == 0.0):
            return
        phi = bt * self._bx
        phi_t = dbt * self._bx
        phi_x = bt * self._dbx
        m = self.params.mass
        n1, n2 = eval_N(self.params, field.u, field.v)
        e1 = -1j * field.u * (phi_t + phi_x) + m * field.v * phi - n1 * phi
        e2 = -1j * field.v * (phi_t - phi_x) + m * field.u * phi - n2 * phi
        self.r1 += weight * complex(np.sum(e1)) * self.dx
        self.r2 += weight * complex(np.sum(e2)) * self.dx

    @property
    def value(self) -> float:
        return abs(self.r1) + abs(self.r2)


def weak_residual_components(trajectory, spec: TestFunctionSpec) -> Tuple[complex, complex]:
    """
    在轨迹快照上计算两个方程的弱形式残差，t 方向梯形求积

    :raises: TestSupportError 如果检验函数支集触及区域边界或时间范围
    """
    times = np.asarray(trajectory.times, dtype=float)
    acc = WeakResidualAccumulator(spec, trajectory.params, trajectory.grid, times[0], times[-1])
    weights = np.zeros_like(times)
    if len(times) > 1:
        h = np.diff(times)
        weights[:-1] += 0.5 * h
        weights[1:] += 0.5 * h
    for snap, w in zip(trajectory.snapshots, weights):
        acc.observe(snap, float(w))
    return acc.r1, acc.r2


def weak_residual(trajectory, spec: TestFunctionSpec) -> float:
    """两个方程弱形式残差的模之和"""
    r1, r2 = weak_residual_components(trajectory, spec)
    return abs(r1) + abs(r2)


def default_test_function(grid: Grid, t_final: float) -> TestFunctionSpec:
    """区域中部、时间中点的检验函数"""
    center = 0.5 * (grid.x_min + grid.x_max)
    radius = 0.25 * (grid.x_max - grid.x_min)
    return TestFunctionSpec(center, radius, 0.5 * t_final, 0.45 * t_final)


def step_weight(n: int, n_steps: int, dt: float) -> float:
    """逐步观测时第 n 步的梯形权重"""
    return 0.5 * dt if n in (0, n_steps) else dt
