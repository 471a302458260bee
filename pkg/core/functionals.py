"""泛函计算 - 电荷、Bony 泛函、耗散、特征线积分、L∞ 包络与差泛函

所有二重积分 ∫∫_{x<y} 都用后缀和一次扫描完成 (O(N))，对角单元只计入 D，不计入 Q。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from config import INEQUALITY_REL_TOL
from core.errors import ConeOutsideDomainError, GridMismatchError
from core.executor import Status
from core.field_state import SpinorField, norms

logger = logging.getLogger(__name__)

RECORD_COLUMNS = (
    "t", "L0", "Q0", "D0", "int_D0", "bony_budget", "bony_residual", "gammaR", "gammaL",
    "q_bound", "linf_sq", "linf_envelope", "h1_semi",
)
PAIR_COLUMNS = (
    "t", "L1", "Q1", "D1", "int_D1", "lyapunov", "h3", "h3_closed", "h4", "bound_residual",
)


@dataclass
class FunctionalRecord:
    """单个快照上的泛函与理论包络"""
    t: float
    L0: float
    Q0: float
    D0: float
    int_D0: float
    bony_budget: float
    gammaR: float
    gammaL: float
    q_bound: float
    linf_sq: float
    linf_envelope: float
    h1_semi: float
    linf_component_sq: float = 0.0
    sum_u: float = 0.0
    sum_v: float = 0.0

    @property
    def bony_residual(self) -> float:
        return self.bony_budget - self.Q0 - self.int_D0

    def to_row(self) -> list:
        return [getattr(self, name) for name in RECORD_COLUMNS]


@dataclass
class PairRecord:
    """两解差的泛函与稳定性包络"""
    t: float
    L1: float
    Q1: float
    D1: float
    int_D1: float
    lyapunov: float
    h3: float
    h3_closed: float
    h4: float
    K: float
    L1_initial: float = 0.0
    h3_closed_c: float = 0.0
    D0: float = 0.0
    D0_prime: float = 0.0

    @property
    def bound_residual(self) -> float:
        return self.h4 * self.L1_initial - self.L1

    def to_row(self) -> list:
        return [getattr(self, name) for name in PAIR_COLUMNS]


class PointwiseFunctionals(NamedTuple):
    L0: float
    D0: float
    linf_sq: float
    h1_semi: float


class LineIntegrals(NamedTuple):
    gammaR: float
    gammaL: float
    q_bound: float


@dataclass
class InequalityCheck:
    """不等式校验结果；margin = 右端 - 左端，margin >= -tolerance 即通过"""
    name: str
    status: Status
    margins: List[float] = field(default_factory=list)
    tolerance: float = 0.0
    detail: str = ""

    @property
    def worst(self) -> Optional[float]:
        return min(self.margins) if self.margins else None


def _strict_suffix(a: np.ndarray) -> np.ndarray:
    """s_j = sum_{k>j} a_k"""
    s = np.cumsum(a[::-1])[::-1]
    return s - a


def pointwise_functionals(field: SpinorField) -> PointwiseFunctionals:
    """L0 = sum(|u|^2+|v|^2) dx, D0 = sum |u|^2|v|^2 dx，另附 L∞ 与 H1 半范数"""
    dx = field.grid.dx
    du, dv = field.density_u, field.density_v
    n = norms(field)
    return PointwiseFunctionals(
        L0=n.charge,
        D0=float(np.sum(du * dv) * dx),
        linf_sq=n.linf_sq,
        h1_semi=n.h1_semi,
    )


def bony_Q0(field: SpinorField) -> float:
    """Q0 = ∫∫_{x<y} |u(x)|^2 |v(y)|^2，单次后缀和"""
    dx = field.grid.dx
    return float(np.sum(field.density_u * _strict_suffix(field.density_v)) * dx * dx)


def _check_same_slice(a: SpinorField, b: SpinorField):
    if a.grid != b.grid:
        raise GridMismatchError(f"网格不一致: {a.grid} vs {b.grid}")
    if abs(a.t - b.t) > 1e-12 * max(1.0, abs(a.t)):
        raise GridMismatchError(f"时间不一致: {a.t} vs {b.t}")


def pair_functionals(field_a: SpinorField, field_b: SpinorField):
    """
    两解差的泛函

    :return: (L1, Q1, D1)
    :raises: GridMismatchError 如果网格或时间不一致
    """
    _check_same_slice(field_a, field_b)
    dx = field_a.grid.dx
    dU = np.abs(field_a.u - field_b.u) ** 2
    dV = np.abs(field_a.v - field_b.v) ** 2
    w_v = field_a.density_v + field_b.density_v
    w_u = field_a.density_u + field_b.density_u
    L1 = float(np.sum(dU + dV) * dx)
    D1 = float(np.sum(dU * w_v + w_u * dV) * dx)
    Q1 = float(np.sum(dU * _strict_suffix(w_v) + w_u * _strict_suffix(dV)) * dx * dx)
    return L1, Q1, D1


def q_bound(t0: float, m: float, c: float, L0_0: float) -> float:
    """q(t0) = t0 (m L0 + 4 c m L0^2) + 4 c L0^2 + L0"""
    return t0 * (m * L0_0 + 4.0 * c * m * L0_0 ** 2) + 4.0 * c * L0_0 ** 2 + L0_0


def linf_envelope_value(sup0: float, m: float, c: float, L0_0: float, T: float) -> float:
    """(sup|初值|^2 + 2 m q(T)) exp(m T + 2 c q(T))"""
    q = q_bound(T, m, c, L0_0)
    return (sup0 + 2.0 * m * q) * math.exp(m * T + 2.0 * c * q)


class ConeFluxAccumulator:
    """
    逐步累积所有后向光锥边上的通量:
    G[j] = ∫_{Γ_R} 2|u|^2 dt，沿 x = x_j + (t_k - t)；H[j] 沿 x = x_j - (t_k - t) 累积 |v|^2
    """

    def __init__(self, field: SpinorField):
        self.dt = field.grid.dx
        self.n = field.grid.n_cells
        self.steps = 0
        self._prev_u = field.density_u.copy()
        self._prev_v = field.density_v.copy()
        self.G = np.zeros(self.n)
        self.H = np.zeros(self.n)

    def observe(self, field: SpinorField):
        du, dv = field.density_u, field.density_v
        G = np.zeros(self.n)
        H = np.zeros(self.n)
        # 梯形法，通量测度 2 dt
        G[:-1] = self.G[1:] + self.dt * (self._prev_u[1:] + du[:-1])
        H[1:] = self.H[:-1] + self.dt * (self._prev_v[:-1] + dv[1:])
        self.G, self.H = G, H
        self._prev_u, self._prev_v = du.copy(), dv.copy()
        self.steps += 1

    def valid_mask(self) -> np.ndarray:
        """两条边在 t=0 的端点都在区域内的顶点"""
        j = np.arange(self.n)
        return (j - self.steps >= 0) & (j + self.steps <= self.n - 1)

    def maxima(self):
        mask = self.valid_mask()
        if not mask.any():
            return 0.0, 0.0
        return float(self.G[mask].max()), float(self.H[mask].max())


class RecordBuilder:
    """按快照生成 FunctionalRecord；每步调用 track 维护 ∫D0 的梯形积分"""

    def __init__(self, m: float, c: float):
        self.m = m
        self.c = c
        self.records: List[FunctionalRecord] = []
        self._L0_0 = None
        self._Q0_0 = None
        self._sup0 = None
        self._int_D0 = 0.0
        self._last = None

    def track(self, field: SpinorField):
        D0 = float(np.sum(field.density_u * field.density_v) * field.grid.dx)
        if self._last is not None:
            t_prev, D0_prev = self._last
            self._int_D0 += 0.5 * (field.t - t_prev) * (D0_prev + D0)
        self._last = (field.t, D0)

    def add(self, field: SpinorField, cones: Optional[ConeFluxAccumulator] = None) -> FunctionalRecord:
        if self._last is None or self._last[0] != field.t:
            self.track(field)
        pf = pointwise_functionals(field)
        Q0 = bony_Q0(field)
        du, dv = field.density_u, field.density_v
        if self._L0_0 is None:
            self._L0_0, self._Q0_0, self._sup0 = pf.L0, Q0, pf.linf_sq
        gR, gL = cones.maxima() if cones is not None else (0.0, 0.0)
        dx = field.grid.dx
        record = FunctionalRecord(
            t=field.t,
            L0=pf.L0,
            Q0=Q0,
            D0=pf.D0,
            int_D0=self._int_D0,
            bony_budget=2.0 * self.m * self._L0_0 ** 2 * field.t + self._Q0_0,
            gammaR=gR,
            gammaL=gL,
            q_bound=q_bound(field.t, self.m, self.c, self._L0_0),
            linf_sq=pf.linf_sq,
            linf_envelope=linf_envelope_value(self._sup0, self.m, self.c, self._L0_0, field.t),
            h1_semi=pf.h1_semi,
            linf_component_sq=float(max(du.max(), dv.max())),
            sum_u=float(du.sum() * dx),
            sum_v=float(dv.sum() * dx),
        )
        logger.debug("t=%.4f L0=%.12e Q0=%.6e D0=%.6e", record.t, record.L0, record.Q0, record.D0)
        self.records.append(record)
        return record


def line_integrals(trajectory, x0: float, t0: float, m: float, c: float) -> LineIntegrals:
    """
    后向光锥 (x0, t0) 两条边上的通量积分

    :param trajectory: 带逐步密度历史的 Trajectory
    :param x0: 顶点位置（取最近的单元中心）
    :param t0: 顶点时间（取最近的步数）
    :return: (gammaR, gammaL, q_bound)
    :raises: ConeOutsideDomainError 如果光锥离开计算区域
    """
    if trajectory.density_u is None:
        raise ValueError("轨迹未记录逐步密度历史 (keep_density=False)")
    grid = trajectory.grid
    dt = grid.dx
    i0 = grid.index_of(x0)
    n0 = int(round(t0 / dt))
    if n0 >= trajectory.density_u.shape[0]:
        raise ConeOutsideDomainError(f"t0={t0} 超出轨迹时间范围")
    if i0 - n0 < 0 or i0 + n0 > grid.n_cells - 1 or i0 < 0 or i0 > grid.n_cells - 1:
        raise ConeOutsideDomainError(f"光锥 (x0={x0}, t0={t0}) 离开计算区域")
    k = np.arange(n0 + 1)
    weights = np.full(n0 + 1, 2.0 * dt)
    if n0 > 0:
        weights[0] = weights[-1] = dt
    else:
        weights[:] = 0.0
    gammaR = float(np.sum(weights * trajectory.density_u[k, i0 + n0 - k]))
    gammaL = float(np.sum(weights * trajectory.density_v[k, i0 - n0 + k]))
    L0_0 = trajectory.records[0].L0
    return LineIntegrals(gammaR, gammaL, q_bound(n0 * dt, m, c, L0_0))


def _trapezoid_error(ts: Sequence[float], values: Sequence[float]) -> float:
    """梯形积分的一阶误差估计: 0.5 * sum(h |Δf|)"""
    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(ts) < 2:
        return 0.0
    return float(0.5 * np.sum(np.diff(ts) * np.abs(np.diff(values))))


def bony_budget_check(records: Sequence[FunctionalRecord], m: float, L0_0: float,
                      delta: float) -> InequalityCheck:
    """
    Q0(t) + ∫D0 <= 2 m L0(0)^2 t + Q0(0)，以及每个区间的微分形式

    :param records: 记录流（等步长）
    :param delta: 小数据阈值
    """
    name = "bony_budget"
    if L0_0 > delta:
        return InequalityCheck(name, Status.NOT_APPLICABLE,
                               detail=f"L0(0)={L0_0:.4e} > delta={delta:.4e}")
    ts = [r.t for r in records]
    tol = INEQUALITY_REL_TOL * L0_0 ** 2 + _trapezoid_error(ts, [r.D0 for r in records])
    margins = [r.bony_residual for r in records]
    diff = bony_differential_residuals(records, m, L0_0)
    weak = [2.0 * m * L0_0 ** 2 * r.t + L0_0 ** 2 - r.Q0 - r.int_D0 for r in records]
    status = Status.PASS if min(margins + weak, default=0.0) >= -tol else Status.FAIL
    worst_diff = min(diff, default=0.0)
    return InequalityCheck(
        name, status, margins, tol,
        detail=f"积分形式最差余量 {min(margins, default=0.0):.3e}; 微分形式最差余量 {worst_diff:.3e}",
    )


def bony_differential_residuals(records: Sequence[FunctionalRecord], m: float, L0_0: float) -> List[float]:
    """每个区间上 2 m L0(0)^2 - ΔQ0/Δt - D0 (梯形平均)"""
    out = []
    for a, b in zip(records, records[1:]):
        out.append(2.0 * m * L0_0 ** 2 - (b.Q0 - a.Q0) / (b.t - a.t) - 0.5 * (a.D0 + b.D0))
    return out


def linf_envelope(records: Sequence[FunctionalRecord], m: float, c: float, T: float,
                  delta: float) -> InequalityCheck:
    """
    sup|u|^2, sup|v|^2 <= (sup|初值|^2 + 2 m q(T)) exp(m T + 2 c q(T))，对所有 t <= T

    分量分别受界；模平方和 linf_sq 的比较另作参考报告。
    """
    name = "linf_envelope"
    L0_0 = records[0].L0
    if L0_0 > delta:
        return InequalityCheck(name, Status.NOT_APPLICABLE,
                               detail=f"L0(0)={L0_0:.4e} > delta={delta:.4e}")
    env = linf_envelope_value(records[0].linf_sq, m, c, L0_0, T)
    tol = INEQUALITY_REL_TOL * max(env, 1e-300)
    margins = [env - r.linf_component_sq for r in records if r.t <= T + 1e-12]
    status = Status.PASS if min(margins, default=0.0) >= -tol else Status.FAIL
    sum_margin = min((env - r.linf_sq for r in records), default=0.0)
    return InequalityCheck(name, status, margins, tol,
                           detail=f"envelope(T)={env:.6e}; 模平方和的最差余量 {sum_margin:.3e}")


def cone_check(records: Sequence[FunctionalRecord], delta: float) -> InequalityCheck:
    """每个记录时刻所有有效光锥: gammaR, gammaL <= q(t0)"""
    name = "cone_integrals"
    L0_0 = records[0].L0
    if L0_0 > delta:
        return InequalityCheck(name, Status.NOT_APPLICABLE,
                               detail=f"L0(0)={L0_0:.4e} > delta={delta:.4e}")
    tol = INEQUALITY_REL_TOL * max(L0_0, 1e-300)
    margins = [r.q_bound - max(r.gammaR, r.gammaL) for r in records]
    status = Status.PASS if min(margins, default=0.0) >= -tol else Status.FAIL
    return InequalityCheck(name, status, margins, tol)


def h3_value(t: float, m: float, L0: float, L0p: float, int_cD: float) -> float:
    """h3(t) = 2 m (L0 + L0') t + ∫ c (D0 + D0')"""
    return 2.0 * m * (L0 + L0p) * t + int_cD


def h3_closed_literal(t: float, m: float, L0: float, L0p: float) -> float:
    return 2.0 * m * (L0 + L0p + L0 ** 2 + L0p ** 2) * t + L0 ** 2 + L0p ** 2


def h3_closed_with_c(t: float, m: float, c: float, L0: float, L0p: float) -> float:
    return 2.0 * m * (L0 + L0p) * t + c * (2.0 * m * (L0 ** 2 + L0p ** 2) * t + L0 ** 2 + L0p ** 2)


def h4_value(h3: float, K: float, L0: float, L0p: float) -> float:
    """
    h4 = (1 + K (L0(0) + L0'(0))) exp(K h3)

    与 lyapunov_check 的结论形式（右端含 K）配套: 对 L1 + K Q1 做 Gronwall，
    再用 Q1(0) <= L1(0) (L0(0) + L0'(0))。
    """
    return (1.0 + K * (L0 + L0p)) * math.exp(K * h3)


def h4_literal(h3: float, K: float, L0: float, L0p: float) -> float:
    """字面形式 (1 + K (L0(0) + L0'(0))) exp(h3)，与不含 K 的 Lyapunov 右端配套"""
    return (1.0 + K * (L0 + L0p)) * math.exp(h3)


class PairRecordBuilder:
    """按快照生成 PairRecord；track 逐步累积 ∫D1 与 ∫c(D0 + D0')"""

    def __init__(self, m: float, c: float, K: float):
        self.m = m
        self.c = c
        self.K = K
        self.records: List[PairRecord] = []
        self.L0 = None
        self.L0p = None
        self._int_D1 = 0.0
        self._int_cD = 0.0
        self._last = None

    def track(self, field_a: SpinorField, field_b: SpinorField):
        _check_same_slice(field_a, field_b)
        dx = field_a.grid.dx
        dU = np.abs(field_a.u - field_b.u) ** 2
        dV = np.abs(field_a.v - field_b.v) ** 2
        D1 = float(np.sum(dU * (field_a.density_v + field_b.density_v)
                          + (field_a.density_u + field_b.density_u) * dV) * dx)
        cD = self.c * float(np.sum(field_a.density_u * field_a.density_v
                                   + field_b.density_u * field_b.density_v) * dx)
        if self._last is not None:
            t_prev, D1_prev, cD_prev = self._last
            h = field_a.t - t_prev
            self._int_D1 += 0.5 * h * (D1_prev + D1)
            self._int_cD += 0.5 * h * (cD_prev + cD)
        self._last = (field_a.t, D1, cD)

    def add(self, field_a: SpinorField, field_b: SpinorField) -> PairRecord:
        if self._last is None or self._last[0] != field_a.t:
            self.track(field_a, field_b)
        L1, Q1, D1 = pair_functionals(field_a, field_b)
        pa = pointwise_functionals(field_a)
        pb = pointwise_functionals(field_b)
        t = field_a.t
        if self.L0 is None:
            self.L0, self.L0p = pa.L0, pb.L0
            L1_initial = L1
        else:
            L1_initial = self.records[0].L1
        h3 = h3_value(t, self.m, self.L0, self.L0p, self._int_cD)
        record = PairRecord(
            t=t, L1=L1, Q1=Q1, D1=D1, int_D1=self._int_D1,
            lyapunov=L1 + self.K * Q1,
            h3=h3,
            h3_closed=h3_closed_literal(t, self.m, self.L0, self.L0p),
            h4=h4_value(h3, self.K, self.L0, self.L0p),
            K=self.K,
            L1_initial=L1_initial,
            h3_closed_c=h3_closed_with_c(t, self.m, self.c, self.L0, self.L0p),
            D0=pa.D0,
            D0_prime=pb.D0,
        )
        self.records.append(record)
        return record


def _pair_gate(L0: float, L0p: float, delta: float) -> Optional[str]:
    if L0 > delta or L0p > delta:
        return f"L0(0)={L0:.4e}, L0'(0)={L0p:.4e}, delta={delta:.4e}"
    return None


def stability_envelopes(pair_records: Sequence[PairRecord], L0: float, L0p: float,
                        delta: float) -> List[InequalityCheck]:
    """
    L1(t) <= h4(t) L1(0)，h4 取 exp(K h3) 形式（见 h4_value）；h3 <= h3_closed
    带 c 的 h3 上界与含 K 的 h4 为结论，字面形式仅作参考
    """
    first = pair_records[0]
    gate = _pair_gate(L0, L0p, delta)
    if gate:
        return [InequalityCheck(n, Status.NOT_APPLICABLE, detail=gate)
                for n in ("l2_stability", "l2_stability_literal", "h3_closed", "h3_closed_literal")]
    tol_l1 = INEQUALITY_REL_TOL * max(first.h4 * first.L1, 1e-300)
    margins = [r.bound_residual for r in pair_records]
    l2 = InequalityCheck("l2_stability",
                         Status.PASS if min(margins) >= -tol_l1 else Status.FAIL, margins, tol_l1)
    K = first.K
    m_l2_lit = [h4_literal(r.h3, K, L0, L0p) * r.L1_initial - r.L1 for r in pair_records]
    l2_lit = InequalityCheck("l2_stability_literal", Status.INFO, m_l2_lit, tol_l1,
                             detail="字面形式成立" if min(m_l2_lit) >= -tol_l1 else "字面形式 exp(h3) 不成立")
    ts = [r.t for r in pair_records]
    tol_h3 = INEQUALITY_REL_TOL * max(first.h3_closed_c, 1e-300) + \
        _trapezoid_error(ts, [r.h3 for r in pair_records])
    m_c = [r.h3_closed_c - r.h3 for r in pair_records]
    m_lit = [r.h3_closed - r.h3 for r in pair_records]
    h3c = InequalityCheck("h3_closed",
                          Status.PASS if min(m_c) >= -tol_h3 else Status.FAIL, m_c, tol_h3)
    lit_ok = min(m_lit) >= -tol_h3
    h3l = InequalityCheck("h3_closed_literal", Status.INFO, m_lit, tol_h3,
                          detail="字面形式成立" if lit_ok else "字面形式（不含 c）不成立")
    return [l2, l2_lit, h3c, h3l]


def lyapunov_check(pair_records: Sequence[PairRecord], m: float, c: float, K: float,
                   L0: float, L0p: float, delta: float) -> List[InequalityCheck]:
    """
    区间形式:
    Δ(L1 + K Q1)/Δt + D1 <= K (2 m L0(0) + 2 m L0'(0) + c D0 + c D0') L1 + tol
    不含 K 的字面右端仅作参考。
    """
    gate = _pair_gate(L0, L0p, delta)
    if gate:
        return [InequalityCheck(n, Status.NOT_APPLICABLE, detail=gate)
                for n in ("lyapunov", "lyapunov_literal")]
    first = pair_records[0]
    rate0 = 2.0 * m * (L0 + L0p) + c * (first.D0 + first.D0_prime)
    ts = [r.t for r in pair_records]
    tol = INEQUALITY_REL_TOL * max(K * rate0 * first.L1, first.L1, 1e-300) \
        + _trapezoid_error(ts, [r.D1 for r in pair_records])
    margins, literal = [], []
    for a, b in zip(pair_records, pair_records[1:]):
        h = b.t - a.t
        lhs = (b.lyapunov - a.lyapunov) / h + 0.5 * (a.D1 + b.D1)
        rate = 2.0 * m * (L0 + L0p) + 0.5 * c * (a.D0 + a.D0_prime + b.D0 + b.D0_prime)
        l1 = 0.5 * (a.L1 + b.L1)
        margins.append(K * rate * l1 - lhs)
        literal.append(rate * l1 - lhs)
    status = Status.PASS if min(margins, default=0.0) >= -tol else Status.FAIL
    lit_ok = min(literal, default=0.0) >= -tol
    return [
        InequalityCheck("lyapunov", status, margins, tol),
        InequalityCheck("lyapunov_literal", Status.INFO, literal, tol,
                        detail="字面右端成立" if lit_ok else "字面右端（不含 K）不成立"),
    ]


def dissipation_check(pair_records: Sequence[PairRecord], m: float, delta: float,
                      L0: float, L0p: float) -> InequalityCheck:
    """
    ∫D1 <= (L1(0) + K Q1(0)) (1 + (4 m δ + δ^2 + 2 m δ^2 t) ∫ exp(h3))，参考报告
    """
    gate = _pair_gate(L0, L0p, delta)
    if gate:
        return InequalityCheck("pair_dissipation", Status.NOT_APPLICABLE, detail=gate)
    first = pair_records[0]
    lyap0 = first.lyapunov
    int_exp = 0.0
    margins = []
    prev = None
    for r in pair_records:
        if prev is not None:
            int_exp += 0.5 * (r.t - prev.t) * (math.exp(prev.h3) + math.exp(r.h3))
        coeff = 4.0 * m * delta + delta ** 2 + 2.0 * m * delta ** 2 * r.t
        margins.append(lyap0 * (1.0 + coeff * int_exp) - r.int_D1)
        prev = r
    tol = INEQUALITY_REL_TOL * max(lyap0, 1e-300)
    ok = min(margins, default=0.0) >= -tol
    return InequalityCheck("pair_dissipation", Status.INFO, margins, tol,
                           detail="成立" if ok else "不成立（常数沿用字面选择）")


def initial_q1_check(first: PairRecord, L0: float, L0p: float) -> InequalityCheck:
    """Q1(0) <= L1(0) (L0(0) + L0'(0))"""
    bound = first.L1 * (L0 + L0p)
    tol = INEQUALITY_REL_TOL * max(bound, 1e-300)
    margin = bound - first.Q1
    return InequalityCheck("initial_q1", Status.PASS if margin >= -tol else Status.FAIL, [margin], tol)
