"""网格与旋量场 - 初值、离散范数"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, NamedTuple

import numpy as np

from config import MIN_CELLS, OUTFLOW_EPS
from core.errors import ConfigError, ConfigIssue, DomainTooSmallError, NonFiniteFieldError

logger = logging.getLogger(__name__)

PROFILE_KINDS = ("gaussian", "smooth_bump", "zero")
COMPONENTS = ("u", "v")


@dataclass(frozen=True)
class Grid:
    """均匀一维网格，单元中心 x_j = x_min + (j + 1/2) dx"""
    x_min: float
    x_max: float
    n_cells: int

    def __post_init__(self):
        issues = []
        if not self.x_min < self.x_max:
            issues.append(ConfigIssue("scheme.x_min", None, "x_min 必须小于 x_max"))
        if int(self.n_cells) != self.n_cells or self.n_cells < MIN_CELLS:
            issues.append(ConfigIssue("scheme.n_cells", None, f"n_cells 必须是 >= {MIN_CELLS} 的整数"))
        if issues:
            raise ConfigError(issues)
        object.__setattr__(self, "n_cells", int(self.n_cells))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @cached_property
    def x(self) -> np.ndarray:
        centers = self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx
        centers.setflags(write=False)
        return centers

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.x_min, self.x_max, self.n_cells * factor)

    def index_of(self, x: float) -> int:
        """最近单元中心的下标"""
        return int(round((x - self.x_min) / self.dx - 0.5))

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_cells": self.n_cells, "dx": self.dx}


@dataclass(frozen=True)
class ProfileSpec:
    """初值剖面"""
    kind: str = "gaussian"
    center: float = 0.0
    width: float = 1.0
    amplitude: float = 1.0
    phase: float = 0.0
    component: str = "u"

    def __post_init__(self):
        issues = []
        if self.kind not in PROFILE_KINDS:
            issues.append(ConfigIssue("profiles.kind", None, f"未知的剖面类型: {self.kind}"))
        if self.component not in COMPONENTS:
            issues.append(ConfigIssue("profiles.component", None, f"分量必须是 u 或 v: {self.component}"))
        if not self.width > 0:
            issues.append(ConfigIssue("profiles.width", None, "宽度必须为正"))
        if issues:
            raise ConfigError(issues)

    def evaluate(self, x) -> np.ndarray:
        """在任意点求剖面值（复数）"""
        x = np.asarray(x, dtype=float)
        if self.kind == "zero" or self.amplitude == 0:
            return np.zeros_like(x, dtype=complex)
        s = (x - self.center) / self.width
        if self.kind == "gaussian":
            mod = self.amplitude * np.exp(-s * s)
        else:
            inside = np.abs(s) < 1.0
            mod = np.zeros_like(s)
            si = s[inside]
            mod[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - si * si))
        return mod * np.exp(1j * self.phase)

    def effective_radius(self) -> float:
        """幅值低于 OUTFLOW_EPS 以外的半径"""
        a = abs(self.amplitude)
        if self.kind == "zero" or a == 0:
            return 0.0
        if self.kind == "smooth_bump":
            return self.width
        if a <= OUTFLOW_EPS:
            return 0.0
        return self.width * math.sqrt(math.log(a / OUTFLOW_EPS))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center": self.center,
            "width": self.width,
            "amplitude": self.amplitude,
            "phase": self.phase,
            "component": self.component,
        }


def component_profile(profiles: Iterable[ProfileSpec], component: str, x) -> np.ndarray:
    """同一分量上所有剖面之和"""
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x, dtype=complex)
    for spec in profiles:
        if spec.component == component:
            total = total + spec.evaluate(x)
    return total


class SpinorField:
    """网格上的复旋量场 (u, v)，创建后只读"""

    __slots__ = ("u", "v", "grid", "t")

    def __init__(self, u, v, grid: Grid, t: float = 0.0):
        u = np.array(u, dtype=complex)
        v = np.array(v, dtype=complex)
        if u.shape != (grid.n_cells,) or v.shape != (grid.n_cells,):
            raise ValueError(f"场长度必须为 {grid.n_cells}: u={u.shape}, v={v.shape}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise NonFiniteFieldError(f"t={t} 时场中出现非有限值")
        u.setflags(write=False)
        v.setflags(write=False)
        self.u = u
        self.v = v
        self.grid = grid
        self.t = float(t)

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0) -> "SpinorField":
        z = np.zeros(grid.n_cells, dtype=complex)
        return cls(z, z, grid, t)

    def replace(self, u=None, v=None, t=None) -> "SpinorField":
        return SpinorField(
            self.u if u is None else u,
            self.v if v is None else v,
            self.grid,
            self.t if t is None else t,
        )

    def scaled(self, s: complex) -> "SpinorField":
        return SpinorField(self.u * s, self.v * s, self.grid, self.t)

    @property
    def density_u(self) -> np.ndarray:
        return np.abs(self.u) ** 2

    @property
    def density_v(self) -> np.ndarray:
        return np.abs(self.v) ** 2

    def snapshot_rows(self) -> List[list]:
        """快照 CSV 行: x, re_u, im_u, re_v, im_v"""
        return [
            [x, u.real, u.imag, v.real, v.imag]
            for x, u, v in zip(self.grid.x, self.u, self.v)
        ]

    def __repr__(self) -> str:
        return f"SpinorField(n_cells={self.grid.n_cells}, t={self.t:g})"


class FieldNorms(NamedTuple):
    charge: float
    linf_sq: float
    h1_semi: float


def check_support_margin(grid: Grid, profiles: Iterable[ProfileSpec], final_time: float):
    """初值支集加光锥必须严格位于计算区域内"""
    issues = []
    for i, spec in enumerate(profiles):
        r = spec.effective_radius()
        if r == 0.0:
            continue
        lo = spec.center - r - final_time
        hi = spec.center + r + final_time
        if lo <= grid.x_min or hi >= grid.x_max:
            issues.append(ConfigIssue(
                f"profiles[{i}]", None,
                f"支集 [{spec.center - r:.4g}, {spec.center + r:.4g}] 加光锥 {final_time:g} "
                f"超出区域 [{grid.x_min:g}, {grid.x_max:g}]",
            ))
    if issues:
        raise DomainTooSmallError(issues)


def build_initial(grid: Grid, profiles: Iterable[ProfileSpec], final_time: float = 0.0) -> SpinorField:
    """
    在单元中心采样初值

    :param grid: 网格
    :param profiles: 剖面列表
    :param final_time: 运行终止时间（用于光锥检查）
    :return: t=0 的 SpinorField
    :raises: DomainTooSmallError 如果支集加光锥触及边界
    """
    profiles = list(profiles)
    check_support_margin(grid, profiles, final_time)
    u = component_profile(profiles, "u", grid.x)
    v = component_profile(profiles, "v", grid.x)
    return SpinorField(u, v, grid, 0.0)


def norms(field: SpinorField) -> FieldNorms:
    """
    离散范数（中点求积）

    :return: (charge, linf_sq, h1_semi)
    """
    dx = field.grid.dx
    du, dv = field.density_u, field.density_v
    charge = float(np.sum(du + dv) * dx)
    linf_sq = float(np.max(du + dv))
    # 内部中心差分，端点单侧差分
    gu = np.gradient(field.u, dx)
    gv = np.gradient(field.v, dx)
    h1_semi = float(np.sum(np.abs(gu) ** 2 + np.abs(gv) ** 2) * dx)
    return FieldNorms(charge, linf_sq, h1_semi)


def l2_distance_sq(a: SpinorField, b: SpinorField) -> float:
    """sum(|u_a - u_b|^2 + |v_a - v_b|^2) dx"""
    return float(np.sum(np.abs(a.u - b.u) ** 2 + np.abs(a.v - b.v) ** 2) * a.grid.dx)
