"""模型核心 - 三次非线性项、(A2) 零结构校验与常数推导"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from config import (
    A2_REL_TOLERANCE,
    A2_SAMPLES,
    CONSTANT_SAMPLES,
    DEFAULT_SEED,
    DELTA_CAP,
    RATIO_CEILING,
    SAMPLE_BOX,
    SAMPLE_CHUNK,
)
from core.errors import ConfigError, ConfigIssue, ModelRejectedError, NumericalDegeneracyError

logger = logging.getLogger(__name__)

PRESETS = ("thirring", "gross_neveu")
PRESET_TAGS = PRESETS + ("custom",)

ZERO5 = (0j, 0j, 0j, 0j, 0j)


@dataclass(frozen=True)
class CubicTerm:
    """
    (A1) 形式的一项:
    N1 = (a1 u + a2 conj(u)) (a3 |v|^2 + a4 v^2 + a5 conj(v)^2)
    N2 = (b1 v + b2 conj(v)) (b3 |u|^2 + b4 u^2 + b5 conj(u)^2)
    """
    alpha: Tuple[complex, ...] = ZERO5
    beta: Tuple[complex, ...] = ZERO5

    def __post_init__(self):
        if len(self.alpha) != 5 or len(self.beta) != 5:
            raise ConfigError("每个三次项需要 5 个 alpha 与 5 个 beta 系数")
        object.__setattr__(self, "alpha", tuple(complex(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(complex(b) for b in self.beta))


@dataclass(frozen=True)
class ModelParams:
    """模型参数；Gross-Neveu 的非线性项是两个 (A1) 项之和"""
    terms: Tuple[CubicTerm, ...]
    mass: float
    preset_tag: str = "custom"
    coupling: float = 0.0

    def __post_init__(self):
        if self.preset_tag not in PRESET_TAGS:
            raise ConfigError(ConfigIssue("model.preset", None, f"未知的模型: {self.preset_tag}"))
        if not np.isfinite(self.mass) or self.mass < 0:
            raise ConfigError(ConfigIssue("model.mass", None, f"质量必须非负: {self.mass}"))
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "mass", float(self.mass))

    @property
    def alpha(self) -> Tuple[complex, ...]:
        return self.terms[0].alpha if self.terms else ZERO5

    @property
    def beta(self) -> Tuple[complex, ...]:
        return self.terms[0].beta if self.terms else ZERO5

    @property
    def is_preset(self) -> bool:
        return self.preset_tag in PRESETS

    def to_dict(self) -> dict:
        return {
            "preset": self.preset_tag,
            "alpha": self.coupling,
            "mass": self.mass,
            "terms": [
                {
                    "alpha": [[a.real, a.imag] for a in term.alpha],
                    "beta": [[b.real, b.imag] for b in term.beta],
                }
                for term in self.terms
            ],
        }


@dataclass(frozen=True)
class ModelConstants:
    """推导出的常数 c, delta, c_star, K 及采样元信息"""
    c: float
    delta: float
    c_star: float
    K: float
    c_sampled: float = 0.0
    c_star_sampled: float = 0.0
    seed: int = DEFAULT_SEED
    n_samples: int = 0
    vacuous: bool = False

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "delta": self.delta,
            "c_star": self.c_star,
            "K": self.K,
            "c_sampled": self.c_sampled,
            "c_star_sampled": self.c_star_sampled,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "small_data_vacuous": self.vacuous,
        }


@dataclass
class A2Report:
    """(A2) 残差采样结果"""
    max_abs: float
    max_rel: float
    seed: int
    n_points: int
    max_abs_u_term: float = 0.0
    max_abs_v_term: float = 0.0
    box: float = SAMPLE_BOX

    @property
    def passes(self) -> bool:
        return self.max_rel <= A2_REL_TOLERANCE

    def to_dict(self) -> dict:
        return {
            "max_abs": self.max_abs,
            "max_rel": self.max_rel,
            "seed": self.seed,
            "n_points": self.n_points,
            "max_abs_u_term": self.max_abs_u_term,
            "max_abs_v_term": self.max_abs_v_term,
            "box": self.box,
            "passes": self.passes,
        }


def preset(name: str, alpha: float, mass: float) -> ModelParams:
    """
    构造预设模型

    :param name: thirring 或 gross_neveu
    :param alpha: 实耦合常数
    :param mass: 质量 m >= 0
    :return: ModelParams
    """
    if name not in PRESETS:
        raise ConfigError(ConfigIssue("model.preset", None, f"未知的预设模型: {name}"))
    a = float(alpha)
    if name == "thirring":
        # N1 = a u |v|^2, N2 = a v |u|^2
        terms = (CubicTerm(alpha=(a, 0, 1, 0, 0), beta=(a, 0, 1, 0, 0)),)
    else:
        # N1 = 2a (u|v|^2 + conj(u) v^2), N2 = 2a (v|u|^2 + conj(v) u^2)
        terms = (
            CubicTerm(alpha=(2 * a, 0, 1, 0, 0), beta=(2 * a, 0, 1, 0, 0)),
            CubicTerm(alpha=(0, 2 * a, 0, 1, 0), beta=(0, 2 * a, 0, 1, 0)),
        )
    return ModelParams(terms=terms, mass=mass, preset_tag=name, coupling=a)


def custom(alpha, beta, mass: float) -> ModelParams:
    """单个 (A1) 项构成的自定义模型"""
    return ModelParams(terms=(CubicTerm(alpha=tuple(alpha), beta=tuple(beta)),), mass=mass)


def eval_N(params: ModelParams, u, v):
    """
    计算 (N1(u,v), N2(u,v))，支持 numpy 数组广播

    :return: (N1, N2)
    """
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    uc, vc = np.conj(u), np.conj(v)
    u2, v2 = (u * uc).real, (v * vc).real
    n1 = np.zeros(np.broadcast(u, v).shape, dtype=complex)
    n2 = np.zeros_like(n1)
    for term in params.terms:
        a, b = term.alpha, term.beta
        if any(a):
            n1 = n1 + (a[0] * u + a[1] * uc) * (a[2] * v2 + a[3] * v * v + a[4] * vc * vc)
        if any(b):
            n2 = n2 + (b[0] * v + b[1] * vc) * (b[2] * u2 + b[3] * u * u + b[4] * uc * uc)
    if n1.ndim == 0:
        return complex(n1), complex(n2)
    return n1, n2


def a2_residual(params: ModelParams, u, v):
    """Re(i conj(u) N1 + i conj(v) N2)，满足 (A2) 当且仅当恒为 0"""
    n1, n2 = eval_N(params, u, v)
    res = (1j * np.conj(u) * n1 + 1j * np.conj(v) * n2).real
    return float(res) if np.ndim(res) == 0 else res


def a2_term_residuals(params: ModelParams, u, v):
    """分项残差 Re(i conj(u) N1), Re(i conj(v) N2)"""
    n1, n2 = eval_N(params, u, v)
    ru = (1j * np.conj(u) * n1).real
    rv = (1j * np.conj(v) * n2).real
    if np.ndim(ru) == 0:
        return float(ru), float(rv)
    return ru, rv


def _random_complex(rng: np.random.Generator, n: int, box: float) -> np.ndarray:
    return rng.uniform(-box, box, n) + 1j * rng.uniform(-box, box, n)


def _chunks(total: int):
    done = 0
    while done < total:
        n = min(SAMPLE_CHUNK, total - done)
        yield n
        done += n


def sample_a2(params: ModelParams, n_points: int = A2_SAMPLES, seed: int = DEFAULT_SEED,
              box: float = SAMPLE_BOX) -> A2Report:
    """
    在有界盒中随机采样 (A2) 残差

    :param n_points: 采样点数
    :param seed: 随机种子（记录在报告中）
    :param box: 实部/虚部的采样范围
    :return: A2Report
    """
    rng = np.random.default_rng(seed)
    max_abs = max_rel = max_u = max_v = 0.0
    for n in _chunks(n_points):
        u = _random_complex(rng, n, box)
        v = _random_complex(rng, n, box)
        n1, n2 = eval_N(params, u, v)
        ru = (1j * np.conj(u) * n1).real
        rv = (1j * np.conj(v) * n2).real
        res = np.abs(ru + rv)
        scale = np.abs(u) * np.abs(n1) + np.abs(v) * np.abs(n2)
        rel = np.divide(res, scale, out=np.zeros_like(res), where=scale > 0)
        max_abs = max(max_abs, float(res.max(initial=0.0)))
        max_rel = max(max_rel, float(rel.max(initial=0.0)))
        max_u = max(max_u, float(np.abs(ru).max(initial=0.0)))
        max_v = max(max_v, float(np.abs(rv).max(initial=0.0)))
    return A2Report(max_abs=max_abs, max_rel=max_rel, seed=seed, n_points=n_points,
                    max_abs_u_term=max_u, max_abs_v_term=max_v, box=box)


def closed_form_c(params: ModelParams):
    """预设模型的三次界常数解析值；自定义模型返回 None"""
    if params.preset_tag == "thirring":
        return 2.0 * abs(params.coupling)
    if params.preset_tag == "gross_neveu":
        return 8.0 * abs(params.coupling)
    return None


def _check_ratio(value: float, name: str):
    if not np.isfinite(value) or value > RATIO_CEILING:
        raise NumericalDegeneracyError(f"采样比值 {name} 无界: {value}")


def sample_cubic_ratio(params: ModelParams, n_samples: int, seed: int, box: float) -> float:
    """max (|conj(N1) u| + |conj(N2) v|) / (|u|^2 |v|^2)"""
    rng = np.random.default_rng(seed)
    best = 0.0
    for n in _chunks(n_samples):
        u = _random_complex(rng, n, box)
        v = _random_complex(rng, n, box)
        n1, n2 = eval_N(params, u, v)
        num = np.abs(np.conj(n1) * u) + np.abs(np.conj(n2) * v)
        den = np.abs(u) ** 2 * np.abs(v) ** 2
        ok = den > 0
        if ok.any():
            best = max(best, float((num[ok] / den[ok]).max()))
    _check_ratio(best, "c")
    return best


def sample_difference_ratio(params: ModelParams, n_samples: int, seed: int, box: float) -> float:
    """max (|dN1 conj(U)| + |dN2 conj(V)|) / r2(x,x)，c★ = 4 倍该值"""
    rng = np.random.default_rng(seed + 1)
    best = 0.0
    for n in _chunks(n_samples):
        u, v = _random_complex(rng, n, box), _random_complex(rng, n, box)
        up, vp = _random_complex(rng, n, box), _random_complex(rng, n, box)
        n1, n2 = eval_N(params, u, v)
        m1, m2 = eval_N(params, up, vp)
        U, V = u - up, v - vp
        num = np.abs((n1 - m1) * np.conj(U)) + np.abs((n2 - m2) * np.conj(V))
        den = pair_density(U, V, u, v, up, vp)
        ok = den > 0
        if ok.any():
            best = max(best, float((num[ok] / den[ok]).max()))
    _check_ratio(best, "c_star")
    return best


def pair_density(U, V, u, v, up, vp):
    """r2 在对角线上的值: |U|^2(|v|^2+|v'|^2) + (|u|^2+|u'|^2)|V|^2"""
    return (np.abs(U) ** 2 * (np.abs(v) ** 2 + np.abs(vp) ** 2)
            + (np.abs(u) ** 2 + np.abs(up) ** 2) * np.abs(V) ** 2)


@lru_cache(maxsize=64)
def derive_constants(params: ModelParams, n_samples: int = CONSTANT_SAMPLES,
                     seed: int = DEFAULT_SEED, box: float = SAMPLE_BOX) -> ModelConstants:
    """
    推导不等式所需常数

    :param params: 模型参数（必须满足 (A2)）
    :param n_samples: 最大化采样点数
    :param seed: 随机种子
    :return: ModelConstants
    :raises: ModelRejectedError 如果 (A2) 不成立
    """
    report = sample_a2(params, min(A2_SAMPLES, n_samples), seed, box)
    if not report.passes:
        raise ModelRejectedError(
            ConfigIssue("model", None, f"(A2) 残差过大: 相对残差 {report.max_rel:.3e}")
        )

    c_sampled = sample_cubic_ratio(params, n_samples, seed, box)
    closed = closed_form_c(params)
    if closed is not None:
        if c_sampled > closed * (1 + 1e-9) + 1e-12:
            logger.warning("采样常数 c=%.6g 超过解析值 %.6g", c_sampled, closed)
        c = closed
    else:
        c = c_sampled

    c_star_sampled = 4.0 * sample_difference_ratio(params, n_samples, seed, box)
    c_star = max(c_star_sampled, c)

    vacuous = c == 0.0
    delta = DELTA_CAP if c_star == 0.0 else min(1.0 / (4.0 * c_star), DELTA_CAP)
    K = 2.0 * c_star + 1.0
    if not -2.0 + 2.0 * delta * c < -1.0:
        raise NumericalDegeneracyError(f"delta 选择失败: delta={delta}, c={c}")

    constants = ModelConstants(c=c, delta=delta, c_star=c_star, K=K, c_sampled=c_sampled,
                               c_star_sampled=c_star_sampled, seed=seed, n_samples=n_samples,
                               vacuous=vacuous)
    logger.info("模型常数: c=%.6g c*=%.6g delta=%.6g K=%.6g", c, c_star, delta, K)
    return constants


def modulus_source(params: ModelParams, u, v):
    """
    模方程右端:
    (|u|^2)_t + (|u|^2)_x = m i(conj(u)v - u conj(v)) + 2 Re(i conj(N1) u)
    (|v|^2)_t - (|v|^2)_x = -m i(conj(u)v - u conj(v)) + 2 Re(i conj(N2) v)
    """
    n1, n2 = eval_N(params, u, v)
    coupling = (params.mass * 1j * (np.conj(u) * v - u * np.conj(v))).real
    s_u = coupling + 2.0 * (1j * np.conj(n1) * u).real
    s_v = -coupling + 2.0 * (1j * np.conj(n2) * v).real
    return s_u, s_v


def r0_density(c: float, m: float, u, v):
    """r0 = m(|u|^2+|v|^2) + 2c|u|^2|v|^2"""
    au, av = np.abs(u) ** 2, np.abs(v) ** 2
    return m * (au + av) + 2.0 * c * au * av


def modulus_bound_excess(params: ModelParams, constants: ModelConstants, u, v) -> float:
    """max(s_u - r0, s_v - r0)，满足界时 <= 0（舍入误差内）"""
    s_u, s_v = modulus_source(params, u, v)
    r0 = r0_density(constants.c, params.mass, u, v)
    return float(max(np.max(s_u - r0, initial=0.0), np.max(s_v - r0, initial=0.0)))


def difference_bound_excess(params: ModelParams, constants: ModelConstants, u, v, up, vp) -> dict:
    """
    差系统的逐点估计:
    |R| <= c★ r2(x,x)，|Re 2{i m V conj(U) - i dN1 conj(U)}| <= r1，v 分量同理

    :return: 各估计的最大超出量（<= 0 表示成立）
    """
    m, cs = params.mass, constants.c_star
    n1, n2 = eval_N(params, u, v)
    k1, k2 = eval_N(params, up, vp)
    U, V = u - up, v - vp
    d1, d2 = n1 - k1, n2 - k2
    r2 = pair_density(U, V, u, v, up, vp)
    r1 = m * (np.abs(U) ** 2 + np.abs(V) ** 2) + cs * r2
    R = (2j * d1 * np.conj(U) + 2j * d2 * np.conj(V)).real
    t1 = (2.0 * (1j * m * V * np.conj(U) - 1j * d1 * np.conj(U))).real
    t2 = (2.0 * (1j * m * U * np.conj(V) - 1j * d2 * np.conj(V))).real
    return {
        "R": float(np.max(np.abs(R) - cs * r2, initial=0.0)),
        "u_equation": float(np.max(np.abs(t1) - r1, initial=0.0)),
        "v_equation": float(np.max(np.abs(t2) - r1, initial=0.0)),
    }
