"""校验执行器 - 依次执行注册的校验并汇总结论"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

logger = logging.getLogger(__name__)


class Status(str, Enum):
    """结论状态；NOT_APPLICABLE 与 INFO 永远不会导致运行失败"""
    PASS = "pass"
    FAIL = "fail"
    NOT_APPLICABLE = "not_applicable"
    INFO = "info"


@dataclass
class Verdict:
    """单条校验结论"""
    code: str
    title: str
    status: Status
    detail: str = ""
    worst_margin: Optional[float] = None
    tolerance: Optional[float] = None
    samples: int = 0

    @property
    def failed(self) -> bool:
        return self.status is Status.FAIL

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "title": self.title,
            "status": self.status.value,
            "detail": self.detail,
            "worst_margin": self.worst_margin,
            "tolerance": self.tolerance,
            "samples": self.samples,
        }


@dataclass
class VerdictSummary:
    """一次实验的全部结论"""
    success: bool
    verdicts: list = field(default_factory=list)
    summary: str = ""

    def counts(self) -> Dict[str, int]:
        out = {s.value: 0 for s in Status}
        for v in self.verdicts:
            out[v.status.value] += 1
        return out

    def tolerances(self) -> Dict[str, Optional[float]]:
        return {v.code: v.tolerance for v in self.verdicts}


@dataclass
class CheckSpec:
    """注册的校验: code、标题、适用的实验类型与校验函数"""
    code: str
    title: str
    experiments: tuple
    func: Callable[[Any], Any]


_REGISTRY: List[CheckSpec] = []


def register_check(code: str, title: str, experiments=("run",)):
    """
    注册校验函数的装饰器

    :param code: 唯一编号，如 "A2-charge"
    :param title: 标题
    :param experiments: 适用的实验类型
    """
    def decorator(func):
        _REGISTRY.append(CheckSpec(code, title, tuple(experiments), func))
        return func
    return decorator


def registered_checks(experiment: str) -> List[CheckSpec]:
    return [spec for spec in _REGISTRY if experiment in spec.experiments]


class CheckExecutor:
    """执行某类实验的全部校验"""

    def run_checks(self, experiment: str, outcome: Any) -> VerdictSummary:
        """
        执行所有适用的校验

        :param experiment: 实验类型 (run | pair | cauchy | validate | oracle)
        :param outcome: 实验结果对象，传给每个校验函数
        :return: 汇总结论
        """
        # 确保内置校验已注册
        import core.checks  # noqa: F401

        specs = registered_checks(experiment)
        verdicts: List[Verdict] = []
        seen_codes = set()
        for spec in specs:
            result = spec.func(outcome)
            if result is None:
                continue
            items = result if isinstance(result, list) else [result]
            for verdict in items:
                if verdict.code in seen_codes:
                    logger.warning("重复的校验编号 %s，已忽略", verdict.code)
                    continue
                seen_codes.add(verdict.code)
                verdicts.append(verdict)
                log = logger.warning if verdict.status is Status.FAIL else logger.info
                log("[%s] %s: %s %s", verdict.code, verdict.title, verdict.status.value, verdict.detail)

        failures = [v for v in verdicts if v.failed]
        result = VerdictSummary(success=not failures, verdicts=verdicts)
        not_applicable = result.counts()[Status.NOT_APPLICABLE.value]
        summary_parts = [f"执行 {len(verdicts)} 项校验"]
        if failures:
            summary_parts.append(f"{len(failures)} 项失败: " + ", ".join(v.code for v in failures))
        else:
            summary_parts.append("全部适用校验通过")
        if not_applicable:
            summary_parts.append(f"{not_applicable} 项不适用（非小数据）")
        result.summary = "，".join(summary_parts)
        return result
