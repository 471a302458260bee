"""异常定义 - 每类异常对应一个退出码"""
from dataclasses import dataclass
from typing import List, Optional

from config import EXIT_CONFIG_ERROR, EXIT_NUMERICAL_ABORT


class LabError(Exception):
    """所有实验室异常的基类"""
    exit_code = EXIT_CONFIG_ERROR


@dataclass
class ConfigIssue:
    """配置文件中的单个问题"""
    key: str
    line: Optional[int]
    reason: str

    def to_dict(self) -> dict:
        return {"key": self.key, "line": self.line, "reason": self.reason}

    def __str__(self) -> str:
        where = f"第{self.line}行" if self.line is not None else "未知行"
        return f"{self.key} ({where}): {self.reason}"


class ConfigError(LabError):
    """配置错误（可能同时包含多个问题）"""

    def __init__(self, issues, message: str = None):
        if isinstance(issues, ConfigIssue):
            issues = [issues]
        elif isinstance(issues, str):
            issues = [ConfigIssue(key="", line=None, reason=issues)]
        self.issues: List[ConfigIssue] = list(issues)
        super().__init__(message or "; ".join(str(i) for i in self.issues))


class ModelRejectedError(ConfigError):
    """模型不满足 (A2) 零结构条件"""


class DomainTooSmallError(ConfigError):
    """初值支集加光锥超出计算区域"""


class NumericalAbort(LabError):
    """数值中止（NaN、光锥溢出等）"""
    exit_code = EXIT_NUMERICAL_ABORT

    def __init__(self, message: str, step_index: Optional[int] = None):
        self.step_index = step_index
        super().__init__(message)

    def with_context(self, label: str) -> "NumericalAbort":
        """加上出错对象的标签（如 Cauchy 成员编号）"""
        return type(self)(f"{label}: {self}", step_index=self.step_index)


class LightConeOverflowError(NumericalAbort):
    """场到达计算区域边界"""


class NonFiniteFieldError(NumericalAbort):
    """场中出现 NaN/Inf"""


class NumericalDegeneracyError(NumericalAbort):
    """采样比值无界"""


class GridMismatchError(LabError):
    """两个场的网格或时间不一致"""


class ConeOutsideDomainError(LabError):
    """后向光锥离开计算区域"""


class TestSupportError(LabError):
    """检验函数支集触及区域边界"""
    __test__ = False


class UnsupportedOracleError(LabError):
    """闭式解只适用于 m=0 的 Thirring 模型"""


class OracleSizeError(LabError):
    """暴力求和超出规模上限"""
