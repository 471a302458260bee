"""运行配置 - YAML 解析、逐键校验（带行号）与默认值填充"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import yaml

from config import (
    CONSTANT_SAMPLES,
    DEFAULT_CAUCHY_MEMBERS,
    DEFAULT_CONES,
    DEFAULT_INTEGRATOR,
    DEFAULT_REFINEMENT_LEVELS,
    DEFAULT_SEED,
    DEFAULT_STRIDE,
    DEFAULT_SUBSTEP_ORDER,
)
from core.errors import ConfigError, ConfigIssue
from core.evolve import SchemeConfig
from core.field_state import Grid, ProfileSpec
from core.model_kernel import PRESET_TAGS, ModelParams, custom, preset
from core.stability_lab import PerturbationSpec, TestFunctionSpec

logger = logging.getLogger(__name__)

EXPERIMENTS = ("run", "pair", "cauchy", "validate", "oracle")

# 每种实验必须出现的配置块
REQUIRED_BLOCKS = {
    "validate": ("model",),
    "run": ("model", "scheme", "profiles"),
    "pair": ("model", "scheme", "profiles", "stability"),
    "cauchy": ("model", "scheme", "profiles", "stability"),
    "oracle": ("model", "scheme", "profiles"),
}

TOP_LEVEL_KEYS = ("experiment", "seed", "model", "scheme", "profiles", "output", "checks", "stability", "oracle")
MODEL_KEYS = ("preset", "alpha", "mass", "custom")
CUSTOM_KEYS = ("alpha", "beta")
SCHEME_KEYS = ("x_min", "x_max", "n_cells", "t_final", "substep_order", "nonlinear_integrator",
               "diagnostics_stride")
PROFILE_KEYS = ("kind", "component", "center", "width", "amplitude", "phase")
OUTPUT_KEYS = ("directory", "snapshots", "stride", "report")
CHECKS_KEYS = ("cones", "samples", "test_function")
TEST_FUNCTION_KEYS = ("x_center", "x_radius", "t_center", "t_radius")
STABILITY_KEYS = ("epsilon", "perturbation", "members", "streaming", "workers")
ORACLE_KEYS = ("levels",)


@dataclass(frozen=True)
class OutputConfig:
    """
    :param directory: 输出目录（命令行 --out 优先）
    :param snapshots: 是否写快照 CSV
    :param stride: 每隔多少条记录写一个快照
    :param report: 是否生成 report.md / report.html
    """
    directory: Optional[str] = None
    snapshots: bool = False
    stride: int = 1
    report: bool = True


@dataclass(frozen=True)
class ChecksConfig:
    cones: int = DEFAULT_CONES
    samples: int = CONSTANT_SAMPLES
    test_function: Optional[TestFunctionSpec] = None


@dataclass(frozen=True)
class StabilityConfig:
    perturbation: PerturbationSpec
    members: int = DEFAULT_CAUCHY_MEMBERS
    streaming: bool = True
    workers: int = 4


@dataclass(frozen=True)
class OracleConfig:
    levels: int = DEFAULT_REFINEMENT_LEVELS


@dataclass
class RunConfig:
    """完整校验后的运行配置"""
    experiment: str
    seed: int
    model: ModelParams
    grid: Optional[Grid] = None
    scheme: Optional[SchemeConfig] = None
    profiles: Tuple[ProfileSpec, ...] = ()
    output: OutputConfig = field(default_factory=OutputConfig)
    checks: ChecksConfig = field(default_factory=ChecksConfig)
    stability: Optional[StabilityConfig] = None
    oracle: OracleConfig = field(default_factory=OracleConfig)
    echo: Dict[str, Any] = field(default_factory=dict)

    def with_seed(self, seed: int) -> "RunConfig":
        """命令行 --seed 覆盖配置中的 seed"""
        echo = dict(self.echo)
        echo["seed"] = seed
        return RunConfig(self.experiment, seed, self.model, self.grid, self.scheme, self.profiles,
                         self.output, self.checks, self.stability, self.oracle, echo)


def _line_index(node, prefix: str = "", index: Optional[Dict[str, int]] = None) -> Dict[str, int]:
    """从 yaml 节点树构建 点分路径 -> 行号（1 起）"""
    if index is None:
        index = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            index[path] = key_node.start_mark.line + 1
            _line_index(value_node, path, index)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            index[path] = item.start_mark.line + 1
            _line_index(item, path, index)
    return index


class _Validator:
    """收集所有问题，而不是遇到第一个就停止"""

    def __init__(self, lines: Dict[str, int]):
        self.lines = lines
        self.issues: List[ConfigIssue] = []

    def line(self, path: str) -> Optional[int]:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path.rsplit(".", 1)[0] if "." in path else ""
        return None

    def issue(self, path: str, reason: str):
        self.issues.append(ConfigIssue(path, self.line(path), reason))

    def block(self, data: dict, name: str, allowed, required: bool = False,
              path: Optional[str] = None) -> Optional[dict]:
        path = path or name
        if name not in data or data[name] is None:
            if required:
                self.issue(path, "缺少配置块")
            return None
        value = data[name]
        if not isinstance(value, dict):
            self.issue(path, "必须是映射")
            return None
        self.unknown(value, path, allowed)
        return value

    def unknown(self, data: dict, prefix: str, allowed):
        for key in data:
            path = f"{prefix}.{key}" if prefix else str(key)
            if prefix == "scheme" and key == "dt":
                self.issue(path, "dt 由 dx 导出 (dt = dx)，不能设置")
            elif key not in allowed:
                self.issue(path, "未知的键")

    def number(self, data: dict, key: str, path: str, default=None, required=False,
               minimum=None, exclusive=False) -> Optional[float]:
        if key not in data or data[key] is None:
            if required:
                self.issue(path, "缺少必需的键")
            return default
        value = data[key]
        if isinstance(value, str):
            # YAML 1.1 把 1e-3 这类无小数点的科学计数法读成字符串
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.issue(path, f"必须是数值: {value!r}")
            return default
        if minimum is not None and (value <= minimum if exclusive else value < minimum):
            self.issue(path, f"取值超出范围: {value} ({'>' if exclusive else '>='} {minimum})")
            return default
        return float(value)

    def integer(self, data: dict, key: str, path: str, default=None, required=False, minimum=None) -> Optional[int]:
        if key not in data or data[key] is None:
            if required:
                self.issue(path, "缺少必需的键")
            return default
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, int):
            self.issue(path, f"必须是整数: {value!r}")
            return default
        if minimum is not None and value < minimum:
            self.issue(path, f"取值超出范围: {value} (>= {minimum})")
            return default
        return value

    def boolean(self, data: dict, key: str, path: str, default: bool) -> bool:
        if key not in data or data[key] is None:
            return default
        if not isinstance(data[key], bool):
            self.issue(path, f"必须是 true/false: {data[key]!r}")
            return default
        return data[key]

    def choice(self, data: dict, key: str, path: str, choices, default=None, required=False) -> Optional[str]:
        if key not in data or data[key] is None:
            if required:
                self.issue(path, "缺少必需的键")
            return default
        value = data[key]
        if value not in choices:
            self.issue(path, f"必须是 {' | '.join(choices)} 之一: {value!r}")
            return default
        return value

    def build(self, path: str, factory, *args, **kwargs):
        """调用领域构造函数，把其 ConfigError 的键映射回行号"""
        try:
            return factory(*args, **kwargs)
        except ConfigError as e:
            for issue in e.issues:
                key = issue.key or path
                if not key.startswith(path):
                    key = f"{path}.{key.rsplit('.', 1)[-1]}"
                self.issues.append(ConfigIssue(key, self.line(key) or self.line(path), issue.reason))
            return None


def _complex_list(v: _Validator, value, path: str) -> Optional[tuple]:
    """5 个复数系数，每个写作 [re, im] 或实数"""
    if not isinstance(value, list) or len(value) != 5:
        v.issue(path, "需要 5 个系数")
        return None
    out = []
    for i, item in enumerate(value):
        if isinstance(item, (int, float)) and not isinstance(item, bool):
            out.append(complex(item))
        elif (isinstance(item, list) and len(item) == 2
              and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in item)):
            out.append(complex(item[0], item[1]))
        else:
            v.issue(f"{path}[{i}]", f"系数必须是实数或 [re, im]: {item!r}")
            return None
    return tuple(out)


def _parse_model(v: _Validator, data: dict) -> Optional[ModelParams]:
    block = v.block(data, "model", MODEL_KEYS, required=True)
    if block is None:
        return None
    name = v.choice(block, "preset", "model.preset", PRESET_TAGS, required=True)
    mass = v.number(block, "mass", "model.mass", default=0.0, minimum=0.0)
    if name is None:
        return None
    if name == "custom":
        cblock = v.block(block, "custom", CUSTOM_KEYS, path="model.custom")
        if cblock is None:
            v.issue("model.custom", "custom 模型需要 model.custom.alpha 与 model.custom.beta")
            return None
        alpha = _complex_list(v, cblock.get("alpha"), "model.custom.alpha")
        beta = _complex_list(v, cblock.get("beta"), "model.custom.beta")
        if alpha is None or beta is None or mass is None:
            return None
        return v.build("model", custom, alpha, beta, mass)
    if "custom" in block:
        v.issue("model.custom", "预设模型不接受 custom 系数")
    alpha = v.number(block, "alpha", "model.alpha", required=True)
    if alpha is None or mass is None:
        return None
    return v.build("model", preset, name, alpha, mass)


def _parse_scheme(v: _Validator, data: dict, required: bool) -> Tuple[Optional[Grid], Optional[SchemeConfig]]:
    block = v.block(data, "scheme", SCHEME_KEYS, required=required)
    if block is None:
        return None, None
    x_min = v.number(block, "x_min", "scheme.x_min", required=True)
    x_max = v.number(block, "x_max", "scheme.x_max", required=True)
    n_cells = v.integer(block, "n_cells", "scheme.n_cells", required=True, minimum=1)
    t_final = v.number(block, "t_final", "scheme.t_final", required=True, minimum=0.0)
    order = v.choice(block, "substep_order", "scheme.substep_order", ("strang", "lie"),
                     default=DEFAULT_SUBSTEP_ORDER)
    integrator = v.choice(block, "nonlinear_integrator", "scheme.nonlinear_integrator",
                          ("exact_preset", "rk4"), default=DEFAULT_INTEGRATOR)
    stride = v.integer(block, "diagnostics_stride", "scheme.diagnostics_stride",
                       default=DEFAULT_STRIDE, minimum=1)
    if None in (x_min, x_max, n_cells, t_final, order, integrator, stride):
        return None, None
    grid = v.build("scheme", Grid, x_min, x_max, n_cells)
    if grid is None:
        return None, None
    scheme = v.build("scheme", SchemeConfig, grid, t_final, order, integrator, stride)
    return grid, scheme


def _parse_profiles(v: _Validator, items, path: str) -> Tuple[ProfileSpec, ...]:
    if not isinstance(items, list):
        v.issue(path, "必须是剖面列表")
        return ()
    out = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        if not isinstance(item, dict):
            v.issue(p, "剖面必须是映射")
            continue
        v.unknown(item, p, PROFILE_KEYS)
        kind = v.choice(item, "kind", f"{p}.kind", ("gaussian", "smooth_bump", "zero"), default="gaussian")
        component = v.choice(item, "component", f"{p}.component", ("u", "v"), required=True)
        center = v.number(item, "center", f"{p}.center", default=0.0)
        width = v.number(item, "width", f"{p}.width", default=1.0, minimum=0.0, exclusive=True)
        amplitude = v.number(item, "amplitude", f"{p}.amplitude", default=0.0)
        phase = v.number(item, "phase", f"{p}.phase", default=0.0)
        if None in (kind, component, center, width, amplitude, phase):
            continue
        spec = v.build(p, ProfileSpec, kind, center, width, amplitude, phase, component)
        if spec is not None:
            out.append(spec)
    return tuple(out)


def _parse_output(v: _Validator, data: dict) -> OutputConfig:
    block = v.block(data, "output", OUTPUT_KEYS) or {}
    directory = block.get("directory")
    if directory is not None and not isinstance(directory, str):
        v.issue("output.directory", "必须是字符串")
        directory = None
    return OutputConfig(
        directory=directory,
        snapshots=v.boolean(block, "snapshots", "output.snapshots", False),
        stride=v.integer(block, "stride", "output.stride", default=1, minimum=1),
        report=v.boolean(block, "report", "output.report", True),
    )


def _parse_checks(v: _Validator, data: dict) -> ChecksConfig:
    block = v.block(data, "checks", CHECKS_KEYS) or {}
    tf = None
    if block.get("test_function") is not None:
        tblock = v.block(block, "test_function", TEST_FUNCTION_KEYS, path="checks.test_function")
        if tblock is not None:
            values = [v.number(tblock, k, f"checks.test_function.{k}", required=True) for k in TEST_FUNCTION_KEYS]
            if None not in values:
                tf = v.build("checks.test_function", TestFunctionSpec, *values)
    return ChecksConfig(
        cones=v.integer(block, "cones", "checks.cones", default=DEFAULT_CONES, minimum=0),
        samples=v.integer(block, "samples", "checks.samples", default=CONSTANT_SAMPLES, minimum=1000),
        test_function=tf,
    )


def _parse_stability(v: _Validator, data: dict, required: bool) -> Optional[StabilityConfig]:
    block = v.block(data, "stability", STABILITY_KEYS, required=required)
    if block is None:
        return None
    epsilon = v.number(block, "epsilon", "stability.epsilon", default=1e-3, minimum=0.0)
    if "perturbation" not in block:
        v.issue("stability.perturbation", "缺少扰动剖面列表")
        profiles = ()
    else:
        profiles = _parse_profiles(v, block["perturbation"], "stability.perturbation")
    members = v.integer(block, "members", "stability.members", default=DEFAULT_CAUCHY_MEMBERS, minimum=2)
    streaming = v.boolean(block, "streaming", "stability.streaming", True)
    workers = v.integer(block, "workers", "stability.workers", default=4, minimum=1)
    if epsilon is None:
        return None
    return StabilityConfig(PerturbationSpec(profiles, epsilon), members, streaming, workers)


def parse_config(text: str, experiment: Optional[str] = None) -> RunConfig:
    """
    解析并校验 YAML 配置

    :param text: 配置文本
    :param experiment: 命令行子命令；配置中缺少 experiment 时使用它，两者不一致时报错
    :return: RunConfig，缺省值已填充
    :raises: ConfigError 包含全部问题（键、行号、原因）
    """
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(ConfigIssue("", line, f"YAML 语法错误: {getattr(e, 'problem', e)}")) from e
    if not isinstance(data, dict):
        raise ConfigError(ConfigIssue("", 1, "配置必须是顶层映射"))

    v = _Validator(_line_index(root))
    v.unknown(data, "", TOP_LEVEL_KEYS)
    if experiment is not None and data.get("experiment") is None:
        data["experiment"] = experiment
    elif experiment is not None and data["experiment"] != experiment:
        v.issue("experiment", f"与子命令 {experiment} 不一致: {data['experiment']!r}")
    experiment = v.choice(data, "experiment", "experiment", EXPERIMENTS, required=True)
    seed = v.integer(data, "seed", "seed", default=DEFAULT_SEED, minimum=0)
    required = REQUIRED_BLOCKS.get(experiment, ())

    model = _parse_model(v, data)
    grid, scheme = _parse_scheme(v, data, "scheme" in required)
    profiles: Tuple[ProfileSpec, ...] = ()
    if "profiles" in data:
        profiles = _parse_profiles(v, data["profiles"], "profiles")
    elif "profiles" in required:
        v.issue("profiles", "缺少配置块")
    output = _parse_output(v, data)
    checks = _parse_checks(v, data)
    stability = _parse_stability(v, data, "stability" in required)
    oblock = v.block(data, "oracle", ORACLE_KEYS) or {}
    oracle = OracleConfig(v.integer(oblock, "levels", "oracle.levels",
                                    default=DEFAULT_REFINEMENT_LEVELS, minimum=3))

    if v.issues:
        for issue in v.issues:
            logger.debug("配置问题: %s", issue)
        raise ConfigError(v.issues)

    config = RunConfig(
        experiment=experiment,
        seed=seed,
        model=model,
        grid=grid,
        scheme=scheme,
        profiles=profiles,
        output=output,
        checks=checks,
        stability=stability,
        oracle=oracle,
        echo=data,
    )
    logger.info("配置已解析: experiment=%s, model=%s", experiment, model.preset_tag)
    return config


def load_config(path: str, experiment: Optional[str] = None) -> RunConfig:
    """从文件读取并解析配置"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(ConfigIssue("", None, f"无法读取配置文件 {path}: {e}")) from e
    return parse_config(text, experiment)
