"""实验调度 - 按实验类型运行、执行校验、写出产物并返回退出码"""
import logging
import platform
from typing import Callable, Dict, Optional

import numpy as np
import scipy

from config import A2_SAMPLES, EXIT_OK, EXIT_VERDICT_FAILED, RUNS_DIR, VERSION
from core.checks import ExperimentContext
from core.errors import LabError
from core.evolve import SchemeConfig, run_trajectory
from core.executor import CheckExecutor, Status, VerdictSummary
from core.field_state import build_initial
from core.functionals import PAIR_COLUMNS, RECORD_COLUMNS
from core.model_kernel import derive_constants, sample_a2
from core.oracles import (
    REFINEMENT_COLUMNS,
    RefinementProblem,
    characteristic_reference,
    l2_error,
    refinement_study,
    thirring_m0_exact,
)
from core.report import ReportBuilder
from core.run_config import RunConfig
from core.run_store import RunStore, default_run_dir
from core.stability_lab import (
    DISTANCE_COLUMNS,
    CauchyExperiment,
    PairExperiment,
    WeakResidualAccumulator,
    cauchy_experiment,
    default_test_function,
    pair_run,
    step_weight,
)

logger = logging.getLogger(__name__)

CONE_COLUMNS = ("x0", "t0", "gammaR", "gammaL", "q_bound")


def resolve_output_dir(config: RunConfig, out: Optional[str] = None) -> str:
    """命令行 --out 优先，其次配置中的 output.directory，最后 runs/<experiment>"""
    return out or config.output.directory or default_run_dir(RUNS_DIR, config.experiment)


def versions() -> Dict[str, str]:
    return {
        "dirac_lab": VERSION,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _context(config: RunConfig) -> ExperimentContext:
    params = config.model
    a2 = sample_a2(params, A2_SAMPLES, config.seed)
    constants = derive_constants(params, config.checks.samples, config.seed)
    return ExperimentContext(config=config, params=params, constants=constants, a2=a2)


def _streamed_weak_residual(config: RunConfig, scheme: SchemeConfig, ctx: ExperimentContext) -> float:
    """以逐步累加的方式计算极限轨迹的弱形式残差"""
    spec = config.checks.test_function or default_test_function(scheme.grid, scheme.t_final)
    init = build_initial(scheme.grid, config.profiles, scheme.t_final)
    acc = WeakResidualAccumulator(spec, ctx.params, scheme.grid, 0.0, scheme.t_final)
    n_steps, dt = scheme.n_steps, scheme.dt
    run_trajectory(init, ctx.params, scheme, ctx.constants,
                   on_step=lambda n, f: acc.observe(f, step_weight(n, n_steps, dt)))
    return acc.value


def _write_snapshots(store: RunStore, config: RunConfig, snapshots):
    if not config.output.snapshots:
        return
    for i, snap in enumerate(snapshots):
        if i % config.output.stride == 0 or i == len(snapshots) - 1:
            store.write_snapshot(snap, i)


def _validate(config: RunConfig) -> ExperimentContext:
    """只做模型校验，不写 CSV"""
    return _context(config)


def _run(config: RunConfig, store: RunStore) -> ExperimentContext:
    ctx = _context(config)
    scheme = config.scheme
    init = build_initial(config.grid, config.profiles, scheme.t_final)
    acc = None
    if config.checks.test_function is not None:
        acc = WeakResidualAccumulator(config.checks.test_function, ctx.params, scheme.grid, 0.0, scheme.t_final)
    n_steps, dt = scheme.n_steps, scheme.dt
    on_step = None if acc is None else (lambda n, f: acc.observe(f, step_weight(n, n_steps, dt)))
    ctx.trajectory = run_trajectory(init, ctx.params, scheme, ctx.constants,
                                    keep_density=config.checks.cones > 0, on_step=on_step)
    if acc is not None:
        ctx.weak_residuals.append(acc.value)
    store.write_csv("functionals.csv", RECORD_COLUMNS, (r.to_row() for r in ctx.trajectory.records))
    _write_snapshots(store, config, ctx.trajectory.snapshots)
    return ctx


def _pair(config: RunConfig, store: RunStore) -> ExperimentContext:
    ctx = _context(config)
    exp = PairExperiment.from_profiles(config.grid, config.profiles, config.stability.perturbation,
                                       ctx.params, config.scheme, ctx.constants)
    ctx.pair = pair_run(exp)
    store.write_csv("pair_records.csv", PAIR_COLUMNS, (r.to_row() for r in ctx.pair.records))
    return ctx


def _cauchy(config: RunConfig, store: RunStore) -> ExperimentContext:
    ctx = _context(config)
    st = config.stability
    exp = CauchyExperiment.geometric(config.grid, config.profiles, st.perturbation, st.members,
                                     ctx.params, config.scheme, ctx.constants, st.streaming, st.workers)
    ctx.cauchy = cauchy_experiment(exp)
    store.write_csv("distances.csv", DISTANCE_COLUMNS, (r.to_row() for r in ctx.cauchy.rows))

    # 极限轨迹在一次加密下的弱形式残差
    scheme = config.scheme
    if scheme.n_steps == 0:
        return ctx
    for grid in (scheme.grid, scheme.grid.refined(2)):
        limit_scheme = SchemeConfig(grid, scheme.t_final, scheme.substep_order, scheme.nonlinear_integrator,
                                    max(1, int(round(scheme.t_final / grid.dx))))
        ctx.weak_residuals.append(_streamed_weak_residual(config, limit_scheme, ctx))
    return ctx


def _oracle(config: RunConfig, store: RunStore) -> ExperimentContext:
    ctx = _context(config)
    scheme = config.scheme
    problem = RefinementProblem(config.grid, config.profiles, ctx.params, scheme.t_final,
                                scheme.substep_order, scheme.nonlinear_integrator)
    if problem.has_closed_form:
        u0 = [p for p in config.profiles if p.component == "u"]
        v0 = [p for p in config.profiles if p.component == "v"]
        t_check = min(1.0, scheme.t_final)
        exact = thirring_m0_exact(u0, v0, ctx.params.coupling, t_check, config.grid, ctx.params)
        reference = characteristic_reference(u0, v0, ctx.params.coupling, t_check, config.grid)
        ctx.oracle_validation = l2_error(exact, reference)
        logger.info("闭式解自校验: L2 偏差 %.3e", ctx.oracle_validation)
    ctx.refinement = refinement_study(problem, config.oracle.levels)
    store.write_csv("refinement.csv", REFINEMENT_COLUMNS, (r.to_row() for r in ctx.refinement))
    return ctx


EXPERIMENT_RUNNERS: Dict[str, Callable[[RunConfig, RunStore], ExperimentContext]] = {
    "validate": lambda config, store: _validate(config),
    "run": _run,
    "pair": _pair,
    "cauchy": _cauchy,
    "oracle": _oracle,
}


def _summary_json(config: RunConfig, result: Optional[VerdictSummary], ctx: Optional[ExperimentContext]) -> dict:
    counts = result.counts() if result else {s.value: 0 for s in Status}
    data = {
        "experiment": config.experiment,
        "seed": config.seed,
        "verdicts": [v.to_dict() for v in result.verdicts] if result else [],
        "summary": result.summary if result else "",
        "passes": counts[Status.PASS.value],
        "failures": counts[Status.FAIL.value],
        "not_applicable": counts[Status.NOT_APPLICABLE.value],
        "info": counts[Status.INFO.value],
        "tolerances": result.tolerances() if result else {},
        "constants": ctx.constants.to_dict() if ctx else {},
        "model": config.model.to_dict(),
        "config_echo": config.echo,
        "versions": versions(),
    }
    if ctx is not None and ctx.a2 is not None:
        data["a2"] = ctx.a2.to_dict()
    if config.scheme is not None:
        data["scheme"] = config.scheme.to_dict()
    return data


def dispatch(config: RunConfig, out_dir: Optional[str] = None) -> int:
    """
    运行一次实验

    :param config: 已校验的配置
    :param out_dir: 输出目录（缺省时按 resolve_output_dir 决定）
    :return: 退出码 0 全部通过 / 2 有结论失败 / 3 配置错误 / 4 数值中止
    """
    store = RunStore(resolve_output_dir(config, out_dir))
    store.prepare()
    logger.info("实验 %s 开始，输出目录 %s", config.experiment, store.directory)

    ctx = None
    result = None
    try:
        ctx = EXPERIMENT_RUNNERS[config.experiment](config, store)
        result = CheckExecutor().run_checks(config.experiment, ctx)
        if ctx.cone_samples:
            store.write_csv("cones.csv", CONE_COLUMNS, ctx.cone_samples)
        exit_code = EXIT_OK if result.success else EXIT_VERDICT_FAILED
        summary = _summary_json(config, result, ctx)
    except LabError as e:
        logger.error("实验中止 (%s): %s", type(e).__name__, e)
        summary = _summary_json(config, result, ctx)
        summary["aborted"] = {
            "type": type(e).__name__,
            "message": str(e),
            "step_index": getattr(e, "step_index", None),
            "issues": [i.to_dict() for i in getattr(e, "issues", [])],
        }
        exit_code = e.exit_code
    summary["exit_code"] = exit_code

    store.write_json("summary.json", summary)
    if config.output.report and result is not None:
        builder = ReportBuilder()
        md = builder.build_markdown(config.experiment, result, summary["constants"], store.written())
        store.write_text("report.md", md)
        store.write_text("report.html", builder.render_html(md))
    store.write_manifest()
    logger.info("实验 %s 结束，退出码 %d", config.experiment, exit_code)
    return exit_code
