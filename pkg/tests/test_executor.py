import pytest

import core.checks  # noqa: F401  内置校验必须先于临时校验注册
from core.executor import CheckExecutor, Status, Verdict, VerdictSummary, register_check, registered_checks
from core.report import ReportBuilder


@pytest.fixture
def scratch_checks():
    """在专用实验类型下注册临时校验"""
    from core import executor

    before = list(executor._REGISTRY)

    @register_check("scratch-a", "临时校验 A", experiments=("scratch",))
    def check_a(outcome):
        return [
            Verdict("scratch-a", "A", Status.PASS, worst_margin=0.5, tolerance=0.0),
            Verdict("scratch-a", "A 重复", Status.FAIL),
        ]

    @register_check("scratch-b", "临时校验 B", experiments=("scratch",))
    def check_b(outcome):
        return Verdict("scratch-b", "B", Status.FAIL if outcome == "bad" else Status.NOT_APPLICABLE,
                       detail="x | y")

    @register_check("scratch-c", "临时校验 C", experiments=("scratch",))
    def check_c(outcome):
        return None

    yield
    executor._REGISTRY[:] = before


def test_registry_filters_by_experiment(scratch_checks):
    assert [s.code for s in registered_checks("scratch")] == ["scratch-a", "scratch-b", "scratch-c"]


def test_duplicates_are_dropped_and_counts_kept(scratch_checks):
    result = CheckExecutor().run_checks("scratch", "ok")
    assert [v.code for v in result.verdicts] == ["scratch-a", "scratch-b"]
    assert result.success
    assert result.counts() == {"pass": 1, "fail": 0, "not_applicable": 1, "info": 0}
    assert "1 项不适用" in result.summary


def test_failure_marks_summary(scratch_checks):
    result = CheckExecutor().run_checks("scratch", "bad")
    assert not result.success
    assert "scratch-b" in result.summary
    assert result.tolerances() == {"scratch-a": 0.0, "scratch-b": None}


def test_builtin_checks_are_registered():
    CheckExecutor().run_checks("scratch-none", None)
    codes = {s.code for s in registered_checks("run")}
    assert {"charge", "bony-budget", "cone-integrals", "linf-envelope"} <= codes
    assert "A2-identity" in {s.code for s in registered_checks("oracle")}


def test_report_renders_table():
    summary = VerdictSummary(True, [Verdict("charge", "电荷守恒", Status.PASS, "漂移 | 1e-15",
                                            worst_margin=1e-10, tolerance=1e-10)], "全部通过")
    builder = ReportBuilder()
    md = builder.build_markdown("run", summary, {"c": 2.0}, ["functionals.csv"])
    assert "| `charge` | 电荷守恒 | 通过 | 1.000e-10 | 1.000e-10 | 漂移 \\| 1e-15 |" in md
    assert "- `functionals.csv`" in md
    html = builder.render_html(md)
    assert "<table>" in html
    assert html.startswith("<!DOCTYPE html>")
