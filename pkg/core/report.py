"""结论报告 - 从 VerdictSummary 生成 Markdown 与 HTML"""
import logging
from typing import Optional

import markdown

from core.executor import Status, VerdictSummary

logger = logging.getLogger(__name__)

STATUS_LABELS = {
    Status.PASS: "通过",
    Status.FAIL: "失败",
    Status.NOT_APPLICABLE: "不适用",
    Status.INFO: "参考",
}


def _num(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.3e}"


class ReportBuilder:
    """把一次实验的结论渲染为报告"""

    def build_markdown(self, experiment: str, summary: VerdictSummary, constants: Optional[dict] = None,
                       artifacts: Optional[list] = None) -> str:
        """
        生成 Markdown 报告

        :param experiment: 实验类型
        :param summary: 汇总结论
        :param constants: 推导出的常数
        :param artifacts: 产物文件列表
        :return: Markdown 文本
        """
        lines = [f"# 实验报告: {experiment}", "", summary.summary, ""]
        if constants:
            lines += ["## 模型常数", "", "| 常数 | 值 |", "| --- | --- |"]
            for key in sorted(constants):
                lines.append(f"| `{key}` | {constants[key]} |")
            lines.append("")

        lines += ["## 校验结论", "", "| 编号 | 内容 | 状态 | 最差余量 | 容差 | 说明 |",
                  "| --- | --- | --- | --- | --- | --- |"]
        for v in summary.verdicts:
            detail = v.detail.replace("|", "\\|")
            lines.append(f"| `{v.code}` | {v.title} | {STATUS_LABELS[v.status]} | "
                         f"{_num(v.worst_margin)} | {_num(v.tolerance)} | {detail} |")
        lines.append("")

        if artifacts:
            lines += ["## 产物", ""]
            lines += [f"- `{name}`" for name in artifacts]
            lines.append("")
        logger.debug("报告包含 %d 条结论", len(summary.verdicts))
        return "\n".join(lines)

    def render_html(self, md_content: str) -> str:
        """
        将 Markdown 转换为带基础样式的 HTML

        :param md_content: Markdown 内容
        :return: HTML
        """
        html = markdown.markdown(md_content, extensions=["fenced_code", "tables"])
        return f"""<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<style>
    body {{ font-family: -apple-system, BlinkMacSystemFont, 'Segoe UI', Roboto, sans-serif; }}
    code {{ background-color: #f4f4f4; padding: 2px 6px; border-radius: 3px; }}
    table {{ border-collapse: collapse; }}
    th, td {{ border: 1px solid #ddd; padding: 4px 8px; }}
    h1, h2, h3 {{ color: #333; }}
</style>
</head>
<body>
{html}
</body>
</html>
"""
