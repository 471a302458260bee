#!/usr/bin/env python3
"""DiracLab - 1+1 维三次非线性 Dirac 系统实验入口"""
import argparse
import logging
import os
import sys
from typing import List, Optional

# 确保项目根目录在路径中
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import EXIT_CONFIG_ERROR, VERSION
from core.errors import ConfigError
from core.run_config import EXPERIMENTS, load_config
from core.run_store import LOG_FILE
from core.runner import dispatch, resolve_output_dir

logger = logging.getLogger("dirac_lab")

LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"


def setup_logging(output_dir: Optional[str] = None, level: int = logging.INFO) -> None:
    """标准输出 + 运行目录下的 run.log"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(output_dir, LOG_FILE), mode="w", encoding="utf-8"))
    logging.basicConfig(
        level=level,
        format=LOG_FORMAT,
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=handlers,
        force=True,
    )


def shutdown_logging() -> None:
    """关闭日志处理器，释放 run.log"""
    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        handler.close()
        root_logger.removeHandler(handler)


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed 必须是 0 到 2^64-1 之间的整数: {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dirac-lab", description="三次非线性 Dirac 系统的数值实验与不等式校验")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("command", choices=EXPERIMENTS, help="实验类型")
    parser.add_argument("--config", "-f", required=True, help="YAML 配置文件")
    parser.add_argument("--out", "-o", default=None, help="输出目录（覆盖 output.directory）")
    parser.add_argument("--seed", type=_seed, default=None, help="随机种子（覆盖配置中的 seed）")
    parser.add_argument("--verbose", "-v", action="store_true", help="输出 DEBUG 日志")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    setup_logging(None, level)

    try:
        config = load_config(args.config, args.command)
    except ConfigError as e:
        for issue in e.issues:
            logger.error("配置错误 %s", issue)
        shutdown_logging()
        return EXIT_CONFIG_ERROR
    if args.seed is not None:
        config = config.with_seed(args.seed)

    out_dir = resolve_output_dir(config, args.out)
    setup_logging(out_dir, level)
    try:
        return dispatch(config, out_dir)
    finally:
        shutdown_logging()


if __name__ == "__main__":
    sys.exit(main())
