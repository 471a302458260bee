"""运行目录管理 - CSV/JSON 产物写入与 SHA 清单"""
import csv
import hashlib
import json
import logging
import os
import shutil
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
SUMMARY_FILE = "summary.json"
LOG_FILE = "run.log"
SNAPSHOT_DIR = "snapshots"
SNAPSHOT_COLUMNS = ("x", "re_u", "im_u", "re_v", "im_v")

# 不进入清单的文件（日志带时间戳）
UNTRACKED = {MANIFEST_FILE, LOG_FILE}


def _fmt(value) -> str:
    """浮点数用 repr 保证可往返；numpy 标量先转成 Python 类型"""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _jsonable(obj):
    """把 numpy 类型、元组等转换为 JSON 可序列化的对象"""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunStore:
    """一次运行的输出目录"""

    def __init__(self, directory: str):
        self.directory = os.path.abspath(directory)
        self._written: List[str] = []

    def prepare(self):
        """
        创建输出目录，并清理上一次运行留下的产物

        :raises: ValueError 如果路径存在但不是目录
        """
        if os.path.exists(self.directory) and not os.path.isdir(self.directory):
            raise ValueError(f"输出路径不是目录: {self.directory}")
        os.makedirs(self.directory, exist_ok=True)
        snap = os.path.join(self.directory, SNAPSHOT_DIR)
        if os.path.isdir(snap):
            shutil.rmtree(snap, ignore_errors=True)
        for name in (MANIFEST_FILE, SUMMARY_FILE):
            path = os.path.join(self.directory, name)
            if os.path.exists(path):
                os.remove(path)
        self._written = []

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def _track(self, name: str):
        if name not in self._written:
            self._written.append(name)

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        """写 CSV，浮点数按 repr 输出"""
        path = self.path(name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        self._track(name)
        logger.debug("已写入 %s", name)
        return path

    def write_snapshot(self, field, index: int) -> str:
        return self.write_csv(f"{SNAPSHOT_DIR}/snap_{index:06d}.csv", SNAPSHOT_COLUMNS, field.snapshot_rows())

    def write_json(self, name: str, data: dict) -> str:
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_jsonable(data), f, indent=2, ensure_ascii=False, sort_keys=True)
            f.write("\n")
        self._track(name)
        return path

    def write_text(self, name: str, text: str) -> str:
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        self._track(name)
        return path

    def written(self) -> List[str]:
        return list(self._written)

    def write_manifest(self) -> Dict[str, str]:
        """为本次写入的每个产物记录 sha256（不含时间戳）"""
        files = {name: sha256_file(self.path(name)) for name in sorted(self._written) if name not in UNTRACKED}
        with open(self.path(MANIFEST_FILE), "w", encoding="utf-8") as f:
            json.dump({"files": files}, f, indent=2, ensure_ascii=False, sort_keys=True)
            f.write("\n")
        logger.info("清单已写入: %d 个文件", len(files))
        return files


def load_manifest(directory: str) -> Dict[str, str]:
    path = os.path.join(directory, MANIFEST_FILE)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f).get("files", {})
    except (json.JSONDecodeError, IOError):
        return {}


def verify_manifest(directory: str) -> List[str]:
    """
    对照清单校验产物

    :return: 缺失或哈希不一致的文件列表（空表示一致）
    """
    bad = []
    for name, sha in load_manifest(directory).items():
        path = os.path.join(directory, name)
        if not os.path.exists(path) or sha256_file(path) != sha:
            bad.append(name)
    return bad


def default_run_dir(base: str, experiment: str, tag: Optional[str] = None) -> str:
    """runs/<experiment>[_<tag>]"""
    name = experiment if not tag else f"{experiment}_{tag}"
    return os.path.join(base, name)
