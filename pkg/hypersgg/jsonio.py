"""JSON 读写

输出统一使用规范格式：浮点数固定 17 位有效数字，键顺序按构造顺序，
UTF-8 且不转义非 ASCII 字符。所有文件先写入临时文件再 os.replace，保证原子性。
"""

import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, List, Union

import numpy as np

PathLike = Union[str, Path]


def format_float(value: float) -> str:
    """17 位有效数字的浮点格式，跨平台一致"""
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"JSON 不支持非有限浮点数: {value}")
    text = format(value, ".17g")
    # 保证读回时仍是浮点数
    if "." not in text and "e" not in text and "n" not in text:
        text += ".0"
    return text


def _encode(obj: Any, indent: int, level: int) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()

    pad = "" if indent <= 0 else "\n" + " " * (indent * (level + 1))
    end = "" if indent <= 0 else "\n" + " " * (indent * level)
    sep = "," if indent > 0 else ", "
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_encode(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # 数值/短列表保持单行，便于 diff
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, 0, 0) for v in obj) + "]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in obj]
        return "[" + sep.join(items) + end + "]"
    raise TypeError(f"无法序列化的类型: {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """规范 JSON 文本；indent=0 时输出单行（用于 JSON Lines）"""
    return _encode(obj, indent, 0)


def atomic_write_text(path: PathLike, text: str) -> Path:
    """原子写文本文件：临时文件 + rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path: PathLike, obj: Any) -> Path:
    return atomic_write_text(path, dumps(obj) + "\n")


def write_jsonl(path: PathLike, records: Iterable[Any]) -> Path:
    lines = [dumps(record, indent=0) for record in records]
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def read_jsonl(path: PathLike) -> List[Any]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
