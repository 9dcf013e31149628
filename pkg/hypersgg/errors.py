"""hypersgg 的异常类型

所有数据类错误同时继承 ValueError，调用方可以统一捕获。
"""

from typing import List, Optional


class HyperSGGError(Exception):
    """hypersgg 所有异常的基类"""


class ConfigurationError(HyperSGGError, ValueError):
    """配置错误：词表不一致、转移核形状不匹配、参数越界等"""


class OutOfRangeError(ConfigurationError):
    """配置值超出允许范围（如观测比例 F 不在 (0, 1) 内）；命令行按用法错误处理"""


class ArgumentError(HyperSGGError, ValueError):
    """参数错误：谓词 id 越界、超图中不存在的节点等"""


class AnnotationParseError(HyperSGGError, ValueError):
    """标注文件无法解析（JSON 语法错误或字段缺失）"""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        location = []
        if line is not None:
            location.append(f"第 {line} 行")
        if field is not None:
            location.append(f"字段 {field}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class AnnotationValidationError(HyperSGGError, ValueError):
    """标注违反结构不变量，violations 中列出全部问题"""

    def __init__(self, violations: List[object], source: Optional[str] = None):
        self.violations = list(violations)
        self.source = source
        head = f"{source}: " if source else ""
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"{head}标注校验失败, 共 {len(self.violations)} 处问题:\n{lines}")


class InvariantBreach(HyperSGGError, RuntimeError):
    """内部不变量被破坏（程序缺陷，而不是输入问题）"""
