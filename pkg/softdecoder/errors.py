"""
异常定义模块

每个异常类带有 CLI 使用的退出码：2 配置校验错误，3 数据错误，4 内部不变量被破坏。
"""


class SoftDecoderError(Exception):
    """软信息解码器所有错误的基类"""

    exit_code = 4


class ConfigValidationError(SoftDecoderError, ValueError):
    """配置校验失败，消息中带字段名"""

    exit_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"配置项 '{field}' 无效: {message}")


class DataError(SoftDecoderError, ValueError):
    """输入数据错误"""

    exit_code = 3


class DimensionError(DataError):
    """数组形状与码参数不一致"""


class BoundsError(DataError):
    """索引或窗口越界"""


class DomainError(DataError):
    """参数超出定义域"""


class EmptyCalibrationError(DataError):
    """标定计数为空"""


class InsufficientDataError(DataError):
    """数据量不足"""


class DegenerateDataError(DataError):
    """数据退化（例如方差为零）"""


class CoverageError(DataError):
    """数值积分网格没有覆盖足够的概率质量"""


class SaturationError(DataError):
    """逻辑错误率达到随机水平，无法反解"""


class UndefinedRatioError(DataError):
    """比值分母为零"""


class RefusalError(DataError):
    """请求规模超出穷举上限"""


class ConstructionError(DataError):
    """解码图构造失败（缺少边概率）"""


class ParseError(DataError):
    """文件解析错误，带行号"""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"第 {line} 行: {message}")


class InternalInvariantError(SoftDecoderError, RuntimeError):
    """内部不变量被破坏"""

    exit_code = 4
