"""
软信息重复码解码器
================

利用读出 IQ 软信息给匹配解码图的时间边动态加权的重复码解码工具。

主要功能：
- 双测量标定与读出密度拟合
- 含软信息的电路级噪声模拟
- 最小权完美匹配解码
- 逻辑错误率、Λ 拟合与截断精度分析
"""

from .code_model import Basis, CodeSpec, LogicalState
from .config import ExperimentConfig, load_experiment_config
from .experiment import Calibrator, ExperimentRunner
from .matching_decoder import MatchingDecoder
from .noise_model import NoiseParams
from .sampler import DecoderMode

__version__ = "1.0.0"

__all__ = [
    "Basis",
    "CodeSpec",
    "LogicalState",
    "ExperimentConfig",
    "load_experiment_config",
    "Calibrator",
    "ExperimentRunner",
    "MatchingDecoder",
    "NoiseParams",
    "DecoderMode",
]
