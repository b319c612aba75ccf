#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
pytest配置文件
"""

import shutil
import tempfile
import textwrap
from pathlib import Path

import numpy as np
import pytest

from softdecoder.code_model import CodeSpec
from softdecoder.measurement_model import SoftOutcomes, separation_for_soft_rate, symmetric_gaussian_model
from softdecoder.noise_model import NoiseParams


@pytest.fixture
def temp_dir():
    """创建临时目录的fixture"""
    temp_path = tempfile.mkdtemp()
    yield temp_path
    shutil.rmtree(temp_path)


@pytest.fixture
def small_spec():
    """d=3, T=2 的最小常用实例"""
    return CodeSpec(distance=3, rounds=2)


@pytest.fixture
def desk_noise():
    """桌面规模噪声：CX 0.5%，硬翻转 1%，平均软翻转 2%"""
    return NoiseParams(p_cx=0.005, p_1q=0.001, idle_us=1.0, p_h=0.01, p_s_mean=0.02)


@pytest.fixture
def gaussian_model():
    """平均软翻转概率 2% 的对称高斯读出模型，带泄漏态"""
    return symmetric_gaussian_model(separation_for_soft_rate(0.02), 1.0)


def make_soft(p_soft, leaked=None):
    """由软翻转概率数组构造 SoftOutcomes（IQ 点与判别结果置零）"""
    p_soft = np.asarray(p_soft, dtype=float)
    leaked = np.zeros(p_soft.shape, dtype=np.uint8) if leaked is None else np.asarray(leaked, dtype=np.uint8)
    return SoftOutcomes(np.zeros(p_soft.shape + (2,)), np.zeros(p_soft.shape, dtype=np.uint8), p_soft, leaked)


@pytest.fixture
def soft_factory():
    return make_soft


CONFIG_TEMPLATE = """
[code]
distance = {distance}
rounds = {rounds}
basis = Z
logical_state = plus

[experiment]
shots = {shots}
seed = 7
modes = {modes}
sub_distances = {sub_distances}
truncation_bits = {truncation_bits}
confidence = 0.68
workers = 1

[noise]
p_cx = 0.01
p_1q = 0.002
idle_us = 1.0
p_h = 0.02
p_s_mean = 0.03

[readout]
separation = {separation}
sigma = 1.0
"""


@pytest.fixture
def write_config(temp_dir):
    """写出实验配置文件并返回路径"""
    def write(name="experiment.ini", distance=3, rounds=2, shots=20,
              modes="hard_calibrated, hard_data_informed, soft", sub_distances="",
              truncation_bits="", separation=None):
        separation = separation if separation is not None else separation_for_soft_rate(0.03)
        text = CONFIG_TEMPLATE.format(distance=distance, rounds=rounds, shots=shots, modes=modes,
                                      sub_distances=sub_distances, truncation_bits=truncation_bits,
                                      separation=repr(separation))
        path = Path(temp_dir) / name
        path.write_text(textwrap.dedent(text), encoding="utf-8")
        return path
    return write
