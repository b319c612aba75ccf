"""
噪声模型模块

电路级错误概率、由标定数据估计软/硬翻转概率，
以及按奇偶合成各条解码图边的概率。
"""

import configparser
import math
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .code_model import Basis, CodeSpec
from .errors import ConfigValidationError, DomainError, EmptyCalibrationError, ParseError

# 概率下限，保证权重有限（约 27.63）
P_MIN = 1e-12

NOISE_FIELDS = ("p_cx", "p_1q", "t1_us", "t2_us", "idle_us", "p_h", "p_s_mean", "p_leak", "leak_ramp")


class NoiseParams(BaseModel):
    """电路级噪声参数"""
    model_config = ConfigDict(frozen=True)

    p_cx: float = Field(0.0, ge=0.0, le=0.5)
    p_1q: float = Field(0.0, ge=0.0, le=0.5)
    t1_us: float = Field(100.0, gt=0.0)
    t2_us: float = Field(100.0, gt=0.0)
    idle_us: float = Field(0.0, ge=0.0)
    p_h: float = Field(0.0, ge=0.0, le=0.5)
    p_s_mean: float = Field(0.0, ge=0.0, le=0.5)
    p_leak: float = Field(0.0, ge=0.0, le=0.5)
    leak_ramp: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_coherence(self) -> "NoiseParams":
        if self.t2_us > 2.0 * self.t1_us:
            raise ValueError(f"t2_us={self.t2_us} 超过 2·t1_us={2.0 * self.t1_us}")
        return self

    def idle_flip_prob(self, basis: Basis = Basis.Z) -> float:
        """数据比特每轮空闲时翻转编码基的概率

        X 基实验沿用 Z 基电路，只把空闲翻转换成 p_Z + p_Y。
        """
        p_x, p_y, p_z = idling_probs(self.t1_us, self.t2_us, self.idle_us)
        if basis == Basis.Z:
            return p_x + p_y
        return p_z + p_y

    def leak_prob(self, round_index: int) -> float:
        """第 round_index 次测量（1 起始，T+1 为终读出）的泄漏注入概率"""
        return min(1.0, self.p_leak + self.leak_ramp * (round_index - 1))


class OutcomePairCounts(BaseModel):
    """双测量结果计数 N_00, N_01, N_10, N_11"""
    n00: int = Field(0, ge=0)
    n01: int = Field(0, ge=0)
    n10: int = Field(0, ge=0)
    n11: int = Field(0, ge=0)

    @property
    def total(self) -> int:
        return self.n00 + self.n01 + self.n10 + self.n11

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.n00, self.n01, self.n10, self.n11)


class CalibrationCounts(BaseModel):
    """单个比特在两种制备态下的标定计数"""
    qubit: str
    prepared0: OutcomePairCounts = OutcomePairCounts()
    prepared1: OutcomePairCounts = OutcomePairCounts()

    def for_state(self, prepared: int) -> OutcomePairCounts:
        if prepared not in (0, 1):
            raise DomainError(f"制备态必须是 0 或 1，实际 {prepared}")
        return self.prepared1 if prepared == 1 else self.prepared0


def idling_probs(t1_us: float, t2_us: float, idle_us: float) -> Tuple[float, float, float]:
    """空闲错误概率 (p_X, p_Y, p_Z)"""
    if t1_us <= 0 or t2_us <= 0:
        raise DomainError(f"T1、T2 必须为正，实际 T1={t1_us}, T2={t2_us}")
    if idle_us < 0:
        raise DomainError(f"空闲时间不能为负，实际 {idle_us}")
    relax = -math.expm1(-idle_us / t1_us)
    dephase = -math.expm1(-idle_us / t2_us)
    p_x = relax / 4.0
    p_z = dephase / 2.0 - relax / 4.0
    upper = math.nextafter(1.0, 0.0)
    clamp = lambda v: min(max(v, 0.0), upper)  # noqa: E731
    return clamp(p_x), clamp(p_x), clamp(p_z)


def estimate_flip_probs(counts: Union[CalibrationCounts, OutcomePairCounts],
                        prepared: int) -> Tuple[float, float]:
    """由双测量计数估计第一次测量的 (p_s, p_h)"""
    if isinstance(counts, CalibrationCounts):
        counts = counts.for_state(prepared)
    if prepared not in (0, 1):
        raise DomainError(f"制备态必须是 0 或 1，实际 {prepared}")
    total = counts.total
    if total == 0:
        raise EmptyCalibrationError(f"制备态 |{prepared}⟩ 的标定计数为空")
    if prepared == 1:
        return counts.n01 / total, counts.n00 / total
    return counts.n10 / total, counts.n11 / total


def combine_odd_parity(probs: Iterable[float]) -> float:
    """奇数个独立事件发生的概率"""
    probs = list(probs)
    if len(probs) == 1:
        return float(probs[0])
    product = 1.0
    for p in probs:
        product *= 1.0 - 2.0 * p
    return 0.5 * (1.0 - product)


def combine_odd_parity_arrays(*arrays: np.ndarray) -> np.ndarray:
    """逐元素的 combine_odd_parity，运算顺序与标量版本一致"""
    if len(arrays) == 1:
        return np.asarray(arrays[0], dtype=float)
    product = np.ones(np.broadcast(*arrays).shape)
    for p in arrays:
        product = product * (1.0 - 2.0 * np.asarray(p, dtype=float))
    return 0.5 * (1.0 - product)


def noise_from_calibration(counts_by_qubit: Sequence[CalibrationCounts],
                           base: Optional[NoiseParams] = None) -> NoiseParams:
    """对链上所有比特和两种制备态的 (p_s, p_h) 取平均"""
    if not counts_by_qubit:
        raise EmptyCalibrationError("没有任何比特的标定计数")
    soft, hard = [], []
    for counts in counts_by_qubit:
        for prepared in (0, 1):
            p_s, p_h = estimate_flip_probs(counts, prepared)
            soft.append(p_s)
            hard.append(p_h)
    base = base or NoiseParams()
    return base.model_copy(update={
        "p_s_mean": math.fsum(soft) / len(soft),
        "p_h": math.fsum(hard) / len(hard),
    })


# ---------------------------------------------------------------------------
# 电路故障信道
# ---------------------------------------------------------------------------

class FaultStage(str, Enum):
    """电路中的故障位置，按一轮内的时间顺序排列"""
    ENCODE = "encode"
    CX1 = "cx1"
    CX2 = "cx2"
    MEASURE = "measure"
    IDLE = "idle"
    READOUT = "readout"


class FaultOutcome(NamedTuple):
    """信道的一个互斥结果：概率及翻转的数据/辅助比特"""
    probability: float
    data_flips: Tuple[int, ...]
    ancilla_flips: Tuple[int, ...]


class FaultChannel(NamedTuple):
    """一个故障位置上的互斥故障集合"""
    stage: FaultStage
    round: int
    index: int
    outcomes: Tuple[FaultOutcome, ...]


def circuit_fault_channels(spec: CodeSpec, noise: NoiseParams) -> List[FaultChannel]:
    """固定电路的全部故障信道，按电路时间顺序排列

    第一层 CNOT 连接辅助比特 j 与左侧数据比特 j，第二层连接右侧数据比特 j+1；
    两比特去极化在 15 个非平凡 Pauli 中均匀分配，只保留翻转测量基的分量。
    """
    d, rounds = spec.distance, spec.rounds
    p_one = 2.0 / 3.0 * noise.p_1q
    p_gate = 4.0 / 15.0 * noise.p_cx
    p_idle = noise.idle_flip_prob(spec.basis)

    channels = [
        FaultChannel(FaultStage.ENCODE, 0, i, (FaultOutcome(p_one, (i,), ()),))
        for i in range(d)
    ]
    for t in range(1, rounds + 1):
        for stage, shift in ((FaultStage.CX1, 0), (FaultStage.CX2, 1)):
            for j in range(d - 1):
                control = j + shift
                channels.append(FaultChannel(stage, t, j, (
                    FaultOutcome(p_gate, (control,), ()),
                    FaultOutcome(p_gate, (), (j,)),
                    FaultOutcome(p_gate, (control,), (j,)),
                )))
        channels.extend(
            FaultChannel(FaultStage.MEASURE, t, j, (FaultOutcome(noise.p_h, (), (j,)),))
            for j in range(d - 1)
        )
        channels.extend(
            FaultChannel(FaultStage.IDLE, t, i, (FaultOutcome(p_idle, (i,), ()),))
            for i in range(d)
        )
    channels.extend(
        FaultChannel(FaultStage.READOUT, rounds + 1, i, (FaultOutcome(noise.p_h, (i,), ()),))
        for i in range(d)
    )
    return channels


# ---------------------------------------------------------------------------
# 边概率表
# ---------------------------------------------------------------------------

class EdgeKind(str, Enum):
    """解码图边的类型"""
    SPACE = "space"
    TIME1 = "time1"
    TIME2_SOFT = "time2_soft"
    DIAGONAL = "diagonal"
    FINAL_TIME = "final_time"
    FINAL_SPACE = "final_space"


DYNAMIC_KINDS = frozenset({EdgeKind.TIME2_SOFT, EdgeKind.FINAL_TIME, EdgeKind.FINAL_SPACE})


class EdgeKey(NamedTuple):
    """边描述符

    index: space/final_space 为数据比特编号 (0..d-1)，其余为稳定子编号 a (1..d-1)；
    round: 低端点所在的行 (1..T+1)。
    """
    kind: EdgeKind
    index: int
    round: int


class EdgeProbability(NamedTuple):
    """边的总概率以及重加权所需的非软分量

    soft_slot 不为 None 时，软翻转概率插入 hard_parts 的该位置后按奇偶合成。
    """
    probability: float
    hard_parts: Tuple[float, ...] = ()
    soft_slot: Optional[int] = None

    @property
    def is_dynamic(self) -> bool:
        return self.soft_slot is not None

    def with_soft(self, p_soft: float) -> float:
        if self.soft_slot is None:
            return self.probability
        parts = list(self.hard_parts)
        parts.insert(self.soft_slot, p_soft)
        return combine_odd_parity(parts)

    def with_soft_array(self, p_soft: np.ndarray) -> np.ndarray:
        parts: List[Union[float, np.ndarray]] = list(self.hard_parts)
        parts.insert(self.soft_slot, p_soft)
        return combine_odd_parity_arrays(*parts)


class EdgeProbabilityTable(Mapping):
    """边描述符到概率的只读映射"""

    def __init__(self, spec: CodeSpec, entries: Dict[EdgeKey, EdgeProbability]):
        self.spec = spec
        self._entries = MappingProxyType(dict(entries))

    def __getitem__(self, key: EdgeKey) -> EdgeProbability:
        return self._entries[key]

    def __iter__(self) -> Iterator[EdgeKey]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def probability(self, key: EdgeKey) -> float:
        return self._entries[key].probability

    def with_soft_mean(self, p_soft: float) -> "EdgeProbabilityTable":
        """以新的平均软翻转概率重算动态边"""
        return EdgeProbabilityTable(self.spec, {
            key: entry._replace(probability=entry.with_soft(p_soft)) if entry.is_dynamic else entry
            for key, entry in self._entries.items()
        })


def derive_edge_probabilities(spec: CodeSpec, noise: NoiseParams) -> EdgeProbabilityTable:
    """按固定电路解析合成每条边的概率"""
    d, rounds = spec.distance, spec.rounds
    e = 2.0 / 3.0 * noise.p_1q
    q = 4.0 / 15.0 * noise.p_cx
    idle = noise.idle_flip_prob(spec.basis)
    h, s = noise.p_h, noise.p_s_mean
    entries: Dict[EdgeKey, EdgeProbability] = {}

    def static(*parts: float) -> EdgeProbability:
        return EdgeProbability(combine_odd_parity(parts))

    # 空间边：数据比特 i 在第 r 行翻转
    for i in range(d):
        for r in range(1, rounds + 1):
            parts = [e] if r == 1 else [idle]
            if r > 1:
                parts.append(q)  # 上一轮第二层（或边界第一层）控制端故障
            parts.append(q)  # 本轮双比特同时翻转
            entries[EdgeKey(EdgeKind.SPACE, i, r)] = static(*parts)
        p_e = combine_odd_parity([idle, q])
        entries[EdgeKey(EdgeKind.FINAL_SPACE, i, rounds + 1)] = EdgeProbability(
            combine_odd_parity([p_e, s, h]), (p_e, h), 1)

    for a in range(1, d):
        for t in range(1, rounds):
            entries[EdgeKey(EdgeKind.TIME1, a, t)] = static(h, q, q)
            entries[EdgeKey(EdgeKind.TIME2_SOFT, a, t)] = EdgeProbability(s, (), 0)
        hard = combine_odd_parity([h, q, q])
        entries[EdgeKey(EdgeKind.FINAL_TIME, a, rounds)] = EdgeProbability(
            combine_odd_parity([hard, s]), (hard,), 1)

    for a in range(1, d - 1):
        for t in range(1, rounds + 1):
            entries[EdgeKey(EdgeKind.DIAGONAL, a, t)] = static(q, q)

    return EdgeProbabilityTable(spec, entries)


# ---------------------------------------------------------------------------
# INI 文件读写
# ---------------------------------------------------------------------------

def _parse_noise_section(section: configparser.SectionProxy, base: Dict[str, float]) -> NoiseParams:
    values = dict(base)
    for key, raw in section.items():
        if key not in NOISE_FIELDS:
            raise ConfigValidationError(f"{section.name}.{key}", "未知的噪声参数")
        try:
            values[key] = float(raw)
        except ValueError:
            raise ConfigValidationError(f"{section.name}.{key}", f"无法解析为数值: {raw!r}")
    return _validated_noise(values, section.name)


def _validated_noise(values: Dict[str, float], where: str) -> NoiseParams:
    try:
        return NoiseParams(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "model"
        raise ConfigValidationError(f"{where}.{field}", first["msg"])


def noise_from_ini(parser: configparser.ConfigParser, section: str = "chain") -> NoiseParams:
    """从 INI 解析噪声参数；[chain] 优先，否则对 [qubit.*] 小节取平均"""
    if parser.has_section(section):
        return _parse_noise_section(parser[section], {})
    qubit_sections = [name for name in parser.sections() if name.startswith("qubit.")]
    if not qubit_sections:
        raise ConfigValidationError(section, "缺少 [chain] 或 [qubit.<id>] 小节")
    per_qubit = [_parse_noise_section(parser[name], {}) for name in qubit_sections]
    averaged = {
        key: math.fsum(getattr(noise, key) for noise in per_qubit) / len(per_qubit)
        for key in NOISE_FIELDS
    }
    return _validated_noise(averaged, "qubit.*")


def _read_ini(path: Union[str, Path], hint: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ParseError(getattr(exc, "lineno", 1) or 1, str(exc))
    if not read:
        raise ConfigValidationError(hint, f"文件不存在: {path}")
    return parser


def load_noise(path: Union[str, Path]) -> NoiseParams:
    return noise_from_ini(_read_ini(path, "noise.path"))


def load_qubit_noise(path: Union[str, Path]) -> Dict[str, NoiseParams]:
    """读取噪声文件中逐比特的 [qubit.<id>] 小节"""
    parser = _read_ini(path, "noise.path")
    return {
        name[len("qubit."):]: _parse_noise_section(parser[name], {})
        for name in parser.sections() if name.startswith("qubit.")
    }


def save_noise(path: Union[str, Path], noise: NoiseParams,
               per_qubit: Optional[Mapping[str, NoiseParams]] = None) -> None:
    """写出 [chain]，可附带每个比特的 [qubit.<id>] 小节"""
    parser = configparser.ConfigParser()
    parser["chain"] = {key: repr(getattr(noise, key)) for key in NOISE_FIELDS}
    for qubit, params in (per_qubit or {}).items():
        parser[f"qubit.{qubit}"] = {key: repr(getattr(params, key)) for key in NOISE_FIELDS}
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)


def _parse_counts(raw: str, line_hint: str) -> OutcomePairCounts:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 4:
        raise ConfigValidationError(line_hint, "应为 N00, N01, N10, N11 四个整数")
    try:
        n00, n01, n10, n11 = (int(p) for p in parts)
    except ValueError:
        raise ConfigValidationError(line_hint, f"计数必须是整数: {raw!r}")
    try:
        return OutcomePairCounts(n00=n00, n01=n01, n10=n10, n11=n11)
    except ValidationError as exc:
        raise ConfigValidationError(line_hint, exc.errors()[0]["msg"])


def load_calibration_counts(path: Union[str, Path]) -> List[CalibrationCounts]:
    """读取计数文件，每个 [qubit.<id>] 小节含 prepared0/prepared1"""
    parser = _read_ini(path, "counts.path")
    result = []
    for name in parser.sections():
        if not name.startswith("qubit."):
            continue
        section = parser[name]
        result.append(CalibrationCounts(
            qubit=name[len("qubit."):],
            prepared0=_parse_counts(section.get("prepared0", "0,0,0,0"), f"{name}.prepared0"),
            prepared1=_parse_counts(section.get("prepared1", "0,0,0,0"), f"{name}.prepared1"),
        ))
    if not result:
        raise EmptyCalibrationError(f"{path} 中没有 [qubit.<id>] 小节")
    return result


def save_calibration_counts(path: Union[str, Path], counts: Sequence[CalibrationCounts]) -> None:
    parser = configparser.ConfigParser()
    for item in counts:
        parser[f"qubit.{item.qubit}"] = {
            "prepared0": ", ".join(str(n) for n in item.prepared0.as_tuple()),
            "prepared1": ", ".join(str(n) for n in item.prepared1.as_tuple()),
        }
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)
