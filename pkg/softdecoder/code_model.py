"""
重复码实验模块

定义码参数、无复位测量修正、探测器计算以及距离子采样，
并提供测量记录的文本/二进制读写。
"""

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import BoundsError, DimensionError, ParseError

RECORD_MAGIC = b"SDREC001"
_RECORD_HEADER = struct.Struct("<8sIII")


class Basis(str, Enum):
    """编码基"""
    Z = "Z"
    X = "X"


class LogicalState(str, Enum):
    """制备的逻辑本征态"""
    PLUS = "plus"
    MINUS = "minus"


class ResetPolicy(str, Enum):
    """辅助比特复位策略（只支持无复位）"""
    NO_RESET = "no_reset"


class CodeSpec(BaseModel):
    """重复码实验定义"""
    model_config = ConfigDict(frozen=True)

    distance: int = Field(ge=2)
    rounds: int = Field(ge=1)
    basis: Basis = Basis.Z
    logical_state: LogicalState = LogicalState.PLUS
    reset_policy: ResetPolicy = ResetPolicy.NO_RESET

    @property
    def n_data(self) -> int:
        return self.distance

    @property
    def n_ancilla(self) -> int:
        return self.distance - 1

    @property
    def n_qubits(self) -> int:
        return 2 * self.distance - 1

    @property
    def logical_value(self) -> int:
        """逻辑态对应的比特值，折叠进 Pauli 帧"""
        return 1 if self.logical_state == LogicalState.MINUS else 0

    @property
    def ancilla_shape(self) -> Tuple[int, int]:
        return (self.rounds, self.distance - 1)

    @property
    def detector_shape(self) -> Tuple[int, int]:
        return (self.rounds + 1, self.distance - 1)

    @property
    def bits_per_shot(self) -> int:
        return self.rounds * (self.distance - 1) + self.distance


@dataclass(frozen=True)
class OutcomeRecord:
    """单次实验的二值测量记录"""
    raw_ancilla: np.ndarray
    final_data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "raw_ancilla", np.asarray(self.raw_ancilla, dtype=np.uint8))
        object.__setattr__(self, "final_data", np.asarray(self.final_data, dtype=np.uint8))

    def check(self, spec: CodeSpec) -> None:
        if self.raw_ancilla.shape != spec.ancilla_shape:
            raise DimensionError(
                f"辅助比特记录形状 {self.raw_ancilla.shape} 与码参数 {spec.ancilla_shape} 不一致"
            )
        if self.final_data.shape != (spec.distance,):
            raise DimensionError(
                f"数据比特读出长度 {self.final_data.shape} 与码距 {spec.distance} 不一致"
            )

    def bits(self) -> np.ndarray:
        """按行展开：先辅助比特 T·(d-1) 位，再数据比特 d 位"""
        return np.concatenate([self.raw_ancilla.ravel(), self.final_data])

    @classmethod
    def from_bits(cls, bits: np.ndarray, spec: CodeSpec) -> "OutcomeRecord":
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.shape != (spec.bits_per_shot,):
            raise DimensionError(f"每次实验应有 {spec.bits_per_shot} 位，实际 {bits.size} 位")
        n_anc = spec.rounds * (spec.distance - 1)
        return cls(bits[:n_anc].reshape(spec.ancilla_shape), bits[n_anc:])

    def __xor__(self, other: "OutcomeRecord") -> "OutcomeRecord":
        return OutcomeRecord(self.raw_ancilla ^ other.raw_ancilla, self.final_data ^ other.final_data)


@dataclass(frozen=True)
class SyndromeMatrix:
    """探测器矩阵，形状 (T+1) × (d-1)"""
    detectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "detectors", np.asarray(self.detectors, dtype=np.uint8))

    @property
    def n_events(self) -> int:
        return int(self.detectors.sum())

    def events(self) -> List[Tuple[int, int]]:
        """返回 (stabilizer a, round t) 列表，均为 1 起始"""
        rows, cols = np.nonzero(self.detectors)
        return [(int(c) + 1, int(r) + 1) for r, c in zip(rows, cols)]

    @classmethod
    def from_text(cls, text: str, spec: CodeSpec) -> "SyndromeMatrix":
        """解析 '01/00/10' 形式：每行一段，共 T+1 段，每段 d-1 位"""
        rows = [row.strip() for row in text.strip().split("/")]
        n_rows, n_cols = spec.detector_shape
        if len(rows) != n_rows or any(len(row) != n_cols for row in rows):
            raise DimensionError(f"综合征应为 {n_rows} 段、每段 {n_cols} 位，实际 {[len(r) for r in rows]}")
        if any(set(row) - {"0", "1"} for row in rows):
            raise ParseError(1, "综合征只允许 '0'、'1' 和 '/'")
        return cls(np.array([[int(c) for c in row] for row in rows], dtype=np.uint8))


def correct_no_reset(raw_ancilla: np.ndarray, spec: Optional[CodeSpec] = None) -> np.ndarray:
    """无复位修正：m_t = raw_t XOR raw_{t-1}，raw_0 取全零"""
    raw = np.asarray(raw_ancilla, dtype=np.uint8)
    if raw.ndim != 2:
        raise DimensionError(f"辅助比特记录应为二维矩阵，实际维数 {raw.ndim}")
    if spec is not None and raw.shape != spec.ancilla_shape:
        raise DimensionError(f"辅助比特记录形状 {raw.shape} 与码参数 {spec.ancilla_shape} 不一致")
    corrected = raw.copy()
    corrected[1:] ^= raw[:-1]
    return corrected


def compute_detectors(record: OutcomeRecord, spec: CodeSpec) -> SyndromeMatrix:
    """由测量记录计算探测器，最后一行由数据比特读出合成"""
    record.check(spec)
    corrected = correct_no_reset(record.raw_ancilla, spec)
    detectors = np.empty(spec.detector_shape, dtype=np.uint8)
    # 参考奇偶恒为 0，逻辑态符号在 Pauli 帧中处理
    detectors[0] = corrected[0]
    detectors[1:spec.rounds] = corrected[1:] ^ corrected[:-1]
    final_parity = record.final_data[:-1] ^ record.final_data[1:]
    detectors[spec.rounds] = final_parity ^ corrected[-1]
    return SyndromeMatrix(detectors)


def _check_window(spec: CodeSpec, sub_distance: int, offset: int) -> None:
    if not 2 <= sub_distance <= spec.distance:
        raise BoundsError(f"子码距 {sub_distance} 不在 [2, {spec.distance}] 范围内")
    if not 0 <= offset <= spec.distance - sub_distance:
        raise BoundsError(f"偏移 {offset} 不在 [0, {spec.distance - sub_distance}] 范围内")


def subsample(record: OutcomeRecord, spec: CodeSpec, sub_distance: int,
              offset: int) -> Tuple[OutcomeRecord, CodeSpec]:
    """截取从 offset 开始的 d_s 个数据比特及其间的 d_s-1 个辅助比特"""
    record.check(spec)
    _check_window(spec, sub_distance, offset)
    window = OutcomeRecord(
        record.raw_ancilla[:, offset:offset + sub_distance - 1],
        record.final_data[offset:offset + sub_distance],
    )
    return window, spec.model_copy(update={"distance": sub_distance})


def subsample_windows(spec: CodeSpec, sub_distance: int) -> List[int]:
    """所有合法偏移，共 d - d_s + 1 个"""
    _check_window(spec, sub_distance, 0)
    return list(range(spec.distance - sub_distance + 1))


def write_records_text(path: Union[str, Path], records: List[OutcomeRecord], spec: CodeSpec) -> None:
    """每行一次实验，'0'/'1' 字符"""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# d={spec.distance} T={spec.rounds}\n")
        for record in records:
            record.check(spec)
            f.write("".join("1" if b else "0" for b in record.bits()) + "\n")


def iter_records_text(path: Union[str, Path], spec: CodeSpec) -> Iterator[OutcomeRecord]:
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if set(line) - {"0", "1"}:
                raise ParseError(line_no, "只允许 '0' 和 '1' 字符")
            if len(line) != spec.bits_per_shot:
                raise ParseError(line_no, f"应有 {spec.bits_per_shot} 位，实际 {len(line)} 位")
            bits = np.frombuffer(line.encode("ascii"), dtype=np.uint8) - ord("0")
            yield OutcomeRecord.from_bits(bits, spec)


def read_records_text(path: Union[str, Path], spec: CodeSpec) -> List[OutcomeRecord]:
    return list(iter_records_text(path, spec))


def write_records_binary(path: Union[str, Path], records: List[OutcomeRecord], spec: CodeSpec) -> None:
    """打包二进制格式：魔数、d、T、实验数，随后每次实验 packbits 后的字节"""
    with open(path, "wb") as f:
        f.write(_RECORD_HEADER.pack(RECORD_MAGIC, spec.distance, spec.rounds, len(records)))
        for record in records:
            record.check(spec)
            f.write(np.packbits(record.bits()).tobytes())


def read_records_binary(path: Union[str, Path]) -> Tuple[Tuple[int, int], List[OutcomeRecord]]:
    """读取二进制记录，返回 ((d, T), records)"""
    data = Path(path).read_bytes()
    if len(data) < _RECORD_HEADER.size:
        raise ParseError(1, "文件过短，缺少文件头")
    magic, distance, rounds, n_shots = _RECORD_HEADER.unpack_from(data)
    if magic != RECORD_MAGIC:
        raise ParseError(1, f"魔数不匹配: {magic!r}")
    spec = CodeSpec(distance=distance, rounds=rounds)
    n_bytes = (spec.bits_per_shot + 7) // 8
    body = np.frombuffer(data, dtype=np.uint8, offset=_RECORD_HEADER.size)
    if body.size != n_bytes * n_shots:
        raise ParseError(1, f"数据长度 {body.size} 与文件头声明的 {n_shots} 次实验不符")
    bits = np.unpackbits(body.reshape(n_shots, n_bytes), axis=1)[:, :spec.bits_per_shot]
    return (distance, rounds), [OutcomeRecord.from_bits(row, spec) for row in bits]
