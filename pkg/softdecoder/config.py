"""
配置管理模块
"""

import configparser
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .code_model import Basis, CodeSpec, LogicalState
from .errors import ConfigValidationError
from .measurement_model import ReadoutModel, load_readout_model, symmetric_gaussian_model
from .noise_model import NOISE_FIELDS, NoiseParams, load_noise, noise_from_ini
from .sampler import DecoderMode

# 加载环境变量
load_dotenv()


class RuntimeSettings(BaseModel):
    """运行时设置，来自环境变量"""
    workers: int = Field(1, ge=1)
    bootstrap: int = Field(1000, ge=10)

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        try:
            return cls(
                workers=int(os.getenv("SOFTDECODER_WORKERS", str(os.cpu_count() or 1))),
                bootstrap=int(os.getenv("SOFTDECODER_BOOTSTRAP", "1000")),
            )
        except (ValueError, ValidationError) as exc:
            raise ConfigValidationError("environment", str(exc))


class ReadoutSettings(BaseModel):
    """读出模型：网格模型文件，或内联的对称高斯参数"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    path: Optional[str] = None
    separation: Optional[float] = Field(None, ge=0.0)
    sigma: float = Field(1.0, gt=0.0)
    prior0: float = Field(0.5, ge=0.0, le=1.0)
    leakage: bool = True
    outlier_fraction: float = Field(0.01, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_source(self) -> "ReadoutSettings":
        if (self.path is None) == (self.separation is None):
            raise ValueError("必须且只能给出 path 或 separation 之一")
        if self.path is not None and not Path(self.path).is_file():
            raise ValueError(f"读出模型文件不存在: {self.path}")
        return self

    def build(self) -> ReadoutModel:
        if self.path is not None:
            return load_readout_model(self.path)
        return symmetric_gaussian_model(self.separation, self.sigma, (self.prior0, 1.0 - self.prior0),
                                        leakage=self.leakage, outlier_fraction=self.outlier_fraction)


class ExperimentConfig(BaseModel):
    """实验配置"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    distance: int = Field(ge=2)
    rounds: int = Field(ge=1)
    basis: Basis = Basis.Z
    logical_state: LogicalState = LogicalState.PLUS
    shots: int = Field(ge=1)
    seed: int = Field(ge=0)
    modes: List[DecoderMode] = Field(min_length=1)
    sub_distances: List[int] = []
    truncation_bits: List[int] = []
    rounds_list: List[int] = []
    confidence: float = Field(0.68, gt=0.0, lt=1.0)
    workers: Optional[int] = Field(None, ge=1)
    noise_path: Optional[str] = None
    noise: Optional[NoiseParams] = None
    readout: ReadoutSettings

    @field_validator("truncation_bits")
    @classmethod
    def _check_bits(cls, bits: List[int]) -> List[int]:
        for b in bits:
            if not 1 <= b <= 64:
                raise ValueError(f"截断位数 {b} 不在 [1, 64] 内")
        return bits

    @field_validator("rounds_list")
    @classmethod
    def _check_rounds(cls, rounds: List[int]) -> List[int]:
        if any(t < 1 for t in rounds):
            raise ValueError("轮数必须至少为 1")
        return rounds

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        for ds in self.sub_distances:
            if not 2 <= ds <= self.distance:
                raise ValueError(f"子码距 {ds} 不在 [2, {self.distance}] 内")
        if (self.noise_path is None) == (self.noise is None):
            raise ValueError("噪声参数必须且只能通过 path 或内联键给出")
        if self.noise_path is not None and not Path(self.noise_path).is_file():
            raise ValueError(f"噪声文件不存在: {self.noise_path}")
        return self

    @property
    def effective_sub_distances(self) -> List[int]:
        return sorted(set(self.sub_distances)) or [self.distance]

    @property
    def effective_rounds(self) -> List[int]:
        return list(self.rounds_list) or [self.rounds]

    def code_spec(self, rounds: Optional[int] = None) -> CodeSpec:
        return CodeSpec(distance=self.distance, rounds=rounds or self.rounds,
                        basis=self.basis, logical_state=self.logical_state)

    def noise_params(self) -> NoiseParams:
        return self.noise if self.noise is not None else load_noise(self.noise_path)

    def worker_count(self, runtime: Optional[RuntimeSettings] = None) -> int:
        """显式配置优先于环境变量"""
        if self.workers is not None:
            return self.workers
        return (runtime or RuntimeSettings.from_env()).workers

    def to_ini(self) -> str:
        """输出等价的 INI 文本，重新解析得到相同配置"""
        parser = configparser.ConfigParser()
        parser["code"] = {
            "distance": str(self.distance),
            "rounds": str(self.rounds),
            "basis": self.basis.value,
            "logical_state": self.logical_state.value,
        }
        experiment = {
            "shots": str(self.shots),
            "seed": str(self.seed),
            "modes": ", ".join(m.value for m in self.modes),
            "sub_distances": ", ".join(str(v) for v in self.sub_distances),
            "truncation_bits": ", ".join(str(v) for v in self.truncation_bits),
            "rounds_list": ", ".join(str(v) for v in self.rounds_list),
            "confidence": repr(self.confidence),
        }
        if self.workers is not None:
            experiment["workers"] = str(self.workers)
        parser["experiment"] = experiment
        if self.noise_path is not None:
            parser["noise"] = {"path": self.noise_path}
        else:
            parser["noise"] = {key: repr(getattr(self.noise, key)) for key in NOISE_FIELDS}
        readout = self.readout.model_dump(exclude_none=True)
        parser["readout"] = {key: str(value) if not isinstance(value, float) else repr(value)
                             for key, value in readout.items()}
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{key} = {value}" for key, value in parser[section].items())
            lines.append("")
        return "\n".join(lines)


def _split_list(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _first_error(exc: ValidationError) -> ConfigValidationError:
    first = exc.errors()[0]
    field = ".".join(str(part) for part in first["loc"]) or "config"
    return ConfigValidationError(field, first["msg"])


def config_from_parser(parser: configparser.ConfigParser, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """由 [code] [experiment] [noise] [readout] 小节构造实验配置"""
    for section in ("code", "experiment", "noise", "readout"):
        if not parser.has_section(section):
            raise ConfigValidationError(section, "缺少该小节")

    def resolve(path: str) -> str:
        p = Path(path)
        return str(p if p.is_absolute() or base_dir is None else base_dir / p)

    values: Dict[str, Any] = dict(parser["code"])
    experiment = dict(parser["experiment"])
    for key in ("modes", "sub_distances", "truncation_bits", "rounds_list"):
        if key in experiment:
            items = _split_list(experiment.pop(key))
            if key != "modes":
                try:
                    values[key] = [int(v) for v in items]
                except ValueError:
                    raise ConfigValidationError(f"experiment.{key}", "必须是逗号分隔的整数")
            else:
                values[key] = items
    values.update(experiment)

    noise_section = dict(parser["noise"])
    if "path" in noise_section:
        values["noise_path"] = resolve(noise_section.pop("path"))
        if noise_section:
            raise ConfigValidationError("noise", "给出 path 时不能再写内联参数")
    else:
        values["noise"] = noise_from_ini(parser, "noise")

    readout = dict(parser["readout"])
    if "path" in readout:
        readout["path"] = resolve(readout["path"])
    values["readout"] = readout
    try:
        return ExperimentConfig(**values)
    except ValidationError as exc:
        raise _first_error(exc)


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    path = Path(path)
    if not path.is_file():
        raise ConfigValidationError("config", f"配置文件不存在: {path}")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigValidationError("config", str(exc))
    return config_from_parser(parser, path.parent)


def parse_experiment_config(text: str, base_dir: Optional[Path] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigValidationError("config", str(exc))
    return config_from_parser(parser, base_dir)
