"""
读出模型模块

IQ 平面上各态的概率密度（高斯或 KDE 网格）、最大似然判别、软翻转概率、
泄漏注入与离群检测、平均软翻转积分以及 b 位概率截断。
"""

import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from rich.console import Console
from scipy.interpolate import RegularGridInterpolator
from scipy.special import expit
from scipy.stats import norm
from sklearn.model_selection import train_test_split
from sklearn.neighbors import KernelDensity

from .errors import (
    CoverageError,
    DegenerateDataError,
    DimensionError,
    DomainError,
    InsufficientDataError,
    ParseError,
)
from .noise_model import P_MIN, OutcomePairCounts

GRID_MAGIC = b"SDGRID01"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<8sIIIddd")
_DENSITY_HEADER = struct.Struct("<IIIdddddd")

DENSITY_FLOOR = 1e-12
MIN_KDE_SAMPLES = 100

stderr_console = Console(stderr=True)
_warned: set = set()


def _warn_once(key: str, message: str) -> None:
    if key not in _warned:
        _warned.add(key)
        stderr_console.print(f"[yellow]⚠️  {message}[/yellow]")


@dataclass(frozen=True)
class IQPoint:
    """IQ 平面上的一个点"""
    i: float
    q: float

    def __post_init__(self):
        if not (math.isfinite(self.i) and math.isfinite(self.q)):
            raise DomainError(f"IQ 坐标必须有限: ({self.i}, {self.q})")

    def as_array(self) -> np.ndarray:
        return np.array([self.i, self.q], dtype=float)


def as_points(points) -> np.ndarray:
    """把 IQPoint 序列或数组统一成 (n, 2) 浮点数组"""
    if isinstance(points, IQPoint):
        return points.as_array()[None, :]
    if len(points) and isinstance(points[0], IQPoint):
        return np.array([[p.i, p.q] for p in points], dtype=float)
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.shape == (2,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DimensionError(f"IQ 点数组形状应为 (n, 2)，实际 {arr.shape}")
    return arr


class StateDensity(ABC):
    """单个态在 IQ 平面上的概率密度"""

    kind: str = ""
    # 数值积分质量的允许偏差
    mass_tolerance: float = 1e-4

    @abstractmethod
    def pdf(self, points: np.ndarray) -> np.ndarray:
        ...

    def logpdf(self, points: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(points))

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        ...

    @abstractmethod
    def bounding_box(self) -> Tuple[float, float, float, float]:
        """(i_min, i_max, q_min, q_max)，覆盖几乎全部概率质量"""

    @abstractmethod
    def hdr_level(self, mass: float) -> float:
        """最高密度区域包含 mass 概率质量时的密度阈值"""

    @property
    @abstractmethod
    def mean(self) -> np.ndarray:
        ...


class GaussianDensity(StateDensity):
    """二维高斯密度"""

    kind = "gaussian"

    def __init__(self, mean: Sequence[float], covariance):
        self._mean = np.asarray(mean, dtype=float).reshape(2)
        self.covariance = np.asarray(covariance, dtype=float).reshape(2, 2)
        if not np.allclose(self.covariance, self.covariance.T):
            raise DomainError("协方差矩阵必须对称")
        try:
            self._chol = np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError:
            raise DomainError("协方差矩阵必须正定")
        self._inv = np.linalg.inv(self.covariance)
        self._norm = 1.0 / (2.0 * math.pi * math.sqrt(np.linalg.det(self.covariance)))

    @property
    def mean(self) -> np.ndarray:
        return self._mean

    def logpdf(self, points: np.ndarray) -> np.ndarray:
        delta = as_points(points) - self._mean
        maha = np.einsum("ni,ij,nj->n", delta, self._inv, delta)
        return math.log(self._norm) - 0.5 * maha

    def pdf(self, points: np.ndarray) -> np.ndarray:
        return np.exp(self.logpdf(points))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self._mean + rng.standard_normal((size, 2)) @ self._chol.T

    def bounding_box(self) -> Tuple[float, float, float, float]:
        half = 9.0 * np.sqrt(np.diag(self.covariance))
        return (self._mean[0] - half[0], self._mean[0] + half[0],
                self._mean[1] - half[1], self._mean[1] + half[1])

    def hdr_level(self, mass: float) -> float:
        # 马氏距离平方服从自由度 2 的卡方分布：P(r² ≤ k) = 1 - exp(-k/2)
        return self._norm * (1.0 - mass)


class GridDensity(StateDensity):
    """规则网格上的密度，双线性插值查找；KDE 拟合结果也以此形式保存"""

    mass_tolerance = 1e-3

    def __init__(self, i_axis: np.ndarray, q_axis: np.ndarray, values: np.ndarray,
                 bandwidth: Optional[Tuple[float, float]] = None, n_samples: int = 0):
        self.i_axis = np.asarray(i_axis, dtype=float)
        self.q_axis = np.asarray(q_axis, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (self.i_axis.size, self.q_axis.size):
            raise DimensionError(f"网格值形状 {values.shape} 与坐标轴不一致")
        if self.i_axis.size < 2 or self.q_axis.size < 2:
            raise DimensionError("网格每个方向至少需要 2 个点")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise DomainError("网格密度必须非负且有限")
        if bandwidth is not None and min(bandwidth) <= 0:
            raise DomainError(f"KDE 带宽必须为正: {bandwidth}")
        self.cell_area = float((self.i_axis[1] - self.i_axis[0]) * (self.q_axis[1] - self.q_axis[0]))
        total = values.sum() * self.cell_area
        if total <= 0:
            raise DegenerateDataError("网格密度总质量为零")
        self.values = values / total
        self.bandwidth = bandwidth
        self.n_samples = n_samples
        self.floor = DENSITY_FLOOR * float(self.values.max())
        self._interp = RegularGridInterpolator(
            (self.i_axis, self.q_axis), self.values,
            method="linear", bounds_error=False, fill_value=0.0,
        )

    @property
    def kind(self) -> str:
        return "kde" if self.bandwidth is not None else "grid"

    @property
    def mean(self) -> np.ndarray:
        weights = self.values * self.cell_area
        return np.array([
            float((weights.sum(axis=1) * self.i_axis).sum()),
            float((weights.sum(axis=0) * self.q_axis).sum()),
        ])

    def pdf(self, points: np.ndarray) -> np.ndarray:
        return np.maximum(self._interp(as_points(points)), self.floor)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        probs = (self.values * self.cell_area).ravel()
        cells = rng.choice(probs.size, size=size, p=probs / probs.sum())
        ix, iq = np.unravel_index(cells, self.values.shape)
        di = self.i_axis[1] - self.i_axis[0]
        dq = self.q_axis[1] - self.q_axis[0]
        jitter = rng.random((size, 2)) - 0.5
        return np.column_stack([self.i_axis[ix] + jitter[:, 0] * di,
                                self.q_axis[iq] + jitter[:, 1] * dq])

    def bounding_box(self) -> Tuple[float, float, float, float]:
        return (float(self.i_axis[0]), float(self.i_axis[-1]),
                float(self.q_axis[0]), float(self.q_axis[-1]))

    def hdr_level(self, mass: float) -> float:
        flat = np.sort(self.values.ravel())[::-1]
        cumulative = np.cumsum(flat) * self.cell_area
        index = int(np.searchsorted(cumulative, mass, side="left"))
        return float(flat[min(index, flat.size - 1)])

    def total_mass(self) -> float:
        return float(self.values.sum() * self.cell_area)


@dataclass(frozen=True)
class LeakageSettings:
    """泄漏处理：离群阈值以及（仅模拟用的）泄漏态密度"""
    outlier_fraction: float = 0.01
    density: Optional[StateDensity] = None

    def __post_init__(self):
        if not 0.0 < self.outlier_fraction < 1.0:
            raise DomainError(f"outlier_fraction 必须在 (0, 1) 内，实际 {self.outlier_fraction}")


@dataclass(frozen=True)
class ReadoutModel:
    """读出模型：两个态的密度、先验以及可选的泄漏处理"""
    f0: StateDensity
    f1: StateDensity
    priors: Tuple[float, float] = (0.5, 0.5)
    leakage: Optional[LeakageSettings] = None
    thresholds: Tuple[float, float] = field(init=False, repr=False)

    def __post_init__(self):
        p0, p1 = (float(p) for p in self.priors)
        if not (0.0 <= p0 <= 1.0 and 0.0 <= p1 <= 1.0) or abs(p0 + p1 - 1.0) > 1e-12:
            raise DomainError(f"先验必须在 [0, 1] 内且和为 1，实际 {self.priors}")
        object.__setattr__(self, "priors", (p0, p1))
        if self.leakage is not None:
            mass = 1.0 - self.leakage.outlier_fraction
            levels = (self.f0.hdr_level(mass), self.f1.hdr_level(mass))
        else:
            levels = (0.0, 0.0)
        object.__setattr__(self, "thresholds", levels)

    def density(self, state: int) -> StateDensity:
        return self.f1 if state else self.f0

    def swapped(self) -> "ReadoutModel":
        """交换 0/1 两个态"""
        return ReadoutModel(self.f1, self.f0, (self.priors[1], self.priors[0]), self.leakage)


@dataclass(frozen=True)
class SoftOutcome:
    """单次测量的软信息"""
    mu: IQPoint
    z_hat: int
    p_soft: float
    leaked_flag: int


@dataclass(frozen=True)
class SoftOutcomes:
    """批量软信息，前导维度任意，mu 最后一维为 (I, Q)"""
    mu: np.ndarray
    z_hat: np.ndarray
    p_soft: np.ndarray
    leaked: np.ndarray

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.z_hat.shape

    def reshape(self, *shape: int) -> "SoftOutcomes":
        return SoftOutcomes(self.mu.reshape(*shape, 2), self.z_hat.reshape(*shape),
                            self.p_soft.reshape(*shape), self.leaked.reshape(*shape))

    def __getitem__(self, index) -> "SoftOutcomes":
        return SoftOutcomes(self.mu[index], self.z_hat[index], self.p_soft[index], self.leaked[index])

    def item(self, *index: int) -> SoftOutcome:
        mu = self.mu[index]
        return SoftOutcome(IQPoint(float(mu[0]), float(mu[1])), int(self.z_hat[index]),
                           float(self.p_soft[index]), int(self.leaked[index]))


# ---------------------------------------------------------------------------
# 判别与软翻转概率
# ---------------------------------------------------------------------------

def classify_many(points, model: ReadoutModel) -> np.ndarray:
    """最大似然判别（不含先验），相等时取 0"""
    pts = as_points(points)
    f0 = model.f0.pdf(pts)
    f1 = model.f1.pdf(pts)
    degenerate = (f0 == 0) & (f1 == 0)
    if degenerate.any():
        _warn_once("classify-degenerate", f"{int(degenerate.sum())} 个 IQ 点在两个态下密度均为 0，判为 0")
    return (f1 > f0).astype(np.uint8)


def classify(mu: IQPoint, model: ReadoutModel) -> int:
    return int(classify_many(mu, model)[0])


def soft_flip_probs(points, z_hat: np.ndarray, model: ReadoutModel) -> np.ndarray:
    """软翻转概率 [1 + (P_ẑ/P_ẑ⊕1)·(f_ẑ/f_ẑ⊕1)]⁻¹，截断到 [P_MIN, 0.5]"""
    pts = as_points(points)
    z_hat = np.asarray(z_hat, dtype=np.uint8).reshape(-1)
    log_f0 = model.f0.logpdf(pts)
    log_f1 = model.f1.logpdf(pts)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_priors = np.log(np.asarray(model.priors, dtype=float))
        log_same = np.where(z_hat == 0, log_f0 + log_priors[0], log_f1 + log_priors[1])
        log_other = np.where(z_hat == 0, log_f1 + log_priors[1], log_f0 + log_priors[0])
        p = expit(log_other - log_same)
    # 另一态密度为 0 时判别是确定的
    p = np.where(np.isnan(p), P_MIN, p)
    return np.clip(p, P_MIN, 0.5)


def soft_flip_prob(mu: IQPoint, z_hat: int, model: ReadoutModel) -> float:
    return float(soft_flip_probs(mu, np.array([z_hat]), model)[0])


def detect_outliers(points, model: ReadoutModel) -> np.ndarray:
    """两个态的密度都低于各自最高密度区域阈值时判为泄漏"""
    pts = as_points(points)
    if model.leakage is None:
        return np.zeros(len(pts), dtype=np.uint8)
    c0, c1 = model.thresholds
    return ((model.f0.pdf(pts) < c0) & (model.f1.pdf(pts) < c1)).astype(np.uint8)


def detect_outlier(mu: IQPoint, model: ReadoutModel) -> int:
    return int(detect_outliers(mu, model)[0])


def process_measurements(points, model: ReadoutModel) -> SoftOutcomes:
    """批量处理：判别、离群检测、软翻转概率（泄漏点取 0.5）"""
    pts = as_points(points)
    z_hat = classify_many(pts, model)
    leaked = detect_outliers(pts, model)
    p_soft = np.where(leaked == 1, 0.5, soft_flip_probs(pts, z_hat, model))
    return SoftOutcomes(pts, z_hat, p_soft, leaked)


def process_measurement(mu: IQPoint, model: ReadoutModel) -> SoftOutcome:
    return process_measurements(mu, model).item(0)


def mean_soft_flip_prob(model: ReadoutModel, resolution: int = 600) -> float:
    """平均软翻转概率：按先验加权的误判质量"""
    boxes = np.array([model.f0.bounding_box(), model.f1.bounding_box()])
    i_axis = np.linspace(boxes[:, 0].min(), boxes[:, 1].max(), resolution)
    q_axis = np.linspace(boxes[:, 2].min(), boxes[:, 3].max(), resolution)
    cell = (i_axis[1] - i_axis[0]) * (q_axis[1] - q_axis[0])
    grid_i, grid_q = np.meshgrid(i_axis, q_axis, indexing="ij")
    pts = np.column_stack([grid_i.ravel(), grid_q.ravel()])
    f0 = model.f0.pdf(pts)
    f1 = model.f1.pdf(pts)
    for state, values, density in ((0, f0, model.f0), (1, f1, model.f1)):
        mass = values.sum() * cell
        if mass < 1.0 - density.mass_tolerance:
            raise CoverageError(f"积分网格只覆盖了态 {state} 的 {mass:.6f} 概率质量")
    p0, p1 = model.priors
    wrong0 = f0[f0 < f1].sum() * cell
    wrong1 = f1[f1 <= f0].sum() * cell
    return float(p0 * wrong0 + p1 * wrong1)


# ---------------------------------------------------------------------------
# 采样
# ---------------------------------------------------------------------------

def sample_iq_many(z_true: np.ndarray, model: ReadoutModel, rng: np.random.Generator,
                   p_leak: Union[float, np.ndarray] = 0.0) -> np.ndarray:
    """按真实态批量采样 IQ 点，以概率 p_leak 改从泄漏密度采样"""
    z_true = np.asarray(z_true, dtype=np.uint8).reshape(-1)
    p_leak = np.broadcast_to(np.asarray(p_leak, dtype=float), z_true.shape)
    points = np.empty((z_true.size, 2))
    leaked = rng.random(z_true.size) < p_leak
    if leaked.any() and (model.leakage is None or model.leakage.density is None):
        raise DomainError("p_leak > 0 但读出模型没有泄漏态密度")
    for state, density in ((0, model.f0), (1, model.f1)):
        mask = (z_true == state) & ~leaked
        n = int(mask.sum())
        if n:
            points[mask] = density.sample(rng, n)
    n_leak = int(leaked.sum())
    if n_leak:
        points[leaked] = model.leakage.density.sample(rng, n_leak)
    return points


def sample_iq(z_true: int, model: ReadoutModel, rng: np.random.Generator,
              p_leak: float = 0.0) -> IQPoint:
    i, q = sample_iq_many(np.array([z_true]), model, rng, p_leak)[0]
    return IQPoint(float(i), float(q))


def symmetric_gaussian_model(separation: float, sigma: float,
                             priors: Tuple[float, float] = (0.5, 0.5),
                             leakage: bool = True,
                             outlier_fraction: float = 0.01) -> ReadoutModel:
    """两个等方差高斯，均值位于 (±separation/2, 0)；泄漏态位于两者中点"""
    if separation < 0 or sigma <= 0:
        raise DomainError(f"separation 必须非负、sigma 必须为正: {separation}, {sigma}")
    cov = np.eye(2) * sigma ** 2
    f0 = GaussianDensity((-separation / 2.0, 0.0), cov)
    f1 = GaussianDensity((separation / 2.0, 0.0), cov)
    leak = LeakageSettings(outlier_fraction, GaussianDensity((0.0, 0.0), cov)) if leakage else None
    return ReadoutModel(f0, f1, priors, leak)


def separation_for_soft_rate(p_soft: float, sigma: float = 1.0) -> float:
    """使等方差高斯的平均软翻转概率等于 p_soft 的均值间距"""
    if not 0.0 < p_soft < 0.5:
        raise DomainError(f"p_soft 必须在 (0, 0.5) 内，实际 {p_soft}")
    return float(-2.0 * sigma * norm.ppf(p_soft))


# ---------------------------------------------------------------------------
# KDE 拟合
# ---------------------------------------------------------------------------

def fit_kde(samples, validation_fraction: float = 0.2, seed: int = 0,
            grid_size: int = 200, n_bandwidths: int = 20) -> GridDensity:
    """Epanechnikov 核密度估计，带宽由留出集对数似然选择，结果预计算到网格"""
    pts = as_points(samples)
    if len(pts) < MIN_KDE_SAMPLES:
        raise InsufficientDataError(f"KDE 至少需要 {MIN_KDE_SAMPLES} 个样本，实际 {len(pts)}")
    if not 0.0 < validation_fraction < 1.0:
        raise DomainError(f"validation_fraction 必须在 (0, 1) 内，实际 {validation_fraction}")
    center = pts.mean(axis=0)
    scale = pts.std(axis=0, ddof=1)
    if not np.all(scale > 0):
        raise DegenerateDataError("样本在某个方向上方差为零")
    scaled = (pts - center) / scale

    train, valid = train_test_split(scaled, test_size=validation_fraction, random_state=seed)
    best_h, best_score = None, -np.inf
    for h in np.geomspace(0.05, 5.0, n_bandwidths):
        kde = KernelDensity(kernel="epanechnikov", bandwidth=h).fit(train)
        peak = kde.score_samples(train[:500]).max()
        # 留出点落在所有核支撑外时取下限密度
        score = np.maximum(kde.score_samples(valid), peak + math.log(DENSITY_FLOOR)).sum()
        if score > best_score:
            best_h, best_score = float(h), float(score)

    kde = KernelDensity(kernel="epanechnikov", bandwidth=best_h).fit(scaled)
    lo = scaled.min(axis=0) - best_h
    hi = scaled.max(axis=0) + best_h
    axis_i = np.linspace(lo[0], hi[0], grid_size)
    axis_q = np.linspace(lo[1], hi[1], grid_size)
    grid_i, grid_q = np.meshgrid(axis_i, axis_q, indexing="ij")
    log_values = kde.score_samples(np.column_stack([grid_i.ravel(), grid_q.ravel()]))
    values = np.exp(log_values).reshape(grid_size, grid_size) / (scale[0] * scale[1])
    return GridDensity(center[0] + axis_i * scale[0], center[1] + axis_q * scale[1], values,
                       bandwidth=(best_h * scale[0], best_h * scale[1]), n_samples=len(pts))


def filter_hard_flips(pairs: Sequence[Tuple[object, int]], prepared: int) -> List[IQPoint]:
    """只保留第二次测量与制备态一致的第一次测量 IQ 点"""
    if not pairs:
        raise InsufficientDataError("没有标定数据")
    kept = []
    for mu, second in pairs:
        if int(second) == prepared:
            kept.append(mu if isinstance(mu, IQPoint) else IQPoint(float(mu[0]), float(mu[1])))
    if not kept:
        raise InsufficientDataError(f"制备态 |{prepared}⟩ 过滤硬翻转后没有剩余数据")
    return kept


def count_outcome_pairs(pairs: Sequence[Tuple[object, int]], model: ReadoutModel) -> OutcomePairCounts:
    """把 (第一次 IQ, 第二次比特) 统计成 N_00..N_11，第一次结果由模型判别"""
    if not pairs:
        return OutcomePairCounts()
    first = classify_many([mu if isinstance(mu, IQPoint) else IQPoint(*mu) for mu, _ in pairs], model)
    second = np.array([int(s) for _, s in pairs], dtype=np.uint8)
    counts = np.bincount(first.astype(int) * 2 + second, minlength=4)
    return OutcomePairCounts(n00=int(counts[0]), n01=int(counts[1]),
                             n10=int(counts[2]), n11=int(counts[3]))


# ---------------------------------------------------------------------------
# 截断
# ---------------------------------------------------------------------------

def truncate_probs(p: np.ndarray, bits: int) -> np.ndarray:
    """四舍五入到 b 位二进制小数，再截断到 [P_MIN, 0.5]"""
    if not 1 <= int(bits) <= 64:
        raise DomainError(f"截断位数必须在 [1, 64] 内，实际 {bits}")
    p = np.asarray(p, dtype=float)
    if bits < 64:
        # 下限 P_MIN 不在 b 位网格上，落到下限的值保持为下限
        p = np.where(p <= P_MIN, P_MIN, np.ldexp(np.rint(np.ldexp(p, bits)), -bits))
    return np.clip(p, P_MIN, 0.5)


def truncate_prob(p: float, bits: int) -> float:
    return float(truncate_probs(np.array([p]), bits)[0])


# ---------------------------------------------------------------------------
# 文件读写
# ---------------------------------------------------------------------------

def read_calibration_file(path: Union[str, Path]) -> Dict[str, Dict[int, List[Tuple[IQPoint, int]]]]:
    """读取标定 IQ 文件：qubit prepared I Q second，按比特与制备态分组"""
    data: Dict[str, Dict[int, List[Tuple[IQPoint, int]]]] = {}
    n_rows = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.replace(",", " ").split()
            if len(parts) != 5:
                raise ParseError(line_no, f"应有 5 列 (qubit prepared I Q second)，实际 {len(parts)} 列")
            qubit, prepared, i_raw, q_raw, second = parts
            if prepared not in ("0", "1") or second not in ("0", "1"):
                raise ParseError(line_no, "prepared 和 second 必须是 0 或 1")
            try:
                mu = IQPoint(float(i_raw), float(q_raw))
            except (ValueError, DomainError):
                raise ParseError(line_no, f"IQ 坐标无法解析: {i_raw} {q_raw}")
            data.setdefault(qubit, {0: [], 1: []})[int(prepared)].append((mu, int(second)))
            n_rows += 1
    if n_rows == 0:
        raise ParseError(1, "文件中没有任何数据行")
    return data


def _as_grid(density: StateDensity, grid_size: int) -> GridDensity:
    if isinstance(density, GridDensity):
        return density
    i_min, i_max, q_min, q_max = density.bounding_box()
    axis_i = np.linspace(i_min, i_max, grid_size)
    axis_q = np.linspace(q_min, q_max, grid_size)
    grid_i, grid_q = np.meshgrid(axis_i, axis_q, indexing="ij")
    values = density.pdf(np.column_stack([grid_i.ravel(), grid_q.ravel()])).reshape(grid_size, grid_size)
    return GridDensity(axis_i, axis_q, values)


def save_readout_model(path: Union[str, Path], model: ReadoutModel, grid_size: int = 256) -> None:
    """写出二进制网格模型文件，格式见 docs/file_formats.md"""
    densities = [model.f0, model.f1]
    if model.leakage is not None and model.leakage.density is not None:
        densities.append(model.leakage.density)
    flags = 1 if model.leakage is not None else 0
    outlier = model.leakage.outlier_fraction if model.leakage is not None else 0.0
    with open(path, "wb") as f:
        f.write(_GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, len(densities), flags,
                                  model.priors[0], model.priors[1], outlier))
        for role, density in enumerate(densities):
            grid = _as_grid(density, grid_size)
            bw = grid.bandwidth or (0.0, 0.0)
            f.write(_DENSITY_HEADER.pack(role, grid.i_axis.size, grid.q_axis.size,
                                         grid.i_axis[0], grid.i_axis[-1],
                                         grid.q_axis[0], grid.q_axis[-1], bw[0], bw[1]))
            f.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def load_readout_model(path: Union[str, Path]) -> ReadoutModel:
    data = Path(path).read_bytes()
    if len(data) < _GRID_HEADER.size:
        raise ParseError(1, "文件过短，缺少文件头")
    magic, version, n_densities, flags, prior0, prior1, outlier = _GRID_HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise ParseError(1, f"魔数不匹配: {magic!r}")
    if version != GRID_VERSION:
        raise ParseError(1, f"不支持的版本 {version}")
    if n_densities not in (2, 3):
        raise ParseError(1, f"密度个数应为 2 或 3，实际 {n_densities}")
    offset = _GRID_HEADER.size
    grids: Dict[int, GridDensity] = {}
    for _ in range(n_densities):
        if offset + _DENSITY_HEADER.size > len(data):
            raise ParseError(1, "密度头被截断")
        role, nx, ny, i0, i1, q0, q1, bw_i, bw_q = _DENSITY_HEADER.unpack_from(data, offset)
        offset += _DENSITY_HEADER.size
        n_bytes = nx * ny * 8
        if offset + n_bytes > len(data):
            raise ParseError(1, f"密度 {role} 的网格数据被截断")
        values = np.frombuffer(data, dtype="<f8", count=nx * ny, offset=offset).reshape(nx, ny)
        offset += n_bytes
        bandwidth = (bw_i, bw_q) if bw_i > 0 and bw_q > 0 else None
        grids[role] = GridDensity(np.linspace(i0, i1, nx), np.linspace(q0, q1, ny), values.copy(),
                                  bandwidth=bandwidth)
    leakage = LeakageSettings(outlier, grids.get(2)) if flags & 1 else None
    return ReadoutModel(grids[0], grids[1], (prior0, prior1), leakage)
