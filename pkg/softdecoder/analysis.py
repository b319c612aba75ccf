"""
统计分析模块

逻辑错误率及 Wilson 区间、每轮错误率反解、Λ 因子拟合、阈值提升，
截断精度研究以及结果 CSV/JSON 的读写。
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from .code_model import CodeSpec, compute_detectors
from .decoding_graph import DecodingGraph, reweight_soft
from .errors import DomainError, InsufficientDataError, ParseError, SaturationError, UndefinedRatioError
from .matching_decoder import decode
from .sampler import ShotRecord

DEFAULT_CONFIDENCE = 0.68
MIN_FIT_FAILURES = 5
RESULTS_HEADER = "# softdecoder-results v1"
RESULT_COLUMNS = ("mode", "basis", "state", "d", "offset", "T", "b", "shots", "failures",
                  "p_hat", "ci_low", "ci_high", "eps_L", "lambda", "lambda_err")


@dataclass(frozen=True)
class RateEstimate:
    """逻辑错误率估计"""
    failures: int
    shots: int
    p_hat: float
    ci_low: float
    ci_high: float


def wilson_interval(failures: int, shots: int, confidence: float = DEFAULT_CONFIDENCE) -> Tuple[float, float]:
    """Wilson 得分区间"""
    if shots <= 0:
        raise DomainError(f"实验次数必须为正，实际 {shots}")
    if not 0 <= failures <= shots:
        raise DomainError(f"失败次数 {failures} 不在 [0, {shots}] 内")
    if not 0.0 < confidence < 1.0:
        raise DomainError(f"置信度必须在 (0, 1) 内，实际 {confidence}")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = failures / shots
    denom = 1.0 + z * z / shots
    center = (p + z * z / (2.0 * shots)) / denom
    half = z * math.sqrt(p * (1.0 - p) / shots + z * z / (4.0 * shots * shots)) / denom
    low = 0.0 if failures == 0 else max(0.0, center - half)
    high = 1.0 if failures == shots else min(1.0, center + half)
    return low, high


def estimate_rate(failures: int, shots: int, confidence: float = DEFAULT_CONFIDENCE) -> RateEstimate:
    low, high = wilson_interval(failures, shots, confidence)
    p_hat = failures / shots
    return RateEstimate(failures, shots, p_hat, min(low, p_hat), max(high, p_hat))


def logical_rate_from_per_round(eps_l: float, rounds: int) -> float:
    """P_L = (1 - (1 - 2ε_L)^T) / 2"""
    return 0.5 * (1.0 - (1.0 - 2.0 * eps_l) ** rounds)


def per_round_rate(p_l: float, rounds: int) -> float:
    """ε_L = (1 - (1 - 2P_L)^(1/T)) / 2"""
    if rounds < 1:
        raise DomainError(f"轮数必须至少为 1，实际 {rounds}")
    if p_l < 0:
        raise DomainError(f"逻辑错误率不能为负，实际 {p_l}")
    if p_l >= 0.5:
        raise SaturationError(f"逻辑错误率 {p_l} ≥ 0.5，与随机猜测无法区分")
    return 0.5 * (1.0 - (1.0 - 2.0 * p_l) ** (1.0 / rounds))


@dataclass(frozen=True)
class LambdaPoint:
    """拟合用的一个点"""
    distance: int
    eps_l: float
    eps_low: float
    eps_high: float
    failures: int

    @property
    def x(self) -> int:
        return self.distance // 2 + 1


@dataclass(frozen=True)
class LambdaFit:
    """Λ 因子拟合结果"""
    lambda_factor: float
    lambda_err: float
    intercept: float
    slope: float
    r_squared: float
    points: Tuple[LambdaPoint, ...]
    excluded: Tuple[LambdaPoint, ...] = ()


@dataclass(frozen=True)
class ThresholdIncrease:
    value: float
    error: float


def rate_point(distance: int, failures: int, shots: int, rounds: int,
               confidence: float = DEFAULT_CONFIDENCE) -> LambdaPoint:
    """由计数得到每轮错误率及其区间"""
    estimate = estimate_rate(failures, shots, confidence)
    cap = math.nextafter(0.5, 0.0)
    return LambdaPoint(
        distance,
        per_round_rate(estimate.p_hat, rounds),
        per_round_rate(min(estimate.ci_low, cap), rounds),
        per_round_rate(min(estimate.ci_high, cap), rounds),
        failures,
    )


def fit_lambda(points: Sequence[LambdaPoint], min_failures: int = MIN_FIT_FAILURES) -> LambdaFit:
    """log ε_L 对 ⌊d/2⌋+1 的加权最小二乘，Λ = exp(-slope)"""
    used = [p for p in points if p.failures >= min_failures and p.eps_l > 0]
    excluded = tuple(p for p in points if p not in used)
    if len({p.distance for p in used}) < 2:
        raise InsufficientDataError(
            f"有效点只覆盖 {len({p.distance for p in used})} 个码距，至少需要 2 个（已排除 {len(excluded)} 个点）"
        )
    x = np.array([p.x for p in used], dtype=float)
    y = np.log([p.eps_l for p in used])
    sigma = np.array([_log_sigma(p) for p in used])
    coeffs, cov = np.polyfit(x, y, 1, w=1.0 / sigma, cov="unscaled")
    slope, intercept = float(coeffs[0]), float(coeffs[1])
    slope_err = math.sqrt(max(float(cov[0, 0]), 0.0))
    lam = math.exp(-slope)

    weights = 1.0 / sigma ** 2
    fitted = intercept + slope * x
    y_mean = np.average(y, weights=weights)
    ss_tot = float(np.sum(weights * (y - y_mean) ** 2))
    ss_res = float(np.sum(weights * (y - fitted) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return LambdaFit(lam, lam * slope_err, intercept, slope, r_squared, tuple(used), excluded)


def _log_sigma(point: LambdaPoint) -> float:
    if point.eps_low > 0 and point.eps_high > point.eps_low:
        return (math.log(point.eps_high) - math.log(point.eps_low)) / 2.0
    # 区间退化时按相对误差 1 处理
    return 1.0


def threshold_increase(fit_a: LambdaFit, fit_b: LambdaFit) -> ThresholdIncrease:
    """Λ_a / Λ_b - 1，误差按一阶传播"""
    ratio = fit_a.lambda_factor / fit_b.lambda_factor
    rel = math.hypot(fit_a.lambda_err / fit_a.lambda_factor, fit_b.lambda_err / fit_b.lambda_factor)
    return ThresholdIncrease(ratio - 1.0, ratio * rel)


# ---------------------------------------------------------------------------
# 截断研究
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationPoint:
    bits: int
    ratio: float
    ci_low: float
    ci_high: float
    failures: int
    failures_full: int
    shots: int


def _failures(shots: Sequence[Tuple[ShotRecord, CodeSpec]], graph: DecodingGraph,
              syndromes: list, bits: Optional[int]) -> np.ndarray:
    failed = np.zeros(len(shots), dtype=bool)
    for k, ((shot, _), syndrome) in enumerate(zip(shots, syndromes)):
        weighting = reweight_soft(graph, shot.stabilizer_soft, shot.code_soft, truncate_bits=bits)
        failed[k] = decode(weighting, syndrome).logical_flip != shot.truth_logical_flip
    return failed


def truncation_sweep(shots: Sequence[Tuple[ShotRecord, CodeSpec]], graph: DecodingGraph,
                     bits: Sequence[int], confidence: float = DEFAULT_CONFIDENCE,
                     n_bootstrap: int = 1000, seed: int = 0) -> List[TruncationPoint]:
    """对同一批实验比较截断精度与全精度解码的逻辑错误率

    比值区间来自配对 bootstrap：对 (截断失败, 全精度失败) 四类联合结果做多项式重抽样。
    """
    if not shots:
        raise InsufficientDataError("没有可用于截断研究的实验")
    syndromes = [compute_detectors(shot.outcome, spec) for shot, spec in shots]
    full = _failures(shots, graph, syndromes, None)
    n_full = int(full.sum())
    if n_full == 0:
        raise UndefinedRatioError("全精度解码没有逻辑错误，比值无定义")
    rng = np.random.default_rng(seed)
    lo_q, hi_q = 0.5 - confidence / 2.0, 0.5 + confidence / 2.0
    n = len(shots)
    points = []
    for b in bits:
        truncated = _failures(shots, graph, syndromes, b)
        both = int(np.sum(truncated & full))
        only_b = int(np.sum(truncated & ~full))
        only_full = int(np.sum(~truncated & full))
        probs = np.array([both, only_b, only_full, n - both - only_b - only_full], dtype=float) / n
        draws = rng.multinomial(n, probs, size=n_bootstrap)
        denom = draws[:, 0] + draws[:, 2]
        valid = denom > 0
        ratios = (draws[valid, 0] + draws[valid, 1]) / denom[valid]
        ratio = (both + only_b) / n_full
        low, high = (np.quantile(ratios, [lo_q, hi_q]) if ratios.size else (ratio, ratio))
        points.append(TruncationPoint(int(b), ratio, float(min(low, ratio)), float(max(high, ratio)),
                                      both + only_b, n_full, n))
    return points


# ---------------------------------------------------------------------------
# 结果文件
# ---------------------------------------------------------------------------

@dataclass
class ResultRow:
    """结果 CSV 的一行；offset 为 -1 表示对所有偏移汇总"""
    mode: str
    basis: str
    state: str
    d: int
    offset: int
    T: int
    b: int
    shots: int
    failures: int
    p_hat: float
    ci_low: float
    ci_high: float
    eps_L: Optional[float] = None
    lambda_: Optional[float] = None
    lambda_err: Optional[float] = None

    def as_record(self) -> Dict[str, Any]:
        record = asdict(self)
        record["lambda"] = record.pop("lambda_")
        return record


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(path: Union[str, Path], rows: Sequence[ResultRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(RESULTS_HEADER + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            record = row.as_record()
            writer.writerow([_format(record[c]) for c in RESULT_COLUMNS])


def read_results_csv(path: Union[str, Path]) -> List[ResultRow]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != RESULTS_HEADER:
        raise ParseError(1, f"缺少版本头 '{RESULTS_HEADER}'")
    reader = csv.DictReader(lines[1:])
    if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
        raise ParseError(2, f"列名不符: {reader.fieldnames}")
    rows = []
    ints = {"d", "offset", "T", "b", "shots", "failures"}
    for line_no, record in enumerate(reader, start=3):
        try:
            values = {
                key: (int(raw) if key in ints else float(raw) if raw else None)
                if key not in ("mode", "basis", "state") else raw
                for key, raw in record.items()
            }
        except ValueError as exc:
            raise ParseError(line_no, str(exc))
        values["lambda_"] = values.pop("lambda")
        rows.append(ResultRow(**values))
    return rows


def fits_from_rows(rows: Sequence[ResultRow], min_failures: int = MIN_FIT_FAILURES
                   ) -> Dict[Tuple[str, str, str, int], LambdaFit]:
    """按 (mode, basis, state, T) 对汇总行做 Λ 拟合；点不足的组跳过"""
    groups: Dict[Tuple[str, str, str, int], List[LambdaPoint]] = {}
    for row in rows:
        if row.offset != -1 or row.eps_L is None or row.b != 64:
            continue
        low, high = (per_round_rate(min(v, math.nextafter(0.5, 0.0)), row.T) for v in (row.ci_low, row.ci_high))
        groups.setdefault((row.mode, row.basis, row.state, row.T), []).append(
            LambdaPoint(row.d, row.eps_L, low, high, row.failures))
    fits = {}
    for key, points in sorted(groups.items()):
        try:
            fits[key] = fit_lambda(points, min_failures)
        except InsufficientDataError:
            continue
    return fits


def write_summary_json(path: Union[str, Path], config: Dict[str, Any],
                       fits: Dict[Tuple[str, str, str, int], LambdaFit],
                       increases: Dict[str, ThresholdIncrease],
                       extra: Optional[Dict[str, Any]] = None) -> None:
    document = {
        "schema": "softdecoder-summary v1",
        "config": config,
        "fits": [
            {
                "mode": mode, "basis": basis, "state": state, "T": rounds,
                "lambda": fit.lambda_factor, "lambda_err": fit.lambda_err,
                "intercept": fit.intercept, "r_squared": fit.r_squared,
                "points": [asdict(p) for p in fit.points],
                "excluded": [asdict(p) for p in fit.excluded],
            }
            for (mode, basis, state, rounds), fit in fits.items()
        ],
        "threshold_increase": {name: asdict(inc) for name, inc in increases.items()},
    }
    if extra:
        document.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")
