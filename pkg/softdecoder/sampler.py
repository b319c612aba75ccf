"""
蒙特卡洛采样模块

在 Pauli 帧中逐轮模拟重复码电路得到真实二值结果，再按读出模型为每次测量
生成 IQ 点；软翻转只来自密度重叠。
"""

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .code_model import CodeSpec, OutcomeRecord, compute_detectors, subsample, subsample_windows
from .decoding_graph import DecodingGraph, ShotWeighting, build_graph, reweight_soft
from .errors import DomainError
from .matching_decoder import decode
from .measurement_model import ReadoutModel, SoftOutcomes, process_measurements, sample_iq_many
from .noise_model import FaultChannel, FaultStage, NoiseParams, circuit_fault_channels, derive_edge_probabilities

SHARD_SIZE = 1000


class DecoderMode(str, Enum):
    """解码方式"""
    HARD_CALIBRATED = "hard_calibrated"
    HARD_DATA_INFORMED = "hard_data_informed"
    SOFT = "soft"


@dataclass(frozen=True)
class _FaultLayer:
    """同一时刻同一类位置的故障信道，按目标编号排列"""
    stage: FaultStage
    round: int
    probabilities: np.ndarray   # (n_targets, n_outcomes)
    data_flips: np.ndarray      # (n_outcomes, n_targets, d)
    ancilla_flips: np.ndarray   # (n_outcomes, n_targets, d-1)


# 选择器返回每个目标触发的结果编号，-1 表示无故障
Chooser = Callable[[_FaultLayer], np.ndarray]


class CircuitModel:
    """固定重复码电路的 Pauli 帧模拟器"""

    def __init__(self, spec: CodeSpec, noise: NoiseParams):
        self.spec = spec
        self.noise = noise
        self.channels = circuit_fault_channels(spec, noise)
        grouped: Dict[Tuple[FaultStage, int], List[FaultChannel]] = {}
        for channel in self.channels:
            grouped.setdefault((channel.stage, channel.round), []).append(channel)
        self.layers: Dict[Tuple[FaultStage, int], _FaultLayer] = {
            key: self._layer(key, sorted(chs, key=lambda c: c.index)) for key, chs in grouped.items()
        }

    def _layer(self, key: Tuple[FaultStage, int], channels: List[FaultChannel]) -> _FaultLayer:
        d = self.spec.distance
        n_out = len(channels[0].outcomes)
        probs = np.array([[o.probability for o in ch.outcomes] for ch in channels], dtype=float)
        data = np.zeros((n_out, len(channels), d), dtype=np.uint8)
        anc = np.zeros((n_out, len(channels), d - 1), dtype=np.uint8)
        for k, ch in enumerate(channels):
            for o, outcome in enumerate(ch.outcomes):
                data[o, k, list(outcome.data_flips)] = 1
                anc[o, k, list(outcome.ancilla_flips)] = 1
        return _FaultLayer(key[0], key[1], probs, data, anc)

    @staticmethod
    def _apply(layer: _FaultLayer, chosen: np.ndarray, data: np.ndarray, ancilla: np.ndarray) -> None:
        for o in range(layer.probabilities.shape[1]):
            hit = chosen == o
            if hit.any():
                data ^= np.bitwise_xor.reduce(layer.data_flips[o][hit], axis=0)
                ancilla ^= np.bitwise_xor.reduce(layer.ancilla_flips[o][hit], axis=0)

    def run(self, choose: Chooser) -> Tuple[np.ndarray, np.ndarray]:
        """返回 (每轮辅助比特真实测量值 T×(d-1), 数据比特真实读出值 d)，均相对参考帧"""
        d, rounds = self.spec.distance, self.spec.rounds
        data = np.zeros(d, dtype=np.uint8)
        ancilla = np.zeros(d - 1, dtype=np.uint8)
        measured = np.zeros((rounds, d - 1), dtype=np.uint8)
        layer = self.layers[(FaultStage.ENCODE, 0)]
        self._apply(layer, choose(layer), data, ancilla)
        for t in range(1, rounds + 1):
            ancilla ^= data[:-1]
            layer = self.layers[(FaultStage.CX1, t)]
            self._apply(layer, choose(layer), data, ancilla)
            ancilla ^= data[1:]
            layer = self.layers[(FaultStage.CX2, t)]
            self._apply(layer, choose(layer), data, ancilla)
            layer = self.layers[(FaultStage.MEASURE, t)]
            self._apply(layer, choose(layer), data, ancilla)
            # 无复位：辅助比特状态延续到下一轮
            measured[t - 1] = ancilla
            layer = self.layers[(FaultStage.IDLE, t)]
            self._apply(layer, choose(layer), data, ancilla)
        readout = data.copy()
        layer = self.layers[(FaultStage.READOUT, rounds + 1)]
        self._apply(layer, choose(layer), readout, np.zeros(d - 1, dtype=np.uint8))
        return measured, readout


def random_chooser(rng: np.random.Generator) -> Chooser:
    def choose(layer: _FaultLayer) -> np.ndarray:
        u = rng.random(layer.probabilities.shape[0])
        cumulative = np.cumsum(layer.probabilities, axis=1)
        chosen = (u[:, None] >= cumulative).sum(axis=1)
        return np.where(chosen == layer.probabilities.shape[1], -1, chosen)
    return choose


def injection_chooser(stage: FaultStage, round_index: int, target: int, outcome: int) -> Chooser:
    """只在指定位置触发指定结果，用于单故障枚举"""
    def choose(layer: _FaultLayer) -> np.ndarray:
        chosen = np.full(layer.probabilities.shape[0], -1)
        if layer.stage == stage and layer.round == round_index:
            chosen[target] = outcome
        return chosen
    return choose


def shot_seed(root_seed: int, shot_index: int) -> int:
    """计数器式派生：根种子与实验编号混合成 64 位种子"""
    state = np.random.SeedSequence(root_seed, spawn_key=(shot_index,)).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class ShotRecord:
    """一次实验的完整记录"""
    outcome: OutcomeRecord
    stabilizer_soft: SoftOutcomes
    code_soft: SoftOutcomes
    truth_logical_flip: int
    seed: int

    def window(self, spec: CodeSpec, sub_distance: int, offset: int) -> Tuple["ShotRecord", CodeSpec]:
        """与二值记录一起截取模拟信息；逻辑比特取窗口内最后一个数据比特"""
        outcome, sub_spec = subsample(self.outcome, spec, sub_distance, offset)
        stab = self.stabilizer_soft[:, offset:offset + sub_distance - 1]
        code = self.code_soft[offset:offset + sub_distance]
        truth = int(code.z_hat[-1]) ^ spec.logical_value
        return ShotRecord(outcome, stab, code, truth, self.seed), sub_spec


def sample_shot(spec: CodeSpec, noise: NoiseParams, model: ReadoutModel, seed: int,
                circuit: Optional[CircuitModel] = None) -> ShotRecord:
    """生成一次实验：Pauli 帧得到真实态，再逐次测量采样 IQ 并判别"""
    circuit = circuit or CircuitModel(spec, noise)
    rng = np.random.default_rng(seed)
    measured, readout = circuit.run(random_chooser(rng))
    d, rounds = spec.distance, spec.rounds
    z_true = np.concatenate([measured.ravel(), readout ^ spec.logical_value])
    p_leak = np.concatenate([
        np.repeat([noise.leak_prob(t) for t in range(1, rounds + 1)], d - 1),
        np.full(d, noise.leak_prob(rounds + 1)),
    ])
    points = sample_iq_many(z_true, model, rng, p_leak)
    soft = process_measurements(points, model)
    n_anc = rounds * (d - 1)
    stab = soft[:n_anc].reshape(rounds, d - 1)
    code = soft[n_anc:]
    outcome = OutcomeRecord(stab.z_hat, code.z_hat)
    # 真值：最后一个数据比特的观测读出相对制备值是否翻转。
    # 解码器修正的是判别后的读出，泄漏或判错的终读出也算翻转，z_true 只决定 IQ 采样的中心
    truth = int(code.z_hat[-1]) ^ spec.logical_value
    return ShotRecord(outcome, stab, code, truth, seed)


# ---------------------------------------------------------------------------
# 实验统计
# ---------------------------------------------------------------------------

TallyKey = Tuple[str, int, int]  # (mode, sub_distance, offset)


@dataclass
class ExperimentTally:
    """逻辑错误计数，按 (mode, d_s, offset) 分组；合并即相加"""
    failures: Counter = field(default_factory=Counter)
    shots: Counter = field(default_factory=Counter)
    p_soft_sums: List[float] = field(default_factory=list)
    n_measurements: int = 0
    n_leaked: int = 0

    def record(self, key: TallyKey, failed: bool) -> None:
        self.shots[key] += 1
        self.failures[key] += int(failed)

    def merge(self, other: "ExperimentTally") -> "ExperimentTally":
        return ExperimentTally(self.failures + other.failures, self.shots + other.shots,
                               self.p_soft_sums + other.p_soft_sums,
                               self.n_measurements + other.n_measurements,
                               self.n_leaked + other.n_leaked)

    def pooled(self, mode: DecoderMode, sub_distance: int) -> Tuple[int, int]:
        """对所有偏移汇总 (failures, shots)"""
        failures = sum(v for (m, ds, _), v in self.failures.items() if m == mode.value and ds == sub_distance)
        shots = sum(v for (m, ds, _), v in self.shots.items() if m == mode.value and ds == sub_distance)
        return failures, shots

    def get(self, mode: DecoderMode, sub_distance: int, offset: int) -> Tuple[int, int]:
        key = (mode.value, sub_distance, offset)
        return self.failures[key], self.shots[key]

    @property
    def mean_p_soft(self) -> float:
        if self.n_measurements == 0:
            return 0.0
        return math.fsum(self.p_soft_sums) / self.n_measurements

    @property
    def leaked_fraction(self) -> float:
        return self.n_leaked / self.n_measurements if self.n_measurements else 0.0


@dataclass(frozen=True)
class _ShardJob:
    spec: CodeSpec
    noise: NoiseParams
    model: ReadoutModel
    modes: Tuple[DecoderMode, ...]
    seed: int
    start: int
    stop: int
    sub_distances: Tuple[int, ...]
    data_informed_p_soft: Optional[float] = None


def _decode_graphs(spec: CodeSpec, noise: NoiseParams, sub_distances: Sequence[int],
                   data_informed_p_soft: Optional[float]) -> Dict[int, Tuple[DecodingGraph, Optional[DecodingGraph]]]:
    graphs = {}
    for ds in sub_distances:
        sub_spec = spec.model_copy(update={"distance": ds})
        graph = build_graph(sub_spec, derive_edge_probabilities(sub_spec, noise))
        informed = graph.with_soft_mean(data_informed_p_soft) if data_informed_p_soft is not None else None
        graphs[ds] = (graph, informed)
    return graphs


def _run_shard(job: _ShardJob) -> ExperimentTally:
    tally = ExperimentTally()
    circuit = CircuitModel(job.spec, job.noise)
    graphs = _decode_graphs(job.spec, job.noise, job.sub_distances, job.data_informed_p_soft)
    static = {ds: ShotWeighting.static(g) for ds, (g, _) in graphs.items()}
    informed = {ds: ShotWeighting.static(g) for ds, (_, g) in graphs.items() if g is not None}
    for index in range(job.start, job.stop):
        shot = sample_shot(job.spec, job.noise, job.model, shot_seed(job.seed, index), circuit)
        tally.p_soft_sums.append(math.fsum(shot.stabilizer_soft.p_soft.ravel()) + math.fsum(shot.code_soft.p_soft))
        tally.n_measurements += shot.stabilizer_soft.p_soft.size + shot.code_soft.p_soft.size
        tally.n_leaked += int(shot.stabilizer_soft.leaked.sum() + shot.code_soft.leaked.sum())
        for ds in job.sub_distances:
            graph = graphs[ds][0]
            for offset in subsample_windows(job.spec, ds):
                window, sub_spec = shot.window(job.spec, ds, offset)
                syndrome = compute_detectors(window.outcome, sub_spec)
                for mode in job.modes:
                    if mode == DecoderMode.HARD_CALIBRATED:
                        weighting = static[ds]
                    elif mode == DecoderMode.HARD_DATA_INFORMED:
                        weighting = informed[ds]
                    else:
                        weighting = reweight_soft(graph, window.stabilizer_soft, window.code_soft)
                    result = decode(weighting, syndrome)
                    tally.record((mode.value, ds, offset), result.logical_flip != window.truth_logical_flip)
    return tally


def _shards(n_shots: int, shard_size: int) -> List[Tuple[int, int]]:
    return [(start, min(start + shard_size, n_shots)) for start in range(0, n_shots, shard_size)]


def _execute(jobs: List[_ShardJob], workers: int,
             progress: Optional[Callable[[int], None]]) -> ExperimentTally:
    total = ExperimentTally()
    if workers <= 1 or len(jobs) <= 1:
        results: Iterable[ExperimentTally] = map(_run_shard, jobs)
        for job, tally in zip(jobs, results):
            total = total.merge(tally)
            if progress:
                progress(job.stop - job.start)
        return total
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map 保持提交顺序，合并结果与工作进程数无关
        for job, tally in zip(jobs, pool.map(_run_shard, jobs)):
            total = total.merge(tally)
            if progress:
                progress(job.stop - job.start)
    return total


def run_experiment(spec: CodeSpec, noise: NoiseParams, model: ReadoutModel, n_shots: int,
                   decoder_modes: Sequence[DecoderMode], seed: int,
                   sub_distances: Optional[Sequence[int]] = None, workers: int = 1,
                   shard_size: int = SHARD_SIZE,
                   progress: Optional[Callable[[int], None]] = None) -> ExperimentTally:
    """运行实验并统计各解码方式的逻辑错误

    数据驱动硬解码需要先遍历全部实验求平均软翻转概率，再用同样的种子重新生成实验解码。
    """
    if n_shots < 1:
        raise DomainError(f"实验次数必须至少为 1，实际 {n_shots}")
    modes = tuple(DecoderMode(m) for m in decoder_modes)
    if not modes:
        raise DomainError("至少需要一种解码方式")
    sub = tuple(sorted(set(sub_distances))) if sub_distances else (spec.distance,)
    for ds in sub:
        subsample_windows(spec, ds)
    shards = _shards(n_shots, shard_size)

    first_modes = tuple(m for m in modes if m != DecoderMode.HARD_DATA_INFORMED)
    jobs = [_ShardJob(spec, noise, model, first_modes, seed, a, b, sub) for a, b in shards]
    tally = _execute(jobs, workers, progress)
    if DecoderMode.HARD_DATA_INFORMED in modes:
        mean = tally.mean_p_soft
        jobs = [_ShardJob(spec, noise, model, (DecoderMode.HARD_DATA_INFORMED,), seed, a, b, sub, mean)
                for a, b in shards]
        second = _execute(jobs, workers, progress)
        tally = ExperimentTally(tally.failures + second.failures, tally.shots + second.shots,
                                tally.p_soft_sums, tally.n_measurements, tally.n_leaked)
    return tally


def generate_shots(spec: CodeSpec, noise: NoiseParams, model: ReadoutModel, n_shots: int,
                   seed: int) -> List[ShotRecord]:
    """生成并保存实验记录，供截断研究复用"""
    circuit = CircuitModel(spec, noise)
    return [sample_shot(spec, noise, model, shot_seed(seed, index), circuit) for index in range(n_shots)]
