"""
解码图模块

为给定码参数构造静态加权解码图（空间、时间、对角、软距离二、边界、终读出边），
并按每次实验的软信息动态重加权。
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .code_model import Basis, CodeSpec
from .errors import ConstructionError, DimensionError, DomainError, InternalInvariantError, ParseError
from .measurement_model import ReadoutModel, SoftOutcomes, process_measurements, truncate_probs
from .noise_model import (
    DYNAMIC_KINDS,
    P_MIN,
    EdgeKey,
    EdgeKind,
    EdgeProbability,
    EdgeProbabilityTable,
)


@dataclass(frozen=True, order=True)
class DetectorNode:
    """探测器节点 n_{a,t}，a 与 t 均从 1 开始"""
    stabilizer_index: int
    round: int

    def __str__(self) -> str:
        return f"{self.stabilizer_index}:{self.round}"


@dataclass(frozen=True)
class GraphEdge:
    """解码图中的一条边；v 为 None 表示边界"""
    edge_id: int
    key: EdgeKey
    u: int
    v: Optional[int]
    probability: float
    weight: float
    is_logical: bool

    @property
    def kind(self) -> EdgeKind:
        return self.key.kind


def clamp_prob(p):
    """截断到 [P_MIN, 0.5]"""
    return np.clip(p, P_MIN, 0.5)


def weights_from_probs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise DomainError("边概率必须在 (0, 1) 内")
    return np.log((1.0 - p) / p)


def weight_from_prob(p: float) -> float:
    """w = log((1-p)/p)"""
    return float(weights_from_probs(np.array([p]))[0])


class DecodingGraph:
    """静态解码图，节点编号 (t-1)·(d-1) + (a-1)，边界为 n_nodes"""

    def __init__(self, spec: CodeSpec, keys: Sequence[EdgeKey],
                 endpoints: Sequence[Tuple[int, Optional[int]]],
                 entries: Sequence[EdgeProbability], logical: Sequence[bool]):
        self.spec = spec
        self.n_stabilizers = spec.distance - 1
        self.n_nodes = (spec.rounds + 1) * self.n_stabilizers
        self.boundary = self.n_nodes
        self.keys: Tuple[EdgeKey, ...] = tuple(keys)
        self.entries: Tuple[EdgeProbability, ...] = tuple(entries)
        self.u = np.array([e[0] for e in endpoints], dtype=np.int64)
        self.v = np.array([self.boundary if e[1] is None else e[1] for e in endpoints], dtype=np.int64)
        self.is_logical = np.array(logical, dtype=bool)
        self.probabilities = clamp_prob(np.array([e.probability for e in self.entries], dtype=float))
        self.weights = weights_from_probs(self.probabilities)
        self.edge_index: Dict[EdgeKey, int] = {key: k for k, key in enumerate(self.keys)}

        adjacency: List[List[Tuple[int, int]]] = [[] for _ in range(self.n_nodes + 1)]
        for edge_id, (a, b) in enumerate(zip(self.u, self.v)):
            adjacency[a].append((int(b), edge_id))
            adjacency[b].append((int(a), edge_id))
        self.adjacency: Tuple[Tuple[Tuple[int, int], ...], ...] = tuple(tuple(n) for n in adjacency)

        # 三类动态边，按 (t, a) / a / i 排列
        d, rounds = spec.distance, spec.rounds
        self.soft_edge_ids = np.array(
            [[self.edge_index[EdgeKey(EdgeKind.TIME2_SOFT, a, t)] for a in range(1, d)]
             for t in range(1, rounds)], dtype=np.int64).reshape(rounds - 1, d - 1)
        self.final_time_ids = np.array(
            [self.edge_index[EdgeKey(EdgeKind.FINAL_TIME, a, rounds)] for a in range(1, d)], dtype=np.int64)
        self.final_space_ids = np.array(
            [self.edge_index[EdgeKey(EdgeKind.FINAL_SPACE, i, rounds + 1)] for i in range(d)], dtype=np.int64)

    @property
    def n_edges(self) -> int:
        return len(self.keys)

    def node_id(self, node: DetectorNode) -> int:
        a, t = node.stabilizer_index, node.round
        if not (1 <= a <= self.n_stabilizers and 1 <= t <= self.spec.rounds + 1):
            raise DomainError(f"节点 {node} 超出范围")
        return (t - 1) * self.n_stabilizers + (a - 1)

    def node(self, node_id: int) -> Optional[DetectorNode]:
        if node_id == self.boundary:
            return None
        t, a = divmod(node_id, self.n_stabilizers)
        return DetectorNode(a + 1, t + 1)

    def edge(self, edge_id: int) -> GraphEdge:
        v = int(self.v[edge_id])
        return GraphEdge(edge_id, self.keys[edge_id], int(self.u[edge_id]),
                         None if v == self.boundary else v,
                         float(self.probabilities[edge_id]), float(self.weights[edge_id]),
                         bool(self.is_logical[edge_id]))

    def edges(self) -> List[GraphEdge]:
        return [self.edge(k) for k in range(self.n_edges)]

    def with_probabilities(self, table: EdgeProbabilityTable) -> "DecodingGraph":
        """同一拓扑，换一张概率表"""
        return build_graph(self.spec, table)

    def with_soft_mean(self, p_soft: float) -> "DecodingGraph":
        """按新的平均软翻转概率静态重加权（数据驱动的硬解码）"""
        entries = [e._replace(probability=e.with_soft(p_soft)) if e.is_dynamic else e for e in self.entries]
        endpoints = [(int(a), None if b == self.boundary else int(b)) for a, b in zip(self.u, self.v)]
        return DecodingGraph(self.spec, self.keys, endpoints, entries, self.is_logical)


def build_graph(spec: CodeSpec, table: EdgeProbabilityTable) -> DecodingGraph:
    """由概率表构造解码图"""
    d, rounds = spec.distance, spec.rounds
    n_stab = d - 1

    def node(a: int, t: int) -> int:
        return (t - 1) * n_stab + (a - 1)

    keys: List[EdgeKey] = []
    endpoints: List[Tuple[int, Optional[int]]] = []
    logical: List[bool] = []

    def add(key: EdgeKey, u: int, v: Optional[int], is_logical: bool = False) -> None:
        keys.append(key)
        endpoints.append((u, v))
        logical.append(is_logical)

    for r in range(1, rounds + 2):
        kind = EdgeKind.FINAL_SPACE if r == rounds + 1 else EdgeKind.SPACE
        for i in range(d):
            key = EdgeKey(kind, i, r)
            if i == 0:
                add(key, node(1, r), None)
            elif i == d - 1:
                add(key, node(d - 1, r), None, True)
            else:
                add(key, node(i, r), node(i + 1, r))
    for a in range(1, d):
        for t in range(1, rounds):
            add(EdgeKey(EdgeKind.TIME1, a, t), node(a, t), node(a, t + 1))
        add(EdgeKey(EdgeKind.FINAL_TIME, a, rounds), node(a, rounds), node(a, rounds + 1))
        for t in range(1, rounds):
            add(EdgeKey(EdgeKind.TIME2_SOFT, a, t), node(a, t), node(a, t + 2))
    for a in range(1, d - 1):
        for t in range(1, rounds + 1):
            add(EdgeKey(EdgeKind.DIAGONAL, a, t), node(a, t), node(a + 1, t + 1))

    missing = [key for key in keys if key not in table]
    if missing:
        raise ConstructionError(f"概率表缺少 {len(missing)} 条边，例如 {missing[0]}")
    return DecodingGraph(spec, keys, endpoints, [table[key] for key in keys], logical)


@dataclass
class ShotWeighting:
    """静态图加上单次实验的稀疏概率覆盖"""
    graph: DecodingGraph
    overlay_ids: np.ndarray
    overlay_probs: np.ndarray

    def __post_init__(self):
        kinds = {self.graph.keys[k].kind for k in self.overlay_ids}
        if not kinds <= DYNAMIC_KINDS:
            raise InternalInvariantError(f"覆盖层包含非动态边: {sorted(k.value for k in kinds - DYNAMIC_KINDS)}")

    @classmethod
    def static(cls, graph: DecodingGraph) -> "ShotWeighting":
        return cls(graph, np.zeros(0, dtype=np.int64), np.zeros(0))

    def probabilities(self) -> np.ndarray:
        probs = self.graph.probabilities.copy()
        probs[self.overlay_ids] = self.overlay_probs
        return probs

    def weights(self) -> np.ndarray:
        weights = self.graph.weights.copy()
        if self.overlay_ids.size:
            weights[self.overlay_ids] = weights_from_probs(self.overlay_probs)
        return weights


def reweight_soft(graph: DecodingGraph, stabilizer_soft: SoftOutcomes, code_soft: SoftOutcomes,
                  model: Optional[ReadoutModel] = None,
                  truncate_bits: Optional[int] = None) -> ShotWeighting:
    """按每次测量的软翻转概率重加权动态边

    t ≤ T-1 的稳定子结果决定软边 (n_{a,t}, n_{a,t+2})；t = T 的结果与硬翻转概率
    按奇偶合成到最后一轮时间边；终读出结果合成到 final_space 边。
    给出 model 时由 mu 重新计算软翻转概率。
    """
    spec = graph.spec
    if stabilizer_soft.shape != spec.ancilla_shape:
        raise DimensionError(f"稳定子软信息形状 {stabilizer_soft.shape} 与 {spec.ancilla_shape} 不一致")
    if code_soft.shape != (spec.distance,):
        raise DimensionError(f"终读出软信息长度 {code_soft.shape} 与码距 {spec.distance} 不一致")
    if not graph.entries[graph.final_time_ids[0]].is_dynamic:
        raise ConstructionError("解码图不含动态边的分量信息，无法软重加权")
    if model is not None:
        stabilizer_soft = process_measurements(stabilizer_soft.mu.reshape(-1, 2), model).reshape(*spec.ancilla_shape)
        code_soft = process_measurements(code_soft.mu.reshape(-1, 2), model)
    p_stab = stabilizer_soft.p_soft
    p_code = code_soft.p_soft
    if truncate_bits is not None:
        p_stab = truncate_probs(p_stab, truncate_bits)
        p_code = truncate_probs(p_code, truncate_bits)

    entries = graph.entries
    soft_ids = graph.soft_edge_ids.ravel()
    final_time = graph.final_time_ids
    final_space = graph.final_space_ids
    # 同类动态边的 hard_parts 由同一组参数合成，逐类取第一条即可向量化
    parts = []
    if soft_ids.size:
        parts.append(entries[soft_ids[0]].with_soft_array(p_stab[:-1].ravel()))
    parts.append(_with_soft_per_edge(entries, final_time, p_stab[-1]))
    parts.append(_with_soft_per_edge(entries, final_space, p_code))
    ids = np.concatenate([soft_ids, final_time, final_space])
    return ShotWeighting(graph, ids, clamp_prob(np.concatenate(parts)))


def _with_soft_per_edge(entries: Sequence[EdgeProbability], ids: np.ndarray, p_soft: np.ndarray) -> np.ndarray:
    out = np.empty(ids.size)
    groups: Dict[Tuple[Tuple[float, ...], int], List[int]] = {}
    for position, edge_id in enumerate(ids):
        entry = entries[edge_id]
        groups.setdefault((entry.hard_parts, entry.soft_slot), []).append(position)
    for (hard_parts, slot), positions in groups.items():
        idx = np.array(positions)
        out[idx] = EdgeProbability(0.0, hard_parts, slot).with_soft_array(p_soft[idx])
    return out


# ---------------------------------------------------------------------------
# 文本转储
# ---------------------------------------------------------------------------

GRAPH_HEADER = "# softdecoder-graph v1"


def dump_graph(graph: DecodingGraph, path: Union[str, Path],
               weighting: Optional[ShotWeighting] = None) -> None:
    """每行一条边：kind index round u v probability weight is_logical"""
    probs = graph.probabilities if weighting is None else weighting.probabilities()
    weights = graph.weights if weighting is None else weighting.weights()
    spec = graph.spec
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{GRAPH_HEADER} d={spec.distance} T={spec.rounds} basis={spec.basis.value}\n")
        for k, key in enumerate(graph.keys):
            u = graph.node(int(graph.u[k]))
            v = graph.node(int(graph.v[k]))
            f.write(f"{key.kind.value} {key.index} {key.round} {u} {'B' if v is None else v} "
                    f"{float(probs[k])!r} {float(weights[k])!r} {int(graph.is_logical[k])}\n")


def _parse_node(text: str, n_stab: int, line_no: int) -> Optional[int]:
    if text == "B":
        return None
    try:
        a, t = (int(x) for x in text.split(":"))
    except ValueError:
        raise ParseError(line_no, f"无法解析节点 {text!r}")
    return (t - 1) * n_stab + (a - 1)


def load_graph(path: Union[str, Path]) -> DecodingGraph:
    """读取 dump_graph 的输出；动态边的非软分量不保存，读回后只用于静态解码

    端点与 is_logical 列必须与按边键重建的拓扑一致。
    """
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith(GRAPH_HEADER):
        raise ParseError(1, f"缺少文件头 '{GRAPH_HEADER}'")
    header = dict(part.split("=", 1) for part in lines[0][len(GRAPH_HEADER):].split())
    try:
        spec = CodeSpec(distance=int(header["d"]), rounds=int(header["T"]),
                        basis=Basis(header.get("basis", "Z")))
    except (KeyError, ValueError) as exc:
        raise ParseError(1, f"文件头无效: {exc}")
    n_stab = spec.distance - 1
    entries: Dict[EdgeKey, EdgeProbability] = {}
    listed: Dict[EdgeKey, Tuple[int, Optional[int], Optional[int], bool]] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(line_no, f"应有 8 列，实际 {len(parts)} 列")
        try:
            key = EdgeKey(EdgeKind(parts[0]), int(parts[1]), int(parts[2]))
            probability = float(parts[5])
            is_logical = int(parts[7])
        except ValueError as exc:
            raise ParseError(line_no, str(exc))
        if is_logical not in (0, 1):
            raise ParseError(line_no, f"is_logical 必须是 0 或 1，实际 {is_logical}")
        u = _parse_node(parts[3], n_stab, line_no)
        v = _parse_node(parts[4], n_stab, line_no)
        entries[key] = EdgeProbability(probability)
        listed[key] = (line_no, u, v, bool(is_logical))
    try:
        graph = build_graph(spec, EdgeProbabilityTable(spec, entries))
    except ConstructionError as exc:
        raise ParseError(len(lines), str(exc))
    for key, (line_no, *_rest) in listed.items():
        if key not in graph.edge_index:
            raise ParseError(line_no, f"边 {key} 不属于 d={spec.distance} T={spec.rounds} 的解码图")
    for k, key in enumerate(graph.keys):
        line_no, u, v = listed[key][:3]
        expected_v = None if int(graph.v[k]) == graph.boundary else int(graph.v[k])
        if {u, v} != {int(graph.u[k]), expected_v}:
            raise ParseError(line_no, f"边 {key} 的端点与码参数 d={spec.distance} T={spec.rounds} 的拓扑不符")
        if listed[key][3] != bool(graph.is_logical[k]):
            raise ParseError(line_no, f"边 {key} 的 is_logical 列与拓扑不符")
    return graph
