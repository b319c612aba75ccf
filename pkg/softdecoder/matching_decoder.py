"""
最小权完美匹配解码模块

缺陷提取、缺陷间最短路径、带边界的完美匹配以及逻辑翻转预测，
另有用于校验的穷举匹配。
"""

import heapq
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import count
from typing import Dict, List, Optional, Tuple

import networkx as nx
import numpy as np

from .code_model import SyndromeMatrix
from .decoding_graph import DecodingGraph, DetectorNode, ShotWeighting
from .errors import DimensionError, InternalInvariantError, RefusalError

MAX_BRUTE_FORCE_DEFECTS = 12
# 匹配前把浮点权重放大为整数，保证 blossom 算法的比较是精确的
_WEIGHT_SCALE = 2.0 ** 32


@dataclass(frozen=True)
class DefectSet:
    """探测器值为 1 的节点"""
    nodes: Tuple[DetectorNode, ...]
    node_ids: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.node_ids)


@dataclass(frozen=True)
class ShortestPath:
    weight: float
    logical_parity: int
    edge_ids: Tuple[int, ...]


@dataclass
class DefectDistances:
    """缺陷两两之间以及缺陷到边界的最短路径"""
    defects: DefectSet
    pair_weight: np.ndarray
    boundary_weight: np.ndarray
    pair_paths: Dict[Tuple[int, int], ShortestPath] = field(default_factory=dict)
    boundary_paths: List[Optional[ShortestPath]] = field(default_factory=list)

    @property
    def n_defects(self) -> int:
        return len(self.defects)

    def pair_path(self, i: int, j: int) -> ShortestPath:
        return self.pair_paths[(min(i, j), max(i, j))]


@dataclass(frozen=True)
class MatchingResult:
    """匹配结果；pairs 中 None 表示边界"""
    pairs: Tuple[Tuple[DetectorNode, Optional[DetectorNode]], ...]
    total_weight: float
    logical_flip: int
    correction_edges: Tuple[int, ...]


def extract_defects(syndrome: SyndromeMatrix, graph: DecodingGraph) -> DefectSet:
    if syndrome.detectors.shape != graph.spec.detector_shape:
        raise DimensionError(
            f"综合征形状 {syndrome.detectors.shape} 与解码图 {graph.spec.detector_shape} 不一致"
        )
    # 节点编号与按行展开的探测器下标一致
    ids = tuple(int(k) for k in np.flatnonzero(syndrome.detectors.ravel()))
    return DefectSet(tuple(graph.node(k) for k in ids), ids)


def _shortest_paths(graph: DecodingGraph, weights: np.ndarray, source: int,
                    targets: set) -> Dict[int, Tuple[float, int, int]]:
    """从 source 出发的 Dijkstra，到达全部 targets 后停止

    标签按 (距离, 边数) 比较，再取前驱边编号较小者；边界节点不向外扩展。
    返回 {node: (dist, hops, pred_edge)}。
    """
    labels: Dict[int, Tuple[float, int, int]] = {source: (0.0, 0, -1)}
    settled = set()
    remaining = set(targets)
    c = count()
    heap = [(0.0, 0, next(c), source)]
    while heap and remaining:
        dist, hops, _, node = heapq.heappop(heap)
        if node in settled:
            continue
        if labels[node][:2] != (dist, hops):
            continue
        settled.add(node)
        remaining.discard(node)
        if node == graph.boundary:
            continue
        for neighbor, edge_id in graph.adjacency[node]:
            if neighbor in settled:
                continue
            candidate = (dist + weights[edge_id], hops + 1, edge_id)
            best = labels.get(neighbor)
            if best is None or candidate < best:
                labels[neighbor] = candidate
                heapq.heappush(heap, (candidate[0], candidate[1], next(c), neighbor))
    if remaining:
        raise InternalInvariantError(f"缺陷 {source} 无法到达节点 {sorted(remaining)}")
    return labels


def _trace(graph: DecodingGraph, labels: Dict[int, Tuple[float, int, int]],
           source: int, target: int) -> ShortestPath:
    edges = []
    parity = 0
    node = target
    while node != source:
        edge_id = labels[node][2]
        edges.append(edge_id)
        parity ^= int(graph.is_logical[edge_id])
        a, b = int(graph.u[edge_id]), int(graph.v[edge_id])
        node = a if b == node else b
    return ShortestPath(float(labels[target][0]), parity, tuple(reversed(edges)))


def defect_distances(weighting: ShotWeighting, defects: DefectSet) -> DefectDistances:
    """对每个缺陷做一次 Dijkstra，得到缺陷间及缺陷到边界的最短路径"""
    graph = weighting.graph
    weights = weighting.weights()
    n = len(defects)
    pair_weight = np.zeros((n, n))
    boundary_weight = np.zeros(n)
    pair_paths: Dict[Tuple[int, int], ShortestPath] = {}
    boundary_paths: List[Optional[ShortestPath]] = []
    for i, source in enumerate(defects.node_ids):
        targets = {graph.boundary} | set(defects.node_ids[i + 1:])
        labels = _shortest_paths(graph, weights, source, targets)
        path = _trace(graph, labels, source, graph.boundary)
        boundary_weight[i] = path.weight
        boundary_paths.append(path)
        for j in range(i + 1, n):
            path = _trace(graph, labels, source, defects.node_ids[j])
            pair_paths[(i, j)] = path
            pair_weight[i, j] = pair_weight[j, i] = path.weight
    return DefectDistances(defects, pair_weight, boundary_weight, pair_paths, boundary_paths)


def _result(distances: DefectDistances, pairing: List[Tuple[int, Optional[int]]]) -> MatchingResult:
    defects = distances.defects
    pairs = []
    edges: List[int] = []
    total = []
    flip = 0
    for i, j in sorted(pairing, key=lambda p: (p[0], -1 if p[1] is None else p[1])):
        if j is None:
            path = distances.boundary_paths[i]
            pairs.append((defects.nodes[i], None))
        else:
            path = distances.pair_path(i, j)
            pairs.append((defects.nodes[i], defects.nodes[j]))
        total.append(path.weight)
        flip ^= path.logical_parity
        edges.extend(path.edge_ids)
    return MatchingResult(tuple(pairs), float(sum(sorted(total))), flip, tuple(sorted(edges)))


def min_weight_matching(distances: DefectDistances) -> MatchingResult:
    """精确最小权完美匹配：每个缺陷配另一缺陷或自己的边界副本，副本之间零代价"""
    n = distances.n_defects
    if n == 0:
        return MatchingResult((), 0.0, 0, ())
    scaled_pair = np.rint(distances.pair_weight * _WEIGHT_SCALE).astype(np.int64)
    scaled_boundary = np.rint(distances.boundary_weight * _WEIGHT_SCALE).astype(np.int64)
    matching_graph = nx.Graph()
    matching_graph.add_nodes_from(range(2 * n))
    for i in range(n):
        for j in range(i + 1, n):
            matching_graph.add_edge(i, j, weight=int(scaled_pair[i, j]))
            matching_graph.add_edge(n + i, n + j, weight=0)
        matching_graph.add_edge(i, n + i, weight=int(scaled_boundary[i]))
    matching = nx.min_weight_matching(matching_graph)

    pairing: List[Tuple[int, Optional[int]]] = []
    matched = set()
    for a, b in matching:
        a, b = min(a, b), max(a, b)
        matched.update((a, b))
        if b < n:
            pairing.append((a, b))
        elif a < n:
            if b != n + a:
                raise InternalInvariantError(f"缺陷 {a} 被匹配到其他缺陷的边界副本 {b - n}")
            pairing.append((a, None))
    if len(matched) != 2 * n:
        raise InternalInvariantError(f"匹配不完美：{2 * n - len(matched)} 个节点未匹配")
    return _result(distances, pairing)


def brute_force_matching(distances: DefectDistances,
                         max_defects: int = MAX_BRUTE_FORCE_DEFECTS) -> MatchingResult:
    """穷举所有配对（含边界），仅用于校验"""
    n = distances.n_defects
    if n > max_defects:
        raise RefusalError(f"缺陷数 {n} 超过穷举上限 {max_defects}")
    pair_weight = distances.pair_weight
    boundary_weight = distances.boundary_weight

    @lru_cache(maxsize=None)
    def best(remaining: Tuple[int, ...]) -> Tuple[float, Tuple[Tuple[int, Optional[int]], ...]]:
        if not remaining:
            return 0.0, ()
        i, rest = remaining[0], remaining[1:]
        weight, pairs = best(rest)
        choice = (boundary_weight[i] + weight, ((i, None),) + pairs)
        for k, j in enumerate(rest):
            weight, pairs = best(rest[:k] + rest[k + 1:])
            candidate = pair_weight[i, j] + weight
            if candidate < choice[0]:
                choice = (candidate, ((i, j),) + pairs)
        return choice

    _, pairing = best(tuple(range(n)))
    return _result(distances, list(pairing))


def decode(weighting: ShotWeighting, syndrome: SyndromeMatrix) -> MatchingResult:
    defects = extract_defects(syndrome, weighting.graph)
    if len(defects) == 0:
        return MatchingResult((), 0.0, 0, ())
    return min_weight_matching(defect_distances(weighting, defects))


def format_result(result: MatchingResult) -> str:
    """结构化文本输出，总权重保留 12 位有效数字"""
    lines = [
        f"total_weight: {result.total_weight:.12g}",
        f"logical_flip: {result.logical_flip}",
        f"pairs: {len(result.pairs)}",
    ]
    for a, b in result.pairs:
        lines.append(f"  {a} - {'boundary' if b is None else b}")
    return "\n".join(lines)


class MatchingDecoder:
    """绑定一张静态解码图的解码器"""

    def __init__(self, graph: DecodingGraph):
        self.graph = graph
        self._static = ShotWeighting.static(graph)

    def decode(self, syndrome: SyndromeMatrix, weighting: Optional[ShotWeighting] = None) -> MatchingResult:
        return decode(weighting or self._static, syndrome)

    def decode_text(self, syndrome: SyndromeMatrix, weighting: Optional[ShotWeighting] = None) -> str:
        return format_result(self.decode(syndrome, weighting))
