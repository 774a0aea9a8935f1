"""Trajectory segmentation into nodes/edges and per-sequence features."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geom import compose, invert, transform_points
from .ingest import SequenceRecord

log = logging.getLogger(__name__)


class StraightSequenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SegmentParams:
    """Turn detection: ``window`` seconds, ``threshold`` radians, ``min_gap`` frames.

    ``min_gap=None`` means ``window * frame_rate``.
    """

    window: float = 2.0
    threshold: float = np.deg2rad(15.0)
    min_gap: int | None = None
    plane: tuple[int, int] = (0, 1)


@dataclass(frozen=True)
class TrajNode:
    frame_index: int
    position: np.ndarray
    angle: float | None = None


@dataclass(frozen=True)
class TrajEdge:
    start_node: int
    end_node: int
    span: tuple[int, int]
    length: float = 0.0
    speed: float = 0.0


@dataclass(frozen=True)
class TrajectoryGraph:
    nodes: tuple[TrajNode, ...]
    edges: tuple[TrajEdge, ...]
    frame_rate: float = 10.0

    @property
    def m(self) -> int:
        """Edge count; nodes are indexed 0..m."""
        return len(self.edges)

    @property
    def interior_angles(self) -> np.ndarray:
        return np.array([n.angle for n in self.nodes[1:-1]], dtype=float)

    @property
    def node_frames(self) -> list[int]:
        return [n.frame_index for n in self.nodes]


@dataclass(frozen=True)
class SequenceFeatures:
    id: str
    m: int
    theta_mean: float
    theta_std: float
    speed_mean: float
    speed_std: float
    length_mean: float
    length_std: float
    outlier_proportion: float
    total_length: float
    turn_energy: float
    weather: str = "general"
    per_frame_outliers: tuple[float, ...] = field(default=(), repr=False)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def heading_rates(positions: np.ndarray, plane=(0, 1), still: float = 1e-6) -> np.ndarray:
    """Signed heading change at each frame (0 at both ends).

    Steps shorter than ``still`` metres inherit the previous heading, so a
    stationary vehicle does not register a turn.
    """
    xy = positions[:, list(plane)]
    steps = np.diff(xy, axis=0)
    norms = np.linalg.norm(steps, axis=1)
    heads = np.arctan2(steps[:, 1], steps[:, 0])
    moving = norms > still
    if not moving.any():
        return np.zeros(len(positions))
    first = int(np.argmax(moving))
    last = heads[first]
    for k in range(len(heads)):
        if moving[k]:
            last = heads[k]
        else:
            heads[k] = last
    rate = np.zeros(len(positions))
    rate[1:-1] = _wrap(np.diff(heads))
    return rate


def segment_trajectory(seq: SequenceRecord, params: SegmentParams | None = None) -> TrajectoryGraph:
    """Split a trajectory into nodes at turns.

    A frame is a turn candidate when the signed heading change accumulated
    over a centred window of ``params.window`` seconds exceeds the threshold.
    Each contiguous run of candidates yields one node at its frame of largest
    heading-change rate. Nodes closer than ``min_gap`` frames are merged,
    keeping the one with the larger accumulated change. The first and last
    frames are always nodes.
    """
    params = params or SegmentParams()
    pos = seq.positions
    n = len(pos)
    if n < 2:
        raise ValueError("segmentation needs at least 2 frames")
    r = seq.frame_rate
    rate = heading_rates(pos, params.plane)
    half = max(1, int(round(params.window * r / 2)))
    csum = np.concatenate([[0.0], np.cumsum(rate)])
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx + half + 1, 0, n)
    accum = np.abs(csum[hi] - csum[lo])
    # smoothed rate picks the peak of a spread-out turn
    smooth = np.abs(np.convolve(rate, np.ones(3) / 3, mode="same"))
    score = np.abs(rate) + 1e-9 * smooth

    cand = accum > params.threshold
    cand[0] = cand[-1] = False
    picks: list[tuple[int, float]] = []
    k = 1
    while k < n - 1:
        if not cand[k]:
            k += 1
            continue
        j = k
        while j + 1 < n - 1 and cand[j + 1]:
            j += 1
        run = np.arange(k, j + 1)
        best = int(run[np.argmax(score[run])])
        picks.append((best, float(accum[best])))
        k = j + 1

    gap = params.min_gap if params.min_gap is not None else int(round(params.window * r))
    merged: list[tuple[int, float]] = []
    for f, a in picks:
        if merged and f - merged[-1][0] < gap:
            if a > merged[-1][1]:
                merged[-1] = (f, a)
            continue
        merged.append((f, a))

    frames = [0] + [f for f, _ in merged] + [n - 1]
    return build_graph(seq, frames)


def build_graph(seq: SequenceRecord, node_frames) -> TrajectoryGraph:
    """Graph with the given node frames, node angles and edge features filled in."""
    frames = sorted(set(int(f) for f in node_frames))
    if frames[0] != 0 or frames[-1] != seq.frame_count - 1:
        raise ValueError("first and last frames must be nodes")
    pos = seq.positions
    nodes = [TrajNode(f, pos[f]) for f in frames]
    for k in range(1, len(nodes) - 1):
        nodes[k] = TrajNode(frames[k], pos[frames[k]], _angle(pos[frames[k - 1]], pos[frames[k]], pos[frames[k + 1]], k))
    edges = tuple(
        _edge(seq, k, frames[k], frames[k + 1]) for k in range(len(frames) - 1)
    )
    return TrajectoryGraph(tuple(nodes), edges, seq.frame_rate)


def _angle(a, b, c, k=None) -> float:
    d1 = np.asarray(b, dtype=float) - a
    d2 = np.asarray(c, dtype=float) - b
    n1, n2 = np.linalg.norm(d1), np.linalg.norm(d2)
    if n1 == 0 or n2 == 0:
        raise ValueError(f"node {k}: zero-length adjacent vector")
    return float(np.arccos(np.clip(d1 @ d2 / (n1 * n2), -1.0, 1.0)))


def node_angle(graph: TrajectoryGraph, k: int) -> float:
    """Turning angle (radians) between the vectors into and out of node ``k``."""
    if not 0 < k < len(graph.nodes) - 1:
        raise ValueError(f"node {k} is not an interior node")
    p = [graph.nodes[i].position for i in (k - 1, k, k + 1)]
    return _angle(*p, k=k)


def _edge(seq: SequenceRecord, k: int, i: int, j: int) -> TrajEdge:
    steps = np.diff(seq.positions[i : j + 1], axis=0)
    length = float(np.linalg.norm(steps, axis=1).sum())
    speed = length / ((j - i + 1) / seq.frame_rate)
    return TrajEdge(k, k + 1, (i, j), length, speed)


def edge_features(graph: TrajectoryGraph, seq: SequenceRecord) -> TrajectoryGraph:
    """Recompute edge length and speed from the sequence positions."""
    edges = tuple(_edge(seq, k, *e.span) for k, e in enumerate(graph.edges))
    return TrajectoryGraph(graph.nodes, edges, seq.frame_rate)


def angle_stats(graph: TrajectoryGraph) -> tuple[float, float]:
    """Mean and population std of the interior node angles."""
    th = graph.interior_angles
    if len(th) == 0:
        warnings.warn("no interior nodes (straight sequence)", StraightSequenceWarning, stacklevel=2)
        return 0.0, 0.0
    mean = th.sum() / len(th)
    return float(mean), float(np.sqrt(((th - mean) ** 2).sum() / len(th)))


def edge_stats(graph: TrajectoryGraph) -> tuple[float, float, float, float]:
    """``(speed_mean, speed_std, length_mean, length_std)`` with divisor m."""
    v = np.array([e.speed for e in graph.edges])
    l = np.array([e.length for e in graph.edges])
    return float(v.mean()), float(v.std()), float(l.mean()), float(l.std())


def turn_energy(graph: TrajectoryGraph) -> float:
    """Sum over interior nodes of |speed change| times node angle."""
    v = [e.speed for e in graph.edges]
    return float(
        sum(abs(v[k - 1] - v[k]) * graph.nodes[k].angle for k in range(1, len(graph.nodes) - 1))
    )


def total_length(graph: TrajectoryGraph) -> float:
    return float(sum(e.length for e in graph.edges))


def outlier_proportion(seq: SequenceRecord, gt_poses=None, eps: float = 0.3, stride: int = 1):
    """Per-pair outlier fractions ``o_i`` and the sequence total ``s_o``.

    Each frame is moved into the next frame's coordinates with the
    ground-truth relative pose; a point is an outlier when its nearest
    neighbour in the next frame is farther than ``eps``. ``s_o`` pools the
    counts over all pairs.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if seq.clouds is None:
        raise ValueError(f"sequence {seq.id!r} has no point clouds")
    poses = gt_poses if gt_poses is not None else seq.gt_poses
    if poses is None:
        raise ValueError(f"sequence {seq.id!r} has no ground-truth poses")
    per_frame = []
    n_out = n_all = 0
    for i in range(0, seq.frame_count - 1, stride):
        src, dst = seq.cloud(i), seq.cloud(i + 1)
        if len(src) == 0 or len(dst) == 0:
            log.warning("%s: empty frame in pair %d, skipped", seq.id, i)
            continue
        rel = compose(invert(poses[i + 1]), poses[i])
        moved = transform_points(rel, src.points)
        d, _ = cKDTree(dst.points).query(moved, k=1)
        out = int(np.count_nonzero(d > eps))
        per_frame.append(out / len(src))
        n_out += out
        n_all += len(src)
    s_o = n_out / n_all if n_all else 0.0
    return per_frame, s_o


def sequence_features(
    seq: SequenceRecord, params: SegmentParams | None = None, eps: float = 0.3, stride: int = 1
) -> tuple[SequenceFeatures, TrajectoryGraph]:
    graph = segment_trajectory(seq, params)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StraightSequenceWarning)
        th_mean, th_std = angle_stats(graph)
    v_mean, v_std, l_mean, l_std = edge_stats(graph)
    if seq.clouds is not None and seq.gt_poses is not None:
        per, s_o = outlier_proportion(seq, eps=eps, stride=stride)
    else:
        per, s_o = [], 0.0
    feat = SequenceFeatures(
        seq.id, graph.m, th_mean, th_std, v_mean, v_std, l_mean, l_std, s_o,
        total_length(graph), turn_energy(graph), seq.weather, tuple(per),
    )
    return feat, graph
