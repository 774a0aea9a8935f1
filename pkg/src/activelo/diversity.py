"""Trajectory variability/importance scores and the interval-constrained 0/1 selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .trajgraph import SequenceFeatures, TrajectoryGraph, total_length, turn_energy

EXACT_LIMIT = 24


class InfeasibleSelectionError(ValueError):
    def __init__(self, msg: str, min_u: int):
        super().__init__(msg)
        self.min_u = min_u


@dataclass(frozen=True)
class DiversityWeights:
    var_angle: float = 1 / 3
    var_length: float = 1 / 3
    var_speed: float = 1 / 3
    imp_turn: float = 0.5
    imp_length: float = 0.5

    def __post_init__(self):
        vals = (self.var_angle, self.var_length, self.var_speed, self.imp_turn, self.imp_length)
        if min(vals) < 0:
            raise ValueError("weights must be non-negative")
        if self.var_angle + self.var_length + self.var_speed <= 0:
            raise ValueError("variability weights must not all be zero")
        if self.imp_turn + self.imp_length <= 0:
            raise ValueError("importance weights must not all be zero")


@dataclass(frozen=True)
class ItssConfig:
    u: int = 4
    bins_outlier: int = 3
    bins_speed: int = 3
    weights: DiversityWeights = field(default_factory=DiversityWeights)
    normalize: bool = True

    def __post_init__(self):
        if self.u < 1 or self.bins_outlier < 1 or self.bins_speed < 1:
            raise ValueError("u and bin counts must be >= 1")


@dataclass(frozen=True)
class PoolStats:
    """Per-feature mean and population std of (theta_std, length_std, speed_std)."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_features(cls, feats: Sequence[SequenceFeatures]) -> PoolStats:
        x = np.array([[f.theta_std, f.length_std, f.speed_std] for f in feats], dtype=float)
        return cls(x.mean(axis=0), x.std(axis=0))


@dataclass(frozen=True)
class ScoredSequence:
    id: str
    f_var: float
    f_impor: float
    features: tuple[float, float, float]
    outlier_proportion: float
    speed_mean: float
    bin_outlier: int = 0
    bin_speed: int = 0

    @property
    def score(self) -> float:
        return self.f_var + self.f_impor


@dataclass(frozen=True)
class ItssResult:
    selected: tuple[str, ...]
    objective: float
    exact: bool
    coverage_outlier: dict[int, list[str]]
    coverage_speed: dict[int, list[str]]
    scored: tuple[ScoredSequence, ...] = field(repr=False, default=())


def variability(
    feat: SequenceFeatures, w: DiversityWeights, pool_stats: PoolStats | None = None
) -> float:
    """Weighted sum of the angle, length and speed standard deviations.

    With ``pool_stats`` each term is z-scored against the pool first; a
    feature with zero pool spread contributes 0.
    """
    x = np.array([feat.theta_std, feat.length_std, feat.speed_std], dtype=float)
    if pool_stats is not None:
        # spreads at rounding level count as zero
        spread = pool_stats.std > 1e-9 * np.maximum(1.0, np.abs(pool_stats.mean))
        safe = np.where(spread, pool_stats.std, 1.0)
        x = np.where(spread, (x - pool_stats.mean) / safe, 0.0)
    return float(w.var_angle * x[0] + w.var_length * x[1] + w.var_speed * x[2])


def importance(graph: TrajectoryGraph | SequenceFeatures, pool_total_length: float, w: DiversityWeights) -> float:
    """Turn energy (|speed change| x node angle) plus the sequence's share of pool length."""
    if pool_total_length <= 0:
        raise ValueError("pool_total_length must be positive")
    if isinstance(graph, TrajectoryGraph):
        te, tl = turn_energy(graph), total_length(graph)
    else:
        te, tl = graph.turn_energy, graph.total_length
    return float(w.imp_turn * te + w.imp_length * tl / pool_total_length)


def assign_bins(values: Sequence[float], ids: Sequence[str], n_bins: int) -> list[int]:
    """Equal-population bins over ascending ``values``.

    Position in the sorted order (ties by id) sets a provisional bin; equal
    values then all take the lowest bin any of them reached.
    """
    vals = np.asarray(values, dtype=float)
    n = len(vals)
    if n == 0:
        raise ValueError("cannot bin an empty pool")
    order = sorted(range(n), key=lambda i: (vals[i], ids[i]))
    bins = np.empty(n, dtype=int)
    for b, chunk in enumerate(np.array_split(np.arange(n), n_bins)):
        for pos in chunk:
            bins[order[pos]] = b
    lowest: dict[float, int] = {}
    for i in order:
        lowest.setdefault(vals[i], bins[i])
        bins[i] = lowest[vals[i]]
    return bins.tolist()


def score_pool(
    feats: Sequence[SequenceFeatures], cfg: ItssConfig
) -> list[ScoredSequence]:
    """F_Var, F_Impor and bin indices for every sequence in the candidate pool."""
    if not feats:
        raise ValueError("empty candidate pool")
    stats = PoolStats.from_features(feats) if cfg.normalize else None
    pool_len = sum(f.total_length for f in feats)
    ids = [f.id for f in feats]
    b_o = assign_bins([f.outlier_proportion for f in feats], ids, cfg.bins_outlier)
    b_v = assign_bins([f.speed_mean for f in feats], ids, cfg.bins_speed)
    out = []
    for f, bo, bv in zip(feats, b_o, b_v):
        imp = importance(f, pool_len, cfg.weights) if pool_len > 0 else 0.0
        out.append(
            ScoredSequence(
                f.id,
                variability(f, cfg.weights, stats),
                imp,
                (f.theta_std, f.length_std, f.speed_std),
                f.outlier_proportion,
                f.speed_mean,
                bo,
                bv,
            )
        )
    return out


def min_feasible_u(scored: Sequence[ScoredSequence]) -> int:
    """Smallest set covering every non-empty bin on both axes (bipartite edge cover)."""
    bo = sorted({s.bin_outlier for s in scored})
    bv = sorted({s.bin_speed for s in scored})
    ro, rv = {b: i for i, b in enumerate(bo)}, {b: i for i, b in enumerate(bv)}
    rows = [ro[s.bin_outlier] for s in scored]
    cols = [rv[s.bin_speed] for s in scored]
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(bo), len(bv)))
    matching = maximum_bipartite_matching(graph, perm_type="column")
    nu = int(np.count_nonzero(matching >= 0))
    return len(bo) + len(bv) - nu


def covers(selected: Sequence[ScoredSequence], pool: Sequence[ScoredSequence]) -> bool:
    return {s.bin_outlier for s in selected} == {s.bin_outlier for s in pool} and {
        s.bin_speed for s in selected
    } == {s.bin_speed for s in pool}


def _branch_and_bound(items: list[ScoredSequence], u: int) -> tuple[float, list[int]]:
    """Maximize the summed score of exactly ``u`` items covering every bin.

    ``items`` must be sorted by descending score (ties by id). Include-first
    depth-first search; the bound adds the best scores still available.
    """
    n = len(items)
    scores = np.array([s.score for s in items])
    all_o = {s.bin_outlier for s in items}
    all_v = {s.bin_speed for s in items}
    # bins still reachable from position i onward
    reach_o = [set() for _ in range(n + 1)]
    reach_v = [set() for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        reach_o[i] = reach_o[i + 1] | {items[i].bin_outlier}
        reach_v[i] = reach_v[i + 1] | {items[i].bin_speed}
    prefix = np.concatenate([[0.0], np.cumsum(scores)])

    best_val = -np.inf
    best_set: list[int] = []
    chosen: list[int] = []

    def dfs(i, val, cov_o, cov_v):
        nonlocal best_val, best_set
        k = len(chosen)
        if k == u:
            if len(cov_o) == len(all_o) and len(cov_v) == len(all_v) and val > best_val:
                best_val, best_set = val, list(chosen)
            return
        slots = u - k
        if n - i < slots:
            return
        miss_o = all_o - cov_o
        miss_v = all_v - cov_v
        if len(miss_o) > slots or len(miss_v) > slots:
            return
        if not (miss_o <= reach_o[i] and miss_v <= reach_v[i]):
            return
        if val + prefix[i + slots] - prefix[i] <= best_val:
            return
        s = items[i]
        chosen.append(i)
        dfs(i + 1, val + scores[i], cov_o | {s.bin_outlier}, cov_v | {s.bin_speed})
        chosen.pop()
        dfs(i + 1, val, cov_o, cov_v)

    dfs(0, 0.0, frozenset(), frozenset())
    return best_val, best_set


def _greedy(items: list[ScoredSequence], u: int) -> list[int]:
    """Highest scores first, then repair uncovered bins by swapping out the weakest redundant pick."""
    picked = list(range(u))
    all_o = {s.bin_outlier for s in items}
    all_v = {s.bin_speed for s in items}
    for _ in range(len(items)):
        cov_o = {items[i].bin_outlier for i in picked}
        cov_v = {items[i].bin_speed for i in picked}
        miss = [("o", b) for b in sorted(all_o - cov_o)] + [("v", b) for b in sorted(all_v - cov_v)]
        if not miss:
            return picked
        axis, b = miss[0]
        cand = [
            i for i in range(len(items))
            if i not in picked and (items[i].bin_outlier if axis == "o" else items[i].bin_speed) == b
        ]
        add = min(cand, key=lambda i: (-items[i].score, items[i].id))
        # drop the lowest-scoring pick whose bins stay covered without it
        for j in sorted(picked, key=lambda i: (items[i].score, items[i].id)):
            rest = [i for i in picked if i != j] + [add]
            ro = {items[i].bin_outlier for i in rest}
            rv = {items[i].bin_speed for i in rest}
            if cov_o <= ro and cov_v <= rv:
                picked = rest
                break
        else:
            raise RuntimeError("greedy repair failed")
    return picked


def select_itss(scored: Sequence[ScoredSequence], cfg: ItssConfig, exact_limit: int = EXACT_LIMIT) -> ItssResult:
    """Pick ``cfg.u`` sequences maximizing summed F_Var + F_Impor under bin coverage.

    Pools up to ``exact_limit`` sequences are solved exactly by branch and
    bound; larger pools use a greedy fill with coverage repair and are
    reported as ``exact=False``.
    """
    items = sorted(scored, key=lambda s: (-s.score, s.id))
    n = len(items)
    if n == 0:
        raise ValueError("empty candidate pool")
    u = cfg.u
    lo = min_feasible_u(items)
    if u < lo or u > n:
        raise InfeasibleSelectionError(
            f"u={u} is infeasible: bin coverage needs u >= {lo} (pool size {n})", lo
        )
    if n <= exact_limit:
        _, idx = _branch_and_bound(items, u)
        exact = True
    else:
        idx = _greedy(items, u)
        exact = False
    chosen = sorted((items[i] for i in idx), key=lambda s: s.id)
    cov_o: dict[int, list[str]] = {}
    cov_v: dict[int, list[str]] = {}
    for s in chosen:
        cov_o.setdefault(s.bin_outlier, []).append(s.id)
        cov_v.setdefault(s.bin_speed, []).append(s.id)
    return ItssResult(
        tuple(s.id for s in chosen),
        float(sum(s.score for s in chosen)),
        exact,
        dict(sorted(cov_o.items())),
        dict(sorted(cov_v.items())),
        tuple(scored),
    )

