"""Active incremental selection.

Scene reconstruction loss (SRL) and prediction inconsistency loss (PIL)
rank the unselected sequences; the top ``h`` join the training set each
round.
"""

from __future__ import annotations

import logging
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geom import (
    Pose,
    euler_to_rotation,
    geodesic_distance,
    mean_rotation,
    rotation_to_euler,
)
from .ingest import PointCloud, SamplePool, SequenceRecord, transform_cloud
from .predictor import (
    IcpError,
    NormalField,
    Predictor,
    PredictorError,
    checked_predict,
    estimate_normals,
    voxel_downsample,
)

log = logging.getLogger(__name__)


class UnusablePairError(RuntimeError):
    pass


@dataclass(frozen=True)
class AugmentationConfig:
    c: int = 8
    aug_alpha: float = 0.1
    floor_trans: float = 0.02
    floor_rot: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.c < 2:
            raise ValueError("at least 2 augmentations are needed for a variance")
        if not 0.0 <= self.aug_alpha <= 1.0:
            raise ValueError("aug_alpha must lie in [0, 1]")


@dataclass(frozen=True)
class AisConfig:
    """Loss weights, selection budget and evaluation knobs."""

    h: int = 5
    iter: int = 6
    srl_weight: float = 0.5
    pil_weight: float = 0.5
    normalize: bool = True
    stride: int = 1
    gate: float = 1.0
    k_neighbors: int = 10
    voxel: float | None = 0.3
    workers: int = 1
    aug: AugmentationConfig = field(default_factory=AugmentationConfig)

    def __post_init__(self):
        if self.h < 1 or self.iter < 0 or self.stride < 1:
            raise ValueError("h and stride must be >= 1, iter >= 0")
        if self.srl_weight < 0 or self.pil_weight < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class PairMetrics:
    index: int
    f_recon: float
    f_incon: float
    recovered: tuple[Pose, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class SequenceLossReport:
    id: str
    mean_srl: float
    mean_pil: float
    loss: float
    n_pairs: int
    pairs: tuple[PairMetrics, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "mean_srl": self.mean_srl,
            "mean_pil": self.mean_pil,
            "loss": self.loss,
            "n_pairs": self.n_pairs,
        }


@dataclass(frozen=True)
class SelectionState:
    selected: tuple[str, ...]
    remaining: tuple[str, ...]
    itr: int = 0
    h: int = 5
    iter: int = 0
    rounds: tuple[tuple[SequenceLossReport, ...], ...] = ()
    admitted: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if set(self.selected) & set(self.remaining):
            raise ValueError("a sequence cannot be both selected and remaining")

    @classmethod
    def initial(cls, pool_ids: Sequence[str], initial: Iterable[str], h: int = 5, iter: int = 0) -> SelectionState:
        init = tuple(initial)
        if not init:
            raise ValueError("initial training set is empty")
        missing = [i for i in init if i not in pool_ids]
        if missing:
            raise ValueError(f"initial ids not in pool: {missing}")
        rem = tuple(i for i in pool_ids if i not in init)
        return cls(init, rem, 0, h, iter, (), tuple((i, 0) for i in init))


# --- per-pair metrics -------------------------------------------------------


def scene_recon_loss(
    pred: Predictor | Pose,
    source: PointCloud,
    target: PointCloud,
    normals: NormalField | None = None,
    gate: float = 1.0,
    k_neighbors: int = 10,
) -> float:
    """Mean absolute point-to-plane residual of the predicted alignment.

    Each source point is moved by the predicted pose and matched to its
    nearest target point; matches farther than ``gate`` or landing on an
    invalid normal are ignored. ``pred`` may be a predictor or a ready pose.
    """
    pose = pred if isinstance(pred, Pose) else checked_predict(pred, source, target)
    nf = normals if normals is not None else estimate_normals(target, k_neighbors)
    moved = source.points @ pose.rotation.T + pose.translation
    d, j = cKDTree(target.points).query(moved, k=1)
    ok = (d <= gate) & nf.valid[j]
    if not ok.any():
        raise UnusablePairError("no accepted correspondences")
    res = np.einsum("ni,ni->n", moved[ok] - target.points[j[ok]], nf.normals[j[ok]])
    return float(np.mean(np.abs(res)))


def _pose_components(p: Pose) -> np.ndarray:
    return np.concatenate([p.translation, rotation_to_euler(p.rotation, warn=False)])


def sample_augmentations(
    expected: Pose, cfg: AugmentationConfig, rng: np.random.Generator | None = None
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Draw ``cfg.c`` rigid perturbations ``(delta_R, delta_t)``.

    Each of (x, y, z, roll, pitch, yaw) is drawn independently from a
    zero-mean normal whose standard deviation is ``aug_alpha`` times the
    magnitude of that component of ``expected``, floored at
    ``floor_trans``/``floor_rot``.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    comp = np.abs(_pose_components(expected))
    floors = np.array([cfg.floor_trans] * 3 + [cfg.floor_rot] * 3)
    sigma = np.maximum(cfg.aug_alpha * comp, floors)
    draws = rng.normal(size=(cfg.c, 6)) * sigma
    return [(euler_to_rotation(d[3:]), d[:3].copy()) for d in draws]


def recover_pose(predicted: Pose, delta: tuple[np.ndarray, np.ndarray] | Pose) -> Pose:
    """Undo an augmentation applied to the target cloud: ``delta^-1 o predicted``."""
    if isinstance(delta, Pose):
        dr, dt = delta.rotation, delta.translation
    else:
        dr, dt = np.asarray(delta[0]), np.asarray(delta[1])
    dri = dr.T
    return Pose(dri @ predicted.rotation, dri @ (predicted.translation - dt))


def translation_variance(ts: Sequence[np.ndarray]) -> float:
    t = np.asarray([p.translation if isinstance(p, Pose) else p for p in ts], dtype=float)
    if len(t) < 2:
        raise ValueError("need at least 2 samples")
    return float(np.mean(np.sum((t - t.mean(axis=0)) ** 2, axis=1)))


def rotation_variance(rs: Sequence[np.ndarray]) -> float:
    """Mean squared geodesic distance to the Euler-averaged rotation."""
    rs = [r.rotation if isinstance(r, Pose) else np.asarray(r) for r in rs]
    if len(rs) < 2:
        raise ValueError("need at least 2 samples")
    rbar = mean_rotation(rs)
    return float(np.mean([geodesic_distance(rbar, r) ** 2 for r in rs]))


def prediction_inconsistency(
    pred: Predictor,
    source: PointCloud,
    target: PointCloud,
    cfg: AugmentationConfig,
    rng: np.random.Generator | None = None,
    expected: Pose | None = None,
) -> tuple[float, tuple[Pose, ...]]:
    """Variance of the poses recovered from ``cfg.c`` augmented targets.

    Returns ``(var_R + var_t, recovered poses)``. Augmentations whose
    prediction fails are dropped; fewer than two survivors is an error.
    """
    if expected is None:
        expected = checked_predict(pred, source, target)
    recovered = []
    for dr, dt in sample_augmentations(expected, cfg, rng):
        aug = transform_cloud(Pose(dr, dt), target)
        try:
            p = checked_predict(pred, source, aug)
        except (IcpError, PredictorError, np.linalg.LinAlgError) as e:
            log.debug("augmented prediction failed: %s", e)
            continue
        recovered.append(recover_pose(p, (dr, dt)))
    if len(recovered) < 2:
        raise UnusablePairError(f"only {len(recovered)} augmentations survived")
    var = rotation_variance(recovered) + translation_variance(recovered)
    return var, tuple(recovered)


def _pair_rng(seed: int, seq_id: str, pair: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(seq_id.encode()), pair])


def pair_metrics(pred: Predictor, seq: SequenceRecord, i: int, cfg: AisConfig) -> PairMetrics:
    src = voxel_downsample(seq.cloud(i), cfg.voxel)
    dst = voxel_downsample(seq.cloud(i + 1), cfg.voxel)
    expected = checked_predict(pred, src, dst)
    srl = scene_recon_loss(expected, src, dst, gate=cfg.gate, k_neighbors=cfg.k_neighbors)
    pil, rec = prediction_inconsistency(
        pred, src, dst, cfg.aug, _pair_rng(cfg.aug.seed, seq.id, i), expected
    )
    return PairMetrics(i, srl, pil, rec)


def evaluate_sequence(pred: Predictor, seq: SequenceRecord, cfg: AisConfig) -> list[PairMetrics]:
    """SRL and PIL on every ``cfg.stride``-th consecutive pair; unusable pairs are skipped."""
    if seq.frame_count < 2:
        raise ValueError(f"sequence {seq.id!r} has fewer than 2 frames")
    out = []
    for i in range(0, seq.frame_count - 1, cfg.stride):
        try:
            out.append(pair_metrics(pred, seq, i, cfg))
        except (UnusablePairError, IcpError, PredictorError, np.linalg.LinAlgError) as e:
            log.warning("%s pair %d unusable: %s", seq.id, i, e)
    if not out:
        raise UnusablePairError(f"sequence {seq.id!r}: every pair is unusable")
    return out


def combine_losses(
    metrics: dict[str, Sequence[PairMetrics]], cfg: AisConfig
) -> list[SequenceLossReport]:
    """Per-sequence ``L = (a * sum SRL + b * sum PIL) / n``.

    With ``cfg.normalize`` the per-sequence mean SRL and mean PIL are first
    min-max scaled across the sequences given, so the two weights act on
    comparable [0, 1] quantities.
    """
    ids = sorted(metrics)
    srl = np.array([np.mean([p.f_recon for p in metrics[i]]) for i in ids])
    pil = np.array([np.mean([p.f_incon for p in metrics[i]]) for i in ids])
    if cfg.normalize:
        srl_n, pil_n = _minmax(srl), _minmax(pil)
    else:
        srl_n, pil_n = srl, pil
    reports = []
    for k, sid in enumerate(ids):
        loss = cfg.srl_weight * srl_n[k] + cfg.pil_weight * pil_n[k]
        reports.append(
            SequenceLossReport(sid, float(srl[k]), float(pil[k]), float(loss), len(metrics[sid]), tuple(metrics[sid]))
        )
    return reports


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def sequence_loss(
    pred: Predictor, seq: SequenceRecord, cfg: AisConfig
) -> SequenceLossReport:
    """Unnormalized loss of a single sequence."""
    return combine_losses({seq.id: evaluate_sequence(pred, seq, cfg)}, replace(cfg, normalize=False))[0]


# --- selection loop ---------------------------------------------------------


def select_increment(state: SelectionState, reports: Sequence[SequenceLossReport]) -> SelectionState:
    """Move the ``h`` highest-loss remaining sequences (ties by id) into the selected set."""
    if not state.remaining:
        raise ValueError("no remaining sequences")
    by_id = {r.id: r for r in reports}
    missing = [i for i in state.remaining if i not in by_id]
    if missing:
        raise ValueError(f"no loss report for {missing}")
    ranked = sorted(state.remaining, key=lambda i: (-by_id[i].loss, i))
    take = ranked[: min(state.h, len(ranked))]
    itr = state.itr + 1
    return SelectionState(
        state.selected + tuple(take),
        tuple(i for i in state.remaining if i not in take),
        itr,
        state.h,
        state.iter,
        state.rounds + (tuple(by_id[i] for i in ranked),),
        state.admitted + tuple((i, itr) for i in take),
    )


PredictorFactory = Callable[[Sequence[str]], Predictor]


def _workers(cfg: AisConfig) -> int:
    env = os.environ.get("ACTIVELO_WORKERS")
    return max(1, int(env)) if env else max(1, cfg.workers)


def run_active_loop(
    pool: SamplePool,
    initial: Iterable[str],
    pred_factory: PredictorFactory,
    cfg: AisConfig,
    on_round: Callable[[SelectionState], None] | None = None,
) -> list[SelectionState]:
    """Iterate train -> evaluate remaining -> admit top ``h``.

    ``pred_factory`` is the training hook: it is called at the start of every
    round with the currently selected ids and returns the predictor for that
    round. The bundled predictors need no training, so a factory may return
    the same object each time; per-sequence metrics are then reused instead
    of being recomputed.
    """
    state = SelectionState.initial(pool.ids, initial, cfg.h, cfg.iter)
    history = [state]
    cache: dict[str, list[PairMetrics]] = {}
    last_pred = None
    for _ in range(cfg.iter):
        if not state.remaining:
            break
        pred = pred_factory(state.selected)
        if pred is not last_pred or not getattr(pred, "deterministic", False):
            cache.clear()
        last_pred = pred
        todo = [sid for sid in state.remaining if sid not in cache]
        seqs = [pool.get(sid) for sid in todo]
        nw = _workers(cfg)
        if nw > 1 and len(seqs) > 1:
            with ThreadPoolExecutor(nw) as ex:
                results = list(ex.map(lambda s: evaluate_sequence(pred, s, cfg), seqs))
        else:
            results = [evaluate_sequence(pred, s, cfg) for s in seqs]
        cache.update(zip(todo, results))
        reports = combine_losses({sid: cache[sid] for sid in state.remaining}, cfg)
        state = select_increment(state, reports)
        history.append(state)
        if on_round is not None:
            on_round(state)
    return history
