"""Pose predictors standing in for a learned odometry network.

Every predictor maps a ``(source, target)`` cloud pair to the pose that
takes source coordinates into target coordinates.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.spatial import cKDTree

from .geom import Pose, axis_angle_to_rotation, compose, invert, is_rotation, rotation_error
from .ingest import PointCloud, SamplePool


class IcpError(RuntimeError):
    pass


class DegenerateSystemError(IcpError):
    pass


class PredictorError(RuntimeError):
    pass


@runtime_checkable
class Predictor(Protocol):
    name: str
    deterministic: bool

    def predict(self, source: PointCloud, target: PointCloud) -> Pose: ...


def checked_predict(pred: Predictor, source: PointCloud, target: PointCloud) -> Pose:
    """Run ``pred`` and enforce the rotation invariants on its output."""
    pose = pred.predict(source, target)
    if not isinstance(pose, Pose) or not is_rotation(pose.rotation, 1e-6):
        err = rotation_error(pose.rotation) if isinstance(pose, Pose) else float("nan")
        raise PredictorError(f"{pred.name} returned an invalid pose (rotation error {err:.3g})")
    return pose


# --- nearest neighbours -----------------------------------------------------


class NnIndex:
    """Exact Euclidean nearest neighbour; ties go to the lowest point index."""

    def __init__(self, points):
        pts = np.asarray(points.points if isinstance(points, PointCloud) else points, dtype=np.float64)
        pts = pts.reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("cannot index an empty cloud")
        self.points = pts
        self.tree = cKDTree(pts)

    def __len__(self):
        return len(self.points)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(indices, distances)`` for an ``(m, 3)`` query array."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        k = min(2, len(self.points))
        d, j = self.tree.query(q, k=k)
        if k == 1:
            return j.astype(np.int64), d
        idx, dist = j[:, 0].astype(np.int64), d[:, 0].copy()
        close = d[:, 1] <= d[:, 0] * (1 + 1e-9) + 1e-300
        for row in np.flatnonzero(close):
            cand = np.asarray(self.tree.query_ball_point(q[row], d[row, 0] * (1 + 1e-9) + 1e-300))
            cd = np.linalg.norm(self.points[cand] - q[row], axis=1)
            best = cand[cd == cd.min()].min()
            idx[row] = best
            dist[row] = np.linalg.norm(self.points[best] - q[row])
        return idx, dist

    def nearest(self, q) -> tuple[int, float]:
        i, d = self.query(np.asarray(q, dtype=np.float64)[None])
        return int(i[0]), float(d[0])


def build_index(cloud) -> NnIndex:
    return NnIndex(cloud)


def nearest(index: NnIndex, q) -> tuple[int, float]:
    return index.nearest(q)


# --- normals ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalField:
    normals: np.ndarray
    valid: np.ndarray

    def rotated(self, r: np.ndarray) -> NormalField:
        return NormalField(self.normals @ np.asarray(r).T, self.valid)


def estimate_normals(
    cloud, k_neighbors: int = 10, viewpoint=(0.0, 0.0, 0.0), max_curvature: float = 0.1
) -> NormalField:
    """PCA normals from the ``k_neighbors`` nearest points (the point included).

    Normals face ``viewpoint``. A normal is marked invalid when its
    neighbourhood is collinear or coincident, or when the surface variation
    ``l0 / (l0 + l1 + l2)`` exceeds ``max_curvature`` (no supporting plane).
    """
    pts = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud, dtype=np.float64)
    n = len(pts)
    if n == 0:
        return NormalField(np.zeros((0, 3)), np.zeros(0, dtype=bool))
    k = min(k_neighbors, n)
    _, nbr = cKDTree(pts).query(pts, k=k)
    nbr = nbr.reshape(n, k)
    nb = pts[nbr]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0].copy()
    flip = np.einsum("ni,ni->n", normals, np.asarray(viewpoint) - pts) < 0
    normals[flip] *= -1
    scale = np.maximum(w[:, 2], 1e-300)
    total = w.sum(axis=1)
    valid = (
        (k >= 3)
        & (w[:, 2] > 1e-12)
        & (w[:, 1] > 1e-6 * scale)
        & (w[:, 0] <= max_curvature * np.maximum(total, 1e-300))
    )
    return NormalField(normals, valid)


# --- ICP --------------------------------------------------------------------


def voxel_downsample(cloud: PointCloud, size: float | None) -> PointCloud:
    """Replace the points in each ``size`` voxel by their centroid."""
    if not size or len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / size).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inv, cloud.points)
    inten = None
    if cloud.intensity is not None:
        inten = np.bincount(inv, weights=cloud.intensity, minlength=len(counts)) / counts
    return cloud.with_points(sums / counts[:, None], inten)


def icp_point_to_plane(
    source: PointCloud,
    target: PointCloud,
    init: Pose | None = None,
    max_iters: int = 30,
    tol: float = 1e-6,
    gate: float = 1.0,
    k_neighbors: int = 10,
    min_inlier_fraction: float = 0.2,
    target_normals: NormalField | None = None,
    history: list | None = None,
) -> Pose:
    """Point-to-plane ICP with small-angle Gauss-Newton steps.

    The cost is the mean squared residual over all source points: the
    point-to-plane residual where the matched target point has a valid
    normal, the point distance where it does not, and ``gate^2`` for points
    with no target point within ``gate``. Only valid-normal matches drive
    the Gauss-Newton step. Steps are halved until the
    cost does not increase, so the values appended to ``history`` (one per
    accepted iterate, starting with ``init``) never increase.
    """
    src = source.points
    if len(src) == 0 or len(target) == 0:
        raise IcpError("ICP needs non-empty clouds")
    tree = cKDTree(target.points)
    nf = target_normals or estimate_normals(target, k_neighbors)
    need = max(6, int(np.ceil(min_inlier_fraction * len(src))))

    def linearize(r, t):
        x = src @ r.T + t
        d, j = tree.query(x, k=1)
        near = d <= gate
        ok = near & nf.valid[j]
        if np.count_nonzero(ok) < need:
            return None
        nrm = nf.normals[j[ok]]
        xo = x[ok]
        res = np.einsum("ni,ni->n", xo - target.points[j[ok]], nrm)
        # matches without a usable normal still count, at their point distance
        other = d[near & ~nf.valid[j]]
        cost = (
            np.sum(np.minimum(res**2, gate**2)) + np.sum(other**2) + gate**2 * np.count_nonzero(~near)
        ) / len(src)
        return cost, np.hstack([np.cross(xo, nrm), nrm]), res

    pose = init or Pose.identity()
    r, t = pose.rotation.copy(), pose.translation.copy()
    lin = linearize(r, t)
    if lin is None:
        raise DegenerateSystemError(f"fewer than {need} usable correspondences")
    if history is not None:
        history.append(float(lin[0]))
    for _ in range(max_iters):
        cost, a, res = lin
        h = a.T @ a
        ev = np.linalg.eigvalsh(h)
        if ev[0] <= 1e-10 * ev[-1]:
            raise DegenerateSystemError("point-to-plane normal equations have rank < 6")
        delta = np.linalg.solve(h, -a.T @ res)
        step = 1.0
        for _ in range(8):
            dr = axis_angle_to_rotation(step * delta[:3])
            r2, t2 = dr @ r, dr @ t + step * delta[3:]
            lin2 = linearize(r2, t2)
            if lin2 is not None and lin2[0] <= cost:
                break
            step *= 0.5
        else:
            break
        r, t, lin = r2, t2, lin2
        if history is not None:
            history.append(float(lin[0]))
        if step * np.linalg.norm(delta) < tol:
            break
    return Pose(r, t)


@dataclass
class IcpPredictor:
    """Identity-initialized ICP; an optional wide-gate pass runs first.

    The wide pass pulls the estimate out of the local minima that a tight
    gate produces on repetitive structure.
    """

    k_neighbors: int = 10
    gate: float = 1.0
    max_iters: int = 30
    tol: float = 1e-6
    voxel: float | None = 0.3
    coarse_gate: float | None = 3.0
    name: str = "icp"
    deterministic: bool = True

    def predict(self, source: PointCloud, target: PointCloud) -> Pose:
        src = voxel_downsample(source, self.voxel)
        dst = voxel_downsample(target, self.voxel)
        normals = estimate_normals(dst, self.k_neighbors)
        pose = None
        passes = [(self.gate, self.tol)]
        if self.coarse_gate:
            passes.insert(0, (self.coarse_gate, max(self.tol, 1e-3)))
        for g, tol in passes:
            pose = icp_point_to_plane(
                src, dst, init=pose, max_iters=self.max_iters, tol=tol, gate=g,
                k_neighbors=self.k_neighbors, target_normals=normals,
            )
        return pose


# --- oracles ----------------------------------------------------------------


def _true_pose(pool: SamplePool, source: PointCloud, target: PointCloud) -> Pose:
    if source.seq_id != target.seq_id:
        raise PredictorError(f"unknown frame pair: {source.seq_id!r} vs {target.seq_id!r}")
    try:
        seq = pool.get(source.seq_id)
        rel = seq.relative_pose(source.frame_index, target.frame_index)
    except (KeyError, ValueError, IndexError) as e:
        raise PredictorError(
            f"unknown frame pair {source.seq_id!r}:{source.frame_index}->{target.frame_index} ({e})"
        ) from None
    # account for transforms applied to either cloud after loading
    return compose(target.applied, compose(rel, invert(source.applied)))


@dataclass
class OraclePredictor:
    """Returns the exact ground-truth pose of any (possibly transformed) pair."""

    pool: SamplePool = field(repr=False)
    name: str = "oracle"
    deterministic: bool = True

    def predict(self, source, target):
        return _true_pose(self.pool, source, target)


def _pair_key(source: PointCloud, target: PointCloud) -> list[int]:
    blob = b"".join(
        [
            source.seq_id.encode(),
            np.int64(source.frame_index).tobytes(),
            np.int64(target.frame_index).tobytes(),
            source.applied.rotation.tobytes(),
            source.applied.translation.tobytes(),
            target.applied.rotation.tobytes(),
            target.applied.translation.tobytes(),
        ]
    )
    return [zlib.crc32(blob), zlib.adler32(blob)]


@dataclass
class NoisyOraclePredictor:
    """Ground truth perturbed by seeded noise.

    The rotation error has a uniform axis and a half-normal angle with scale
    ``sigma_rot``; the translation error is normal with ``sigma_trans`` per
    axis. The noise for a pair depends only on ``seed`` and the pair itself
    (including any transform applied to either cloud).
    """

    pool: SamplePool = field(repr=False)
    sigma_rot: float = 0.01
    sigma_trans: float = 0.01
    seed: int = 0
    name: str = "noisy"
    deterministic: bool = True

    def predict(self, source, target):
        exact = _true_pose(self.pool, source, target)
        rng = np.random.default_rng([self.seed & 0xFFFFFFFF, *_pair_key(source, target)])
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = abs(rng.normal(0.0, self.sigma_rot)) if self.sigma_rot > 0 else 0.0
        dt = rng.normal(0.0, 1.0, size=3) * self.sigma_trans
        noise_r = axis_angle_to_rotation(axis * angle) if angle > 0 else np.eye(3)
        return Pose(noise_r @ exact.rotation, exact.translation + dt)


def oracle_predictor(pool: SamplePool) -> OraclePredictor:
    return OraclePredictor(pool)


def noisy_oracle(pool: SamplePool, sigma_rot: float, sigma_trans: float, seed: int = 0) -> NoisyOraclePredictor:
    return NoisyOraclePredictor(pool, sigma_rot, sigma_trans, seed)


def make_predictor(spec: str, pool: SamplePool, seed: int = 0, **icp_kwargs) -> Predictor:
    """Parse ``icp``, ``oracle`` or ``noisy:<sigma_rot>,<sigma_trans>``."""
    spec = spec.strip()
    if spec == "icp":
        return IcpPredictor(**icp_kwargs)
    if spec == "oracle":
        return OraclePredictor(pool)
    if spec.startswith("noisy:"):
        try:
            rot, trans = (float(v) for v in spec[len("noisy:") :].split(","))
        except ValueError:
            raise ValueError(f"bad noisy predictor spec {spec!r}; want noisy:<rot>,<trans>") from None
        return NoisyOraclePredictor(pool, rot, trans, seed)
    raise ValueError(f"unknown predictor {spec!r}")
