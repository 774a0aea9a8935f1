"""Sequence pools: point clouds, KITTI-style pose/velodyne files, JSON manifests."""

from __future__ import annotations

import json
import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geom import Pose, compose, invert, is_rotation, orthonormalize, rotation_error, transform_points

log = logging.getLogger(__name__)

WEATHER_TAGS = ("general", "snowy")


class PoseFileError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def _readonly(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """One LiDAR frame.

    ``applied`` records any rigid transform applied to the cloud after it was
    read from its sequence (identity for raw frames). The oracle predictors
    use it to stay exact on augmented copies.
    """

    points: np.ndarray
    intensity: np.ndarray | None = None
    frame_index: int = 0
    seq_id: str = ""
    applied: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        pts = _readonly(self.points).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.intensity is not None:
            inten = _readonly(self.intensity).reshape(-1)
            if len(inten) != len(pts):
                raise ValueError("intensity length differs from point count")
            object.__setattr__(self, "intensity", inten)

    def __len__(self):
        return len(self.points)

    def with_points(self, points, intensity=None) -> PointCloud:
        return PointCloud(points, intensity, self.frame_index, self.seq_id, self.applied)


def transform_cloud(p: Pose, cloud: PointCloud) -> PointCloud:
    """Map every point by ``R q + t``; intensity and identity are kept."""
    return PointCloud(
        transform_points(p, cloud.points),
        cloud.intensity,
        cloud.frame_index,
        cloud.seq_id,
        compose(p, cloud.applied),
    )


class CloudSource:
    """Resolves a frame index to its :class:`PointCloud`."""

    def __len__(self) -> int:
        raise NotImplementedError

    def get(self, index: int) -> PointCloud:
        raise NotImplementedError

    def __getitem__(self, index: int) -> PointCloud:
        return self.get(index)


class InMemorySource(CloudSource):
    def __init__(self, clouds: Sequence[PointCloud]):
        self._clouds = tuple(clouds)

    def __len__(self):
        return len(self._clouds)

    def get(self, index):
        return self._clouds[index]


class BinDirectorySource(CloudSource):
    """Velodyne ``.bin`` files in a directory, loaded lazily behind an LRU cache."""

    def __init__(self, files: Sequence[Path], seq_id: str = "", cache_size: int = 16):
        self._files = tuple(Path(f) for f in files)
        self._seq_id = seq_id
        self._cache: OrderedDict[int, PointCloud] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    @classmethod
    def from_directory(cls, directory, seq_id="", cache_size=16) -> BinDirectorySource:
        return cls(sorted(Path(directory).glob("*.bin")), seq_id, cache_size)

    def __len__(self):
        return len(self._files)

    def get(self, index):
        with self._lock:
            if index in self._cache:
                self._cache.move_to_end(index)
                return self._cache[index]
        cloud = load_point_cloud(self._files[index], frame_index=index, seq_id=self._seq_id)
        with self._lock:
            self._cache[index] = cloud
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return cloud


@dataclass(frozen=True, eq=False)
class SequenceRecord:
    id: str
    positions: np.ndarray
    frame_rate: float
    weather: str = "general"
    gt_poses: tuple[Pose, ...] | None = None
    clouds: CloudSource | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = _readonly(self.positions).reshape(-1, 3)
        object.__setattr__(self, "positions", pos)
        if len(pos) < 2:
            raise ValueError(f"sequence {self.id!r} needs at least 2 frames")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        if self.weather not in WEATHER_TAGS:
            raise ValueError(f"weather must be one of {WEATHER_TAGS}, got {self.weather!r}")
        if self.gt_poses is not None:
            object.__setattr__(self, "gt_poses", tuple(self.gt_poses))
            if len(self.gt_poses) != len(pos):
                raise ValueError("gt_poses length differs from positions")

    @property
    def frame_count(self) -> int:
        return len(self.positions)

    def relative_pose(self, i: int, j: int) -> Pose:
        """Ground-truth transform taking frame ``i`` coordinates into frame ``j``."""
        if self.gt_poses is None:
            raise ValueError(f"sequence {self.id!r} has no ground-truth poses")
        return compose(invert(self.gt_poses[j]), self.gt_poses[i])

    def cloud(self, i: int) -> PointCloud:
        if self.clouds is None:
            raise ValueError(f"sequence {self.id!r} has no point clouds")
        return self.clouds.get(i)


@dataclass(frozen=True)
class SamplePool:
    sequences: tuple[SequenceRecord, ...]
    manifest_path: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        ids = [s.id for s in self.sequences]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ManifestError(f"duplicate sequence ids: {dup}")

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.sequences]

    def get(self, seq_id: str) -> SequenceRecord:
        for s in self.sequences:
            if s.id == seq_id:
                return s
        raise KeyError(seq_id)

    def by_weather(self, tag: str) -> list[SequenceRecord]:
        return [s for s in self.sequences if s.weather == tag]


def positions_from_poses(poses: Sequence[Pose]) -> np.ndarray:
    t = np.stack([p.translation for p in poses])
    return t - t[0]


# --- pose files -------------------------------------------------------------


def parse_pose_line(line: str, lineno: int = 0) -> Pose:
    parts = line.split()
    if len(parts) != 12:
        raise PoseFileError(f"line {lineno}: expected 12 numbers, got {len(parts)}")
    try:
        vals = np.array([float(v) for v in parts])
    except ValueError as e:
        raise PoseFileError(f"line {lineno}: {e}") from None
    if not np.all(np.isfinite(vals)):
        raise PoseFileError(f"line {lineno}: non-finite value")
    m = vals.reshape(3, 4)
    r = m[:, :3]
    err = rotation_error(r)
    if err > 1e-2:
        raise PoseFileError(f"line {lineno}: rotation is not orthonormal (error {err:.3g})")
    if err > 1e-6:
        r = orthonormalize(r)
    return Pose(r, m[:, 3])


def load_pose_file(path) -> list[Pose]:
    """Read a KITTI odometry pose file: 12 row-major ``[R|t]`` numbers per line."""
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            poses.append(parse_pose_line(line, lineno))
    return poses


def save_pose_file(path, poses: Sequence[Pose], digits: int = 9) -> None:
    with open(path, "w") as fh:
        for p in poses:
            m = np.hstack([p.rotation, p.translation[:, None]]).reshape(-1)
            fh.write(" ".join(f"{v:.{digits}g}" for v in m) + "\n")


# --- velodyne clouds --------------------------------------------------------


def load_point_cloud(path, frame_index: int = 0, seq_id: str = "") -> PointCloud:
    """Read little-endian float32 ``(x, y, z, reflectance)`` records."""
    path = Path(path)
    size = path.stat().st_size
    if size % 16:
        raise ValueError(f"{path}: size {size} is not a multiple of 16 bytes")
    if size == 0:
        log.warning("%s: empty point cloud", path)
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    bad = ~np.all(np.isfinite(raw[:, :3]), axis=1)
    if bad.any():
        log.warning("%s: dropped %d points with non-finite coordinates", path, int(bad.sum()))
        raw = raw[~bad]
    return PointCloud(raw[:, :3], raw[:, 3], frame_index, seq_id)


def save_point_cloud(path, cloud: PointCloud) -> None:
    inten = cloud.intensity if cloud.intensity is not None else np.zeros(len(cloud))
    rec = np.empty((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud.points
    rec[:, 3] = inten
    rec.tofile(path)


# --- manifests --------------------------------------------------------------


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def load_manifest_entries(manifest_path) -> list[dict]:
    path = Path(manifest_path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from None
    entries = doc.get("sequences") if isinstance(doc, dict) else doc
    if not entries:
        raise ManifestError("manifest lists no sequences")
    return list(entries)


def build_sequence(entry: dict, base: Path) -> SequenceRecord:
    """Materialize one manifest entry (file-backed or synthetic)."""
    from .synth import SynthSpec, synth_sequence

    sid = str(entry.get("id", ""))
    if not sid:
        raise ManifestError("manifest entry without an id")
    weather = entry.get("weather", "general")
    if "synth" in entry:
        spec = SynthSpec.from_dict(entry["synth"])
        seq = synth_sequence(spec, seed=int(entry.get("seed", 0)), seq_id=sid, weather=weather)
        return seq
    try:
        pose_path = _resolve(base, entry["poses"])
        frame_rate = float(entry["frame_rate"])
    except KeyError as e:
        raise ManifestError(f"sequence {sid}: missing field {e}") from None
    if not pose_path.is_file():
        raise ManifestError(f"sequence {sid}: pose file not found: {pose_path}")
    try:
        poses = load_pose_file(pose_path)
    except PoseFileError as e:
        raise ManifestError(f"sequence {sid}: {e}") from None
    clouds = None
    if entry.get("clouds"):
        cdir = _resolve(base, entry["clouds"])
        if not cdir.is_dir():
            raise ManifestError(f"sequence {sid}: cloud directory not found: {cdir}")
        clouds = BinDirectorySource.from_directory(cdir, seq_id=sid)
        if len(clouds) != len(poses):
            raise ManifestError(
                f"sequence {sid}: {len(clouds)} cloud files but {len(poses)} poses"
            )
    try:
        return SequenceRecord(
            sid, positions_from_poses(poses), frame_rate, weather, tuple(poses), clouds,
            meta={"source": str(pose_path)},
        )
    except ValueError as e:
        raise ManifestError(f"sequence {sid}: {e}") from None


def build_pool(manifest_path) -> SamplePool:
    """Build a :class:`SamplePool` from a JSON manifest.

    The manifest is ``{"sequences": [...]}`` where each entry has ``id``,
    ``poses`` (KITTI pose file), optional ``clouds`` (velodyne directory),
    ``frame_rate`` and ``weather``; or ``id``, ``synth`` (a
    :class:`~activelo.synth.SynthSpec` dict), ``seed`` and ``weather``.
    Relative paths resolve against the manifest's directory.
    """
    path = Path(manifest_path)
    entries = load_manifest_entries(path)
    ids = [str(e.get("id", "")) for e in entries]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise ManifestError(f"duplicate sequence ids: {dup}")
    seqs = [build_sequence(e, path.parent) for e in entries]
    return SamplePool(tuple(seqs), str(path))


def build_pool_partial(manifest_path) -> tuple[SamplePool, list[tuple[str, str]]]:
    """Like :func:`build_pool` but keeps going past broken entries.

    Returns the pool of entries that loaded and ``(id, message)`` for each
    one that did not. Manifest-level problems still raise.
    """
    path = Path(manifest_path)
    entries = load_manifest_entries(path)
    ids = [str(e.get("id", "")) for e in entries]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise ManifestError(f"duplicate sequence ids: {dup}")
    seqs, failures = [], []
    for sid, e in zip(ids, entries):
        try:
            seqs.append(build_sequence(e, path.parent))
        except (ManifestError, PoseFileError, ValueError, OSError) as err:
            failures.append((sid, str(err)))
    return SamplePool(tuple(seqs), str(path)), failures


def check_pose(p: Pose, tol: float = 1e-6) -> Pose:
    if not is_rotation(p.rotation, tol):
        raise ValueError(f"invalid rotation (error {rotation_error(p.rotation):.3g})")
    return p
