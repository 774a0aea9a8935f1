"""Synthetic sequences with analytically known trajectory and scene features.

The vehicle drives a planar polyline through a corridor: a ground plane,
a wall on either side of each segment and square pillars along the walls.
Structure points sit on a fixed world grid, so a static point seen in two
frames maps exactly onto itself under the ground-truth relative pose. Each
frame adds freshly drawn clutter points kept at least ``clutter_margin``
away from the structure and from the previous frame's clutter; by
construction these are the only points without a close match in the next
frame.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geom import Pose, invert, rot_z, transform_points
from .ingest import InMemorySource, PointCloud, SequenceRecord

SENSOR_HEIGHT = 1.7


@dataclass(frozen=True)
class Segment:
    length: float
    speed: float
    turn: float = 0.0  # heading change (rad) at the segment's start; ignored on the first

    def __post_init__(self):
        if not (self.length > 0 and self.speed > 0):
            raise ValueError("segment length and speed must be positive")


@dataclass(frozen=True)
class SynthSpec:
    segments: tuple[Segment, ...]
    frame_rate: float = 10.0
    clutter_fraction: float = 0.0
    noise_sigma: float = 0.0
    point_spacing: float = 0.5
    corridor_half_width: float = 6.0
    wall_height: float = 3.0
    pillar_every: float = 8.0
    clutter_margin: float = 0.5
    max_range: float | None = None
    turn_seconds: float = 2.0

    def __post_init__(self):
        segs = tuple(s if isinstance(s, Segment) else Segment(*s) for s in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("at least one segment required")
        if not 0.0 <= self.clutter_fraction < 1.0:
            raise ValueError("clutter_fraction must be in [0, 1)")
        if self.frame_rate <= 0 or self.point_spacing <= 0:
            raise ValueError("frame_rate and point_spacing must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        d = dict(d)
        d["segments"] = tuple(
            Segment(**s) if isinstance(s, dict) else Segment(*s) for s in d["segments"]
        )
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Trajectory:
    positions: np.ndarray  # (n, 3)
    headings: np.ndarray  # (n,)
    joints: list[int] = field(default_factory=list)  # frame index of each turn


def build_trajectory(spec: SynthSpec) -> _Trajectory:
    """Frames at constant spacing per segment; every joint lands on a frame."""
    pos = [np.zeros(3)]
    heads = []
    joints = []
    heading = 0.0
    for k, seg in enumerate(spec.segments):
        if k > 0:
            heading += seg.turn
            joints.append(len(pos) - 1)
        steps = max(1, int(round(seg.length * spec.frame_rate / seg.speed)))
        step = seg.length / steps
        d = np.array([np.cos(heading), np.sin(heading), 0.0])
        start = pos[-1]
        heads.extend([heading] * steps)
        for s in range(1, steps + 1):
            pos.append(start + d * step * s)
    # a frame's heading is that of the step leaving it; the last frame keeps the final heading
    heads.append(heads[-1])
    heads = np.array(heads)
    # the sensor yaw ramps through each turn instead of snapping at the joint frame
    ramp = max(0, int(round(spec.turn_seconds * spec.frame_rate / 2)))
    if ramp and joints:
        yaw = np.zeros(len(heads))
        yaw[:] = heads[0]
        for j, seg in zip(joints, spec.segments[1:]):
            f = np.arange(len(heads))
            yaw += seg.turn * np.clip((f - (j - ramp)) / (2 * ramp), 0.0, 1.0)
        heads = yaw
    else:
        for j in joints:
            heads[j] = heads[j - 1]
    return _Trajectory(np.array(pos), heads, joints)


def _grid(a0, a1, spacing):
    n = max(1, int(np.floor((a1 - a0) / spacing + 1e-9)))
    return a0 + spacing * np.arange(n + 1)


def build_environment(spec: SynthSpec, traj: _Trajectory) -> np.ndarray:
    """Static world points: ground grid, side walls, pillars."""
    sp = spec.point_spacing
    w = spec.corridor_half_width
    g = -SENSOR_HEIGHT
    chunks = []
    verts = [traj.positions[0]] + [traj.positions[j] for j in traj.joints] + [traj.positions[-1]]
    for a, b in zip(verts[:-1], verts[1:]):
        seg = b - a
        length = np.linalg.norm(seg[:2])
        if length == 0:
            continue
        d = seg / length
        nrm = np.array([-d[1], d[0], 0.0])
        lon = _grid(-2.0, length + 2.0, sp)
        lat = _grid(-w, w, sp)
        hts = _grid(g + sp, g + spec.wall_height, sp)
        L, T = np.meshgrid(lon, lat, indexing="ij")
        ground = a + L[..., None] * d + T[..., None] * nrm
        ground[..., 2] = g
        chunks.append(ground.reshape(-1, 3))
        L, H = np.meshgrid(lon, hts, indexing="ij")
        for side in (-1.0, 1.0):
            wall = a + L[..., None] * d + side * (w + sp) * nrm
            wall[..., 2] = H
            chunks.append(wall.reshape(-1, 3))
        # square pillars standing against each wall, faces normal to d and nrm
        pw = max(0.8, 2 * sp)
        for s0 in np.arange(spec.pillar_every / 2, length, spec.pillar_every):
            for side in (-1.0, 1.0):
                inner = side * (w - pw)
                faces = []
                u = _grid(0.0, pw, sp)
                for uu in u:
                    faces.append((s0, inner + side * uu))  # near face (normal -d)
                    faces.append((s0 + pw, inner + side * uu))  # far face (normal +d)
                for uu in u[1:-1]:
                    faces.append((s0 + uu, inner))  # inner face (normal nrm)
                for (lo, la) in faces:
                    col = a + lo * d + la * nrm
                    pts = np.repeat(col[None], len(hts), axis=0)
                    pts[:, 2] = hts
                    chunks.append(pts)
    pts = np.concatenate(chunks)
    # drop duplicates from overlapping segments near joints
    key = np.round(pts / (sp * 1e-3)).astype(np.int64)
    _, idx = np.unique(key, axis=0, return_index=True)
    return pts[np.sort(idx)]


def _seed_for(seed: int, *parts) -> np.random.SeedSequence:
    words = [int(seed) & 0xFFFFFFFF]
    for p in parts:
        words.append(zlib.crc32(str(p).encode()) if isinstance(p, str) else int(p) & 0xFFFFFFFF)
    return np.random.SeedSequence(words)


def _sample_clutter(rng, n, pose: Pose, spec: SynthSpec, avoid: list[cKDTree]) -> np.ndarray:
    """``n`` world points in a box around the sensor, at least ``clutter_margin`` from ``avoid``."""
    if n == 0:
        return np.empty((0, 3))
    w = spec.corridor_half_width - max(0.8, 2 * spec.point_spacing) - spec.clutter_margin
    if w <= 0:
        raise ValueError("corridor too narrow to place clutter at this point spacing")
    half_len = 15.0
    lo = np.array([-half_len, -w, -SENSOR_HEIGHT + spec.clutter_margin])
    hi = np.array([half_len, w, -SENSOR_HEIGHT + spec.wall_height - spec.clutter_margin])
    out = np.empty((0, 3))
    for _ in range(1000):
        cand = transform_points(pose, rng.uniform(lo, hi, size=(2 * n, 3)))
        ok = np.ones(len(cand), dtype=bool)
        for tree in avoid:
            if tree is not None and tree.n:
                d, _ = tree.query(cand, k=1)
                ok &= d >= spec.clutter_margin
        out = np.vstack([out, cand[ok]])
        if len(out) >= n:
            return out[:n]
    raise RuntimeError("could not place clutter points; lower clutter_fraction or margin")


def synth_sequence(
    spec: SynthSpec, seed: int = 0, seq_id: str = "synth", weather: str = "general"
) -> SequenceRecord:
    """Generate a deterministic synthetic sequence with exact ground truth."""
    traj = build_trajectory(spec)
    env = build_environment(spec, traj)
    env_tree = cKDTree(env)
    rng = np.random.default_rng(_seed_for(seed, seq_id))
    poses = tuple(Pose(rot_z(h), p) for p, h in zip(traj.positions, traj.headings))

    clouds = []
    prev_clutter = None
    for i, pose in enumerate(poses):
        if spec.max_range is not None:
            d = np.linalg.norm(env[:, :2] - pose.translation[:2], axis=1)
            world = env[d <= spec.max_range]
        else:
            world = env
        n_struct = len(world)
        f = spec.clutter_fraction
        n_clutter = int(round(n_struct * f / (1.0 - f))) if f > 0 else 0
        avoid = [env_tree, cKDTree(prev_clutter) if prev_clutter is not None and len(prev_clutter) else None]
        clutter = _sample_clutter(rng, n_clutter, pose, spec, avoid)
        prev_clutter = clutter
        local = transform_points(invert(pose), np.vstack([world, clutter]))
        if spec.noise_sigma > 0:
            local = local + rng.normal(0.0, spec.noise_sigma, size=local.shape)
        inten = np.concatenate([np.full(n_struct, 0.5), np.full(len(clutter), 0.1)])
        clouds.append(PointCloud(local, inten, i, seq_id))

    positions = traj.positions - traj.positions[0]
    return SequenceRecord(
        seq_id,
        positions,
        spec.frame_rate,
        weather,
        poses,
        InMemorySource(clouds),
        meta={"synth": spec.to_dict(), "seed": seed, "joints": list(traj.joints)},
    )


def benchmark_entries(
    n_clean: int = 6,
    n_cluttered: int = 6,
    seed: int = 0,
    clutter_fraction: float = 0.3,
    noise_sigma: float = 0.02,
    point_spacing: float = 1.0,
    corridor_half_width: float = 4.0,
) -> list[dict]:
    """Manifest entries for a two-segment pool: clean ``general`` and cluttered ``snowy``.

    Segment lengths, speeds and the turn angle are drawn from ``seed``, so
    both halves share the same distribution of trajectories.
    """
    rng = np.random.default_rng(_seed_for(seed, "benchmark"))
    out = []
    for k in range(n_clean + n_cluttered):
        clean = k < n_clean
        sid = f"clean_{k:02d}" if clean else f"clutter_{k - n_clean:02d}"
        turn = float(rng.uniform(0.6, 1.2) * rng.choice([-1.0, 1.0]))
        spec = SynthSpec(
            (
                Segment(float(rng.uniform(12, 16)), float(rng.uniform(6, 12))),
                Segment(float(rng.uniform(8, 12)), float(rng.uniform(6, 12)), turn),
            ),
            clutter_fraction=0.0 if clean else clutter_fraction,
            noise_sigma=noise_sigma,
            point_spacing=point_spacing,
            corridor_half_width=corridor_half_width,
        )
        out.append(
            {
                "id": sid,
                "weather": "general" if clean else "snowy",
                "seed": int(seed),
                "synth": spec.to_dict(),
            }
        )
    return out
