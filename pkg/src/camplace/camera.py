"""Pinhole camera model, 6-DoF poses and the candidate pose lattice.

Conventions
-----------
At zero yaw/pitch/roll the optical axis is world +X, image +x (columns)
points toward world -Y and image +y (rows) toward world -Z. The camera
rotation is ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``: yaw about world Z, then pitch
about the camera's own Y axis (positive tilts the axis down), then roll about
the optical axis.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from camplace.errors import ConfigError
from camplace.geometry import VoxelGrid, _frozen

DEFAULT_HFOV_DEG = 71.0
DEFAULT_VFOV_DEG = 36.0
DEFAULT_WIDTH_PX = 1780
DEFAULT_HEIGHT_PX = 720
DEFAULT_MAX_RANGE = 5.0
DEFAULT_SPACING = 1.0
DEFAULT_YAW_STEP_DEG = 30.0
DEFAULT_PITCHES_DEG = (30.0, 45.0, 60.0)


@dataclass(frozen=True)
class CameraIntrinsics:
    hfov_deg: float = DEFAULT_HFOV_DEG
    vfov_deg: float = DEFAULT_VFOV_DEG
    width_px: int = DEFAULT_WIDTH_PX
    height_px: int = DEFAULT_HEIGHT_PX
    max_range: float = DEFAULT_MAX_RANGE

    def __post_init__(self):
        for name in ("hfov_deg", "vfov_deg"):
            v = float(getattr(self, name))
            if not 0 < v < 180:
                raise ConfigError(f"{name} must lie in (0, 180), got {v}")
            object.__setattr__(self, name, v)
        for name in ("width_px", "height_px"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))
        r = float(self.max_range)
        if not (r > 0 and math.isfinite(r)):
            raise ConfigError(f"max_range must be positive and finite, got {self.max_range}")
        object.__setattr__(self, "max_range", r)

    @property
    def focal_px(self) -> tuple[float, float]:
        """Focal lengths in pixels along image x and y."""
        fx = 0.5 * self.width_px / math.tan(math.radians(self.hfov_deg) / 2)
        fy = 0.5 * self.height_px / math.tan(math.radians(self.vfov_deg) / 2)
        return fx, fy

    def to_json(self) -> dict:
        return {
            "hfov_deg": self.hfov_deg, "vfov_deg": self.vfov_deg,
            "width_px": self.width_px, "height_px": self.height_px,
            "max_range": self.max_range,
        }


def _normalize_angles(yaw, pitch, roll):
    yaw = float(yaw) % 360.0
    if yaw == 360.0:
        yaw = 0.0
    pitch = float(pitch)
    if not -90.0 <= pitch <= 90.0:
        raise ConfigError(f"pitch must lie in [-90, 90], got {pitch}")
    roll = float(roll) % 360.0
    if roll > 180.0:
        roll -= 360.0
    if roll == -180.0:
        roll = 180.0
    return yaw, pitch, roll


@dataclass(frozen=True)
class Pose6:
    position: tuple[float, float, float]
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0
    roll_deg: float = 0.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
            raise ConfigError(f"position must be three finite numbers, got {self.position}")
        yaw, pitch, roll = _normalize_angles(self.yaw_deg, self.pitch_deg, self.roll_deg)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "yaw_deg", yaw)
        object.__setattr__(self, "pitch_deg", pitch)
        object.__setattr__(self, "roll_deg", roll)

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.yaw_deg, self.pitch_deg, self.roll_deg)


def rotation_matrix(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    cy, sy = math.cos(math.radians(yaw_deg)), math.sin(math.radians(yaw_deg))
    cp, sp = math.cos(math.radians(pitch_deg)), math.sin(math.radians(pitch_deg))
    cr, sr = math.cos(math.radians(roll_deg)), math.sin(math.radians(roll_deg))
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def camera_frame_rays(intr: CameraIntrinsics, px, py) -> np.ndarray:
    """Unit ray directions in the camera frame for pixel centers."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    u = (2.0 * (px + 0.5) / intr.width_px - 1.0) * math.tan(math.radians(intr.hfov_deg) / 2)
    v = (2.0 * (py + 0.5) / intr.height_px - 1.0) * math.tan(math.radians(intr.vfov_deg) / 2)
    d = np.stack([np.ones_like(u), -u, -v], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pixel_rays(intr: CameraIntrinsics, pose: Pose6, px, py) -> np.ndarray:
    """World-frame unit directions for arrays of pixel coordinates."""
    return camera_frame_rays(intr, px, py) @ pose.rotation().T


def pixel_ray(intr: CameraIntrinsics, pose: Pose6, px: int, py: int):
    """Origin and unit direction of the ray through the center of pixel (px, py)."""
    if not (0 <= px < intr.width_px and 0 <= py < intr.height_px):
        raise ConfigError(
            f"pixel ({px}, {py}) outside {intr.width_px}x{intr.height_px} image"
        )
    d = pixel_rays(intr, pose, [px], [py])[0]
    return np.array(pose.position), d


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Pool of candidate poses.

    ``poses`` is an ``(n_g, 6)`` array of ``x, y, z, yaw, pitch, roll``
    (meters, degrees). Poses sharing a position share a ``location_group``.
    """

    poses: np.ndarray
    location_group: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        poses = np.asarray(self.poses, dtype=float).reshape(-1, 6)
        groups = np.asarray(self.location_group, dtype=np.int64).reshape(-1)
        if groups.size != poses.shape[0]:
            raise ConfigError("location_group length differs from number of poses")
        if poses.shape[0]:
            _, by_pos = np.unique(poses[:, :3], axis=0, return_inverse=True)
            by_pos = by_pos.reshape(-1)
            pairs = np.unique(np.stack([by_pos, groups], axis=1), axis=0)
            if (np.unique(pairs[:, 0]).size != pairs.shape[0]
                    or np.unique(pairs[:, 1]).size != pairs.shape[0]):
                raise ConfigError("location groups must correspond one-to-one with positions")
            if groups.min() < 0:
                raise ConfigError("location groups must be non-negative")
        object.__setattr__(self, "poses", _frozen(poses))
        object.__setattr__(self, "location_group", _frozen(groups))

    def __len__(self):
        return self.poses.shape[0]

    @property
    def n_g(self) -> int:
        return self.poses.shape[0]

    @property
    def n_l(self) -> int:
        return int(np.unique(self.location_group).size)

    def pose(self, i: int) -> Pose6:
        x, y, z, yaw, pitch, roll = self.poses[i]
        return Pose6((x, y, z), yaw, pitch, roll)

    def subset(self, keep) -> "CandidateSet":
        """Candidates at the given indices, groups renumbered compactly in order."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        groups = self.location_group[keep]
        _, first, inverse = np.unique(groups, return_index=True, return_inverse=True)
        # rank groups by first appearance to keep numbering in candidate order
        order = np.argsort(np.argsort(first))
        return CandidateSet(self.poses[keep], order[inverse.reshape(-1)], self.intrinsics)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.poses, dtype="<f8").tobytes())
        h.update(np.asarray(self.location_group, dtype="<i8").tobytes())
        h.update(json.dumps(self.intrinsics.to_json(), sort_keys=True).encode())
        return h.hexdigest()

    def pose_json(self, i: int) -> dict:
        x, y, z, yaw, pitch, roll = (float(v) for v in self.poses[i])
        return {"x": x, "y": y, "z": z, "yaw": yaw, "pitch": pitch, "roll": roll,
                "location_group": int(self.location_group[i])}

    def to_json(self) -> dict:
        return {
            "intrinsics": self.intrinsics.to_json(),
            "digest": self.digest(),
            "candidates": [self.pose_json(i) for i in range(self.n_g)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "CandidateSet":
        intr = CameraIntrinsics(**data["intrinsics"])
        rows = data["candidates"]
        poses = [[c["x"], c["y"], c["z"], c["yaw"], c["pitch"], c.get("roll", 0.0)] for c in rows]
        groups = [c["location_group"] for c in rows]
        return cls(np.array(poses, dtype=float).reshape(-1, 6), np.array(groups, dtype=np.int64), intr)


def roof_height(grid: VoxelGrid) -> float:
    """Center height of the highest horizontal slab containing a free voxel."""
    occ = grid.occupancy_3d()
    free_slabs = np.flatnonzero(~occ.all(axis=(1, 2)))
    if free_slabs.size == 0:
        raise ConfigError("grid has no free voxels")
    return float(grid.origin[2] + grid.voxel_size * (free_slabs[-1] + 0.5))


def _lattice(lo: float, hi: float, start: float, spacing: float) -> np.ndarray:
    eps = 1e-9 * max(1.0, abs(hi))
    k0 = math.ceil((lo - start) / spacing - 1e-9)
    k1 = math.floor((hi - start) / spacing + 1e-9)
    vals = start + spacing * np.arange(k0, k1 + 1)
    return vals[(vals >= lo - eps) & (vals <= hi + eps)]


def generate_candidates(
    room: VoxelGrid,
    spacing: float = DEFAULT_SPACING,
    mount_height: float | None = None,
    yaw_step_deg: float = DEFAULT_YAW_STEP_DEG,
    pitch_values_deg: Sequence[float] = DEFAULT_PITCHES_DEG,
    intr: CameraIntrinsics | None = None,
    lattice_origin: Sequence[float] | None = None,
) -> CandidateSet:
    """Candidate poses on a horizontal lattice of mount points.

    Lattice points are ``lattice_origin + spacing * (i, j)`` (default origin:
    the grid's min corner) over the grid's horizontal extent, faces included.
    Points inside occupied voxels are skipped. Every remaining point yields
    one pose per (yaw, pitch) pair with zero roll, ordered by lattice point
    (x index, then y index), then yaw, then pitch.
    """
    intr = intr or CameraIntrinsics()
    if not spacing > 0:
        raise ConfigError(f"spacing must be positive, got {spacing}")
    if not yaw_step_deg > 0:
        raise ConfigError(f"yaw_step_deg must be positive, got {yaw_step_deg}")
    n_yaw = 360.0 / yaw_step_deg
    if abs(n_yaw - round(n_yaw)) > 1e-9:
        raise ConfigError(f"yaw step {yaw_step_deg} does not divide 360")
    yaws = [k * yaw_step_deg for k in range(int(round(n_yaw)))]
    pitches = [float(p) for p in pitch_values_deg]
    if not pitches:
        raise ConfigError("at least one pitch value is required")
    for p in pitches:
        if not -90 <= p <= 90:
            raise ConfigError(f"pitch {p} outside [-90, 90]")
    z = roof_height(room) if mount_height is None else float(mount_height)
    lo, hi = room.origin, room.upper
    if not lo[2] <= z <= hi[2]:
        raise ConfigError(f"mount height {z} outside grid vertical extent [{lo[2]}, {hi[2]}]")
    start = lo[:2] if lattice_origin is None else np.asarray(lattice_origin, dtype=float)[:2]
    xs = _lattice(lo[0], hi[0], start[0], spacing)
    ys = _lattice(lo[1], hi[1], start[1], spacing)
    pts = np.array([(x, y, z) for x in xs for y in ys], dtype=float).reshape(-1, 3)
    idx = room.index_of(pts) if pts.size else np.zeros(0, np.int64)
    ok = (idx >= 0)
    ok[ok] = ~room.occupancy[idx[ok]]
    mounts = pts[ok]
    if mounts.shape[0] == 0:
        raise ConfigError("no valid mount point: every lattice point is occupied or outside the grid")
    rows, groups = [], []
    for g, (x, y, zz) in enumerate(mounts):
        for yaw in yaws:
            for pitch in pitches:
                rows.append((x, y, zz, yaw, pitch, 0.0))
                groups.append(g)
    return CandidateSet(np.array(rows), np.array(groups, dtype=np.int64), intr)
