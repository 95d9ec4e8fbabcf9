"""Raycasting candidate cameras into the voxel grid to build the view matrix.

Rays are walked voxel by voxel (Amanatides & Woo incremental stepping).
A voxel belongs to a ray's walk when the ray enters it at a distance
strictly below ``max_range``. Free target voxels count as seen when the walk
passes through them; occupied target voxels count when they are the first
blocker and, if an incidence limit is configured, the viewing angle against
the voxel's surface normal is within the limit.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from camplace.camera import CameraIntrinsics, CandidateSet, Pose6, camera_frame_rays, rotation_matrix
from camplace.errors import ConfigError, ParseError
from camplace.geometry import CoverageTarget, VoxelGrid, _frozen

CPVM_MAGIC = b"CPVM"
CPVM_VERSION = 1
_CPVM_HEADER = struct.Struct("<4sHHII32s")

# slack on the inclusive incidence comparison, in cosine units
_COS_SLACK = 1e-12


@dataclass(frozen=True)
class RaycastConfig:
    """``pixel_stride=None`` picks the stride from :func:`default_pixel_stride`;
    ``max_range=None`` takes the camera's range."""

    pixel_stride: int | None = None
    max_incidence_deg: float | None = None
    max_range: float | None = None

    def __post_init__(self):
        if self.pixel_stride is not None and (int(self.pixel_stride) != self.pixel_stride or self.pixel_stride < 1):
            raise ConfigError(f"pixel_stride must be a positive integer, got {self.pixel_stride}")
        if self.max_incidence_deg is not None and not 0 < self.max_incidence_deg <= 90:
            raise ConfigError(f"max_incidence_deg must lie in (0, 90], got {self.max_incidence_deg}")
        if self.max_range is not None and not self.max_range > 0:
            raise ConfigError(f"max_range must be positive, got {self.max_range}")

    def resolve(self, intr: CameraIntrinsics, voxel_size: float) -> "RaycastConfig":
        stride = self.pixel_stride or default_pixel_stride(intr, voxel_size, self.max_range)
        rng = self.max_range if self.max_range is not None else intr.max_range
        return RaycastConfig(int(stride), self.max_incidence_deg, float(rng))

    def to_json(self) -> dict:
        return {"pixel_stride": self.pixel_stride, "max_incidence_deg": self.max_incidence_deg,
                "max_range": self.max_range}


def default_pixel_stride(intr: CameraIntrinsics, voxel_size: float, max_range: float | None = None) -> int:
    """Largest stride keeping neighbouring sampled rays within one voxel at max range.

    Angular pixel pitch is largest on the optical axis, ``1 / focal_px`` radians.
    """
    rng = max_range if max_range is not None else intr.max_range
    fx, fy = intr.focal_px
    return max(1, int(math.floor(min(fx, fy) * voxel_size / rng)))


def sample_pixels(intr: CameraIntrinsics, stride: int):
    """Pixel coordinates sampled at ``stride``, always including the last row/column."""
    xs = np.arange(0, intr.width_px, stride)
    ys = np.arange(0, intr.height_px, stride)
    if xs[-1] != intr.width_px - 1:
        xs = np.append(xs, intr.width_px - 1)
    if ys[-1] != intr.height_px - 1:
        ys = np.append(ys, intr.height_px - 1)
    px, py = np.meshgrid(xs, ys, indexing="xy")
    return px.ravel(), py.ravel()


# ---------------------------------------------------------------------------
# voxel walk kernel


@numba.njit(cache=True, nogil=True)
def _walk(occ, nx, ny, nz, gx, gy, gz, dx, dy, dz, t_max, out):
    """Walk one ray in voxel units. Returns (n_traversed, hit_index or -1)."""
    inf = np.inf
    t_enter = -inf
    t_exit = inf
    # slab clip against [0, n] on each axis
    for axis in range(3):
        if axis == 0:
            g, d, n = gx, dx, nx
        elif axis == 1:
            g, d, n = gy, dy, ny
        else:
            g, d, n = gz, dz, nz
        if d == 0.0:
            if g < 0.0 or g > n:
                return 0, -1
        else:
            ta = (0.0 - g) / d
            tb = (n - g) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t_enter:
                t_enter = ta
            if tb < t_exit:
                t_exit = tb
    t = max(t_enter, 0.0)
    if t_exit <= t or t >= t_max:
        return 0, -1
    # cell the ray moves into from its start point
    ex = gx + dx * t
    ey = gy + dy * t
    ez = gz + dz * t
    eps = 1e-9
    ix = int(math.floor(ex + eps * dx))
    iy = int(math.floor(ey + eps * dy))
    iz = int(math.floor(ez + eps * dz))
    ix = min(max(ix, 0), nx - 1)
    iy = min(max(iy, 0), ny - 1)
    iz = min(max(iz, 0), nz - 1)

    if dx > 0.0:
        sx, tmx, tdx = 1, (ix + 1 - gx) / dx, 1.0 / dx
    elif dx < 0.0:
        sx, tmx, tdx = -1, (ix - gx) / dx, -1.0 / dx
    else:
        sx, tmx, tdx = 0, inf, inf
    if dy > 0.0:
        sy, tmy, tdy = 1, (iy + 1 - gy) / dy, 1.0 / dy
    elif dy < 0.0:
        sy, tmy, tdy = -1, (iy - gy) / dy, -1.0 / dy
    else:
        sy, tmy, tdy = 0, inf, inf
    if dz > 0.0:
        sz, tmz, tdz = 1, (iz + 1 - gz) / dz, 1.0 / dz
    elif dz < 0.0:
        sz, tmz, tdz = -1, (iz - gz) / dz, -1.0 / dz
    else:
        sz, tmz, tdz = 0, inf, inf

    n_out = 0
    while True:
        if t >= t_max:
            return n_out, -1
        idx = ix + nx * (iy + ny * iz)
        if occ[idx]:
            return n_out, idx
        out[n_out] = idx
        n_out += 1
        if tmx <= tmy and tmx <= tmz:
            t = tmx
            ix += sx
            tmx += tdx
            if ix < 0 or ix >= nx:
                return n_out, -1
        elif tmy <= tmz:
            t = tmy
            iy += sy
            tmy += tdy
            if iy < 0 or iy >= ny:
                return n_out, -1
        else:
            t = tmz
            iz += sz
            tmz += tdz
            if iz < 0 or iz >= nz:
                return n_out, -1


@numba.njit(cache=True, nogil=True)
def _views(occ, nx, ny, nz, origin_grid, rotations, cam_dirs, t_max,
           slot, normals, cos_limit, use_limit, rows):
    """Fill ``rows[b]`` for each camera ``b`` of a batch."""
    n_rays = cam_dirs.shape[0]
    buf = np.empty(nx + ny + nz + 3, dtype=np.int64)
    for b in range(rotations.shape[0]):
        gx = origin_grid[b, 0]
        gy = origin_grid[b, 1]
        gz = origin_grid[b, 2]
        cx = int(math.floor(gx))
        cy = int(math.floor(gy))
        cz = int(math.floor(gz))
        if 0 <= cx < nx and 0 <= cy < ny and 0 <= cz < nz:
            if occ[cx + nx * (cy + ny * cz)]:
                continue
        rot = rotations[b]
        for r in range(n_rays):
            cdx = cam_dirs[r, 0]
            cdy = cam_dirs[r, 1]
            cdz = cam_dirs[r, 2]
            dx = rot[0, 0] * cdx + rot[0, 1] * cdy + rot[0, 2] * cdz
            dy = rot[1, 0] * cdx + rot[1, 1] * cdy + rot[1, 2] * cdz
            dz = rot[2, 0] * cdx + rot[2, 1] * cdy + rot[2, 2] * cdz
            n, hit = _walk(occ, nx, ny, nz, gx, gy, gz, dx, dy, dz, t_max, buf)
            for k in range(n):
                s = slot[buf[k]]
                if s >= 0:
                    rows[b, s] = True
            if hit >= 0:
                s = slot[hit]
                if s >= 0:
                    if not use_limit:
                        rows[b, s] = True
                    else:
                        nxv = normals[hit, 0]
                        if nxv == nxv:  # NaN check: no normal, never passes
                            c = -(dx * nxv + dy * normals[hit, 1] + dz * normals[hit, 2])
                            if c >= cos_limit - 1e-12:
                                rows[b, s] = True


def _grid_args(grid: VoxelGrid):
    nx, ny, nz = grid.dims
    return np.ascontiguousarray(grid.occupancy), nx, ny, nz


def raycast(grid: VoxelGrid, origin, direction, max_range: float):
    """Walk a single ray through the grid.

    Returns ``(hit, traversed)``: the first occupied voxel reached within
    ``max_range`` (``None`` if none) and the free voxels crossed before it, in
    order. Rays starting outside the grid are clipped to the grid box.
    """
    d = np.asarray(direction, dtype=float)
    norm = float(np.linalg.norm(d))
    if norm == 0.0 or not math.isfinite(norm):
        raise ConfigError("ray direction must be a non-zero finite vector")
    d = d / norm
    occ, nx, ny, nz = _grid_args(grid)
    g = (np.asarray(origin, dtype=float) - grid.origin) / grid.voxel_size
    buf = np.empty(nx + ny + nz + 3, dtype=np.int64)
    n, hit = _walk(occ, nx, ny, nz, g[0], g[1], g[2], d[0], d[1], d[2],
                   max_range / grid.voxel_size, buf)
    return (None if hit < 0 else int(hit)), buf[:n].tolist()


def incidence_ok(ray_direction, normal, max_incidence_deg: float) -> bool:
    """True when the angle between the reversed ray and ``normal`` is within the limit (inclusive)."""
    c = -float(np.dot(ray_direction, normal))
    return c >= math.cos(math.radians(max_incidence_deg)) - _COS_SLACK


# ---------------------------------------------------------------------------


def _target_slots(grid: VoxelGrid, targets: CoverageTarget) -> np.ndarray:
    targets.check_grid(grid)
    slot = np.full(grid.n_voxels, -1, dtype=np.int64)
    slot[targets.voxel_indices] = np.arange(targets.n_p)
    return slot


def _compute_rows(grid, targets, poses, intr, cfg, threads=1):
    cfg = cfg.resolve(intr, grid.voxel_size)
    px, py = sample_pixels(intr, cfg.pixel_stride)
    cam_dirs = np.ascontiguousarray(camera_frame_rays(intr, px, py))
    occ, nx, ny, nz = _grid_args(grid)
    slot = _target_slots(grid, targets)
    use_limit = cfg.max_incidence_deg is not None
    normals = np.ascontiguousarray(grid.normals) if use_limit else np.zeros((1, 3))
    cos_limit = math.cos(math.radians(cfg.max_incidence_deg)) if use_limit else 0.0
    n_g = poses.shape[0]
    rows = np.zeros((n_g, targets.n_p), dtype=np.bool_)
    if n_g == 0 or targets.n_p == 0:
        return rows
    origin_grid = np.ascontiguousarray((poses[:, :3] - grid.origin) / grid.voxel_size)
    rotations = np.ascontiguousarray(
        np.stack([rotation_matrix(*p[3:]) for p in poses]).reshape(n_g, 3, 3)
    )
    t_max = cfg.max_range / grid.voxel_size

    def run(lo, hi):
        _views(occ, nx, ny, nz, origin_grid[lo:hi], rotations[lo:hi], cam_dirs, t_max,
               slot, normals, cos_limit, use_limit, rows[lo:hi])

    threads = max(1, int(threads))
    if threads == 1 or n_g < 2:
        run(0, n_g)
    else:
        chunk = max(1, -(-n_g // (threads * 4)))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda lo: run(lo, min(lo + chunk, n_g)), range(0, n_g, chunk)))
    return rows


def camera_view(grid: VoxelGrid, targets: CoverageTarget, intr: CameraIntrinsics,
                pose: Pose6, cfg: RaycastConfig | None = None) -> np.ndarray:
    """Boolean row of target voxels seen by one camera."""
    p = np.array([[*pose.position, pose.yaw_deg, pose.pitch_deg, pose.roll_deg]])
    return _compute_rows(grid, targets, p, intr, cfg or RaycastConfig())[0]


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VisibilityMatrix:
    """Boolean ``(n_g, n_p)`` view matrix with a provenance digest (hex sha256)."""

    rows: np.ndarray
    provenance: str

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=bool)
        if rows.ndim != 2:
            raise ConfigError("visibility rows must form a 2-D array")
        object.__setattr__(self, "rows", _frozen(rows))
        if len(bytes.fromhex(self.provenance)) != 32:
            raise ConfigError("provenance must be a hex sha256 digest")

    @property
    def n_g(self) -> int:
        return self.rows.shape[0]

    @property
    def n_p(self) -> int:
        return self.rows.shape[1]

    def save(self, path) -> None:
        header = _CPVM_HEADER.pack(CPVM_MAGIC, CPVM_VERSION, 0, self.n_g, self.n_p,
                                   bytes.fromhex(self.provenance))
        packed = np.packbits(self.rows, axis=1, bitorder="little") if self.n_p else \
            np.zeros((self.n_g, 0), np.uint8)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(packed.tobytes())

    @classmethod
    def load(cls, path) -> "VisibilityMatrix":
        data = Path(path).read_bytes()
        if len(data) < _CPVM_HEADER.size:
            raise ParseError("file too short for a CPVM header", path=path)
        magic, version, _, n_g, n_p, prov = _CPVM_HEADER.unpack_from(data)
        if magic != CPVM_MAGIC:
            raise ParseError("bad magic, not a CPVM file", path=path)
        if version != CPVM_VERSION:
            raise ParseError(f"unsupported CPVM version {version}", path=path)
        row_bytes = (n_p + 7) // 8
        body = data[_CPVM_HEADER.size:]
        if len(body) != n_g * row_bytes:
            raise ParseError(f"expected {n_g * row_bytes} payload bytes, got {len(body)}", path=path)
        packed = np.frombuffer(body, dtype=np.uint8).reshape(n_g, row_bytes)
        rows = np.unpackbits(packed, axis=1, count=n_p, bitorder="little").astype(bool)
        return cls(rows.reshape(n_g, n_p), prov.hex())


def provenance_of(grid: VoxelGrid, targets: CoverageTarget, candidates: CandidateSet,
                  cfg: RaycastConfig) -> str:
    h = hashlib.sha256()
    for part in (grid.digest(), targets.digest(), candidates.digest(),
                 json.dumps(cfg.to_json(), sort_keys=True)):
        h.update(part.encode())
        h.update(b"\x00")
    return h.hexdigest()


def build_matrix(grid: VoxelGrid, targets: CoverageTarget, candidates: CandidateSet,
                 cfg: RaycastConfig | None = None, threads: int = 1) -> VisibilityMatrix:
    """View matrix for every candidate; identical output for any thread count."""
    cfg = cfg or RaycastConfig()
    rows = _compute_rows(grid, targets, candidates.poses, candidates.intrinsics, cfg, threads)
    return VisibilityMatrix(rows, provenance_of(grid, targets, candidates, cfg))


def prune_blocked(candidates: CandidateSet, V: VisibilityMatrix):
    """Drop candidates whose view row is empty."""
    if candidates.n_g != V.n_g:
        raise ConfigError(f"{candidates.n_g} candidates but {V.n_g} matrix rows")
    keep = np.flatnonzero(V.rows.any(axis=1))
    if keep.size == V.n_g:
        return candidates, V
    h = hashlib.sha256(V.provenance.encode() + b"\x00prune\x00")
    h.update(np.asarray(keep, dtype="<i8").tobytes())
    return candidates.subset(keep), VisibilityMatrix(V.rows[keep], h.hexdigest())
