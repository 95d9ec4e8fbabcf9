"""Voxelized environment model: point clouds, occupancy grids and target sets.

Linear voxel index is ``ix + nx * (iy + ny * iz)``; the flat occupancy array
is therefore the C-order ravel of an array shaped ``(nz, ny, nx)``.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from camplace.errors import CapacityError, ConfigError, ParseError

DEFAULT_VOXEL_SIZE = 0.25
DEFAULT_MAX_VOXELS = 50_000_000
DEFAULT_GAMMA_MAX = 3

GRID_FORMAT = "camplace-voxelgrid"
GRID_VERSION = 1

# Relative slack when converting an extent to a whole number of voxels.
_EXTENT_EPS = 1e-9

_NEIGHBOR_OFFSETS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=np.int64,
)


def _as_vec3(v, name="vector") -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise ConfigError(f"{name} must have 3 components, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be finite, got {a.tolist()}")
    return a


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """Points in world coordinates (meters, Z up), optional 8-bit RGB."""

    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ConfigError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))
        if self.colors is not None:
            cols = np.asarray(self.colors).reshape(-1, 3)
            if cols.shape[0] != pts.shape[0]:
                raise ConfigError("colors and points differ in length")
            if np.any(cols < 0) or np.any(cols > 255):
                raise ConfigError("colors must lie in 0..255")
            object.__setattr__(self, "colors", _frozen(cols.astype(np.uint8)))

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Regular occupancy lattice.

    ``origin`` is the world position of the min corner of voxel (0, 0, 0).
    Surface normals are derived from occupancy on first access: each occupied
    voxel points toward the centroid of its unoccupied, in-bounds
    6-neighbours, and has no normal (NaN row) when that centroid is
    undefined or coincides with the voxel center.
    """

    origin: np.ndarray
    voxel_size: float
    dims: tuple[int, int, int]
    occupancy: np.ndarray
    _normals: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        origin = _as_vec3(self.origin, "origin")
        size = float(self.voxel_size)
        if not (size > 0 and math.isfinite(size)):
            raise ConfigError(f"voxel_size must be positive, got {self.voxel_size}")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ConfigError(f"dims must be three positive integers, got {self.dims}")
        occ = np.asarray(self.occupancy, dtype=bool).reshape(-1)
        if occ.size != dims[0] * dims[1] * dims[2]:
            raise ConfigError(
                f"occupancy has {occ.size} entries, expected {dims[0] * dims[1] * dims[2]}"
            )
        object.__setattr__(self, "origin", _frozen(origin))
        object.__setattr__(self, "voxel_size", size)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "occupancy", _frozen(occ))

    # -- shape helpers -------------------------------------------------
    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    @property
    def upper(self) -> np.ndarray:
        """World position of the max corner of the grid box."""
        return self.origin + self.voxel_size * np.asarray(self.dims, dtype=float)

    def occupancy_3d(self) -> np.ndarray:
        """Occupancy viewed as ``(nz, ny, nx)``."""
        nx, ny, nz = self.dims
        return self.occupancy.reshape(nz, ny, nx)

    def linear_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.int64)
        nx, ny, _ = self.dims
        return ijk[..., 0] + nx * (ijk[..., 1] + ny * ijk[..., 2])

    def unravel(self, index) -> np.ndarray:
        """Integer ``(ix, iy, iz)`` for linear indices."""
        index = np.asarray(index, dtype=np.int64)
        nx, ny, _ = self.dims
        ix = index % nx
        iy = (index // nx) % ny
        iz = index // (nx * ny)
        return np.stack([ix, iy, iz], axis=-1)

    def center_of(self, index) -> np.ndarray:
        return self.origin + self.voxel_size * (self.unravel(index) + 0.5)

    def cell_of(self, points) -> np.ndarray:
        """Integer cell coordinates of world points, -1 rows when out of bounds.

        Cells are half-open ``[lo, lo + size)`` per axis, except that points on
        the grid's max faces belong to the last cell.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (p - self.origin) / self.voxel_size
        dims = np.asarray(self.dims)
        cell = np.floor(rel).astype(np.int64)
        on_max_face = np.isclose(rel, dims, rtol=0, atol=_EXTENT_EPS * np.maximum(dims, 1))
        cell = np.where(on_max_face & (cell >= dims - 1), dims - 1, cell)
        inside = np.all((cell >= 0) & (cell < dims), axis=1)
        cell[~inside] = -1
        return cell

    def index_of(self, points) -> np.ndarray:
        """Linear index for each world point, -1 when outside the grid."""
        cell = self.cell_of(points)
        idx = self.linear_index(cell)
        idx[np.any(cell < 0, axis=1)] = -1
        return idx

    # -- normals -------------------------------------------------------
    @property
    def normals(self) -> np.ndarray:
        """``(n_voxels, 3)`` unit normals; NaN rows where absent."""
        if not self._normals:
            self._normals.append(_frozen(_estimate_normals(self)))
        return self._normals[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(GRID_FORMAT.encode())
        h.update(np.asarray(self.origin, dtype="<f8").tobytes())
        h.update(np.asarray([self.voxel_size], dtype="<f8").tobytes())
        h.update(np.asarray(self.dims, dtype="<i8").tobytes())
        h.update(np.packbits(self.occupancy, bitorder="little").tobytes())
        return h.hexdigest()


def _estimate_normals(grid: VoxelGrid) -> np.ndarray:
    occ = grid.occupancy_3d()
    nz, ny, nx = occ.shape
    padded = np.pad(occ, 1, mode="constant", constant_values=True)
    inside = np.pad(np.ones_like(occ), 1, mode="constant", constant_values=False)
    acc = np.zeros(occ.shape + (3,), dtype=float)
    count = np.zeros(occ.shape, dtype=np.int64)
    for dx, dy, dz in _NEIGHBOR_OFFSETS:
        sl = (
            slice(1 + dz, 1 + dz + nz),
            slice(1 + dy, 1 + dy + ny),
            slice(1 + dx, 1 + dx + nx),
        )
        free = ~padded[sl] & inside[sl]
        acc += free[..., None] * np.array([dx, dy, dz], dtype=float)
        count += free
    norm = np.linalg.norm(acc, axis=-1)
    out = np.full(occ.shape + (3,), np.nan)
    ok = occ & (count > 0) & (norm > 1e-12)
    out[ok] = acc[ok] / norm[ok][:, None]
    return out.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class CoverageTarget:
    """Target voxels with the required number of observing cameras."""

    voxel_indices: np.ndarray
    gamma: np.ndarray
    region_label: np.ndarray
    gamma_max: int = DEFAULT_GAMMA_MAX

    def __post_init__(self):
        idx = np.asarray(self.voxel_indices, dtype=np.int64).reshape(-1)
        gam = np.asarray(self.gamma, dtype=np.int64).reshape(-1)
        lab = np.asarray(self.region_label, dtype=object).reshape(-1)
        if not (idx.size == gam.size == lab.size):
            raise ConfigError("voxel_indices, gamma and region_label differ in length")
        if np.unique(idx).size != idx.size:
            raise ConfigError("target voxel indices must be unique")
        if idx.size and idx.min() < 0:
            raise ConfigError("target voxel indices must be non-negative")
        if gam.size and (gam.min() < 0 or gam.max() > self.gamma_max):
            raise ConfigError(f"gamma values must lie in [0, {self.gamma_max}]")
        object.__setattr__(self, "voxel_indices", _frozen(idx))
        object.__setattr__(self, "gamma", _frozen(gam))
        object.__setattr__(self, "region_label", _frozen(lab))

    def __len__(self):
        return self.voxel_indices.size

    @property
    def n_p(self) -> int:
        return self.voxel_indices.size

    def check_grid(self, grid: VoxelGrid) -> None:
        if self.n_p and self.voxel_indices.max() >= grid.n_voxels:
            raise ConfigError("target voxel index out of grid bounds")

    def mask(self, label: str) -> np.ndarray:
        return self.region_label == label

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.voxel_indices, dtype="<i8").tobytes())
        h.update(np.asarray(self.gamma, dtype="<i8").tobytes())
        h.update("\x00".join(str(s) for s in self.region_label).encode())
        return h.hexdigest()

    @classmethod
    def empty(cls, gamma_max: int = DEFAULT_GAMMA_MAX) -> "CoverageTarget":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, object), gamma_max)

    @classmethod
    def merge(cls, parts: Sequence["CoverageTarget"]) -> "CoverageTarget":
        """Concatenate target sets; overlapping voxels are an error."""
        if not parts:
            return cls.empty()
        gmax = max(p.gamma_max for p in parts)
        return cls(
            np.concatenate([p.voxel_indices for p in parts]),
            np.concatenate([p.gamma for p in parts]),
            np.concatenate([p.region_label for p in parts]),
            gmax,
        )

    def to_json(self) -> dict:
        return {
            "gamma_max": int(self.gamma_max),
            "voxel_indices": self.voxel_indices.tolist(),
            "gamma": self.gamma.tolist(),
            "region_label": [str(s) for s in self.region_label],
        }

    @classmethod
    def from_json(cls, data: dict) -> "CoverageTarget":
        return cls(
            data["voxel_indices"], data["gamma"], data["region_label"],
            int(data.get("gamma_max", DEFAULT_GAMMA_MAX)),
        )


# ---------------------------------------------------------------------------
# point cloud input


def _parse_floats(tokens, lineno, path):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"cannot parse numbers from {' '.join(tokens)!r}", lineno, path) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError("non-finite coordinate", lineno, path)
    return vals


def _read_xyz(lines, path):
    pts, cols = [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.replace(",", " ").split()
        if len(tok) not in (3, 6):
            raise ParseError(f"expected 3 or 6 fields, got {len(tok)}", lineno, path)
        vals = _parse_floats(tok, lineno, path)
        pts.append(vals[:3])
        if len(tok) == 6:
            cols.append(vals[3:])
        elif cols:
            raise ParseError("colors present on some lines but not others", lineno, path)
    if cols and len(cols) != len(pts):
        raise ParseError("colors present on some lines but not others", None, path)
    return pts, cols


def _read_ply(lines, path):
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1, path)
    n_vertex = None
    props: list[str] = []
    elements: list[tuple[str, int]] = []
    current = None
    header_end = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise ParseError("only ASCII PLY is supported", lineno, path)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError("malformed element line", lineno, path)
            current = tok[1]
            try:
                elements.append((current, int(tok[2])))
            except ValueError:
                raise ParseError("element count is not an integer", lineno, path) from None
            if current == "vertex":
                n_vertex = elements[-1][1]
        elif tok[0] == "property":
            if current == "vertex":
                props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = lineno
            break
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", lineno, path)
    if header_end is None:
        raise ParseError("missing end_header", None, path)
    if n_vertex is None:
        raise ParseError("no vertex element declared", None, path)
    for axis in "xyz":
        if axis not in props:
            raise ParseError(f"vertex element lacks property {axis!r}", None, path)
    # vertex data starts after any elements declared before it
    skip = 0
    for name, count in elements:
        if name == "vertex":
            break
        skip += count
    ix = [props.index(a) for a in "xyz"]
    has_rgb = all(c in props for c in ("red", "green", "blue"))
    ic = [props.index(c) for c in ("red", "green", "blue")] if has_rgb else []
    pts, cols = [], []
    body = lines[header_end:]
    data_lines = [(header_end + 1 + k, ln) for k, ln in enumerate(body) if ln.strip()]
    data_lines = data_lines[skip:skip + n_vertex]
    if len(data_lines) < n_vertex:
        raise ParseError(f"expected {n_vertex} vertices, found {len(data_lines)}", None, path)
    for lineno, raw in data_lines:
        tok = raw.split()
        if len(tok) < len(props):
            raise ParseError(f"expected {len(props)} vertex fields, got {len(tok)}", lineno, path)
        vals = _parse_floats([tok[i] for i in ix], lineno, path)
        pts.append(vals)
        if has_rgb:
            cols.append(_parse_floats([tok[i] for i in ic], lineno, path))
    return pts, cols


def load_point_cloud(path, format: str | None = None) -> PointCloud:
    """Read an XYZ-ASCII or ASCII-PLY point cloud.

    ``format`` is ``"xyz-ascii"`` or ``"ply-ascii"``; when omitted it is
    inferred from the file extension.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError("file does not exist", None, path)
    if format is None:
        format = "ply-ascii" if path.suffix.lower() == ".ply" else "xyz-ascii"
    lines = path.read_text().splitlines()
    if format == "xyz-ascii":
        pts, cols = _read_xyz(lines, path)
    elif format == "ply-ascii":
        pts, cols = _read_ply(lines, path)
    else:
        raise ConfigError(f"unknown point cloud format {format!r}")
    if not pts:
        raise ParseError("point cloud is empty", None, path)
    return PointCloud(np.array(pts, dtype=float), np.array(cols) if cols else None)


# ---------------------------------------------------------------------------
# grid construction


def _dims_for_extent(extent: np.ndarray, voxel_size: float) -> tuple[int, int, int]:
    n = np.ceil(extent / voxel_size - _EXTENT_EPS).astype(np.int64)
    return tuple(int(max(1, v)) for v in n)


def _check_capacity(dims, max_voxels):
    total = dims[0] * dims[1] * dims[2]
    if total > max_voxels:
        raise CapacityError(
            f"grid of {dims[0]}x{dims[1]}x{dims[2]} = {total} voxels exceeds cap {max_voxels}"
        )


def voxelize(
    cloud: PointCloud,
    voxel_size: float = DEFAULT_VOXEL_SIZE,
    min_points: int = 1,
    max_voxels: int = DEFAULT_MAX_VOXELS,
) -> VoxelGrid:
    """Bin a point cloud into an occupancy grid.

    The grid spans the cloud's bounding box rounded up to whole voxels. A
    voxel is occupied when at least ``min_points`` points fall in it.
    """
    if not voxel_size > 0:
        raise ConfigError(f"voxel_size must be positive, got {voxel_size}")
    if min_points < 1:
        raise ConfigError(f"min_points must be >= 1, got {min_points}")
    if len(cloud) == 0:
        raise ConfigError("cannot voxelize an empty point cloud")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    dims = _dims_for_extent(hi - lo, voxel_size)
    _check_capacity(dims, max_voxels)
    grid = VoxelGrid(lo, voxel_size, dims, np.zeros(dims[0] * dims[1] * dims[2], bool))
    idx = grid.index_of(cloud.points)
    counts = np.bincount(idx[idx >= 0], minlength=grid.n_voxels)
    return VoxelGrid(lo, voxel_size, dims, counts >= min_points)


def _slab_index(grid: VoxelGrid, height: float) -> int:
    lo = grid.origin[2]
    hi = grid.upper[2]
    if not (lo <= height <= hi):
        raise ConfigError(
            f"height {height} m lies outside the grid's vertical extent [{lo}, {hi}]"
        )
    iz = int(math.floor((height - lo) / grid.voxel_size))
    return min(iz, grid.dims[2] - 1)


def build_free_space_targets(
    grid: VoxelGrid,
    heights: Iterable[float],
    gamma: int,
    gamma_max: int = DEFAULT_GAMMA_MAX,
) -> CoverageTarget:
    """Unoccupied voxels in the horizontal slabs containing ``heights``."""
    occ = grid.occupancy_3d()
    nx, ny, _ = grid.dims
    slabs = []
    for h in heights:
        iz = _slab_index(grid, float(h))
        if iz not in slabs:
            slabs.append(iz)
    chunks = []
    for iz in slabs:
        iy, ix = np.nonzero(~occ[iz])
        chunks.append(ix + nx * (iy + ny * iz))
    idx = np.concatenate(chunks) if chunks else np.zeros(0, np.int64)
    return CoverageTarget(
        idx, np.full(idx.size, gamma), np.full(idx.size, "free-space-plane", object), gamma_max
    )


def label_shelf_targets(
    grid: VoxelGrid,
    boxes: Iterable,
    gamma: int,
    gamma_max: int = DEFAULT_GAMMA_MAX,
) -> CoverageTarget:
    """Occupied voxels whose centers fall inside any of the given boxes.

    ``boxes`` holds ``(min_xyz, max_xyz)`` pairs; box faces are inclusive.
    """
    occupied = np.flatnonzero(grid.occupancy)
    centers = grid.center_of(occupied)
    keep = np.zeros(occupied.size, dtype=bool)
    for lo, hi in boxes:
        lo = _as_vec3(lo, "box min")
        hi = _as_vec3(hi, "box max")
        if np.any(hi <= lo):
            raise ConfigError(f"degenerate box {lo.tolist()} -> {hi.tolist()}")
        keep |= np.all((centers >= lo) & (centers <= hi), axis=1)
    idx = occupied[keep]
    return CoverageTarget(
        idx, np.full(idx.size, gamma), np.full(idx.size, "shelf", object), gamma_max
    )


# ---------------------------------------------------------------------------
# synthetic scenes


def _box(entry, what):
    try:
        lo = _as_vec3(entry["min"], f"{what} min")
        hi = _as_vec3(entry["max"], f"{what} max")
    except (KeyError, TypeError):
        raise ConfigError(f"{what} needs 'min' and 'max' triples") from None
    if np.any(hi <= lo):
        raise ConfigError(f"degenerate {what} {lo.tolist()} -> {hi.tolist()}")
    return lo, hi


def rasterize_scene(
    scene: dict,
    voxel_size: float | None = None,
    max_voxels: int = DEFAULT_MAX_VOXELS,
) -> VoxelGrid:
    """Rasterize a synthetic scene description to an occupancy grid.

    A voxel is occupied when its center lies inside any solid or shelf box.
    See ``docs/formats.md`` for the scene schema.
    """
    size = float(voxel_size if voxel_size is not None else scene.get("voxel_size", DEFAULT_VOXEL_SIZE))
    if not size > 0:
        raise ConfigError(f"voxel_size must be positive, got {size}")
    lo, hi = _box(scene.get("bounds", {}), "scene bounds")
    dims = _dims_for_extent(hi - lo, size)
    _check_capacity(dims, max_voxels)
    grid = VoxelGrid(lo, size, dims, np.zeros(dims[0] * dims[1] * dims[2], bool))
    centers = grid.center_of(np.arange(grid.n_voxels))
    occ = np.zeros(grid.n_voxels, dtype=bool)
    boxes = [_box(s, "solid") for s in scene.get("solids", [])]
    boxes += [_box(s, "shelf") for s in scene.get("shelves", [])]
    for blo, bhi in boxes:
        occ |= np.all((centers >= blo) & (centers <= bhi), axis=1)
    return VoxelGrid(lo, size, dims, occ)


def scene_shelf_boxes(scene: dict) -> list[tuple[np.ndarray, np.ndarray]]:
    return [_box(s, "shelf") for s in scene.get("shelves", [])]


# ---------------------------------------------------------------------------
# grid file format


def _rle_encode(bits: np.ndarray) -> bytes:
    """Alternating run lengths, starting with a (possibly empty) 0-run, as LEB128."""
    bits = np.asarray(bits, dtype=np.int8)
    change = np.flatnonzero(np.diff(bits)) + 1
    bounds = np.concatenate([[0], change, [bits.size]])
    runs = np.diff(bounds).tolist()
    if bits.size and bits[0] == 1:
        runs.insert(0, 0)
    out = bytearray()
    for r in runs:
        while True:
            byte = r & 0x7F
            r >>= 7
            if r:
                out.append(byte | 0x80)
            else:
                out.append(byte)
                break
    return bytes(out)


def _rle_decode(data: bytes, n: int) -> np.ndarray:
    runs = []
    value = shift = 0
    for byte in data:
        value |= (byte & 0x7F) << shift
        if byte & 0x80:
            shift += 7
        else:
            runs.append(value)
            value = shift = 0
    if shift:
        raise ParseError("truncated run-length stream")
    if sum(runs) != n:
        raise ParseError(f"run lengths sum to {sum(runs)}, expected {n}")
    vals = np.arange(len(runs)) % 2
    return np.repeat(vals, runs).astype(bool)


def save_grid(grid: VoxelGrid, path) -> None:
    header = {
        "format": GRID_FORMAT,
        "version": GRID_VERSION,
        "origin": [float(v) for v in grid.origin],
        "voxel_size": grid.voxel_size,
        "dims": list(grid.dims),
        "occupied_count": grid.occupied_count,
        "encoding": "rle-leb128-base64",
        "digest": grid.digest(),
    }
    payload = base64.b64encode(_rle_encode(grid.occupancy)).decode("ascii")
    Path(path).write_text(json.dumps(header, sort_keys=True) + "\n" + payload + "\n")


def load_grid(path) -> VoxelGrid:
    path = Path(path)
    text = path.read_text()
    head, _, body = text.partition("\n")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad grid header: {exc}", 1, path) from None
    if header.get("format") != GRID_FORMAT:
        raise ParseError("not a camplace voxel grid file", 1, path)
    if header.get("version") != GRID_VERSION:
        raise ParseError(f"unsupported grid version {header.get('version')}", 1, path)
    dims = tuple(header["dims"])
    n = dims[0] * dims[1] * dims[2]
    try:
        raw = base64.b64decode(body.strip(), validate=True)
    except ValueError:
        raise ParseError("bad base64 payload", 2, path) from None
    occ = _rle_decode(raw, n)
    grid = VoxelGrid(header["origin"], header["voxel_size"], dims, occ)
    if grid.occupied_count != header["occupied_count"]:
        raise ParseError("occupied_count does not match payload", 1, path)
    if "digest" in header and header["digest"] != grid.digest():
        raise ParseError("digest does not match payload", 1, path)
    return grid
