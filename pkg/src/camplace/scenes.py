"""Synthetic scene descriptions (see ``docs/formats.md`` for the schema)."""

from __future__ import annotations


def _box(lo, hi, **extra):
    return {"min": [float(v) for v in lo], "max": [float(v) for v in hi], **extra}


def shoebox_scene(length=10.0, width=8.0, height=3.0, wall=0.25) -> dict:
    """Empty room whose walls occupy the outermost voxel layer of its bounds."""
    L, W, H, t = length, width, height, wall
    return {
        "name": "shoebox",
        "bounds": _box((0, 0, 0), (L, W, H)),
        "solids": [
            _box((0, 0, 0), (t, W, H), label="wall"),
            _box((L - t, 0, 0), (L, W, H), label="wall"),
            _box((0, 0, 0), (L, t, H), label="wall"),
            _box((0, W - t, 0), (L, W, H), label="wall"),
        ],
        "shelves": [],
    }


def store_scene(length=10.0, width=8.0, height=3.0, wall=0.25, shelf_height=1.75,
                fixtures=True) -> dict:
    """Convenience-store-like room: four shelf rows, walls outside the floor area.

    The walkable floor spans ``[0, length] x [0, width]``; walls sit just
    outside it so that a 1 m mount lattice anchored at the origin has
    ``length * width`` points on free voxels before roof fixtures.
    """
    L, W, H, t = length, width, height, wall
    solids = [
        _box((-t, -t, 0), (0, W + t, H), label="wall"),
        _box((L, -t, 0), (L + t, W + t, H), label="wall"),
        _box((-t, -t, 0), (L + t, 0, H), label="wall"),
        _box((-t, W, 0), (L + t, W + t, H), label="wall"),
    ]
    if fixtures:
        # ceiling ducts that block a few mount points
        solids += [
            _box((2.75, 3.75, H - 0.25), (5.25, 4.25, H), label="fixture"),
            _box((6.75, 1.75, H - 0.25), (7.25, 6.25, H), label="fixture"),
        ]
    rows_y = [(1.5, 2.0), (3.0, 3.5), (4.5, 5.0), (6.0, 6.5)]
    shelves = [_box((1.5, y0, 0), (8.5, y1, shelf_height), label=f"shelf-{k}")
               for k, (y0, y1) in enumerate(rows_y)]
    return {
        "name": "store",
        "bounds": _box((-t, -t, 0), (L + t, W + t, H)),
        "solids": solids,
        "shelves": shelves,
        "lattice_origin": [0.0, 0.0],
    }
