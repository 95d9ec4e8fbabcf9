import math

import numpy as np
import pytest

from _oracles import (
    SMALL_INTR, all_voxel_targets, grazing, oracle_view, random_free_pose, random_grid,
)
from camplace.camera import CameraIntrinsics, CandidateSet, Pose6, pixel_rays
from camplace.errors import ConfigError, ParseError
from camplace.geometry import (
    CoverageTarget, VoxelGrid, build_free_space_targets, label_shelf_targets, rasterize_scene,
)
from camplace.scenes import shoebox_scene
from camplace.visibility import (
    RaycastConfig, VisibilityMatrix, build_matrix, camera_view, default_pixel_stride,
    incidence_ok, prune_blocked, raycast, sample_pixels,
)


def line_grid(occupied=()):
    occ = np.zeros(10, bool)
    occ[list(occupied)] = True
    return VoxelGrid((0, 0, 0), 0.25, (10, 1, 1), occ)


# -- single rays ---------------------------------------------------------------

def test_raycast_empty_line():
    hit, tr = raycast(line_grid(), (0.125, 0.125, 0.125), (1, 0, 0), 5.0)
    assert hit is None and tr == list(range(10))


def test_raycast_blocked():
    hit, tr = raycast(line_grid([5]), (0.125, 0.125, 0.125), (1, 0, 0), 5.0)
    assert hit == 5 and tr == [0, 1, 2, 3, 4]


def test_raycast_short_range():
    hit, tr = raycast(line_grid(), (0.125, 0.125, 0.125), (1, 0, 0), 0.3)
    assert hit is None and tr == [0, 1]


def test_raycast_backwards_and_outside_start():
    hit, tr = raycast(line_grid(), (2.375, 0.125, 0.125), (-1, 0, 0), 5.0)
    assert tr == list(range(9, -1, -1))
    hit, tr = raycast(line_grid([2]), (-1.0, 0.125, 0.125), (1, 0, 0), 5.0)
    assert hit == 2 and tr == [0, 1]


def test_raycast_zero_direction():
    with pytest.raises(ConfigError):
        raycast(line_grid(), (0, 0, 0), (0, 0, 0), 1.0)


def test_incidence_examples():
    assert incidence_ok((1, 0, 0), (-1, 0, 0), 30)
    assert not incidence_ok((1, 0, 0), (0, 0, 1), 30)
    c = math.cos(math.radians(45))
    assert incidence_ok((1, 0, 0), (-c, -c, 0), 45)
    assert not incidence_ok((1, 0, 0), (-c, -c, 0), 44.9)


def test_default_stride():
    assert default_pixel_stride(CameraIntrinsics(), 0.25) == 55
    px, py = sample_pixels(CameraIntrinsics(), 55)
    assert px.max() == 1779 and py.max() == 719


# -- camera views --------------------------------------------------------------

def wall_scene():
    # 3 x 10 x 5 m box, a one-voxel wall filling the plane 2.5 <= x < 2.75
    nx, ny, nz = 12, 40, 20
    occ = np.zeros((nz, ny, nx), bool)
    occ[:, :, 10] = True
    g = VoxelGrid((0, 0, 0), 0.25, (nx, ny, nz), occ.reshape(-1))
    targets = label_shelf_targets(g, [((2.5, -1, -1), (2.75, 11, 6))], 3)
    return g, targets


def test_head_on_wall_sees_frustum():
    g, t = wall_scene()
    intr = CameraIntrinsics()
    pose = Pose6((0.5, 5.0, 2.5))
    row = camera_view(g, t, intr, pose)
    centers = g.center_of(t.voxel_indices)
    rel = centers - np.array(pose.position)
    # project onto the image plane; margin of one voxel keeps clear of the edges
    ah = np.degrees(np.arctan2(np.abs(rel[:, 1]) + 0.25, rel[:, 0] - 0.125))
    av = np.degrees(np.arctan2(np.abs(rel[:, 2]) + 0.25, rel[:, 0] - 0.125))
    inside = (ah < intr.hfov_deg / 2) & (av < intr.vfov_deg / 2)
    ah_out = np.degrees(np.arctan2(np.abs(rel[:, 1]) - 0.25, rel[:, 0] + 0.125))
    av_out = np.degrees(np.arctan2(np.abs(rel[:, 2]) - 0.25, rel[:, 0] + 0.125))
    outside = (ah_out > intr.hfov_deg / 2) | (av_out > intr.vfov_deg / 2)
    assert inside.sum() > 20
    assert row[inside].all()
    assert not row[outside].any()


def test_grazing_wall_filtered():
    g, t = wall_scene()
    intr = CameraIntrinsics(hfov_deg=40, vfov_deg=20, width_px=400, height_px=200)
    pose = Pose6((0.5, 2.0, 2.5), yaw_deg=60)
    assert camera_view(g, t, intr, pose).any()
    assert not camera_view(g, t, intr, pose, RaycastConfig(max_incidence_deg=30)).any()


def test_facing_away():
    g, t = wall_scene()
    assert not camera_view(g, t, CameraIntrinsics(), Pose6((0.5, 5.0, 2.5), yaw_deg=180)).any()


def test_camera_inside_geometry_sees_nothing():
    g, t = wall_scene()
    free = build_free_space_targets(g, [2.5], 1)
    assert not camera_view(g, free, CameraIntrinsics(), Pose6((2.6, 5.0, 2.5), yaw_deg=180)).any()


def test_free_space_traversal_counts():
    g = line_grid()
    t = CoverageTarget(np.arange(10), np.ones(10), ["f"] * 10)
    intr = CameraIntrinsics(hfov_deg=1, vfov_deg=1, width_px=1, height_px=1, max_range=5)
    assert camera_view(g, t, intr, Pose6((0.125, 0.125, 0.125))).all()


def shoebox_setup():
    g = rasterize_scene(shoebox_scene(), 0.25)
    free = build_free_space_targets(g, [0.5, 1.5], 3)
    return g, free


def test_build_matrix_examples():
    g, t = shoebox_setup()
    intr = CameraIntrinsics()
    empty = CandidateSet(np.zeros((0, 6)), np.zeros(0, np.int64), intr)
    assert build_matrix(g, t, empty).n_g == 0
    away = CandidateSet(np.array([[5, 4, 2.5, 0, -89, 0]]), [0], intr)
    V = build_matrix(g, t, away)
    assert V.n_g == 1 and not V.rows.any()


def test_mirrored_candidates_equal_popcount():
    g, t = shoebox_setup()
    # odd pixel counts with a dividing stride give a mirror-symmetric ray set
    intr = CameraIntrinsics(width_px=111, height_px=51)
    poses = np.array([[2.0, 4.0, 2.5, 0, 30, 0], [8.0, 4.0, 2.5, 180, 30, 0]])
    V = build_matrix(g, t, CandidateSet(poses, [0, 1], intr), RaycastConfig(pixel_stride=5))
    assert V.rows[0].sum() == V.rows[1].sum() > 0


def test_thread_count_does_not_change_rows():
    g, t = shoebox_setup()
    rng = np.random.default_rng(0)
    n = 40
    poses = np.column_stack([rng.uniform(1, 9, n), rng.uniform(1, 7, n), np.full(n, 2.5),
                             rng.uniform(0, 360, n), rng.uniform(0, 80, n), np.zeros(n)])
    c = CandidateSet(poses, np.arange(n), CameraIntrinsics())
    a = build_matrix(g, t, c, threads=1)
    b = build_matrix(g, t, c, threads=4)
    assert a.provenance == b.provenance
    np.testing.assert_array_equal(a.rows, b.rows)


def test_stride_monotonicity():
    g, t = shoebox_setup()
    intr = CameraIntrinsics()
    rng = np.random.default_rng(5)
    # strides forming a divisor chain give nested pixel samples
    for _ in range(5):
        pose = Pose6((rng.uniform(1, 9), rng.uniform(1, 7), 2.5), rng.uniform(0, 360), rng.uniform(0, 70))
        prev = None
        for stride in (60, 30, 10, 5):
            row = camera_view(g, t, intr, pose, RaycastConfig(pixel_stride=stride))
            if prev is not None:
                assert np.all(row[prev])
            prev = row


def test_occlusion_soundness_and_range():
    g, _ = wall_scene()
    shelf = label_shelf_targets(g, [((2.5, -1, -1), (2.75, 11, 6))], 3)
    intr = CameraIntrinsics()
    cfg = RaycastConfig(max_incidence_deg=45)
    rng = np.random.default_rng(2)
    for _ in range(10):
        pose = Pose6((rng.uniform(0.3, 2.2), rng.uniform(1, 9), rng.uniform(0.5, 4.5)),
                     rng.uniform(-60, 60), rng.uniform(-30, 30))
        row = camera_view(g, shelf, intr, pose, cfg)
        o = np.array(pose.position)
        for j in np.flatnonzero(row):
            v = int(shelf.voxel_indices[j])
            c = g.center_of(v)
            dist = np.linalg.norm(c - o)
            assert dist <= intr.max_range + 0.25 * math.sqrt(3)
            hit, _ = raycast(g, o, (c - o) / dist, dist + 0.25)
            assert hit == v


def test_no_bits_beyond_range():
    g, t = shoebox_setup()
    intr = CameraIntrinsics(max_range=2.0)
    pose = Pose6((5, 4, 2.5), 0, 40)
    row = camera_view(g, t, intr, pose)
    dist = np.linalg.norm(g.center_of(t.voxel_indices) - np.array(pose.position), axis=1)
    assert row.any()
    assert not row[dist > 2.0 + 0.25 * math.sqrt(3)].any()


def test_camera_view_is_union_of_rays():
    rng = np.random.default_rng(11)
    g = random_grid(rng)
    t = all_voxel_targets(g)
    cfg = RaycastConfig(pixel_stride=6)
    pose = random_free_pose(rng, g)
    row = camera_view(g, t, SMALL_INTR, pose, cfg)
    px, py = sample_pixels(SMALL_INTR, 6)
    expect = np.zeros(t.n_p, bool)
    for d in pixel_rays(SMALL_INTR, pose, px, py):
        hit, tr = raycast(g, pose.position, d, SMALL_INTR.max_range)
        expect[tr] = True
        if hit is not None:
            expect[hit] = True
    np.testing.assert_array_equal(row, expect)


def test_oracle_agreement_small():
    rng = np.random.default_rng(7)
    step = 0.25 / 100
    total = agree = 0
    for _ in range(3):
        g = random_grid(rng, (12, 12, 6))
        t = all_voxel_targets(g)
        cfg = RaycastConfig(pixel_stride=6, max_incidence_deg=60)
        for _ in range(3):
            pose = random_free_pose(rng, g)
            row = camera_view(g, t, SMALL_INTR, pose, cfg)
            ref, dirs, seqs, slot, _ = oracle_view(g, t, SMALL_INTR, pose, cfg, step)
            total += row.size
            agree += int(np.sum(row == ref))
            o = np.asarray(pose.position)
            for j in np.flatnonzero(row != ref):
                for r, d in enumerate(dirs):
                    hit, tr = raycast(g, o, d, SMALL_INTR.max_range)
                    seq = tr + ([hit] if hit is not None else [])
                    if (slot[seq] == j).any() != (slot[seqs[r]] == j).any():
                        assert grazing(g, o, d, seq, seqs[r], step, SMALL_INTR.max_range)
    assert agree / total >= 0.95


# -- matrices ------------------------------------------------------------------

def test_prune_examples():
    intr = CameraIntrinsics()
    poses = np.array([[0, 0, 0, 0, 0, 0], [1, 0, 0, 0, 0, 0], [2, 0, 0, 0, 0, 0]], float)
    c = CandidateSet(poses, [0, 1, 2], intr)
    prov = "ab" * 32
    V = VisibilityMatrix(np.array([[0, 0], [1, 0], [0, 0]], bool), prov)
    c2, V2 = prune_blocked(c, V)
    assert c2.n_g == 1 and c2.location_group.tolist() == [0]
    assert c2.poses[0, 0] == 1 and V2.provenance != prov
    full = VisibilityMatrix(np.ones((3, 2), bool), prov)
    c3, V3 = prune_blocked(c, full)
    assert c3 is c and V3 is full
    c4, V4 = prune_blocked(c, VisibilityMatrix(np.zeros((3, 2), bool), prov))
    assert c4.n_g == 0 and V4.n_g == 0


@pytest.mark.parametrize("shape", [(0, 0), (3, 0), (0, 5), (4, 8), (5, 13)])
def test_cpvm_round_trip(tmp_path, shape):
    rng = np.random.default_rng(1)
    V = VisibilityMatrix(rng.random(shape) < 0.5, "0f" * 32)
    V.save(tmp_path / "v.cpvm")
    W = VisibilityMatrix.load(tmp_path / "v.cpvm")
    assert W.provenance == V.provenance
    np.testing.assert_array_equal(W.rows, V.rows)
    data = (tmp_path / "v.cpvm").read_bytes()
    assert data[:4] == b"CPVM" and len(data) == 48 + shape[0] * ((shape[1] + 7) // 8)


def test_cpvm_rejects_bad_files(tmp_path):
    p = tmp_path / "v.cpvm"
    p.write_bytes(b"XXXX" + bytes(44))
    with pytest.raises(ParseError):
        VisibilityMatrix.load(p)
    V = VisibilityMatrix(np.ones((2, 9), bool), "00" * 32)
    V.save(p)
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(ParseError):
        VisibilityMatrix.load(p)


def test_raycast_config_validation():
    with pytest.raises(ConfigError):
        RaycastConfig(pixel_stride=0)
    with pytest.raises(ConfigError):
        RaycastConfig(max_incidence_deg=120)
