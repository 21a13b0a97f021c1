import numpy as np
import pytest

from mvenhance.packet import (PacketError, assemble_packet, load_packet,
                              save_packet, select_references,
                              view_overlap_score)
from mvenhance.scene import (CameraView, SceneSpec, TrajectorySpec,
                             corrupt_scene, generate_scene, sample_trajectory)


def _cam_at(pos, forward, up=(0, 0, 1.0), size=16):
    pos = np.asarray(pos, dtype=np.float64)
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    u = np.asarray(up, dtype=np.float64)
    r = np.cross(f, u)
    if np.linalg.norm(r) < 1e-9:
        r = np.cross(f, (0.0, 1.0, 0.0))
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    R = np.stack([r, d, f])
    return CameraView(14.4, 14.4, size / 2, size / 2, R, -R @ pos, size, size)


# --- worked overlap scores ---------------------------------------------------

def test_score_identical_cameras_is_one():
    c = _cam_at((0, 0, 0), (1, 0, 0))
    assert view_overlap_score(c, c, 0.0) == pytest.approx(1.0, abs=1e-15)


def test_score_parallel_at_max_distance():
    a = _cam_at((0, 0, 0), (1, 0, 0))
    b = _cam_at((0, 2, 0), (1, 0, 0))
    assert view_overlap_score(a, b, 2.0) == pytest.approx(0.8, abs=1e-12)


def test_score_orthogonal_at_half_max_distance():
    a = _cam_at((0, 0, 0), (1, 0, 0))
    b = _cam_at((0, 1, 0), (0, 1, 0))
    assert view_overlap_score(a, b, 2.0) == pytest.approx(0.1, abs=1e-12)


def test_select_prefers_colocated_over_opposite():
    target = _cam_at((0, 0, 0), (1, 0, 0))
    colocated = _cam_at((0, 0, 0), (1, 0, 0))
    opposite = _cam_at((0, 3, 0), (-1, 0, 0))
    assert select_references([target], [opposite, colocated], 1) == [1]


def test_select_pool_of_one_and_full_pool():
    target = _cam_at((0, 0, 0), (1, 0, 0))
    solo = _cam_at((5, 5, 0), (-1, 0, 0))
    assert select_references([target], [solo], 1) == [0]
    pool = [_cam_at((0, i, 0), (1, 0, 0)) for i in range(4)]
    idx = select_references([target], pool, 4)
    assert sorted(idx) == [0, 1, 2, 3]
    # scores decrease with distance, so order is ascending index here
    assert idx == [0, 1, 2, 3]


def test_select_tie_break_ascending_index():
    target = _cam_at((0, 0, 0), (1, 0, 0))
    twin = _cam_at((0, 1, 0), (1, 0, 0))
    idx = select_references([target], [twin, twin, twin], 2)
    assert idx == [0, 1]


def test_select_rejects_bad_inputs():
    t = _cam_at((0, 0, 0), (1, 0, 0))
    with pytest.raises(PacketError):
        select_references([], [t], 1)
    with pytest.raises(PacketError):
        select_references([t], [], 1)
    with pytest.raises(PacketError):
        select_references([t], [t], 0)


def test_dominant_camera_ranks_first():
    targets = [_cam_at((0, 0, 0), (1, 0, 0)), _cam_at((0, 4, 0), (1, 0, 0))]
    pool = [_cam_at((0, 8, 0), (0, 1, 0)), _cam_at((0, 9, 0), (0, -1, 0)),
            _cam_at((0, 0.01, 0), (1, 0, 0))]  # closer + aligned beats both
    assert select_references(targets, pool, 1) == [2]


# --- packet assembly and round trip ------------------------------------------

def _packet(seed=0, n_ref=3, n_target=2, size=16):
    scene = generate_scene(SceneSpec(count=20, seed=seed))
    cams = sample_trajectory(TrajectorySpec(kind="ring", n_views=n_ref + n_target,
                                            width=size, height=size))
    corrupted = corrupt_scene(scene, 0.5, seed=seed + 1)
    return assemble_packet(cams[:n_ref], cams[n_ref:], scene, corrupted)


def test_assemble_counts_and_anchor():
    p = _packet(n_ref=3, n_target=2)
    assert p.n_ref == 3 and p.n_target == 2
    assert len(p.views) == 5
    assert p.anchor_index == 3
    assert [v.is_target for v in p.views] == [False] * 3 + [True] * 2
    # anchor pose is identity after normalization
    anchor = p.views[p.anchor_index].cam
    assert np.allclose(anchor.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(anchor.center, 0.0, atol=1e-12)
    # anchor's Plücker moment channels vanish (ray origin at 0)
    assert np.max(np.abs(p.views[p.anchor_index].plucker[..., :3])) < 1e-9


def test_assemble_minimum_packet():
    p = _packet(n_ref=1, n_target=1)
    assert p.n_ref == 1 and p.n_target == 1


def test_assemble_rejects_empty_and_oversize():
    scene = generate_scene(SceneSpec(count=10, seed=0))
    cams = sample_trajectory(TrajectorySpec(kind="ring", n_views=4, width=16, height=16))
    bad = corrupt_scene(scene, 0.5, seed=1)
    with pytest.raises(PacketError):
        assemble_packet([], cams[2:], scene, bad)
    with pytest.raises(PacketError):
        assemble_packet(cams[:2], [], scene, bad)
    with pytest.raises(PacketError):
        assemble_packet(cams[:2], cams[2:], scene, bad, size_bounds=(2, 3))


def test_references_use_clean_targets_use_corrupted():
    scene = generate_scene(SceneSpec(count=20, seed=4))
    cams = sample_trajectory(TrajectorySpec(kind="ring", n_views=4, width=16, height=16))
    corrupted = corrupt_scene(scene, 0.9, seed=5)
    p = assemble_packet(cams[:2], cams[2:], scene, corrupted)
    # targets carry ground truth, and it differs from the distorted render
    for v in p.views:
        if v.is_target:
            assert v.gt_image is not None
            assert not np.array_equal(v.gt_image, v.image)
        else:
            assert v.gt_image is None


def test_packet_round_trip_byte_identical(tmp_path):
    p = _packet(seed=2)
    f1, f2 = tmp_path / "a.mvpk", tmp_path / "b.mvpk"
    save_packet(f1, p)
    back = load_packet(f1)
    assert back.n_ref == p.n_ref and back.n_target == p.n_target
    assert back.scale == p.scale
    for va, vb in zip(p.views, back.views):
        assert np.array_equal(va.image, vb.image)
        assert np.array_equal(va.cmap, vb.cmap)
        assert np.array_equal(va.plucker, vb.plucker)
        assert np.array_equal(va.cam.rotation, vb.cam.rotation)
        assert np.array_equal(va.cam.translation, vb.cam.translation)
        assert va.is_target == vb.is_target
    save_packet(f2, back)
    assert f1.read_bytes() == f2.read_bytes()


def test_packet_reader_rejects_unknown_version(tmp_path):
    p = _packet(seed=3)
    f = tmp_path / "p.mvpk"
    save_packet(f, p)
    blob = bytearray(f.read_bytes())
    blob[4] = 99  # version byte follows the 4-byte magic
    f.write_bytes(bytes(blob))
    with pytest.raises(PacketError):
        load_packet(f)
