import numpy as np
import pytest
from scipy import ndimage

from pbpba.control_points import (ControlPoint, Segmentation, make_control_points,
                                  merge_controls, nearest_control, slic_on_normals)
from pbpba.errors import EmptyControlSet, TooFewValidPixels
from pbpba.geometry import Intrinsics, Pose
from pbpba.surface import NormalMap

from conftest import random_pose


def uniform_normals(h, w, n=(0, 0, -1.0)):
    return NormalMap(np.broadcast_to(np.asarray(n, float), (h, w, 3)).copy(), np.ones((h, w), bool))


def assert_partition(seg, valid):
    labels = seg.labels
    assert labels.min() >= 0 and labels.max() < seg.n_clusters
    four = ndimage.generate_binary_structure(2, 1)
    for c in np.unique(labels[valid]):
        _, count = ndimage.label(labels == c, structure=four)
        assert count == 1


def test_uniform_map_gives_near_equal_tiles():
    seg = slic_on_normals(uniform_normals(40, 40), k=4, compactness=10)
    sizes = np.bincount(seg.labels.ravel())
    assert len(sizes) == 4
    assert sizes.min() > 0.7 * sizes.max()
    assert_partition(seg, np.ones((40, 40), bool))


def test_normal_discontinuity_matches_two_means():
    h, w = 30, 40
    n = np.zeros((h, w, 3))
    n[:, :17] = [0, 0, -1]
    n[:, 17:] = [1, 0, 0]
    seg = slic_on_normals(NormalMap(n, np.ones((h, w), bool)), k=2, compactness=0.5)
    # brute-force 2-means on the normal features: the split is the normal step
    left, right = seg.labels[:, :17], seg.labels[:, 17:]
    assert len(np.unique(left)) == 1 and len(np.unique(right)) == 1
    assert left[0, 0] != right[0, 0]


def test_k_equals_pixel_count():
    seg = slic_on_normals(uniform_normals(4, 5), k=20, compactness=10,
                          enforce_connectivity=False)
    assert len(np.unique(seg.labels)) == 20


def test_invalid_pixels_are_absorbed(rng):
    nm = uniform_normals(30, 30)
    nm.valid[rng.random((30, 30)) < 0.2] = False
    seg = slic_on_normals(nm, k=9)
    assert seg.labels.shape == (30, 30) and seg.labels.min() >= 0
    assert_partition(seg, nm.valid)


def test_too_few_valid_pixels():
    nm = uniform_normals(4, 4)
    nm.valid[:] = False
    nm.valid[0, :3] = True
    with pytest.raises(TooFewValidPixels):
        slic_on_normals(nm, k=4)


def test_single_cluster_centroid():
    K = Intrinsics(50, 50, 9.5, 9.5, 20, 20)
    seg = Segmentation(np.zeros((20, 20), int), 1)
    pose = Pose(t=[1.0, 2.0, 3.0])
    ctl, dropped = make_control_points(seg, np.full((20, 20), 2.0), pose, K)
    assert dropped == 0 and len(ctl) == 1
    assert np.allclose(ctl[0].position, [1, 2, 5])


def test_cluster_without_depth_dropped():
    K = Intrinsics(50, 50, 9.5, 9.5, 20, 20)
    labels = np.zeros((20, 20), int)
    labels[:, 10:] = 1
    depth = np.full((20, 20), 2.0)
    depth[:, 10:] = 0.0
    ctl, dropped = make_control_points(Segmentation(labels, 2), depth, Pose(), K)
    assert dropped == 1 and len(ctl) == 1


def test_two_plane_controls_lie_on_planes():
    K = Intrinsics(60, 60, 31.5, 23.5, 64, 48)
    rays = K.rays(K.pixel_grid())
    # floor y = 0.5 (camera frame, y down) and wall z = 3
    d_wall = np.full((48, 64), 3.0)
    with np.errstate(divide="ignore"):
        d_floor = np.where(rays[..., 1] > 0, 0.5 / rays[..., 1], np.inf)
    floor = d_floor < d_wall
    depth = np.where(floor, d_floor, d_wall)
    normals = np.where(floor[..., None], [0, -1.0, 0], [0, 0, -1.0])
    seg = slic_on_normals(NormalMap(normals, np.ones((48, 64), bool)), k=8, compactness=5)
    pose = random_pose(np.random.default_rng(3), 0.3, 1.0)
    ctl, _ = make_control_points(seg, depth, pose, K)
    assert 1 <= len(ctl) <= 8
    for c in ctl:
        X = pose.inverse().apply(c.position)
        assert min(abs(X[1] - 0.5), abs(X[2] - 3.0)) < 0.02


def test_merge_by_voxel():
    ctl = [ControlPoint(np.array([0.01, 0.01, 0.01]), 0), ControlPoint(np.array([0.1, 0.1, 0.1]), 1),
           ControlPoint(np.array([0.3, 0.1, 0.1]), 2)]
    out = merge_controls(ctl, 0.25)
    assert [c.envmap_id for c in out] == [0, 1]
    assert np.allclose(out[1].position, [0.3, 0.1, 0.1])


def test_nearest_control_examples_and_oracle(rng):
    one = [ControlPoint(np.zeros(3), 0)]
    assert nearest_control(rng.normal(size=3), one) == 0
    ctl = [ControlPoint(p, i) for i, p in enumerate(rng.normal(size=(100, 3)))]
    assert nearest_control(ctl[37].position, ctl) == 37
    pos = np.array([c.position for c in ctl])
    T = random_pose(rng, 1.0, 2.0)
    moved = [ControlPoint(T.apply(c.position), c.envmap_id) for c in ctl]
    for q in rng.normal(size=(1000, 3)):
        expect = min(range(100), key=lambda i: (np.sum((pos[i] - q) ** 2), i))
        assert nearest_control(q, ctl) == expect
        assert nearest_control(T.apply(q), moved) == expect
    with pytest.raises(EmptyControlSet):
        nearest_control(np.zeros(3), [])


def test_nearest_control_ties_lowest_index():
    ctl = [ControlPoint(np.array([1.0, 0, 0]), 0), ControlPoint(np.array([-1.0, 0, 0]), 1)]
    assert nearest_control(np.zeros(3), ctl) == 0
