import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pbpba.errors import BehindCamera, NonPositiveDepth, OutOfBounds
from pbpba.geometry import (Intrinsics, Pose, backproject, bilinear, bilinear_batch, hat,
                            project, quat_to_matrix, relative_pose, se3_exp, se3_log,
                            view_directions, warp)

from conftest import random_pose

finite = st.floats(-3, 3, allow_nan=False)
twists = arrays(float, 6, elements=st.floats(-1.0, 1.0))


def matrix_exp(A, terms=40):
    out, term = np.eye(A.shape[0]), np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


def twist_matrix(xi):
    A = np.zeros((4, 4))
    A[:3, :3] = hat(xi[:3])
    A[:3, 3] = xi[3:]
    return A


def test_zero_twist_is_identity():
    p = se3_exp(np.zeros(6))
    assert np.allclose(p.R, np.eye(3)) and np.allclose(p.t, 0)


def test_quarter_turn_about_z():
    p = se3_exp([0, 0, np.pi / 2, 0, 0, 0])
    assert np.allclose(p.R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)
    assert np.allclose(p.t, 0)


@given(twists)
def test_se3_exp_matches_matrix_series(xi):
    assert np.allclose(se3_exp(xi).matrix(), matrix_exp(twist_matrix(xi)), atol=1e-9)


@given(arrays(float, 6, elements=st.floats(-1.7, 1.7)))
def test_se3_log_exp_round_trip(xi):
    if np.linalg.norm(xi[:3]) >= np.pi - 1e-3:
        return
    assert np.allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)


def test_pose_invariants(rng):
    for _ in range(50):
        a, b = random_pose(rng, 2.0), random_pose(rng, 2.0)
        c = a @ b
        assert abs(np.linalg.norm(c.q) - 1) < 1e-9
        e = a @ a.inverse()
        assert e.angle_to(Pose()) < 1e-9 and np.linalg.norm(e.t) < 1e-9
        assert np.allclose(c.matrix(), a.matrix() @ b.matrix(), atol=1e-12)


def test_quaternion_matrix_is_rotation(rng):
    for _ in range(20):
        q = rng.normal(size=4)
        R = quat_to_matrix(q / np.linalg.norm(q))
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(R), 1.0)


def test_intrinsics_rejects_bad_values():
    with pytest.raises(ValueError):
        Intrinsics(0, 1, 1, 1, 4, 4)
    with pytest.raises(ValueError):
        Intrinsics(1, 1, 4, 1, 4, 4)


def test_backproject_examples(K):
    assert np.allclose(backproject(np.array([K.cx, K.cy]), 2.0, K), [0, 0, 2])
    assert np.allclose(backproject(np.array([K.cx + K.fx, K.cy]), 1.0, K), [1, 0, 1])
    with pytest.raises(NonPositiveDepth):
        backproject(np.array([1.0, 1.0]), 0.0, K)


@given(st.floats(0, 159), st.floats(0, 119), st.floats(0.05, 50))
def test_project_backproject_round_trip(u, v, d):
    K = Intrinsics(160.0, 150.0, 79.5, 59.5, 160, 120)
    p = np.array([u, v])
    assert np.allclose(project(backproject(p, d, K), K), p, atol=1e-9)


@given(finite, finite, st.floats(0.1, 10))
def test_backproject_project_round_trip(x, y, z):
    K = Intrinsics(160.0, 150.0, 79.5, 59.5, 160, 120)
    P = np.array([x, y, z])
    back = backproject(project(P, K), z, K)
    assert np.allclose(back, P, rtol=1e-9, atol=1e-9 * z)


def test_identity_warp(K, rng):
    p = rng.uniform([0, 0], [159, 119], size=(50, 2))
    q, ok = warp(p, rng.uniform(0.5, 5, 50), Pose(), K)
    assert np.array_equal(q, p) or np.allclose(q, p, atol=1e-12)
    assert ok.all()


def test_forward_motion_doubles_offset(K):
    p = np.array([K.cx + 10.0, K.cy - 4.0])
    rel = Pose(t=[0, 0, -1.0])  # target-from-host: point at depth 2 lands at depth 1
    q, _ = warp(p, 2.0, rel, K)
    assert np.allclose(q - [K.cx, K.cy], 2 * (p - [K.cx, K.cy]))


def test_warp_matches_matrix_chain(K, rng):
    for _ in range(100):
        host, target = random_pose(rng, 0.1, 0.1), random_pose(rng, 0.1, 0.1)
        p = rng.uniform([20, 20], [140, 100])
        d = rng.uniform(2, 5)
        Kmat = K.K
        X = d * np.linalg.inv(Kmat) @ np.array([p[0], p[1], 1.0])
        Xh = np.linalg.inv(target.matrix()) @ host.matrix() @ np.append(X, 1.0)
        x = Kmat @ Xh[:3]
        q, _ = warp(p, d, relative_pose(host, target), K)
        assert np.allclose(q, x[:2] / x[2], atol=1e-9)


def test_warp_behind_camera(K):
    with pytest.raises(BehindCamera):
        warp(np.array([K.cx, K.cy]), 1.0, Pose(t=[0, 0, -2.0]), K)


def test_warp_flags_out_of_bounds(K):
    q, ok = warp(np.array([K.cx, K.cy]), 1.0, Pose(t=[5.0, 0, 0]), K)
    assert not ok


def test_view_directions_example(K):
    p = np.array([K.cx, K.cy])
    beta, beta_p = view_directions(p, 2.0, Pose(t=[1.0, 0, 0]), K)
    assert np.allclose(beta, [0, 0, 2]) and np.allclose(beta_p, [1, 0, 2])
    beta, beta_p = view_directions(p, 2.0, Pose(), K)
    assert np.array_equal(beta, beta_p)


def test_view_directions_camera_center_oracle(K, rng):
    for _ in range(100):
        rel = random_pose(rng, 0.3, 0.5)
        p = rng.uniform([0, 0], [159, 119])
        d = rng.uniform(0.5, 5)
        beta, beta_p = view_directions(p, d, rel, K)
        c2 = -rel.R.T @ rel.t
        assert np.allclose(beta_p, beta - c2, atol=1e-12)
        assert np.allclose(beta_p - beta, rel.R.T @ rel.t, atol=1e-12)


def test_bilinear_lattice_and_constant(rng):
    img = rng.random((6, 7))
    for v in range(6):
        for u in range(7):
            assert bilinear(img, np.array([u, v], dtype=float))[0] == img[v, u]
    val, g = bilinear(np.full((5, 5), 0.3), np.array([2.3, 1.7]))
    assert np.isclose(val, 0.3) and np.allclose(g, 0)


def test_bilinear_gradient_finite_difference(rng):
    img = rng.random((10, 12))
    h = 1e-4
    for _ in range(100):
        # stay away from cell edges where the interpolant has kinks
        p = rng.integers(0, 9, 2) + rng.uniform(0.01, 0.99, 2)
        _, g = bilinear(img, p)
        fd = [(bilinear(img, p + e)[0] - bilinear(img, p - e)[0]) / (2 * h)
              for e in (np.array([h, 0]), np.array([0, h]))]
        assert np.allclose(g, fd, atol=1e-5)


def test_bilinear_out_of_bounds(rng):
    img = rng.random((4, 4))
    with pytest.raises(OutOfBounds):
        bilinear(img, np.array([3.5, 1.0]))
    _, _, _, valid = bilinear_batch(img, np.array([-0.1, 3.0]), np.array([1.0, 3.0]))
    assert valid.tolist() == [False, True]
