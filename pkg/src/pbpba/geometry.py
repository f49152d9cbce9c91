"""Rigid motions, the pinhole camera, pixel warping and bilinear sampling.

Poses are world-from-camera. A relative pose ``rel`` between a host frame
and a target frame is ``target.inverse() @ host`` and maps host-camera
coordinates into target-camera coordinates.

Pixels are ``(u, v)`` with ``u`` along image columns and ``v`` along rows.
Every function accepts a single pixel/point or a stacked ``(..., 2)`` /
``(..., 3)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, NonPositiveDepth, OutOfBounds

Z_EPS = 1e-4  # minimum depth in the target frame, meters


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix(es) with ``hat(w) @ x == cross(w, x)``."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def so3_exp(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = hat(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * W @ W
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * W + b * W @ W


def so3_log(R: np.ndarray) -> np.ndarray:
    return quat_to_rotvec(quat_from_matrix(R))


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion ``(x, y, z, w)`` with ``w >= 0`` from a rotation matrix."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([0.25 * s, (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 1] + R[1, 0]) / s, 0.25 * s,
                      (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s,
                      0.25 * s, (R[1, 0] - R[0, 1]) / s])
    q /= np.linalg.norm(q)
    return q if q[3] >= 0 else -q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[3] < 0:
        q = -q
    v = q[:3]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v / q[3]
    angle = 2.0 * np.arctan2(s, q[3])
    return v / s * angle


def quat_from_rotvec(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    if theta < 1e-8:
        # second-order series keeps the round trip exact to ~1e-16
        half = 0.5 - theta**2 / 48.0
        q = np.array([*(w * half), 1.0 - theta**2 / 8.0])
    else:
        q = np.array([*(w / theta * np.sin(theta / 2)), np.cos(theta / 2)])
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class Pose:
    """World-from-camera rigid transform.

    ``q`` is a unit quaternion stored scalar-last ``(x, y, z, w)``, ``t`` the
    camera center in world coordinates (meters).
    """

    q: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        q = q / np.linalg.norm(q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3).copy())

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> "Pose":
        return cls(quat_from_matrix(R), t)

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls.from_rt(T[:3, :3], T[:3, 3])

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> "Pose":
        qi = np.array([-self.q[0], -self.q[1], -self.q[2], self.q[3]])
        return Pose(qi, -(quat_to_matrix(qi) @ self.t))

    def compose(self, other: "Pose") -> "Pose":
        q = quat_multiply(self.q, other.q)
        return Pose(q, self.R @ other.t + self.t)

    __matmul__ = compose

    def apply(self, P: np.ndarray) -> np.ndarray:
        """Transform point(s) of shape ``(..., 3)``."""
        return np.asarray(P, dtype=float) @ self.R.T + self.t

    def angle_to(self, other: "Pose") -> float:
        """Rotation angle (radians) of ``self^-1 @ other``."""
        d = quat_multiply(np.array([-self.q[0], -self.q[1], -self.q[2], self.q[3]]), other.q)
        return float(2.0 * np.arctan2(np.linalg.norm(d[:3]), abs(d[3])))


def relative_pose(host: Pose, target: Pose) -> Pose:
    """Target-from-host transform."""
    return target.inverse() @ host


def se3_exp(xi: np.ndarray) -> Pose:
    """Exponential of a twist ``[omega (rad), v (m)]``."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    theta = np.linalg.norm(w)
    W = hat(w)
    if theta < 1e-8:
        V = np.eye(3) + 0.5 * W + W @ W / 6.0
    else:
        V = (np.eye(3) + (1 - np.cos(theta)) / theta**2 * W
             + (theta - np.sin(theta)) / theta**3 * W @ W)
    return Pose(quat_from_rotvec(w), V @ v)


def se3_log(pose: Pose) -> np.ndarray:
    w = quat_to_rotvec(pose.q)
    theta = np.linalg.norm(w)
    W = hat(w)
    if theta < 1e-8:
        Vinv = np.eye(3) - 0.5 * W + W @ W / 12.0
    else:
        half = theta / 2
        coef = (1 - half * np.cos(half) / np.sin(half)) / theta**2
        Vinv = np.eye(3) - 0.5 * W + coef * W @ W
    return np.concatenate([w, Vinv @ pose.t])


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def rays(self, p: np.ndarray) -> np.ndarray:
        """Unnormalized rays with ``z = 1`` through pixel(s) ``p``."""
        p = np.asarray(p, dtype=float)
        out = np.ones(p.shape[:-1] + (3,))
        out[..., 0] = (p[..., 0] - self.cx) / self.fx
        out[..., 1] = (p[..., 1] - self.cy) / self.fy
        return out

    def pixel_grid(self) -> np.ndarray:
        """``(H, W, 2)`` array of integer pixel coordinates."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        return np.stack([u, v], axis=-1).astype(float)

    def in_bounds(self, p: np.ndarray, margin: float = 0.0) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return ((p[..., 0] >= margin) & (p[..., 0] <= self.width - 1 - margin)
                & (p[..., 1] >= margin) & (p[..., 1] <= self.height - 1 - margin))

    def to_line(self) -> str:
        return " ".join([*(repr(float(x)) for x in (self.fx, self.fy, self.cx, self.cy)),
                         str(self.width), str(self.height)])


def project(P: np.ndarray, K: Intrinsics) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    z = P[..., 2]
    return np.stack([K.fx * P[..., 0] / z + K.cx, K.fy * P[..., 1] / z + K.cy], axis=-1)


def backproject(p: np.ndarray, d, K: Intrinsics) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise NonPositiveDepth(f"depth must be positive, got {d}")
    return K.rays(p) * d[..., None]


def warp(p: np.ndarray, d, rel: Pose, K: Intrinsics):
    """Warp host pixel(s) at depth ``d`` into the target frame.

    Returns ``(p_target, in_bounds)``. Raises BehindCamera when any warped
    point has depth at or below ``Z_EPS``.
    """
    P = rel.apply(backproject(p, d, K))
    if np.any(P[..., 2] <= Z_EPS):
        raise BehindCamera("warped point behind the target camera")
    q = project(P, K)
    return q, K.in_bounds(q)


def view_directions(p: np.ndarray, d, rel: Pose, K: Intrinsics):
    """Unnormalized host-frame directions from each camera center to the point.

    ``beta`` points from the host center, ``beta_prime`` from the target
    center; ``beta_prime - beta == R^T t``.
    """
    P = backproject(p, d, K)
    R = rel.R
    return P, P + R.T @ rel.t


def bilinear_batch(image: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Vectorized bilinear sample with analytic gradient.

    Returns ``(value, du, dv, valid)``; samples outside
    ``[0, W-1] x [0, H-1]`` have ``valid == False`` and zeros elsewhere.
    """
    H, W = image.shape
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    valid = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    uc = np.where(valid, u, 0.0)
    vc = np.where(valid, v, 0.0)
    x0 = np.minimum(np.floor(uc).astype(np.int64), W - 2)
    y0 = np.minimum(np.floor(vc).astype(np.int64), H - 2)
    fx = uc - x0
    fy = vc - y0
    i00 = image[y0, x0]
    i10 = image[y0, x0 + 1]
    i01 = image[y0 + 1, x0]
    i11 = image[y0 + 1, x0 + 1]
    top = i00 + fx * (i10 - i00)
    bot = i01 + fx * (i11 - i01)
    val = top + fy * (bot - top)
    du = (1 - fy) * (i10 - i00) + fy * (i11 - i01)
    dv = bot - top
    zero = np.zeros_like(val)
    return (np.where(valid, val, zero), np.where(valid, du, zero),
            np.where(valid, dv, zero), valid)


def bilinear(image: np.ndarray, p: np.ndarray):
    """Bilinear value and ``(d/du, d/dv)`` gradient at a single pixel."""
    val, du, dv, valid = bilinear_batch(image, p[0], p[1])
    if not valid:
        raise OutOfBounds(f"pixel {tuple(p)} outside image of shape {image.shape}")
    return float(val), np.array([float(du), float(dv)])
