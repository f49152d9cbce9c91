"""Per-pixel surface normals from depth maps.

Each pixel is back-projected together with its 8-connected ring; ring
members farther than ``radius`` (3D, meters) are discarded. Triplet cross
products over the ring give a first normal, which then orients a
Gaussian-weighted plane fit (moving least squares, degree one) over every
pixel whose 3D point lies within ``radius``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTriplet
from .geometry import Intrinsics

VICINITY = 0.02  # meters
MLS_BANDWIDTH = 0.01  # meters
MIN_NEIGHBORS = 3
CROSS_EPS = 1e-10

# 8-ring in counter-clockwise order as seen on screen (v grows downward)
RING = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)]


@dataclass
class NormalMap:
    normals: np.ndarray  # (H, W, 3), camera frame
    valid: np.ndarray  # (H, W) bool


def triplet_normal(P, N1, N2) -> np.ndarray:
    """Unit normal of the triangle ``(P, N1, N2)`` facing the camera at the origin."""
    P, N1, N2 = (np.asarray(x, dtype=float) for x in (P, N1, N2))
    n = np.cross(P - N1, P - N2)
    norm = np.linalg.norm(n)
    if norm <= CROSS_EPS:
        raise DegenerateTriplet("points are collinear")
    n = n / norm
    return -n if np.dot(n, P) > 0 else n


def depth_to_points(depth: np.ndarray, K: Intrinsics):
    depth = np.asarray(depth, dtype=float)
    valid = np.isfinite(depth) & (depth > 0)
    d = np.where(valid, depth, 0.0)
    P = K.rays(K.pixel_grid()) * d[..., None]
    return P, valid


def _shifted(a: np.ndarray, du: int, dv: int, fill):
    """``out[v, u] = a[v + dv, u + du]`` with ``fill`` outside."""
    H, W = a.shape[:2]
    out = np.full_like(a, fill)
    ys = slice(max(0, -dv), min(H, H - dv))
    xs = slice(max(0, -du), min(W, W - du))
    ys_src = slice(max(0, dv), min(H, H + dv))
    xs_src = slice(max(0, du), min(W, W + du))
    out[ys, xs] = a[ys_src, xs_src]
    return out


def neighborhood(depth: np.ndarray, K: Intrinsics, radius: float = VICINITY):
    """Back-projected ring neighbors and their in-vicinity masks.

    Returns ``(P, valid, nbrs, ok)`` with ``nbrs`` of shape ``(8, H, W, 3)``.
    """
    P, valid = depth_to_points(depth, K)
    nbrs = np.empty((len(RING),) + P.shape)
    ok = np.empty((len(RING),) + valid.shape, dtype=bool)
    for k, (du, dv) in enumerate(RING):
        Nk = _shifted(P, du, dv, 0.0)
        vk = _shifted(valid, du, dv, False)
        nbrs[k] = Nk
        ok[k] = vk & valid & (np.linalg.norm(Nk - P, axis=-1) <= radius)
    return P, valid, nbrs, ok


def _face_camera(n: np.ndarray, P: np.ndarray) -> np.ndarray:
    flip = np.sum(n * P, axis=-1) > 0
    return np.where(flip[..., None], -n, n)


def triplet_normals(P, nbrs, ok):
    """Average of camera-facing unit triplet normals over all ring pairs.

    Pairs are taken in ring order ``(i, j), i < j``. Returns the
    (unnormalized) average and the number of contributing triplets.
    """
    acc = np.zeros(P.shape)
    count = np.zeros(P.shape[:-1])
    m = len(nbrs)
    for i in range(m):
        for j in range(i + 1, m):
            n = np.cross(P - nbrs[i], P - nbrs[j])
            norm = np.linalg.norm(n, axis=-1)
            use = ok[i] & ok[j] & (norm > CROSS_EPS)
            n = _face_camera(n / np.where(use, norm, 1.0)[..., None], P)
            acc += np.where(use[..., None], n, 0.0)
            count += use
    return acc, count


def window_for(depth: np.ndarray, K: Intrinsics, radius: float = VICINITY,
               max_window: int = 8) -> int:
    """Half-width (pixels) of the square window that spans ``radius``."""
    d = depth[np.isfinite(depth) & (depth > 0)]
    if d.size == 0:
        return 1
    footprint = np.min(d) / max(K.fx, K.fy)
    return int(np.clip(np.ceil(radius / footprint), 1, max_window))


def mls_plane_normals(P, valid, window: int, radius: float = VICINITY,
                      bandwidth: float = MLS_BANDWIDTH):
    """Gaussian-weighted plane fit over the 3D vicinity of every pixel.

    Returns the fitted normal, a well-posedness flag and the neighbor count.
    """
    H, W = valid.shape
    sw = np.zeros((H, W))
    s1 = np.zeros((H, W, 3))
    s2 = np.zeros((H, W, 3, 3))
    count = np.zeros((H, W), dtype=int)
    for dv in range(-window, window + 1):
        for du in range(-window, window + 1):
            Q = _shifted(P, du, dv, 0.0)
            delta = Q - P
            dist2 = np.sum(delta**2, axis=-1)
            use = _shifted(valid, du, dv, False) & valid & (dist2 <= radius**2)
            w = np.where(use, np.exp(-dist2 / bandwidth**2), 0.0)
            if du or dv:
                count += use
            # moments about P keep the sums well conditioned
            sw += w
            s1 += w[..., None] * delta
            s2 += w[..., None, None] * delta[..., :, None] * delta[..., None, :]
    sw = np.maximum(sw, 1e-300)
    m = s1 / sw[..., None]
    cov = s2 / sw[..., None, None] - m[..., :, None] * m[..., None, :]
    evals, evecs = np.linalg.eigh(cov)
    normal = evecs[..., :, 0]
    # second eigenvalue ~0 means the support is a line, the fit is undefined
    well_posed = evals[..., 1] > 1e-6 * np.maximum(evals[..., 2], 1e-30)
    return normal, well_posed, count


def estimate_normal_map(depth: np.ndarray, K: Intrinsics, radius: float = VICINITY,
                        bandwidth: float = MLS_BANDWIDTH, smooth: bool = True,
                        window: int | None = None) -> NormalMap:
    """Camera-frame normals for every pixel with enough support.

    ``window`` bounds the pixel search of the smoothing fit; by default it
    is sized so the window spans ``radius`` at the nearest depth.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != (K.height, K.width):
        raise ValueError(f"depth shape {depth.shape} does not match intrinsics")
    P, valid, nbrs, ok = neighborhood(depth, K, radius)
    n_nbrs = ok.sum(0)
    acc, count = triplet_normals(P, nbrs, ok)
    norm = np.linalg.norm(acc, axis=-1)
    good = valid & (count > 0) & (norm > 0)
    tri = acc / np.where(good, norm, 1.0)[..., None]
    normals = tri
    if smooth:
        if window is None:
            window = window_for(depth, K, radius)
        fit, well_posed, n_nbrs = mls_plane_normals(P, valid, window, radius, bandwidth)
        fit = np.where((np.sum(fit * tri, axis=-1) < 0)[..., None], -fit, fit)
        normals = np.where((good & well_posed)[..., None], fit, tri)
    good &= n_nbrs >= MIN_NEIGHBORS
    normals = _face_camera(normals, P)
    normals = normals / np.maximum(np.linalg.norm(normals, axis=-1), 1e-300)[..., None]
    # a plane seen exactly edge-on has no camera-facing side
    facing = np.sum(normals * -P, axis=-1) > 0
    good &= facing
    normals = np.where(good[..., None], normals, 0.0)
    return NormalMap(normals, good)
