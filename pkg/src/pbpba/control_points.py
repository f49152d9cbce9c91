"""SLIC superpixels on normal maps and the control points derived from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyControlSet, TooFewValidPixels
from .geometry import Intrinsics, Pose
from .radiance import nearest_control_batch
from .surface import NormalMap

DEFAULT_CLUSTERS = 16
DEFAULT_COMPACTNESS = 10.0
SLIC_ITERATIONS = 10
MERGE_VOXEL = 0.25  # meters


@dataclass
class Segmentation:
    labels: np.ndarray  # (H, W) int, 0..n_clusters-1
    n_clusters: int


@dataclass
class ControlPoint:
    position: np.ndarray  # world frame, meters
    envmap_id: int


def _grid_shape(h: int, w: int, k: int) -> tuple[int, int]:
    step = np.sqrt(h * w / k)
    ny = max(1, int(round(h / step)))
    nx = max(1, int(round(w / step)))
    while nx * ny > k:
        if nx >= ny:
            nx -= 1
        else:
            ny -= 1
    return ny, nx


def slic_on_normals(normals: NormalMap, k: int = DEFAULT_CLUSTERS,
                    compactness: float = DEFAULT_COMPACTNESS,
                    iterations: int = SLIC_ITERATIONS,
                    enforce_connectivity: bool = True) -> Segmentation:
    """Cluster pixels in ``(m u/S, m v/S, nx, ny, nz)`` space."""
    valid = np.asarray(normals.valid, dtype=bool)
    n = np.asarray(normals.normals, dtype=float)
    H, W = valid.shape
    if valid.sum() < k or k < 1:
        raise TooFewValidPixels(f"{int(valid.sum())} valid pixels for {k} clusters")
    S = np.sqrt(H * W / k)
    m = compactness
    vv, uu = np.mgrid[0:H, 0:W].astype(float)

    ny, nx = _grid_shape(H, W, k)
    cy = (np.arange(ny) + 0.5) * H / ny
    cx = (np.arange(nx) + 0.5) * W / nx
    seeds = []
    for y in cy:
        for x in cx:
            yi, xi = min(int(y), H - 1), min(int(x), W - 1)
            if not valid[yi, xi]:
                # move the seed onto the closest valid pixel
                d2 = np.where(valid, (vv - yi) ** 2 + (uu - xi) ** 2, np.inf)
                yi, xi = np.unravel_index(np.argmin(d2), d2.shape)
            seeds.append((uu[yi, xi], vv[yi, xi], *n[yi, xi]))
    centers = np.array(seeds, dtype=float)

    labels = np.full((H, W), -1, dtype=np.int64)
    radius = int(np.ceil(S))
    for _ in range(iterations):
        dist = np.full((H, W), np.inf)
        for c, (cu, cv, *cn) in enumerate(centers):
            y0, y1 = max(0, int(cv) - radius), min(H, int(cv) + radius + 1)
            x0, x1 = max(0, int(cu) - radius), min(W, int(cu) + radius + 1)
            du = (uu[y0:y1, x0:x1] - cu) / S
            dv = (vv[y0:y1, x0:x1] - cv) / S
            dn = n[y0:y1, x0:x1] - np.asarray(cn)
            d = m * m * (du * du + dv * dv) + np.sum(dn * dn, axis=-1)
            d = np.where(valid[y0:y1, x0:x1], d, np.inf)
            closer = d < dist[y0:y1, x0:x1]
            dist[y0:y1, x0:x1][closer] = d[closer]
            labels[y0:y1, x0:x1][closer] = c
        for c in range(len(centers)):
            sel = (labels == c) & valid
            if sel.any():
                centers[c, 0] = uu[sel].mean()
                centers[c, 1] = vv[sel].mean()
                centers[c, 2:] = n[sel].mean(0)

    # valid pixels the windows never reached, then invalid pixels, take the nearest label
    unlabeled = labels < 0
    if unlabeled.any():
        _, (iy, ix) = ndimage.distance_transform_edt(unlabeled, return_indices=True)
        labels = labels[iy, ix]

    if enforce_connectivity:
        labels = _enforce_connectivity(labels)
    _, labels = np.unique(labels, return_inverse=True)
    labels = labels.reshape(H, W)
    return Segmentation(labels, int(labels.max()) + 1)


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Keep each label's largest 4-connected piece; fold the rest into a neighbor."""
    labels = labels.copy()
    four = ndimage.generate_binary_structure(2, 1)
    while True:
        orphans = np.zeros(labels.shape, dtype=bool)
        for lab in np.unique(labels):
            comp, count = ndimage.label(labels == lab, structure=four)
            if count > 1:
                sizes = np.bincount(comp.ravel())[1:]
                orphans |= (comp > 0) & (comp != np.argmax(sizes) + 1)
        if not orphans.any():
            return labels
        # every orphan piece touches some kept component, so one pass resolves it
        pieces, npieces = ndimage.label(orphans, structure=four)
        for p in range(1, npieces + 1):
            piece = pieces == p
            ring = ndimage.binary_dilation(piece, structure=four) & ~orphans
            vals, counts = np.unique(labels[ring], return_counts=True)
            labels[piece] = vals[np.argmax(counts)]


def make_control_points(seg: Segmentation, depth: np.ndarray, pose: Pose,
                        K: Intrinsics, first_id: int = 0):
    """One world-frame control point per cluster with valid depth.

    Returns ``(controls, n_dropped)``.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != seg.labels.shape:
        raise ValueError("segmentation and depth map are not aligned")
    good = np.isfinite(depth) & (depth > 0)
    vv, uu = np.mgrid[0:depth.shape[0], 0:depth.shape[1]]
    controls, dropped = [], 0
    for c in range(seg.n_clusters):
        sel = (seg.labels == c) & good
        if not sel.any():
            dropped += 1
            continue
        p = np.array([uu[sel].mean(), vv[sel].mean()])
        d = float(np.median(depth[sel]))
        X = K.rays(p) * d
        controls.append(ControlPoint(pose.apply(X), first_id + len(controls)))
    return controls, dropped


def merge_controls(controls: list, voxel: float = MERGE_VOXEL) -> list:
    """Drop controls falling into a voxel already occupied; ids are reassigned."""
    seen, out = set(), []
    for c in controls:
        key = tuple(np.floor(np.asarray(c.position) / voxel).astype(int))
        if key in seen:
            continue
        seen.add(key)
        out.append(ControlPoint(np.asarray(c.position, dtype=float), len(out)))
    return out


def nearest_control(P, controls: list) -> int:
    if not controls:
        raise EmptyControlSet("no control points")
    pos = np.array([c.position for c in controls])
    return int(nearest_control_batch(np.asarray(P, dtype=float), pos))
