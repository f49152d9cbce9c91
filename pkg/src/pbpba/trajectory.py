"""Trajectories, their text format, rigid alignment and ATE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IoFailure, TooFewCorrespondences
from .geometry import Pose

ASSOC_WINDOW = 0.02  # seconds


@dataclass
class Trajectory:
    stamps: np.ndarray
    poses: list[Pose]

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float).reshape(-1)
        if len(self.stamps) != len(self.poses):
            raise ValueError("stamps and poses differ in length")
        if np.any(np.diff(self.stamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses]).reshape(-1, 3)

    def transformed(self, T: Pose) -> "Trajectory":
        """Left-multiply every pose by ``T``."""
        return Trajectory(self.stamps.copy(), [T @ p for p in self.poses])


def read_trajectory(path) -> Trajectory:
    stamps, poses = [], []
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise IoFailure(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            vals = [float(x) for x in parts]
        except ValueError as exc:
            raise IoFailure(f"{path}:{lineno}: {exc}") from exc
        q = np.array(vals[4:8])
        if not np.all(np.isfinite(vals)) or np.linalg.norm(q) < 1e-12:
            raise IoFailure(f"{path}:{lineno}: invalid pose")
        stamps.append(vals[0])
        poses.append(Pose(q, vals[1:4]))
    try:
        return Trajectory(np.array(stamps), poses)
    except ValueError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def format_trajectory(traj: Trajectory) -> str:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for s, p in zip(traj.stamps, traj.poses):
        vals = [s, *p.t, *p.q]
        lines.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def write_trajectory(path, traj: Trajectory) -> None:
    with open(path, "w") as f:
        f.write(format_trajectory(traj))


def associate(est: Trajectory, gt: Trajectory, window: float = ASSOC_WINDOW):
    """Index pairs ``(i_est, i_gt)`` matched by nearest timestamp."""
    pairs = []
    if len(gt) == 0:
        return pairs
    for i, s in enumerate(est.stamps):
        j = int(np.argmin(np.abs(gt.stamps - s)))
        if abs(gt.stamps[j] - s) <= window:
            pairs.append((i, j))
    return pairs


@dataclass
class Alignment:
    pose: Pose  # maps estimated positions onto ground truth
    degenerate: bool
    pairs: list


def umeyama_align(est: Trajectory, gt: Trajectory) -> Alignment:
    """Closed-form rigid (no scale) alignment of ``est`` positions onto ``gt``."""
    pairs = associate(est, gt)
    if len(pairs) < 3:
        raise TooFewCorrespondences(f"{len(pairs)} associated poses, need >= 3")
    X = est.positions()[[i for i, _ in pairs]]
    Y = gt.positions()[[j for _, j in pairs]]
    mx, my = X.mean(0), Y.mean(0)
    C = (Y - my).T @ (X - mx) / len(pairs)
    U, S, Vt = np.linalg.svd(C)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1
    R = U @ D @ Vt
    t = my - R @ mx
    # collinear (or coincident) positions leave a rotation about the line free
    sx = np.linalg.svd(X - mx, compute_uv=False)
    degenerate = bool(sx[1] <= 1e-9 * max(sx[0], 1e-12))
    return Alignment(Pose.from_rt(R, t), degenerate, pairs)


def aligned_errors(est: Trajectory, gt: Trajectory):
    """Per-pair aligned positions and translation errors."""
    al = umeyama_align(est, gt)
    X = est.positions()[[i for i, _ in al.pairs]]
    Y = gt.positions()[[j for _, j in al.pairs]]
    Xa = al.pose.apply(X)
    return al, Xa, np.linalg.norm(Xa - Y, axis=1)


def ate_rmse(est: Trajectory, gt: Trajectory) -> float:
    _, _, err = aligned_errors(est, gt)
    return float(np.sqrt(np.mean(err**2)))
