"""On-disk dataset layout: reading, writing and validation.

::

    intrinsics.txt            fx fy cx cy width height
    groundtruth.txt           trajectory
    initial.txt               trajectory
    frames/NNNNNN.pfm         image, 1 channel, linear [0, 1]
    frames/NNNNNN.depth.pfm   meters, 0 = invalid
    frames/NNNNNN.rough.pfm   roughness in [0, 1]
    frames/NNNNNN.normal.pfm  camera-frame unit normals (optional)
    controls/control_points.txt   id x y z
    controls/NNN.env.pfm      equirectangular RGB
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoFailure
from .geometry import Intrinsics
from .pfm import read_pfm, write_pfm
from .radiance import EnvironmentMap
from .trajectory import Trajectory, read_trajectory, write_trajectory


@dataclass
class Frame:
    image: np.ndarray
    depth: np.ndarray
    roughness: np.ndarray
    normals: np.ndarray | None = None


@dataclass
class Dataset:
    intrinsics: Intrinsics
    groundtruth: Trajectory
    initial: Trajectory
    frames: list[Frame]
    control_positions: np.ndarray  # (C, 3)
    envmaps: list[EnvironmentMap] = field(default_factory=list)


def frame_path(root, index: int, kind: str = "") -> Path:
    suffix = f".{kind}.pfm" if kind else ".pfm"
    return Path(root) / "frames" / f"{index:06d}{suffix}"


def env_path(root, index: int) -> Path:
    return Path(root) / "controls" / f"{index:03d}.env.pfm"


def read_intrinsics(path) -> Intrinsics:
    try:
        parts = Path(path).read_text().split()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if len(parts) != 6:
        raise IoFailure(f"{path}: expected 6 numbers, got {len(parts)}")
    try:
        fx, fy, cx, cy = (float(x) for x in parts[:4])
        return Intrinsics(fx, fy, cx, cy, int(parts[4]), int(parts[5]))
    except ValueError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def read_controls(path) -> np.ndarray:
    rows = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise IoFailure(f"{path}:{lineno}: expected 'id x y z'")
        try:
            i = int(parts[0])
            xyz = [float(x) for x in parts[1:]]
        except ValueError as exc:
            raise IoFailure(f"{path}:{lineno}: {exc}") from exc
        if i != len(rows):
            raise IoFailure(f"{path}:{lineno}: ids must run 0, 1, 2, ...")
        rows.append(xyz)
    return np.array(rows, dtype=float).reshape(-1, 3)


def write_dataset(root, ds: Dataset) -> None:
    root = Path(root)
    try:
        (root / "frames").mkdir(parents=True, exist_ok=True)
        (root / "controls").mkdir(parents=True, exist_ok=True)
        (root / "intrinsics.txt").write_text(ds.intrinsics.to_line() + "\n")
        write_trajectory(root / "groundtruth.txt", ds.groundtruth)
        write_trajectory(root / "initial.txt", ds.initial)
        for i, fr in enumerate(ds.frames):
            write_pfm(frame_path(root, i), fr.image)
            write_pfm(frame_path(root, i, "depth"), fr.depth)
            write_pfm(frame_path(root, i, "rough"), fr.roughness)
            if fr.normals is not None:
                write_pfm(frame_path(root, i, "normal"), fr.normals)
        lines = ["# id x y z"]
        lines += [f"{i} {x!r} {y!r} {z!r}" for i, (x, y, z) in
                  enumerate(np.asarray(ds.control_positions, dtype=float).tolist())]
        (root / "controls" / "control_points.txt").write_text("\n".join(lines) + "\n")
        for i, env in enumerate(ds.envmaps):
            write_pfm(env_path(root, i), env.data)
    except OSError as exc:
        raise IoFailure(f"{root}: {exc}") from exc


def load_dataset(root, with_envmaps: bool = True) -> Dataset:
    """Read a dataset; raises IoFailure on the first problem (see validate_dataset)."""
    problems = validate_dataset(root)
    if problems:
        raise IoFailure(problems[0])
    root = Path(root)
    K = read_intrinsics(root / "intrinsics.txt")
    gt = read_trajectory(root / "groundtruth.txt")
    init = read_trajectory(root / "initial.txt")
    frames = []
    for i in range(len(gt)):
        npath = frame_path(root, i, "normal")
        frames.append(Frame(
            image=read_pfm(frame_path(root, i)).astype(float),
            depth=read_pfm(frame_path(root, i, "depth")).astype(float),
            roughness=read_pfm(frame_path(root, i, "rough")).astype(float),
            normals=read_pfm(npath).astype(float) if npath.exists() else None,
        ))
    controls = read_controls(root / "controls" / "control_points.txt")
    envs = []
    if with_envmaps:
        envs = [EnvironmentMap(read_pfm(env_path(root, i)).astype(float))
                for i in range(len(controls))]
    return Dataset(K, gt, init, frames, controls, envs)


def validate_dataset(root) -> list[str]:
    """Every violation found, one message per problem; empty means valid."""
    root = Path(root)
    problems: list[str] = []
    if not root.is_dir():
        return [f"{root}: not a directory"]

    def attempt(fn, *args):
        try:
            return fn(*args)
        except IoFailure as exc:
            problems.append(str(exc))
            return None

    K = attempt(read_intrinsics, root / "intrinsics.txt")
    gt = attempt(read_trajectory, root / "groundtruth.txt")
    init = attempt(read_trajectory, root / "initial.txt")
    if gt is not None and init is not None and len(gt) != len(init):
        problems.append(f"initial.txt: {len(init)} poses but groundtruth.txt has {len(gt)}")

    n_frames = len(gt) if gt is not None else 0
    if gt is None:
        # still check whatever frames exist
        n_frames = len([p for p in (root / "frames").glob("*.pfm")
                        if p.name.count(".") == 1]) if (root / "frames").is_dir() else 0
    if n_frames == 0:
        problems.append(f"{root / 'frames'}: no frames")
    for i in range(n_frames):
        shapes = {}
        for kind, channels in (("", 1), ("depth", 1), ("rough", 1), ("normal", 3)):
            path = frame_path(root, i, kind)
            if not path.exists():
                if kind != "normal":
                    problems.append(f"{path}: missing")
                continue
            data = attempt(read_pfm, path)
            if data is None:
                continue
            got = 1 if data.ndim == 2 else data.shape[2]
            if got != channels:
                problems.append(f"{path}: expected {channels} channel(s), got {got}")
                continue
            shapes[kind or "image"] = data.shape[:2]
            if not np.all(np.isfinite(data)):
                problems.append(f"{path}: non-finite values")
            elif kind == "":
                if data.min() < 0 or data.max() > 1:
                    problems.append(f"{path}: intensities outside [0, 1]")
            elif kind == "depth":
                if data.min() < 0:
                    problems.append(f"{path}: negative depth")
            elif kind == "rough":
                if data.min() < 0 or data.max() > 1:
                    problems.append(f"{path}: roughness outside [0, 1]")
            elif kind == "normal":
                norm = np.linalg.norm(data, axis=-1)
                if np.any((norm > 1e-6) & (np.abs(norm - 1) > 1e-3)):
                    problems.append(f"{path}: normals not unit length")
        if len(set(shapes.values())) > 1:
            desc = ", ".join(f"{k} {v[1]}x{v[0]}" for k, v in shapes.items())
            problems.append(f"frame {i:06d}: inconsistent dimensions ({desc})")
        elif K is not None and shapes:
            h, w = next(iter(shapes.values()))
            if (h, w) != (K.height, K.width):
                problems.append(f"frame {i:06d}: {w}x{h} does not match intrinsics "
                                f"{K.width}x{K.height}")

    controls = attempt(read_controls, root / "controls" / "control_points.txt")
    if controls is not None:
        if len(controls) == 0:
            problems.append("controls/control_points.txt: no control points")
        for i in range(len(controls)):
            path = env_path(root, i)
            if not path.exists():
                problems.append(f"{path}: missing")
                continue
            data = attempt(read_pfm, path)
            if data is None:
                continue
            if data.ndim != 3 or data.shape[1] != 2 * data.shape[0]:
                problems.append(f"{path}: expected an RGB map twice as wide as tall, "
                                f"got shape {data.shape}")
            elif not np.all(np.isfinite(data)) or data.min() < 0:
                problems.append(f"{path}: radiance must be finite and non-negative")
    return problems
