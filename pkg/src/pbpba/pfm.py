"""Portable Float Map reader/writer.

Arrays are top-to-bottom ``(H, W)`` or ``(H, W, 3)`` float32 in memory; on
disk rows run bottom-to-top and we always write little-endian (negative
scale).
"""

from __future__ import annotations

import os

import numpy as np

from .errors import IoFailure


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    elif data.ndim == 3 and data.shape[2] == 1:
        header = b"Pf"
        data = data[..., 0]
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {data.shape}")
    h, w = data.shape[:2]
    body = np.ascontiguousarray(np.flipud(data)).astype("<f4").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(body)
    os.replace(tmp, path)


def _read_token_line(f) -> str:
    line = f.readline()
    if not line:
        raise IoFailure("unexpected end of header")
    return line.decode("ascii", errors="replace").strip()


def read_pfm(path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            kind = _read_token_line(f)
            if kind == "PF":
                channels = 3
            elif kind == "Pf":
                channels = 1
            else:
                raise IoFailure(f"{path}: bad PFM identifier {kind!r}")
            dims = _read_token_line(f).split()
            if len(dims) != 2:
                raise IoFailure(f"{path}: bad dimension line")
            w, h = int(dims[0]), int(dims[1])
            scale = float(_read_token_line(f))
            dtype = "<f4" if scale < 0 else ">f4"
            count = w * h * channels
            raw = f.read(count * 4)
    except (OSError, ValueError) as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if len(raw) != count * 4:
        raise IoFailure(f"{path}: truncated data ({len(raw)} of {count * 4} bytes)")
    data = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).copy()
