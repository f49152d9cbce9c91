"""Environment lighting and specular radiance.

Directions use a y-up frame. An equirectangular map of height ``H`` has
width ``2H``; texel ``(i, j)`` covers ``u in [j, j+1)``, ``v in [i, i+1)``
with

    u = (atan2(x, z) / (2 pi) + 0.5) * W
    v = acos(y) / pi * H

The split-sum radiance is ``T_light * T_brdf``: ``T_light`` is the GGX-lobe
mean of the environment around the mirror direction (prefiltered per
roughness level), ``T_brdf`` the hemispherical specular albedo of the
microfacet lobe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse

from . import brdf
from .errors import BackFacing, EmptyControlSet, NonUnitDirection

N_LEVELS = 9
PREFILTER_SAMPLES = 1024
LUT_RES = 64
LUT_SAMPLES = 4096


def dir_to_equirect(d: np.ndarray, width: int, height: int) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if np.any(np.abs(np.linalg.norm(d, axis=-1) - 1.0) > 1e-6):
        raise NonUnitDirection("direction must be unit length")
    return _dir_to_uv(d, width, height)


def _dir_to_uv(d: np.ndarray, width: int, height: int) -> np.ndarray:
    u = (np.arctan2(d[..., 0], d[..., 2]) / (2 * np.pi) + 0.5) * width
    v = np.arccos(np.clip(d[..., 1], -1.0, 1.0)) / np.pi * height
    return np.stack([u, v], axis=-1)


def equirect_to_dir(uv: np.ndarray, width: int, height: int) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    phi = (uv[..., 0] / width - 0.5) * 2 * np.pi
    theta = uv[..., 1] / height * np.pi
    s = np.sin(theta)
    return np.stack([s * np.sin(phi), np.cos(theta), s * np.cos(phi)], axis=-1)


def texel_directions(height: int) -> np.ndarray:
    """``(H, 2H, 3)`` unit directions through texel centers."""
    width = 2 * height
    v, u = np.mgrid[0:height, 0:width]
    return equirect_to_dir(np.stack([u + 0.5, v + 0.5], axis=-1), width, height)


def texel_solid_angles(height: int) -> np.ndarray:
    """``(H, 1)`` solid angle of each texel row."""
    edges = np.linspace(0.0, np.pi, height + 1)
    band = np.cos(edges[:-1]) - np.cos(edges[1:])
    return (band * (2 * np.pi) / (2 * height))[:, None]


def equirect_taps(d: np.ndarray, height: int):
    """Texel indices ``(..., 4, 2)`` (row, col) and bilinear weights ``(..., 4)``.

    Wraps horizontally, clamps at the poles.
    """
    H, W = height, 2 * height
    uv = _dir_to_uv(d, W, H)
    x = uv[..., 0] - 0.5
    y = np.clip(uv[..., 1] - 0.5, 0.0, H - 1.0)
    x0 = np.floor(x)
    y0 = np.minimum(np.floor(y), H - 2) if H > 1 else np.zeros_like(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64) % W
    x1 = (x0 + 1) % W
    y0 = y0.astype(np.int64)
    y1 = np.minimum(y0 + 1, H - 1)
    rows = np.stack([y0, y0, y1, y1], axis=-1)
    cols = np.stack([x0, x1, x0, x1], axis=-1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return np.stack([rows, cols], axis=-1), w


def sample_equirect(grid: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Bilinear lookup of an equirectangular grid (H, 2H[, C]) at unit directions."""
    idx, w = equirect_taps(d, grid.shape[0])
    vals = grid[idx[..., 0], idx[..., 1]]
    if grid.ndim == 3:
        w = w[..., None]
    return np.sum(vals * w, axis=d.ndim - 1)


@dataclass
class EnvironmentMap:
    """Linear RGB radiance on an equirectangular grid ``(H, 2H, 3)``."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim == 2:
            self.data = np.repeat(self.data[..., None], 3, axis=-1)
        H, W = self.data.shape[:2]
        if W != 2 * H or self.data.shape[2] != 3:
            raise ValueError(f"equirectangular map must be (H, 2H, 3), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
            raise ValueError("environment radiance must be finite and non-negative")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def luminance(self) -> np.ndarray:
        return brdf.luminance(self.data)

    def lookup(self, d: np.ndarray) -> np.ndarray:
        """Luminance in direction(s) ``d``."""
        return sample_equirect(self.luminance(), d)

    @classmethod
    def constant(cls, value, height: int = 32) -> "EnvironmentMap":
        return cls(np.full((height, 2 * height, 3), value, dtype=float))

    @classmethod
    def from_function(cls, fn, height: int = 32) -> "EnvironmentMap":
        """Point-sample ``fn(dirs) -> (..., 3)`` at texel centers."""
        return cls(fn(texel_directions(height)))


def roughness_levels(n: int = N_LEVELS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


@dataclass
class PrefilteredEnv:
    """Luminance grids convolved with the GGX lobe, one per roughness level."""

    levels: list
    roughness: np.ndarray = field(default_factory=roughness_levels)

    def sample(self, d: np.ndarray, r_s) -> np.ndarray:
        """Bilinear in texels, linear between roughness levels."""
        d = np.asarray(d, dtype=float)
        r = np.clip(np.broadcast_to(np.asarray(r_s, dtype=float), d.shape[:-1]), 0.0, 1.0)
        x = r * (len(self.levels) - 1)
        lo = np.minimum(np.floor(x).astype(np.int64), len(self.levels) - 2)
        f = x - lo
        out = np.zeros(d.shape[:-1])
        for k in np.unique(lo):
            m = lo == k
            a = sample_equirect(self.levels[k], d[m])
            b = sample_equirect(self.levels[k + 1], d[m])
            out[m] = a + f[m] * (b - a)
        return out


def prefilter(env: EnvironmentMap, levels: int = N_LEVELS,
              samples: int = PREFILTER_SAMPLES) -> PrefilteredEnv:
    """Mean environment luminance over the GGX lobe around each texel direction.

    Uses the usual ``n = v = reflection`` simplification with ``n.l``
    weights. Level 0 (mirror) is the source luminance.
    """
    lum = env.luminance()
    H, W = lum.shape
    ops = prefilter_operators(H, levels, samples)
    out = [lum.copy()] + [(op @ lum.ravel()).reshape(H, W) for op in ops]
    return PrefilteredEnv(out, roughness_levels(levels))


@lru_cache(maxsize=4)
def prefilter_operators(height: int, levels: int = N_LEVELS,
                        samples: int = PREFILTER_SAMPLES) -> tuple:
    """Sparse texel-to-texel convolution matrices, one per rough level above 0.

    The convolution depends only on the map resolution, so it is built once
    and shared by every environment map.
    """
    dirs = texel_directions(height).reshape(-1, 3)
    n_tex = len(dirs)
    xi = brdf.hammersley(samples)
    t, b = brdf.basis(dirs)
    ops = []
    for r in roughness_levels(levels)[1:]:
        h_local = brdf.sample_ggx_half(xi[:, 0], xi[:, 1], brdf.alpha_of(r))
        # n = v, so l = reflect(v, h) has local z = 2 h_z^2 - 1
        l_local = 2.0 * h_local[:, 2:3] * h_local - np.array([0.0, 0.0, 1.0])
        w = np.maximum(l_local[:, 2], 0.0)
        keep = w > 0
        l_local, w = l_local[keep], w[keep] / w[keep].sum()
        L = (l_local[None, :, 0:1] * t[:, None] + l_local[None, :, 1:2] * b[:, None]
             + l_local[None, :, 2:3] * dirs[:, None])
        idx, tap = equirect_taps(L, height)
        cols = (idx[..., 0] * 2 * height + idx[..., 1]).ravel()
        rows = np.repeat(np.arange(n_tex), tap[0].size)
        vals = (tap * w[None, :, None]).ravel()
        ops.append(sparse.csr_matrix((vals, (rows, cols)), shape=(n_tex, n_tex)))
    return tuple(ops)


@dataclass
class BrdfTable:
    """Specular directional albedo on a grid over ``(cos_v, r_s)``, both in [0, 1]."""

    values: np.ndarray  # (n_cos, n_rough)

    @property
    def cos_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.values.shape[0])

    @property
    def rough_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.values.shape[1])

    def lookup(self, cos_v, r_s) -> np.ndarray:
        nc, nr = self.values.shape
        x = np.clip(np.asarray(cos_v, dtype=float), 0.0, 1.0) * (nc - 1)
        y = np.clip(np.asarray(r_s, dtype=float), 0.0, 1.0) * (nr - 1)
        x0 = np.minimum(np.floor(x).astype(np.int64), nc - 2)
        y0 = np.minimum(np.floor(y).astype(np.int64), nr - 2)
        fx, fy = x - x0, y - y0
        v = self.values
        top = v[x0, y0] * (1 - fy) + v[x0, y0 + 1] * fy
        bot = v[x0 + 1, y0] * (1 - fy) + v[x0 + 1, y0 + 1] * fy
        return top * (1 - fx) + bot * fx


def directional_albedo(cos_v, r_s, samples: int = LUT_SAMPLES) -> np.ndarray:
    """GGX-importance-sampled ``int cos_l f dl`` for arrays of ``(cos_v, r_s)``."""
    cos_v = np.maximum(np.asarray(cos_v, dtype=float), 1e-4)
    alpha = brdf.alpha_of(r_s)
    xi = brdf.hammersley(samples)
    shape = np.broadcast(cos_v, alpha).shape
    cos_v = np.broadcast_to(cos_v, shape).reshape(-1, 1)
    alpha = np.broadcast_to(alpha, shape).reshape(-1, 1)
    h = brdf.sample_ggx_half(xi[None, :, 0], xi[None, :, 1], alpha)
    v = np.concatenate([np.sqrt(1 - cos_v**2), np.zeros_like(cos_v), cos_v], axis=-1)[:, None, :]
    cos_d = np.sum(v * h, axis=-1)
    cos_l = 2.0 * cos_d * h[..., 2] - cos_v
    w = brdf.ggx_sample_weight(cos_v, cos_l, h[..., 2], cos_d, alpha)
    return w.mean(axis=-1).reshape(shape)


def build_brdf_table(resolution: int = LUT_RES, samples: int = LUT_SAMPLES) -> BrdfTable:
    if resolution < 2:
        raise ValueError("table resolution must be at least 2")
    c = np.linspace(0.0, 1.0, resolution)
    r = np.linspace(0.0, 1.0, resolution)
    vals = np.empty((resolution, resolution))
    for i, cv in enumerate(c):
        vals[i] = directional_albedo(cv, r, samples)
    return BrdfTable(np.clip(vals, 0.0, 1.0))


def _view_geometry(n, beta):
    n = np.asarray(n, dtype=float)
    beta = np.asarray(beta, dtype=float)
    v = -beta / np.linalg.norm(beta, axis=-1, keepdims=True)
    cos_v = np.sum(n * v, axis=-1)
    return v, cos_v


@dataclass
class RadianceContext:
    prefiltered: list  # one PrefilteredEnv per control point
    table: BrdfTable
    positions: np.ndarray  # (C, 3) control positions, world frame

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if len(self.prefiltered) != len(self.positions):
            raise ValueError("every control point needs exactly one prefiltered map")

    def nearest(self, P: np.ndarray) -> np.ndarray:
        return nearest_control_batch(P, self.positions)


def nearest_control_batch(P: np.ndarray, positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) == 0:
        raise EmptyControlSet("no control points")
    P = np.asarray(P, dtype=float)
    d2 = np.sum((P[..., None, :] - positions) ** 2, axis=-1)
    return np.argmin(d2, axis=-1)  # first minimum: lowest index wins ties


def eval_radiance_batch(ctx: RadianceContext, control_idx, n, beta, r_s):
    """Split-sum specular luminance for arrays of observations.

    ``n`` and ``beta`` must share a frame whose orientation matches the
    environment maps. Returns ``(r, front)``; back-facing entries are 0.
    """
    v, cos_v = _view_geometry(n, beta)
    front = cos_v > 0
    rho = brdf.reflect(v, np.asarray(n, dtype=float))
    rho /= np.linalg.norm(rho, axis=-1, keepdims=True)
    r_s = np.broadcast_to(np.asarray(r_s, dtype=float), cos_v.shape)
    idx = np.broadcast_to(np.asarray(control_idx), cos_v.shape)
    light = np.zeros(cos_v.shape)
    for c in np.unique(idx):
        m = idx == c
        light[m] = ctx.prefiltered[int(c)].sample(rho[m], r_s[m])
    out = light * ctx.table.lookup(cos_v, r_s)
    return np.where(front, out, 0.0), front


def eval_radiance(ctx: RadianceContext, control_idx: int, n, beta, r_s: float) -> float:
    r, front = eval_radiance_batch(ctx, control_idx, np.asarray(n)[None], np.asarray(beta)[None],
                                   r_s)
    if not front[0]:
        raise BackFacing("surface faces away from the viewer")
    return float(r[0])


def oracle_radiance(env: EnvironmentMap, n, beta, r_s: float, nsamples: int = 65536,
                    seed: int = 0) -> float:
    """Monte-Carlo estimate of the full specular reflection integral."""
    n = np.asarray(n, dtype=float)
    v, cos_v = _view_geometry(n, beta)
    if cos_v <= 0:
        raise BackFacing("surface faces away from the viewer")
    rng = np.random.default_rng(seed)
    u = rng.random((nsamples, 2))
    alpha = brdf.alpha_of(r_s)
    t, b = brdf.basis(n)
    h = brdf.to_world(brdf.sample_ggx_half(u[:, 0], u[:, 1], alpha), n, t, b)
    cos_d = h @ v
    L = brdf.reflect(v, h)
    cos_l = L @ n
    w = brdf.ggx_sample_weight(cos_v, cos_l, h @ n, cos_d, alpha)
    lit = w > 0
    total = np.zeros(nsamples)
    total[lit] = w[lit] * env.lookup(L[lit] / np.linalg.norm(L[lit], axis=-1, keepdims=True))
    return float(total.mean())
