"""Cook-Torrance specular lobe: GGX distribution, height-correlated Smith
masking and Schlick Fresnel. Roughness ``r_s`` maps to ``alpha = r_s**2``.

All functions broadcast over leading dimensions.
"""

from __future__ import annotations

import numpy as np

F0 = 0.04
LUMA = np.array([0.2126, 0.7152, 0.0722])


def luminance(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=float) @ LUMA


def alpha_of(roughness) -> np.ndarray:
    return np.asarray(roughness, dtype=float) ** 2


def ggx_d(cos_h, alpha):
    a2 = alpha * alpha
    c2 = cos_h * cos_h
    return a2 / (np.pi * (c2 * (a2 - 1.0) + 1.0) ** 2)


def smith_lambda(cos_t, alpha):
    c2 = np.clip(cos_t * cos_t, 1e-12, 1.0)
    tan2 = (1.0 - c2) / c2
    return 0.5 * (np.sqrt(1.0 + alpha * alpha * tan2) - 1.0)


def smith_g1(cos_t, alpha):
    return 1.0 / (1.0 + smith_lambda(cos_t, alpha))


def smith_g2(cos_v, cos_l, alpha):
    """Height-correlated masking-shadowing."""
    return 1.0 / (1.0 + smith_lambda(cos_v, alpha) + smith_lambda(cos_l, alpha))


def fresnel_schlick(cos_d, f0=F0):
    return f0 + (1.0 - f0) * (1.0 - np.clip(cos_d, 0.0, 1.0)) ** 5


def specular_brdf(cos_v, cos_l, cos_h, cos_d, alpha, f0=F0):
    """``F G D / (4 cos_v cos_l)``; zero below the horizon."""
    ok = (cos_v > 0) & (cos_l > 0)
    denom = np.where(ok, 4.0 * cos_v * cos_l, 1.0)
    f = fresnel_schlick(cos_d, f0) * smith_g2(cos_v, cos_l, alpha) * ggx_d(cos_h, alpha) / denom
    return np.where(ok, f, 0.0)


def sample_ggx_half(u1, u2, alpha):
    """Half vectors in the local frame (z = normal) distributed as ``D cos_h``."""
    phi = 2.0 * np.pi * u1
    a2 = alpha * alpha
    cos_t = np.sqrt((1.0 - u2) / (1.0 + (a2 - 1.0) * u2))
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def sample_cosine(u1, u2):
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    return np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(0.0, 1.0 - u1))],
                    axis=-1)


def ggx_sample_weight(cos_v, cos_l, cos_h, cos_d, alpha, f0=F0):
    """``f cos_l / pdf`` for half vectors drawn by :func:`sample_ggx_half`."""
    ok = (cos_v > 0) & (cos_l > 0) & (cos_h > 0)
    num = fresnel_schlick(cos_d, f0) * smith_g2(cos_v, cos_l, alpha) * cos_d
    den = np.where(ok, cos_h * cos_v, 1.0)
    return np.where(ok, num / den, 0.0)


def basis(n: np.ndarray):
    """Orthonormal tangent frame ``(t, b)`` for unit normals ``n`` (..., 3)."""
    n = np.asarray(n, dtype=float)
    up = np.where((np.abs(n[..., 2]) < 0.999)[..., None], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    t = np.cross(up, n)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    b = np.cross(n, t)
    return t, b


def to_world(local: np.ndarray, n: np.ndarray, t: np.ndarray, b: np.ndarray) -> np.ndarray:
    return local[..., 0:1] * t + local[..., 1:2] * b + local[..., 2:3] * n


def reflect(v: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Mirror ``v`` about ``h``: ``2 (v.h) h - v``."""
    return 2.0 * np.sum(v * h, axis=-1, keepdims=True) * h - v


def hammersley(n: int) -> np.ndarray:
    """``(n, 2)`` low-discrepancy points in the unit square."""
    i = np.arange(n, dtype=np.uint32)
    bits = i.copy()
    bits = (bits << 16) | (bits >> 16)
    bits = ((bits & 0x55555555) << 1) | ((bits & 0xAAAAAAAA) >> 1)
    bits = ((bits & 0x33333333) << 2) | ((bits & 0xCCCCCCCC) >> 2)
    bits = ((bits & 0x0F0F0F0F) << 4) | ((bits & 0xF0F0F0F0) >> 4)
    bits = ((bits & 0x00FF00FF) << 8) | ((bits & 0xFF00FF00) >> 8)
    return np.stack([(i + 0.5) / n, bits.astype(float) * 2.3283064365386963e-10], axis=-1)
