"""Synthetic non-Lambertian scenes: textured planes under spherical-Gaussian
light, rendered with a one-bounce Monte-Carlo path tracer.

Shading is Lambert diffuse plus the Cook-Torrance specular lobe from
:mod:`pbpba.brdf`. Light reaching a shaded point comes from the analytic
environment, or, when the sampled ray hits another plane, from that plane's
outgoing radiance evaluated with unoccluded environment light.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import brdf
from .control_points import make_control_points, merge_controls, slic_on_normals
from .dataset import Dataset, Frame, write_dataset
from .errors import DegeneratePosition
from .geometry import Intrinsics, Pose, se3_exp
from .kvconfig import ConfigError, nest, read_kv
from .radiance import EnvironmentMap, texel_directions, texel_solid_angles
from .surface import NormalMap
from .trajectory import Trajectory

RAY_EPS = 1e-6
SURFACE_LIFT = 0.01  # meters, offset of env-map probes off the surface
IRRADIANCE_RES = 256


@dataclass
class Lobe:
    axis: np.ndarray
    sharpness: float
    amplitude: np.ndarray

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self.axis = self.axis / np.linalg.norm(self.axis)
        self.amplitude = np.broadcast_to(np.asarray(self.amplitude, dtype=float), (3,)).copy()
        if self.sharpness <= 0:
            raise ValueError("lobe sharpness must be positive")


@dataclass
class Light:
    ambient: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lobes: list = field(default_factory=list)

    def __post_init__(self):
        self.ambient = np.broadcast_to(np.asarray(self.ambient, dtype=float), (3,)).copy()

    def radiance(self, d: np.ndarray) -> np.ndarray:
        """RGB radiance arriving from direction(s) ``d`` (unit, world frame)."""
        d = np.asarray(d, dtype=float)
        out = np.broadcast_to(self.ambient, d.shape[:-1] + (3,)).copy()
        for lobe in self.lobes:
            out += np.exp(lobe.sharpness * (d @ lobe.axis - 1.0))[..., None] * lobe.amplitude
        return out

    def scaled(self, s: float) -> "Light":
        return Light(self.ambient * s,
                     [Lobe(lb.axis, lb.sharpness, lb.amplitude * s) for lb in self.lobes])


@dataclass
class Plane:
    """Parallelogram spanned from ``corners[0]`` by edges to corners 1 and 3."""

    corners: np.ndarray
    albedo: str = "constant"
    color0: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    color1: np.ndarray = field(default_factory=lambda: np.full(3, 0.1))
    checker_size: float = 0.25  # meters
    noise_scale: float = 0.15  # meters, wavelength of the finest noise octave
    roughness: tuple = (0.5, 0.5)  # value at edge-1 start and end
    seed: int = 0

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=float).reshape(4, 3)
        self.color0 = np.broadcast_to(np.asarray(self.color0, dtype=float), (3,)).copy()
        self.color1 = np.broadcast_to(np.asarray(self.color1, dtype=float), (3,)).copy()
        r = np.atleast_1d(np.asarray(self.roughness, dtype=float))
        self.roughness = (float(r[0]), float(r[-1]))
        if not all(0.02 <= x <= 1.0 for x in self.roughness):
            raise ValueError("plane roughness must lie in [0.02, 1]")
        if self.albedo not in ("constant", "checker", "noise"):
            raise ValueError(f"unknown albedo pattern {self.albedo!r}")
        self.origin = self.corners[0]
        self.e1 = self.corners[1] - self.corners[0]
        self.e2 = self.corners[3] - self.corners[0]
        n = np.cross(self.e1, self.e2)
        self.normal = n / np.linalg.norm(n)
        rng = np.random.default_rng(self.seed)
        # a few random plane waves give smooth, band-limited texture
        k = 2 * np.pi / self.noise_scale
        ang = rng.uniform(0, 2 * np.pi, 6)
        mag = k * np.array([1.0, 1.0, 0.6, 0.6, 0.35, 0.35])
        self._wave_k = np.stack([np.cos(ang) * mag, np.sin(ang) * mag], axis=-1)
        self._wave_phase = rng.uniform(0, 2 * np.pi, 6)

    def intersect(self, o: np.ndarray, d: np.ndarray):
        """Ray parameter (inf on miss) and edge coordinates ``(a, b)`` in [0, 1]."""
        denom = d @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.origin - o) @ self.normal) / denom
        x = o + t[..., None] * d
        rel = x - self.origin
        a = rel @ self.e1 / (self.e1 @ self.e1)
        b = rel @ self.e2 / (self.e2 @ self.e2)
        hit = (np.abs(denom) > 1e-12) & (t > RAY_EPS) & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
        return np.where(hit, t, np.inf), a, b

    def albedo_at(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.albedo == "constant":
            return np.broadcast_to(self.color0, a.shape + (3,)).copy()
        x = a * np.linalg.norm(self.e1)
        y = b * np.linalg.norm(self.e2)
        if self.albedo == "checker":
            cell = (np.floor(x / self.checker_size) + np.floor(y / self.checker_size)) % 2
            return np.where(cell[..., None] > 0, self.color1, self.color0)
        phase = x[..., None] * self._wave_k[:, 0] + y[..., None] * self._wave_k[:, 1]
        s = np.sin(phase + self._wave_phase).mean(-1)
        # s roughly in [-1, 1]; blend the two colors
        t = np.clip(0.5 + 1.2 * s, 0.0, 1.0)[..., None]
        return self.color0 * (1 - t) + self.color1 * t

    def roughness_at(self, a: np.ndarray) -> np.ndarray:
        r0, r1 = self.roughness
        return r0 + (r1 - r0) * np.clip(a, 0.0, 1.0)


@dataclass
class SceneSpec:
    planes: list
    light: Light
    seed: int = 0
    spp: int = 256
    env_spp: int = 64
    env_height: int = 32
    image_noise: float = 1.0 / 255.0
    controls: int = 16
    compactness: float = 10.0
    target_mean: float = 0.35
    psf: float = 1.0  # pixels, std of the Gaussian pixel footprint

    def __post_init__(self):
        if self.spp < 1 or self.env_spp < 1:
            raise ValueError("sample counts must be positive")
        if self.psf < 0:
            raise ValueError("psf must be non-negative")


@dataclass
class TrajectorySpec:
    frames: int = 20
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.5
    height: float = 1.5
    arc_deg: float = 30.0
    start_deg: float = 0.0
    look_at: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 3.0]))
    dt: float = 0.1
    waypoints: list | None = None  # explicit world-from-camera poses
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics(160, 160, 79.5, 59.5,
                                                                       160, 120))
    sigma_rot: float = 0.5  # degrees
    sigma_t: float = 0.02  # meters
    perturb_seed: int = 0

    def __post_init__(self):
        n = len(self.waypoints) if self.waypoints is not None else self.frames
        if n < 2:
            raise ValueError("a trajectory needs at least 2 frames")


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """Camera (x right, y down, z forward) at ``eye`` looking at ``target``; world y is up."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [0.0, 0.0, 1.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose.from_rt(np.stack([x, y, z], axis=1), eye)


def make_trajectory(spec: TrajectorySpec) -> Trajectory:
    if spec.waypoints is not None:
        poses = list(spec.waypoints)
    else:
        poses = []
        angles = np.radians(spec.start_deg + np.linspace(0.0, spec.arc_deg, spec.frames))
        for th in angles:
            eye = np.asarray(spec.center, dtype=float) + [spec.radius * np.sin(th), spec.height,
                                                          -spec.radius * np.cos(th)]
            poses.append(look_at(eye, spec.look_at))
    return Trajectory(np.arange(len(poses)) * spec.dt, poses)


def perturb_trajectory(gt: Trajectory, sigma_rot: float, sigma_t: float, seed: int) -> Trajectory:
    """Rotate each non-first camera about its center and shift it in the world.

    Rotation angle ~ N(0, sigma_rot degrees) about a uniform random axis,
    translation ~ N(0, sigma_t) per world axis.
    """
    if sigma_rot < 0 or sigma_t < 0:
        raise ValueError("noise levels must be non-negative")
    rng = np.random.default_rng(seed)
    out = [gt.poses[0]]
    for pose in gt.poses[1:]:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = np.radians(rng.normal(0.0, sigma_rot)) if sigma_rot > 0 else 0.0
        dt = rng.normal(0.0, sigma_t, 3) if sigma_t > 0 else np.zeros(3)
        if angle == 0.0 and not dt.any():
            out.append(pose)
            continue
        dR = se3_exp(np.concatenate([axis * angle, np.zeros(3)]))
        out.append(Pose(dR.compose(Pose(pose.q, np.zeros(3))).q, pose.t + dt))
    return Trajectory(gt.stamps.copy(), out)


class Renderer:
    """Ray casting and shading for one scene (light radiance scaled by ``scale``)."""

    def __init__(self, scene: SceneSpec, scale: float = 1.0):
        self.scene = scene
        self.light = scene.light.scaled(scale)
        self.planes = scene.planes
        self._irradiance = {}
        for i, pl in enumerate(self.planes):
            for side in (1.0, -1.0):
                self._irradiance[i, side] = _hemisphere_irradiance(self.light, side * pl.normal)

    def cast(self, o: np.ndarray, d: np.ndarray):
        """Nearest hit: ``(t, plane index or -1, a, b)``."""
        shape = d.shape[:-1]
        best_t = np.full(shape, np.inf)
        idx = np.full(shape, -1)
        best_a = np.zeros(shape)
        best_b = np.zeros(shape)
        for i, pl in enumerate(self.planes):
            t, a, b = pl.intersect(o, d)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            idx = np.where(closer, i, idx)
            best_a = np.where(closer, a, best_a)
            best_b = np.where(closer, b, best_b)
        return best_t, idx, best_a, best_b

    def _surface(self, idx, a, b, d):
        """Albedo, roughness and viewer-facing normal at hits."""
        shape = idx.shape
        albedo = np.zeros(shape + (3,))
        rough = np.zeros(shape)
        normal = np.zeros(shape + (3,))
        for i, pl in enumerate(self.planes):
            m = idx == i
            if not m.any():
                continue
            albedo[m] = pl.albedo_at(a[m], b[m])
            rough[m] = pl.roughness_at(a[m])
            normal[m] = pl.normal
        flip = np.sum(normal * d, axis=-1) > 0
        normal = np.where(flip[..., None], -normal, normal)
        return albedo, rough, normal, flip

    def outgoing_direct(self, idx, a, b, d, rng) -> np.ndarray:
        """Radiance leaving hit points toward ``-d`` under unoccluded light.

        Diffuse uses the exact per-plane irradiance, specular one mixture sample.
        """
        albedo, rough, normal, flip = self._surface(idx, a, b, d)
        out = albedo / np.pi * self._plane_irradiance(idx, flip)
        out += self._mixture_sample(normal, -d, None, rough, rng,
                                    lambda L, live: self.light.radiance(L))
        return out

    def _strategies(self, diffuse: bool) -> list:
        """Sampling techniques: cosine (diffuse only), GGX, then one per lobe."""
        out = ["cosine"] if diffuse else []
        return out + ["ggx"] + list(range(len(self.light.lobes)))

    def _mixture_sample(self, n, v, albedo, rough, rng, incoming):
        """Estimate ``int (albedo/pi (L_in - L_sky) + f_spec L_in) cos`` with
        one direction from every technique, combined by the balance heuristic.

        The diffuse part only carries the difference to the unoccluded sky,
        whose exact integral the caller adds back. ``albedo=None`` drops the
        diffuse term. ``incoming(L)`` returns radiance arriving along ``L``.
        """
        diffuse = albedo is not None
        techniques = self._strategies(diffuse)
        S = len(techniques)
        alpha = brdf.alpha_of(rough)
        t, bt = brdf.basis(n)
        cos_v = np.sum(n * v, -1)
        u = rng.random((S,) + n.shape[:-1] + (2,))
        out = np.zeros(n.shape)
        for k, tech in enumerate(techniques):
            if tech == "cosine":
                L = brdf.to_world(brdf.sample_cosine(u[k, ..., 0], u[k, ..., 1]), n, t, bt)
            elif tech == "ggx":
                h = brdf.to_world(brdf.sample_ggx_half(u[k, ..., 0], u[k, ..., 1], alpha), n, t, bt)
                L = brdf.reflect(v, h)
            else:
                L = _sample_lobe(self.light.lobes[tech], u[k, ..., 0].ravel(),
                                 u[k, ..., 1].ravel()).reshape(n.shape)
            L = L / np.linalg.norm(L, axis=-1, keepdims=True)
            cos_l = np.sum(n * L, -1)
            h = v + L
            h /= np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
            cos_h = np.sum(n * h, -1)
            cos_d = np.sum(v * h, -1)
            pdf = np.zeros(cos_l.shape)
            for other in techniques:
                if other == "cosine":
                    pdf += np.maximum(cos_l, 0.0) / np.pi
                elif other == "ggx":
                    ggx = brdf.ggx_d(cos_h, alpha) * cos_h / (4.0 * np.maximum(cos_d, 1e-12))
                    pdf += np.where((cos_h > 0) & (cos_d > 0), ggx, 0.0)
                else:
                    pdf += _lobe_pdf(self.light.lobes[other], L)
            live = (cos_l > 0) & (cos_v > 0) & (pdf > 0)
            if not live.any():
                continue
            f = brdf.specular_brdf(cos_v[live], cos_l[live], cos_h[live], cos_d[live], alpha[live])
            L_in = incoming(L[live], live)
            est = f[:, None] * L_in
            if diffuse:
                est += albedo[live] / np.pi * (L_in - self.light.radiance(L[live]))
            # sum over techniques of g / sum_k p_k (one sample each)
            out[live] += est * (cos_l[live] / pdf[live])[:, None]
        return out

    def radiance(self, o, d, rng, bounce: bool = True) -> np.ndarray:
        """RGB radiance arriving at ``o`` from direction ``-d`` (one bounce)."""
        t, idx, a, b = self.cast(o, d)
        out = self.light.radiance(d)
        hit = idx >= 0
        if not hit.any():
            return out
        if not bounce:
            out[hit] = self.outgoing_direct(idx[hit], a[hit], b[hit], d[hit], rng)
            return out
        oh = o[hit] if o.ndim > 1 else np.broadcast_to(o, d[hit].shape)
        x = oh + t[hit, None] * d[hit]
        out[hit] = self.shade(x, idx[hit], a[hit], b[hit], d[hit], rng)
        return out

    def shade(self, x, idx, a, b, d, rng) -> np.ndarray:
        """Exact unoccluded diffuse term plus one mixture-sampled path."""
        albedo, rough, normal, flip = self._surface(idx, a, b, d)
        origin = x + 1e-5 * normal

        def incoming(L, live):
            return self.radiance(origin[live], L, rng, bounce=False)

        out = albedo / np.pi * self._plane_irradiance(idx, flip)
        return out + self._mixture_sample(normal, -d, albedo, rough, rng, incoming)

    def _plane_irradiance(self, idx, flip):
        irr = np.zeros(idx.shape + (3,))
        for i in range(len(self.planes)):
            for side, sel in ((1.0, ~flip), (-1.0, flip)):
                irr[(idx == i) & sel] = self._irradiance[i, side]
        return irr


def _sample_lobe(lobe: Lobe, u1, u2) -> np.ndarray:
    """Directions distributed as the normalized spherical Gaussian."""
    lam = lobe.sharpness
    w = 1.0 + np.log(u1 + (1.0 - u1) * np.exp(-2.0 * lam)) / lam
    w = np.clip(w, -1.0, 1.0)
    s = np.sqrt(np.maximum(0.0, 1.0 - w * w))
    phi = 2.0 * np.pi * u2
    mu = lobe.axis[None]
    t, b = brdf.basis(np.broadcast_to(mu, (len(u1), 3)))
    local = np.stack([s * np.cos(phi), s * np.sin(phi), w], axis=-1)
    return brdf.to_world(local, mu, t, b)


def _lobe_pdf(lobe: Lobe, L: np.ndarray) -> np.ndarray:
    lam = lobe.sharpness
    return lam / (2.0 * np.pi * (1.0 - np.exp(-2.0 * lam))) * np.exp(lam * (L @ lobe.axis - 1.0))


def _hemisphere_irradiance(light: Light, n: np.ndarray, height: int = IRRADIANCE_RES):
    """``int L(w) max(0, n.w) dw`` by dense quadrature over the sphere."""
    dirs = texel_directions(height)
    sa = texel_solid_angles(height)
    cos = np.maximum(dirs @ n, 0.0)
    return np.einsum("ijc,ij->c", light.radiance(dirs), cos * sa)


def _frame_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def _pixel_offsets(rng, spp: int, n_pix: int, psf: float) -> np.ndarray:
    """Subpixel offsets, stratified on a grid when ``spp`` is a square.

    ``psf > 0`` maps them through the Gaussian inverse CDF, otherwise they
    cover the unit box.
    """
    u = rng.random((spp, n_pix, 2))
    k = int(round(np.sqrt(spp)))
    if k * k == spp:
        cell = np.stack(np.meshgrid(np.arange(k), np.arange(k), indexing="ij"), -1).reshape(-1, 2)
        u = (cell[:, None, :] + u) / k
    if psf > 0:
        return psf * special.ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return u - 0.5


def render_frame(scene: SceneSpec, pose: Pose, K: Intrinsics, spp: int | None = None,
                 frame_index: int = 0, scale: float = 1.0, renderer: Renderer | None = None,
                 chunk_rows: int = 8):
    """Render luminance plus exact depth/normal/roughness channels.

    The image is linear radiance times ``scale`` (no noise, no clipping);
    ``finish_image`` applies sensor noise and clipping.
    """
    spp = scene.spp if spp is None else spp
    ren = renderer or Renderer(scene, scale)
    H, W = K.height, K.width
    R = pose.R
    grid = K.pixel_grid()

    # exact channels from the pixel-center rays
    rays_c = K.rays(grid)
    d_world = rays_c @ R.T
    t, idx, a, b = ren.cast(pose.t, d_world / np.linalg.norm(d_world, axis=-1, keepdims=True))
    hit = idx >= 0
    dist = np.where(hit, t, 0.0)
    depth = np.where(hit, dist / np.linalg.norm(rays_c, axis=-1), 0.0)
    rough = np.zeros((H, W))
    normals = np.zeros((H, W, 3))
    for i, pl in enumerate(scene.planes):
        m = idx == i
        rough[m] = pl.roughness_at(a[m])
        n_cam = R.T @ pl.normal
        nm = np.broadcast_to(n_cam, (int(m.sum()), 3))
        P = rays_c[m]
        nm = np.where((np.sum(nm * P, -1) > 0)[:, None], -nm, nm)
        normals[m] = nm

    image = np.zeros((H, W))
    for r0 in range(0, H, chunk_rows):
        r1 = min(H, r0 + chunk_rows)
        rng = _frame_rng(scene.seed, frame_index, r0)
        rows = grid[r0:r1]
        n_pix = rows.shape[0] * rows.shape[1]
        jitter = _pixel_offsets(rng, spp, n_pix, scene.psf)
        pix = rows.reshape(1, n_pix, 2) + jitter
        rays = K.rays(pix) @ R.T
        rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
        rays = rays.reshape(-1, 3)
        rad = ren.radiance(pose.t, rays, rng)
        lum = brdf.luminance(rad).reshape(spp, n_pix).mean(0)
        image[r0:r1] = lum.reshape(r1 - r0, W)
    return {"image": image, "depth": depth, "normals": normals, "roughness": rough}


def finish_image(image: np.ndarray, noise: float, seed: int, frame_index: int) -> np.ndarray:
    if noise > 0:
        rng = _frame_rng(seed, frame_index, 2**31)
        image = image + rng.normal(0.0, noise, image.shape)
    return np.clip(image, 0.0, 1.0)


def gt_envmap(scene: SceneSpec, position, height: int | None = None, spp: int | None = None,
              scale: float = 1.0, seed_stream: int = 0,
              renderer: Renderer | None = None) -> EnvironmentMap:
    """Incident radiance at ``position`` through every texel center.

    Plane hits carry the plane's outgoing radiance under unoccluded light,
    misses the analytic light.
    """
    height = scene.env_height if height is None else height
    spp = scene.env_spp if spp is None else spp
    position = np.asarray(position, dtype=float)
    for pl in scene.planes:
        rel = position - pl.origin
        dist = abs(rel @ pl.normal)
        a = rel @ pl.e1 / (pl.e1 @ pl.e1)
        b = rel @ pl.e2 / (pl.e2 @ pl.e2)
        if dist <= 1e-3 and 0 <= a <= 1 and 0 <= b <= 1:
            raise DegeneratePosition("probe position lies on a plane")
    ren = renderer or Renderer(scene, scale)
    dirs = texel_directions(height).reshape(-1, 3)
    t, idx, a, b = ren.cast(position, dirs)
    out = ren.light.radiance(dirs)
    hit = idx >= 0
    if hit.any():
        rng = _frame_rng(scene.seed, 1_000_000 + seed_stream)
        di, ii, ai, bi = dirs[hit], idx[hit], a[hit], b[hit]
        acc = np.zeros((int(hit.sum()), 3))
        for _ in range(spp):
            acc += ren.outgoing_direct(ii, ai, bi, di, rng)
        out[hit] = acc / spp
    return EnvironmentMap(out.reshape(height, 2 * height, 3))


# --- key = value spec files -------------------------------------------------

def _vec(x, n=3):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, n)
    if arr.size != n:
        raise ConfigError(f"expected {n} numbers, got {arr.size}")
    return arr


def scene_from_dict(cfg: dict) -> SceneSpec:
    try:
        return _scene_from_dict(cfg)
    except KeyError as exc:
        raise ConfigError(f"scene: missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scene: {exc}") from exc


def _scene_from_dict(cfg: dict) -> SceneSpec:
    seed = int(cfg.get("seed", 0))
    planes = []
    for i, p in enumerate(cfg.get("plane", [])):
        try:
            planes.append(Plane(
                corners=_vec(p["corners"], 12).reshape(4, 3),
                albedo=str(p.get("albedo", "constant")),
                color0=_vec(p.get("color0", 0.5)),
                color1=_vec(p.get("color1", 0.1)),
                checker_size=float(p.get("checker_size", 0.25)),
                noise_scale=float(p.get("noise_scale", 0.15)),
                roughness=tuple(np.atleast_1d(np.asarray(p.get("roughness", 0.5), dtype=float))),
                seed=seed * 1000 + i,
            ))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"plane.{i}: {exc}") from exc
    if not planes:
        raise ConfigError("scene needs at least one plane")
    light_cfg = cfg.get("light", {})
    lobes = [Lobe(_vec(lb["axis"]), float(lb["sharpness"]), _vec(lb["amplitude"]))
             for lb in light_cfg.get("lobe", [])]
    light = Light(_vec(light_cfg.get("ambient", 0.0)), lobes)
    render = cfg.get("render", {})
    return SceneSpec(planes, light, seed=seed,
                     spp=int(render.get("spp", 256)),
                     env_spp=int(render.get("env_spp", 64)),
                     env_height=int(render.get("env_height", 32)),
                     image_noise=float(render.get("noise", 1.0 / 255.0)),
                     controls=int(render.get("controls", 16)),
                     compactness=float(render.get("compactness", 10.0)),
                     target_mean=float(render.get("target_mean", 0.35)),
                     psf=float(render.get("psf", 1.0)))


def traj_from_dict(cfg: dict) -> TrajectorySpec:
    try:
        return _traj_from_dict(cfg)
    except KeyError as exc:
        raise ConfigError(f"trajectory: missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"trajectory: {exc}") from exc


def _traj_from_dict(cfg: dict) -> TrajectorySpec:
    cam = cfg.get("camera", {})
    K = Intrinsics(float(cam.get("fx", 160)), float(cam.get("fy", 160)),
                   float(cam.get("cx", 79.5)), float(cam.get("cy", 59.5)),
                   int(cam.get("width", 160)), int(cam.get("height", 120)))
    waypoints = None
    if "pose" in cfg:
        waypoints = [Pose(_vec(p, 7)[3:], _vec(p, 7)[:3]) for p in cfg["pose"]]
    perturb = cfg.get("perturb", {})
    return TrajectorySpec(
        frames=int(cfg.get("frames", 20)),
        center=_vec(cfg.get("center", 0.0)),
        radius=float(cfg.get("radius", 0.5)),
        height=float(cfg.get("height", 1.5)),
        arc_deg=float(cfg.get("arc_deg", 30.0)),
        start_deg=float(cfg.get("start_deg", 0.0)),
        look_at=_vec(cfg.get("look_at", [0.0, 0.0, 3.0])),
        dt=float(cfg.get("dt", 0.1)),
        waypoints=waypoints,
        intrinsics=K,
        sigma_rot=float(perturb.get("sigma_rot", 0.5)),
        sigma_t=float(perturb.get("sigma_t", 0.02)),
        perturb_seed=int(perturb.get("seed", 0)),
    )


def read_scene(path) -> SceneSpec:
    return scene_from_dict(nest(read_kv(path)))


def read_traj_spec(path) -> TrajectorySpec:
    return traj_from_dict(nest(read_kv(path)))


# --- datasets ---------------------------------------------------------------

def exposure_scale(image: np.ndarray, target_mean: float) -> float:
    """Factor taking the mean of a linear image to ``target_mean``."""
    m = float(np.mean(image))
    return target_mean / m if m > 0 else 1.0


def control_layout(scene: SceneSpec, frame0: dict, pose: Pose, K: Intrinsics):
    """Control positions from SLIC on the first frame's exact normals.

    Points closer than ``SURFACE_LIFT`` to a plane are pushed off it, to the
    side the camera sees, so every probe sits in free space.
    """
    valid = frame0["depth"] > 0
    seg = slic_on_normals(NormalMap(frame0["normals"], valid), scene.controls, scene.compactness)
    controls, _ = make_control_points(seg, frame0["depth"], pose, K)
    out = []
    for c in merge_controls(controls):
        p = np.asarray(c.position, dtype=float)
        for pl in scene.planes:
            rel = p - pl.origin
            a = rel @ pl.e1 / (pl.e1 @ pl.e1)
            b = rel @ pl.e2 / (pl.e2 @ pl.e2)
            s = rel @ pl.normal
            if abs(s) < SURFACE_LIFT and -0.01 <= a <= 1.01 and -0.01 <= b <= 1.01:
                side = 1.0 if (pose.t - pl.origin) @ pl.normal >= 0 else -1.0
                p = p + (side * SURFACE_LIFT - s) * pl.normal
        out.append(p)
    return np.array(out).reshape(-1, 3)


def generate_dataset(scene: SceneSpec, traj_spec: TrajectorySpec, out_dir=None,
                     spp: int | None = None, env_spp: int | None = None,
                     noise: float | None = None) -> Dataset:
    """Render every frame, place control points, render their environment maps.

    The light is scaled once so that the first frame's mean intensity hits
    ``scene.target_mean``; the same scale applies to every image and map.
    Writes the dataset to ``out_dir`` when given.
    """
    K = traj_spec.intrinsics
    gt = make_trajectory(traj_spec)
    init = perturb_trajectory(gt, traj_spec.sigma_rot, traj_spec.sigma_t, traj_spec.perturb_seed)
    noise = scene.image_noise if noise is None else noise
    ren = Renderer(scene)
    raw = [render_frame(scene, pose, K, spp, i, renderer=ren) for i, pose in enumerate(gt.poses)]
    scale = exposure_scale(raw[0]["image"], scene.target_mean)
    frames = [Frame(image=finish_image(r["image"] * scale, noise, scene.seed, i),
                    depth=r["depth"], roughness=r["roughness"], normals=r["normals"])
              for i, r in enumerate(raw)]
    positions = control_layout(scene, raw[0], gt.poses[0], K)
    scaled = Renderer(scene, scale)
    envs = [gt_envmap(scene, p, spp=env_spp, seed_stream=i, renderer=scaled)
            for i, p in enumerate(positions)]
    ds = Dataset(K, gt, init, frames, positions, envs)
    if out_dir is not None:
        write_dataset(out_dir, ds)
    return ds
