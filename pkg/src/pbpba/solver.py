"""Weighted photometric bundle adjustment.

Points live in a host frame with an inverse depth; each observation in a
target frame contributes the 8 residuals of the sparse pattern below, all
sharing the point's depth. Observation weights are frozen for an outer
iteration (physically-based, t-distribution or uniform) while an inner
Levenberg-Marquardt loop minimizes the weighted Huber loss over every
non-gauge pose (right-multiplied se(3) twists ``[w, v]``) and every inverse
depth, eliminating the depths with a Schur complement. A weak prior ties
each inverse depth to its depth-map value, which fixes the global scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, Diverged, NonPositiveScale, SingularNormalEquations
from .geometry import Z_EPS, Intrinsics, Pose, bilinear_batch, se3_exp
from .radiance import RadianceContext, eval_radiance_batch
from .surface import estimate_normal_map

PATTERN = np.array([(0, -2), (-1, -1), (1, -1), (-2, 0), (0, 0), (2, 0), (-1, 1), (0, 2)],
                   dtype=float)
BLOCK = 32
GRAD_THRESHOLD = 7.0 / 255.0
BORDER = 4
WEIGHT_MODES = ("pb", "tdist", "uniform")
LAMBDA_MAX = 1e10


# --- pixel selection --------------------------------------------------------

def gradient_magnitude(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    return np.hypot(gx, gy)


def select_pixels(image: np.ndarray, target_count: int, border: int = BORDER,
                  block: int = BLOCK, g_th: float = GRAD_THRESHOLD) -> np.ndarray:
    """Region-adaptive high-gradient pixels, ``(N, 2)`` as ``(u, v)``.

    Each block keeps pixels above its median gradient plus ``g_th``; a
    common per-block quota is chosen so the total lands near
    ``target_count``.
    """
    g = gradient_magnitude(image)
    H, W = g.shape
    ok = np.zeros((H, W), dtype=bool)
    ok[border:H - border, border:W - border] = True
    per_block = []
    for y0 in range(0, H, block):
        for x0 in range(0, W, block):
            gb = g[y0:y0 + block, x0:x0 + block]
            thr = np.median(gb) + g_th
            cand = (gb > thr) & ok[y0:y0 + block, x0:x0 + block]
            ys, xs = np.nonzero(cand)
            order = np.argsort(-gb[ys, xs], kind="stable")
            per_block.append(np.stack([xs[order] + x0, ys[order] + y0], axis=-1))
    sizes = np.array([len(c) for c in per_block])
    if target_count <= 0 or sizes.sum() == 0:
        return np.zeros((0, 2))
    # smallest quota whose total reaches the target
    lo, hi = 0, int(sizes.max())
    while lo < hi:
        mid = (lo + hi) // 2
        if np.minimum(sizes, mid).sum() >= target_count:
            hi = mid
        else:
            lo = mid + 1
    chosen = [c[:lo] for c in per_block]
    return np.concatenate(chosen).astype(float)


# --- problem ----------------------------------------------------------------

@dataclass
class ScenePoint:
    host: int
    pixel: np.ndarray  # (u, v)
    inv_depth: float
    normal: np.ndarray  # host camera frame, unit
    roughness: float
    control_idx: int
    obs: list
    measured_inv_depth: float | None = None  # depth-map value, anchors the prior

    def __post_init__(self):
        if not self.inv_depth > 0:
            raise ValueError("inverse depth must be positive")
        if not 0.0 <= self.roughness <= 1.0:
            raise ValueError("roughness must lie in [0, 1]")


@dataclass
class FrameState:
    index: int
    image: np.ndarray
    depth: np.ndarray
    pose: Pose
    timestamp: float = 0.0


@dataclass
class Problem:
    frames: list[FrameState]
    points: list[ScenePoint]
    intrinsics: Intrinsics
    radiance_ctx: RadianceContext | None = None

    def __post_init__(self):
        n = len(self.frames)
        K = self.intrinsics
        for f in self.frames:
            if f.image.shape != (K.height, K.width):
                raise ValueError(f"frame {f.index}: image does not match intrinsics")
        n_ctl = len(self.radiance_ctx.positions) if self.radiance_ctx is not None else None
        for i, p in enumerate(self.points):
            if not 0 <= p.host < n or any(not 0 <= t < n or t == p.host for t in p.obs):
                raise ValueError(f"point {i}: frame id out of range")
            if n_ctl is not None and not 0 <= p.control_idx < n_ctl:
                raise ValueError(f"point {i}: control index out of range")

    def poses(self) -> list[Pose]:
        return [f.pose for f in self.frames]


@dataclass
class LMConfig:
    max_outer: int = 8
    max_inner: int = 20
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    stop_rel: float = 1e-6


@dataclass
class SolverConfig:
    theta: float = 14.6
    weight_mode: str = "pb"
    huber_delta: float = 0.1
    tdist_nu: float = 5.0
    depth_prior: float = 0.02  # relative std of the inverse-depth prior, 0 disables
    lm: LMConfig = field(default_factory=LMConfig)
    gauge: int = 0

    def __post_init__(self):
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.theta < 0 or self.huber_delta < 0:
            raise ConfigError("theta and huber_delta must be non-negative")
        if self.tdist_nu <= 0:
            raise ConfigError("tdist_nu must be positive")
        if self.depth_prior < 0:
            raise ConfigError("depth_prior must be non-negative")
        lm = self.lm
        if min(lm.max_outer, lm.max_inner, lm.lambda_init, lm.lambda_up, lm.lambda_down,
               lm.stop_rel) <= 0:
            raise ConfigError("LM settings must be positive")


def build_problem(images, depths, poses, K: Intrinsics, roughness, normals=None,
                  radiance_ctx: RadianceContext | None = None, hosts=None,
                  points_per_host: int = 400, stamps=None, occlusion_tol: float = 0.1) -> Problem:
    """Select pixels in the host frames and find where each one is seen.

    Normals come from the host's initial depth map; pixels where that
    estimate fails fall back to ``normals`` when given and are skipped
    otherwise. An observation is kept when the whole pattern lands inside
    the target and the target depth agrees within ``occlusion_tol``
    (relative).
    """
    n = len(images)
    hosts = list(range(n)) if hosts is None else list(hosts)
    stamps = np.arange(n, dtype=float) if stamps is None else np.asarray(stamps, dtype=float)
    frames = [FrameState(i, np.asarray(images[i], dtype=float), np.asarray(depths[i], dtype=float),
                         poses[i], float(stamps[i])) for i in range(n)]
    margin = float(np.abs(PATTERN).max()) + 1.0
    points = []
    for h in hosts:
        fr = frames[h]
        nm = estimate_normal_map(fr.depth, K)
        pix = select_pixels(fr.image, points_per_host)
        if len(pix) == 0:
            continue
        ui, vi = pix[:, 0].astype(int), pix[:, 1].astype(int)
        d = fr.depth[vi, ui]
        nrm = nm.normals[vi, ui]
        ok = (d > 0) & np.isfinite(d)
        good_n = nm.valid[vi, ui]
        if normals is not None:
            nrm = np.where(good_n[:, None], nrm, np.asarray(normals[h])[vi, ui])
            good_n = np.linalg.norm(nrm, axis=-1) > 0.5
        ok &= good_n
        pix, d, nrm = pix[ok], d[ok], nrm[ok]
        rs = np.clip(np.asarray(roughness[h], dtype=float)[vi[ok], ui[ok]], 0.0, 1.0)
        Xh = K.rays(pix) * d[:, None]
        Xw = fr.pose.apply(Xh)
        ctl = (radiance_ctx.nearest(Xw) if radiance_ctx is not None
               else np.zeros(len(pix), dtype=int))
        obs = [[] for _ in range(len(pix))]
        for t in range(n):
            if t == h:
                continue
            Xt = frames[t].pose.inverse().apply(Xw)
            front = Xt[:, 2] > Z_EPS
            z = np.where(front, Xt[:, 2], 1.0)
            q = np.stack([K.fx * Xt[:, 0] / z + K.cx, K.fy * Xt[:, 1] / z + K.cy], axis=-1)
            vis = front & K.in_bounds(q, margin)
            qi = np.clip(np.rint(q).astype(int), 0, [K.width - 1, K.height - 1])
            dt = frames[t].depth[qi[:, 1], qi[:, 0]]
            vis &= (dt > 0) & (np.abs(dt - z) <= occlusion_tol * z)
            for i in np.nonzero(vis)[0]:
                obs[i].append(t)
        for i in range(len(pix)):
            if obs[i]:
                points.append(ScenePoint(h, pix[i], 1.0 / d[i], nrm[i], float(rs[i]),
                                         int(ctl[i]), obs[i], 1.0 / d[i]))
    return Problem(frames, points, K, radiance_ctx)


# --- weights ----------------------------------------------------------------

def pb_weight(r, r_prime, theta: float):
    """``exp(-theta |r - r'|)``."""
    return np.exp(-theta * np.abs(np.asarray(r, dtype=float) - np.asarray(r_prime, dtype=float)))


def tdist_weight(residual_norm, nu: float, sigma: float):
    """Student-t IRLS weight ``(nu + 1) / (nu + (r / sigma)^2)``."""
    if not sigma > 0:
        raise NonPositiveScale(f"scale must be positive, got {sigma}")
    if not nu > 0:
        raise ValueError("nu must be positive")
    x = np.asarray(residual_norm, dtype=float) / sigma
    return (nu + 1.0) / (nu + x * x)


def mad_scale(residuals: np.ndarray) -> float:
    """``1.4826 * median |r|`` (residuals are centered at zero by construction)."""
    r = np.abs(np.asarray(residuals, dtype=float).ravel())
    return 1.4826 * float(np.median(r)) if r.size else 0.0


def huber_weight(r: np.ndarray, delta: float) -> np.ndarray:
    if delta <= 0:
        return np.ones_like(r)
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def huber_loss(r: np.ndarray, delta: float) -> np.ndarray:
    if delta <= 0:
        return 0.5 * r * r
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


# --- flattened observation state -----------------------------------------------

class _Obs:
    """Structure-of-arrays view of every (point, target) pair.

    Observations are grouped by (host, target) frame pair so per-pair work
    runs on contiguous slices.
    """

    def __init__(self, problem: Problem):
        pts = problem.points
        point = np.array([i for i, p in enumerate(pts) for _ in p.obs], dtype=np.int64)
        target = np.array([t for p in pts for t in p.obs], dtype=np.int64)
        host = np.array([pts[i].host for i in point], dtype=np.int64)
        n = len(problem.frames)
        key = host * n + target
        order = np.lexsort((point, key))
        self.point, self.target, self.host = point[order], target[order], host[order]
        keys, self.pair_start, self.pair = np.unique(key[order], return_index=True,
                                                     return_inverse=True)
        self.pair_host, self.pair_target = keys // n, keys % n
        self.pair_end = np.append(self.pair_start[1:], len(self.point))
        K = problem.intrinsics
        pix = np.array([p.pixel for p in pts], dtype=float).reshape(-1, 2)
        self.pix = pix[self.point][:, None, :] + PATTERN[None]  # (M, 8, 2)
        self.rays = K.rays(self.pix)  # host camera rays, z = 1
        self.normal = np.array([p.normal for p in pts], dtype=float).reshape(-1, 3)[self.point]
        self.rough = np.array([p.roughness for p in pts], dtype=float)[self.point]
        self.control = np.array([p.control_idx for p in pts], dtype=np.int64)[self.point]
        self.images = np.stack([f.image for f in problem.frames])
        # host intensities never move: the pattern sits on integer pixels
        self.host_val, _, _, _ = _sample_stack(self.images, self.host[:, None],
                                               self.pix[..., 0], self.pix[..., 1])

    def __len__(self):
        return len(self.point)


def _sample_stack(images, frame, u, v):
    """:func:`bilinear_batch` over a stack of equally sized images."""
    _, H, W = images.shape
    valid = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    uc = np.where(valid, u, 0.0)
    vc = np.where(valid, v, 0.0)
    x0 = np.minimum(uc.astype(np.int64), W - 2)
    y0 = np.minimum(vc.astype(np.int64), H - 2)
    fx = uc - x0
    fy = vc - y0
    flat = images.reshape(-1)
    base = (frame * H + y0) * W + x0
    i00 = flat[base]
    i10 = flat[base + 1]
    i01 = flat[base + W]
    i11 = flat[base + W + 1]
    top = i00 + fx * (i10 - i00)
    bot = i01 + fx * (i11 - i01)
    val = top + fy * (bot - top)
    du = (1 - fy) * (i10 - i00) + fy * (i11 - i01)
    dv = bot - top
    return val * valid, du * valid, dv * valid, valid


def _pose_arrays(poses):
    R = np.array([p.R for p in poses])
    t = np.array([p.t for p in poses])
    return R, t


def _cross(a, b):
    return np.stack([a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
                     a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
                     a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]], axis=-1)


def _evaluate(problem: Problem, obs: _Obs, poses, rho, jacobians: bool = False):
    """Residuals (M, 8), validity (M,) and optionally Jacobians.

    Jacobians: ``J_h``, ``J_t`` of shape (M, 8, 6) and ``J_rho`` (M, 8).
    """
    K = problem.intrinsics
    R, t = _pose_arrays(poses)
    Rh, Rt = R[obs.pair_host], R[obs.pair_target]
    Rrel_p = np.matmul(Rt.transpose(0, 2, 1), Rh)  # R_t^T R_h per pair
    trel_p = np.matmul(Rt.transpose(0, 2, 1), (t[obs.pair_host] - t[obs.pair_target])[..., None])
    Rrel = Rrel_p[obs.pair]
    trel = trel_p[obs.pair, :, 0]
    r_inv = rho[obs.point]
    X = obs.rays / r_inv[:, None, None]  # host frame
    P = np.matmul(X, Rrel.transpose(0, 2, 1)) + trel[:, None, :]
    z = P[..., 2]
    front = np.all(z > Z_EPS, axis=1)
    zs = np.where(z > Z_EPS, z, 1.0)
    inv_z = 1.0 / zs
    u = K.fx * P[..., 0] * inv_z + K.cx
    v = K.fy * P[..., 1] * inv_z + K.cy
    val, gu, gv, ok = _sample_stack(obs.images, obs.target[:, None], u, v)
    valid = front & np.all(ok, axis=1)
    res = (obs.host_val - val) * valid[:, None]
    if not jacobians:
        return res, valid
    # dr/dP = -grad F' . dq/dP
    a = -gu * K.fx * inv_z
    b = -gv * K.fy * inv_z
    c = -(a * P[..., 0] + b * P[..., 1]) * inv_z
    g = np.stack([a, b, c], axis=-1) * valid[:, None, None]  # (M, 8, 3)
    # target: dP = [P]x w_t - v_t, so dr/dw_t = g x P
    J_t = np.concatenate([_cross(g, P), -g], axis=-1)
    # host: dP = -R_rel [X]x w_h + R_rel v_h
    gR = np.matmul(g, Rrel)  # g^T R_rel
    J_h = np.concatenate([_cross(X, gR), gR], axis=-1)
    # inverse depth: dP = -R_rel ray / rho^2
    J_rho = -np.sum(gR * obs.rays, axis=-1) / (r_inv[:, None] ** 2)
    return res, valid, J_h, J_t, J_rho


def residual(point: ScenePoint, target_id: int, problem: Problem) -> np.ndarray:
    """Raw 8-vector ``F(p + o) - F'(warp(p + o))`` for one observation."""
    from .errors import BehindCamera, OutOfBounds

    K = problem.intrinsics
    host = problem.frames[point.host].pose
    target = problem.frames[target_id].pose
    rel = target.inverse() @ host
    pix = np.asarray(point.pixel, dtype=float)[None] + PATTERN
    X = K.rays(pix) / point.inv_depth
    P = rel.apply(X)
    if np.any(P[:, 2] <= Z_EPS):
        raise BehindCamera("pattern point behind the target camera")
    q = np.stack([K.fx * P[:, 0] / P[:, 2] + K.cx, K.fy * P[:, 1] / P[:, 2] + K.cy], axis=-1)
    hv, _, _, hok = bilinear_batch(problem.frames[point.host].image, pix[:, 0], pix[:, 1])
    tv, _, _, tok = bilinear_batch(problem.frames[target_id].image, q[:, 0], q[:, 1])
    if not (np.all(hok) and np.all(tok)):
        raise OutOfBounds("pattern leaves the image")
    return hv - tv


def _observation_weights(problem: Problem, obs: _Obs, poses, rho, cfg: SolverConfig,
                         res=None, valid=None):
    """Per-observation weight frozen for one outer iteration."""
    M = len(obs)
    if cfg.weight_mode == "uniform" or M == 0:
        return np.ones(M)
    if cfg.weight_mode == "tdist":
        if res is None:
            res, valid = _evaluate(problem, obs, poses, rho)
        sigma = mad_scale(res[valid])
        norm = np.sqrt(np.mean(res * res, axis=1))
        if sigma <= 0:
            return np.ones(M)
        return np.where(valid, tdist_weight(norm, cfg.tdist_nu, sigma), 1.0)
    if cfg.theta == 0:
        return np.ones(M)
    return pb_weights(problem, obs, poses, rho, cfg.theta)


def pb_weights(problem: Problem, obs: _Obs, poses, rho, theta: float) -> np.ndarray:
    """Physically-based weights for every observation (vectorized)."""
    ctx = problem.radiance_ctx
    if ctx is None:
        raise ConfigError("physically-based weights need environment maps")
    R, t = _pose_arrays(poses)
    Rh, th, tt = R[obs.host], t[obs.host], t[obs.target]
    center = obs.rays[:, PATTERN_CENTER]
    Xw = np.einsum("mij,mj->mi", Rh, center / rho[obs.point][:, None]) + th
    beta = Xw - th  # world frame, from host center
    beta_p = Xw - tt  # from target center
    n_w = np.einsum("mij,mj->mi", Rh, obs.normal)
    r, f = eval_radiance_batch(ctx, obs.control, n_w, beta, obs.rough)
    rp, fp = eval_radiance_batch(ctx, obs.control, n_w, beta_p, obs.rough)
    # a back-facing view carries no specular information
    return np.where(f & fp, pb_weight(r, rp, theta), 1.0)


PATTERN_CENTER = int(np.nonzero((PATTERN == 0).all(axis=1))[0][0])


def compute_point_weight(point: ScenePoint, target_id: int, problem: Problem,
                         theta: float = 14.6) -> float:
    """``exp(-theta |r - r'|)`` from the host and target light paths of ``point``."""
    from .errors import BackFacing
    from .radiance import eval_radiance

    host = problem.frames[point.host].pose
    target = problem.frames[target_id].pose
    Xh = problem.intrinsics.rays(np.asarray(point.pixel, dtype=float)) / point.inv_depth
    Xw = host.apply(Xh)
    n_w = host.R @ np.asarray(point.normal, dtype=float)
    try:
        r = eval_radiance(problem.radiance_ctx, point.control_idx, n_w, Xw - host.t,
                          point.roughness)
        rp = eval_radiance(problem.radiance_ctx, point.control_idx, n_w, Xw - target.t,
                           point.roughness)
    except BackFacing:
        return 1.0
    return float(pb_weight(r, rp, theta))


# --- normal equations -----------------------------------------------------------

def _assemble(problem, obs, poses, rho, w_obs, delta, n_frames):
    res, valid, J_h, J_t, J_r = _evaluate(problem, obs, poses, rho, jacobians=True)
    W = (w_obs[:, None] * huber_weight(res, delta)) * valid[:, None]  # (M, 8)
    npose = 6 * n_frames
    J = np.concatenate([J_h, J_t], axis=-1)  # (M, 8, 12)
    WJ = W[..., None] * J
    Hpp = np.zeros((npose, npose))
    bp = np.zeros(npose)
    # every observation of a frame pair touches the same 12x12 block
    for k in range(len(obs.pair_start)):
        s, e = obs.pair_start[k], obs.pair_end[k]
        Jk = J[s:e].reshape(-1, 12)
        WJk = WJ[s:e].reshape(-1, 12)
        blk = WJk.T @ Jk
        gk = WJk.T @ res[s:e].reshape(-1)
        idx = np.concatenate([np.arange(6) + 6 * obs.pair_host[k],
                              np.arange(6) + 6 * obs.pair_target[k]])
        Hpp[np.ix_(idx, idx)] += blk
        bp[idx] += gk
    n_pts = len(rho)
    Hrr = np.bincount(obs.point, weights=np.sum(W * J_r * J_r, axis=1), minlength=n_pts)
    br = np.bincount(obs.point, weights=np.sum(W * J_r * res, axis=1), minlength=n_pts)
    cross = np.matmul(J_r[:, None, :], WJ)[:, 0]  # (M, 12)
    cols = np.concatenate([obs.host[:, None] * 6 + np.arange(6),
                           obs.target[:, None] * 6 + np.arange(6)], axis=1)
    pcol = np.repeat(obs.point, 12)
    Hpr = np.bincount(cols.ravel() * n_pts + pcol, weights=cross.ravel(),
                      minlength=npose * n_pts).reshape(npose, n_pts)
    return res, valid, Hpp, bp, Hpr, Hrr, br


def _solve_step(Hpp, bp, Hpr, Hrr, br, lam, free):
    """Damped Schur-complement step for free pose parameters and all depths."""
    Hpp = Hpp + lam * np.diag(np.diag(Hpp))
    Hrr_d = Hrr * (1.0 + lam)
    live = Hrr_d > 0
    inv = np.where(live, 1.0 / np.where(live, Hrr_d, 1.0), 0.0)
    Hpp_f = Hpp[np.ix_(free, free)]
    Hpr_f = Hpr[free]
    S = Hpp_f - (Hpr_f * inv) @ Hpr_f.T
    rhs = bp[free] - Hpr_f @ (inv * br)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        dead = [int(i) for i in np.nonzero(np.diag(Hpp_f) <= 0)[0]]
        raise SingularNormalEquations(
            f"reduced system is not positive definite (unconstrained pose parameters: {dead})"
        ) from exc
    y = np.linalg.solve(L, -rhs)
    dp = np.linalg.solve(L.T, y)
    dr = -inv * (br + Hpr_f.T @ dp)
    return dp, dr


def _apply_step(poses, rho, dp, dr, free_frames):
    new = list(poses)
    for k, f in enumerate(free_frames):
        new[f] = poses[f] @ se3_exp(dp[6 * k:6 * k + 6])
    return new, rho + dr


# --- driver -------------------------------------------------------------------

@dataclass
class OuterRecord:
    loss_start: float
    loss_end: float
    inner_iterations: int
    accepted: int
    dropped: int
    lam: float


@dataclass
class SolveResult:
    poses: list[Pose]
    inv_depths: np.ndarray
    outer: list[OuterRecord]
    weights: np.ndarray
    converged: bool
    final_loss: float
    n_points: int
    n_observations: int

    def report(self) -> dict:
        out = {"points": self.n_points, "observations": self.n_observations,
               "outer_iterations": len(self.outer), "converged": self.converged,
               "final_loss": self.final_loss}
        for k, rec in enumerate(self.outer):
            out[f"iter.{k}.loss_start"] = rec.loss_start
            out[f"iter.{k}.loss_end"] = rec.loss_end
            out[f"iter.{k}.inner"] = rec.inner_iterations
            out[f"iter.{k}.accepted"] = rec.accepted
            out[f"iter.{k}.dropped"] = rec.dropped
            out[f"iter.{k}.lambda"] = rec.lam
        return out


def _prior_sigma(rho0: np.ndarray, rel: float) -> np.ndarray | None:
    return rel * rho0 if rel > 0 else None


def _prior_loss(rho, rho0, sigma) -> float:
    if sigma is None:
        return 0.0
    return float(0.5 * np.sum(((rho - rho0) / sigma) ** 2))


def optimize(problem: Problem, config: SolverConfig | None = None) -> SolveResult:
    """Iteratively reweighted LM; see the module docstring.

    Each point's inverse depth also carries a Gaussian prior around its
    measured value (relative std ``config.depth_prior``), which fixes the
    otherwise free global scale.
    """
    cfg = config or SolverConfig()
    lm = cfg.lm
    n = len(problem.frames)
    if n < 2:
        raise ValueError("need at least two frames")
    if len(problem.points) < 6:
        raise ValueError("need at least six points")
    if not 0 <= cfg.gauge < n:
        raise ConfigError("gauge frame out of range")
    obs = _Obs(problem)
    poses = problem.poses()
    rho = np.array([p.inv_depth for p in problem.points], dtype=float)
    rho0 = np.array([p.measured_inv_depth or p.inv_depth for p in problem.points], dtype=float)
    sigma = _prior_sigma(rho0, cfg.depth_prior)
    free_frames = [f for f in range(n) if f != cfg.gauge]
    free = np.concatenate([np.arange(6 * f, 6 * f + 6) for f in free_frames])
    delta = cfg.huber_delta
    lam = lm.lambda_init
    records = []
    converged = False
    w_obs = np.ones(len(obs))

    def photometric(res, valid):
        return np.where(valid, w_obs * huber_loss(res, delta).sum(axis=1), 0.0)

    for _ in range(lm.max_outer):
        res, valid = _evaluate(problem, obs, poses, rho)
        w_obs = _observation_weights(problem, obs, poses, rho, cfg, res, valid)
        dropped = int(np.sum(~valid))
        loss_start = float(photometric(res, valid).sum()) + _prior_loss(rho, rho0, sigma)
        if not np.isfinite(loss_start):
            raise Diverged("loss is not finite")
        inner = accepted = 0
        while inner < lm.max_inner:
            inner += 1
            res, valid, Hpp, bp, Hpr, Hrr, br = _assemble(problem, obs, poses, rho, w_obs,
                                                           delta, n)
            if sigma is not None:
                Hrr = Hrr + 1.0 / sigma**2
                br = br + (rho - rho0) / sigma**2
            per_cur = photometric(res, valid)
            cur = float(per_cur.sum()) + _prior_loss(rho, rho0, sigma)
            improved = False
            while lam <= LAMBDA_MAX:
                dp, dr = _solve_step(Hpp, bp, Hpr, Hrr, br, lam, free)
                trial_poses, trial_rho = _apply_step(poses, rho, dp, dr, free_frames)
                if np.all(trial_rho > 0):
                    t_res, t_valid = _evaluate(problem, obs, trial_poses, trial_rho)
                    # observations leaving the image in a trial keep their current cost
                    per = np.where(t_valid, photometric(t_res, t_valid), per_cur)
                    new = (float(np.sum(np.where(valid, per, 0.0)))
                           + _prior_loss(trial_rho, rho0, sigma))
                    if new < cur:
                        poses, rho = trial_poses, trial_rho
                        lam = max(lam * lm.lambda_down, 1e-12)
                        improved = True
                        accepted += 1
                        break
                lam *= lm.lambda_up
            if not improved:
                lam = min(lam, LAMBDA_MAX)
                break
            if (cur - new) / max(cur, 1e-300) < lm.stop_rel:
                break
        res, valid = _evaluate(problem, obs, poses, rho)
        loss_end = float(photometric(res, valid).sum()) + _prior_loss(rho, rho0, sigma)
        if not np.isfinite(loss_end) or loss_end > loss_start * (1 + 1e-9):
            raise Diverged(f"loss rose from {loss_start!r} to {loss_end!r}")
        records.append(OuterRecord(loss_start, loss_end, inner, accepted, dropped, lam))
        if (loss_start - loss_end) / max(loss_start, 1e-300) < lm.stop_rel:
            converged = True
            break
    res, valid = _evaluate(problem, obs, poses, rho)
    final = float(photometric(res, valid).sum()) + _prior_loss(rho, rho0, sigma)
    return SolveResult(poses, rho, records, w_obs, converged, final, len(problem.points),
                       len(obs))


def weight_grids(problem: Problem, result: SolveResult) -> list[np.ndarray]:
    """Per-frame images holding each observation's weight at its projected pixel."""
    K = problem.intrinsics
    obs = _Obs(problem)
    grids = [np.zeros((K.height, K.width)) for _ in problem.frames]
    R, t = _pose_arrays(result.poses)
    center = obs.rays[:, PATTERN_CENTER] / result.inv_depths[obs.point][:, None]
    Xw = np.einsum("mij,mj->mi", R[obs.host], center) + t[obs.host]
    P = np.einsum("mji,mj->mi", R[obs.target], Xw - t[obs.target])
    z = np.where(P[:, 2] > Z_EPS, P[:, 2], np.inf)
    u = np.rint(K.fx * P[:, 0] / z + K.cx).astype(int)
    v = np.rint(K.fy * P[:, 1] / z + K.cy).astype(int)
    ok = np.isfinite(z) & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    for m in np.nonzero(ok)[0]:
        grids[obs.target[m]][v[m], u[m]] = result.weights[m]
    return grids


def config_from_dict(cfg: dict) -> SolverConfig:
    """Build a config from nested ``key = value`` entries (see :mod:`pbpba.kvconfig`)."""
    known = {"theta", "weight_mode", "huber_delta", "tdist_nu", "depth_prior", "gauge", "lm"}
    extra = set(cfg) - known - {"points_per_host", "host_stride", "deterministic",
                                "write_weights"}
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    lm_cfg = cfg.get("lm", {})
    if not isinstance(lm_cfg, dict):
        raise ConfigError("lm must be a group of keys")
    bad = set(lm_cfg) - set(LMConfig.__dataclass_fields__)
    if bad:
        raise ConfigError(f"unknown lm keys: {sorted(bad)}")
    try:
        lm = LMConfig(**{k: (int(v) if k.startswith("max") else float(v))
                         for k, v in lm_cfg.items()})
        return SolverConfig(theta=float(cfg.get("theta", 14.6)),
                            weight_mode=str(cfg.get("weight_mode", "pb")),
                            huber_delta=float(cfg.get("huber_delta", 0.1)),
                            tdist_nu=float(cfg.get("tdist_nu", 5.0)),
                            depth_prior=float(cfg.get("depth_prior", 0.02)),
                            gauge=int(cfg.get("gauge", 0)), lm=lm)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
