"""Glue between a loaded dataset and the solver."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .dataset import Dataset
from .radiance import BrdfTable, RadianceContext, build_brdf_table, prefilter
from .solver import Problem, SolverConfig, SolveResult, build_problem, optimize
from .trajectory import Trajectory

DEFAULT_POINTS_PER_HOST = 400
DEFAULT_HOST_STRIDE = 5


@lru_cache(maxsize=1)
def default_brdf_table() -> BrdfTable:
    return build_brdf_table()


def radiance_context(ds: Dataset) -> RadianceContext:
    pre = [prefilter(env) for env in ds.envmaps]
    return RadianceContext(pre, default_brdf_table(), ds.control_positions)


def dataset_problem(ds: Dataset, initial: Trajectory | None = None,
                    ctx: RadianceContext | None = None,
                    points_per_host: int = DEFAULT_POINTS_PER_HOST,
                    host_stride: int = DEFAULT_HOST_STRIDE) -> Problem:
    """Problem over every frame, hosting points in every ``host_stride``-th frame."""
    init = ds.initial if initial is None else initial
    n = len(ds.frames)
    hosts = list(range(0, n, max(1, host_stride)))
    normals = None
    if all(f.normals is not None for f in ds.frames):
        normals = [f.normals for f in ds.frames]
    return build_problem(
        [f.image for f in ds.frames], [f.depth for f in ds.frames], list(init.poses),
        ds.intrinsics, [f.roughness for f in ds.frames], normals=normals, radiance_ctx=ctx,
        hosts=hosts, points_per_host=points_per_host, stamps=init.stamps)


def solve_dataset(ds: Dataset, config: SolverConfig, initial: Trajectory | None = None,
                  ctx: RadianceContext | None = None,
                  points_per_host: int = DEFAULT_POINTS_PER_HOST,
                  host_stride: int = DEFAULT_HOST_STRIDE):
    """Returns ``(refined trajectory, SolveResult, Problem)``."""
    if ctx is None and config.weight_mode == "pb" and config.theta > 0:
        ctx = radiance_context(ds)
    problem = dataset_problem(ds, initial, ctx, points_per_host, host_stride)
    result: SolveResult = optimize(problem, config)
    stamps = np.array([f.timestamp for f in problem.frames])
    return Trajectory(stamps, result.poses), result, problem
