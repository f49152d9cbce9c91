"""Command-line interface: ``pbpba <subcommand> ...``.

Exit status is 0 on success. On failure a single line
``error: <ErrorClass>: <message>`` goes to stderr and the status is 1
(2 for usage errors, from argparse).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .dataset import load_dataset, validate_dataset
from .errors import ConfigError, IoFailure, PbaError
from .kvconfig import format_kv, nest, read_kv
from .pfm import write_pfm
from .pipeline import (DEFAULT_HOST_STRIDE, DEFAULT_POINTS_PER_HOST, default_brdf_table,
                       radiance_context, solve_dataset)
from .radiance import RadianceContext, eval_radiance_batch, oracle_radiance, prefilter
from .scenegen import generate_dataset, read_scene, read_traj_spec
from .solver import config_from_dict, weight_grids
from .trajectory import aligned_errors, read_trajectory, write_trajectory


def cmd_scenegen(args) -> None:
    generate_dataset(read_scene(args.scene), read_traj_spec(args.traj), args.out)
    print(f"wrote {args.out}")


def config_overrides(extra: list[str]) -> dict[str, str]:
    """``--key value`` (or ``--key=value``) pairs; dashes in keys become underscores."""
    out = {}
    i = 0
    while i < len(extra):
        item = extra[i]
        if not item.startswith("--") or len(item) == 2:
            raise ConfigError(f"unexpected argument {item!r}")
        key = item[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise ConfigError(f"missing value for {item}")
        out[key.replace("-", "_")] = value
    return out


def solve_settings(args) -> dict:
    flat = read_kv(args.config) if args.config else {}
    flat.update(config_overrides(args.extra))
    if args.weight_mode is not None:
        flat["weight_mode"] = args.weight_mode
    if args.theta is not None:
        flat["theta"] = repr(args.theta)
    if args.deterministic:
        flat["deterministic"] = "true"
    return nest(flat)


def cmd_solve(args) -> None:
    cfg = solve_settings(args)
    config = config_from_dict(cfg)
    deterministic = bool(cfg.get("deterministic", False))
    pph = int(cfg.get("points_per_host", DEFAULT_POINTS_PER_HOST))
    stride = int(cfg.get("host_stride", DEFAULT_HOST_STRIDE))
    need_env = config.weight_mode == "pb" and config.theta > 0
    ds = load_dataset(args.dataset, with_envmaps=need_env)
    t0 = time.perf_counter()
    ctx = radiance_context(ds) if need_env else None
    est, result, problem = solve_dataset(ds, config, ctx=ctx, points_per_host=pph,
                                         host_stride=stride)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{out}: {exc}") from exc
    write_trajectory(out / "refined.txt", est)
    report = {"weight_mode": config.weight_mode, "theta": config.theta}
    report.update(result.report())
    report["ate_initial"] = _ate_or_nan(ds.initial, ds.groundtruth)
    report["ate_refined"] = _ate_or_nan(est, ds.groundtruth)
    if not deterministic:
        report["seconds"] = time.perf_counter() - t0
    try:
        (out / "report.txt").write_text(format_kv(report))
    except OSError as exc:
        raise IoFailure(f"{out / 'report.txt'}: {exc}") from exc
    if cfg.get("write_weights", False):
        for i, grid in enumerate(weight_grids(problem, result)):
            write_pfm(out / f"weights_{i:06d}.pfm", grid)
    print(f"ate_initial {float(report['ate_initial'])!r} "
          f"ate_refined {float(report['ate_refined'])!r}")


def _ate_or_nan(est, gt) -> float:
    try:
        _, _, err = aligned_errors(est, gt)
    except PbaError:
        return float("nan")
    return float(np.sqrt(np.mean(err**2)))


def cmd_evaluate(args) -> None:
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    al, Xa, err = aligned_errors(est, gt)
    ate = float(np.sqrt(np.mean(err**2)))
    if args.dump_xyz:
        lines = ["# stamp x y z error"]
        for (i, _), p, e in zip(al.pairs, Xa, err):
            lines.append(" ".join(repr(float(x)) for x in (est.stamps[i], *p, e)))
        try:
            Path(args.dump_xyz).write_text("\n".join(lines) + "\n")
        except OSError as exc:
            raise IoFailure(f"{args.dump_xyz}: {exc}") from exc
    flag = " degenerate" if al.degenerate else ""
    print(f"ate_rmse {float(ate)!r} pairs {len(al.pairs)}{flag}")


def radiance_check(ds, samples: int, seed: int = 0, oracle_samples: int = 16384) -> dict:
    """Split-sum radiance against the Monte-Carlo oracle at random draws."""
    if not ds.envmaps:
        raise IoFailure("dataset has no environment maps")
    rng = np.random.default_rng(seed)
    ctx = RadianceContext([prefilter(e) for e in ds.envmaps], default_brdf_table(),
                          ds.control_positions)
    rel = []
    for k in range(samples):
        c = int(rng.integers(len(ds.envmaps)))
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        beta = rng.normal(size=3)
        beta /= np.linalg.norm(beta)
        if beta @ n > 0:  # beta points from the camera toward the surface
            beta = -beta
        r_s = float(rng.uniform(0.05, 1.0))
        fast, front = eval_radiance_batch(ctx, c, n[None], beta[None], r_s)
        if not front[0]:
            continue
        ref = oracle_radiance(ds.envmaps[c], n, beta, r_s, oracle_samples, seed=k)
        rel.append(abs(fast[0] - ref) / max(ref, 1e-4))
    rel = np.array(rel)
    return {"samples": len(rel), "median_rel_error": float(np.median(rel)),
            "p90_rel_error": float(np.percentile(rel, 90)),
            "max_rel_error": float(rel.max())}


def cmd_radiance_check(args) -> None:
    ds = load_dataset(args.dataset)
    stats = radiance_check(ds, args.samples, args.seed)
    sys.stdout.write(format_kv(stats))


def cmd_validate(args) -> int:
    problems = validate_dataset(args.dataset)
    for p in problems:
        print(p)
    if problems:
        sys.stderr.write(f"error: InvalidDataset: {len(problems)} problem(s) in {args.dataset}\n")
        return 1
    print("valid")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbpba", description="Photometric bundle adjustment tools",
                                 allow_abbrev=False)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenegen", help="render a synthetic dataset")
    p.add_argument("--scene", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scenegen)

    p = sub.add_parser("solve", help="refine the initial trajectory of a dataset", allow_abbrev=False,
                       epilog="Any config key can be overridden with --KEY VALUE, "
                              "e.g. --huber_delta 0.05 --lm.max_outer 4.")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--weight-mode", choices=["pb", "tdist", "uniform"])
    p.add_argument("--theta", type=float)
    p.add_argument("--deterministic", action="store_true",
                   help="omit timings so reruns give identical reports")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="absolute trajectory error")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--dump-xyz")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("radiance-check", help="split-sum radiance vs Monte-Carlo oracle")
    p.add_argument("--dataset", required=True)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_radiance_check)

    p = sub.add_parser("validate", help="check a dataset directory")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command != "solve":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    args.extra = extra
    try:
        status = args.func(args)
    except PbaError as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
