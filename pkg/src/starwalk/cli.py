"""Command-line front end.

Three subcommands:

* ``solve``    — run the star-region walk over a scene's evaluation plan,
  write results.csv (+ PFM images and PNG heatmaps for grid slices), and
  print a run report.
* ``compare``  — run several estimators at several walk counts against a
  reference (the plan's reference file, or a self-computed high-walk-count
  run), writing a comparison CSV and a log-log RMSE plot.
* ``validate`` — fire random geometric queries through both the accelerated
  tree and the brute-force scan and report any disagreement.

Exit codes: 0 success, 2 parse errors, 3 validation/missing-file errors,
4 numerical mismatches (validate), 1 anything else. Work is distributed
over evaluation points; per-walk RNG substreams make output bytes
independent of --threads.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import brute
from .baselines import (BaselineConfig, random_intersection_estimate,
                        run_baseline_walks, sde_walk, wos_dirichlet,
                        wos_reflect)
from .estimator import TERMINAL_KINDS, estimate
from .mesh import MeshError
from .scene_io import (SceneParseError, SceneValidationError, _fmt, load_mesh,
                       load_scene, read_reference, write_results)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_MISMATCH = 4

_BASELINES = {"wos": wos_dirichlet, "wos_reflect": wos_reflect,
              "sde": sde_walk, "naive": random_intersection_estimate}
ESTIMATOR_NAMES = ("wost",) + tuple(_BASELINES)

REFERENCE_WALKS = 1 << 16


@dataclass
class RunReport:
    """Aggregate solve statistics printed after a run."""

    estimates: list
    n_points: int
    walks_per_point: int
    wall_time: float
    rmse: Optional[float] = None
    outside_points: Optional[list] = None

    @property
    def walks_per_sec(self):
        total = self.n_points * self.walks_per_point
        return total / self.wall_time if self.wall_time > 0 else math.inf

    @property
    def mean_walk_length(self):
        return float(np.mean([e.mean_steps for e in self.estimates]))

    @property
    def clamp_rate(self):
        return float(np.mean([e.clamp_rate for e in self.estimates]))

    @property
    def escaped_rate(self):
        return float(np.mean([e.escaped_rate for e in self.estimates]))

    @property
    def terminal_histogram(self):
        hist = {k: 0 for k in TERMINAL_KINDS}
        for e in self.estimates:
            for k, v in e.terminal_histogram.items():
                hist[k] += v
        return hist

    def print(self, out=sys.stdout):
        ms = self.wall_time * 1e3 / max(1, self.n_points * self.walks_per_point)
        print(f"solved {self.n_points} points x {self.walks_per_point} walks "
              f"in {self.wall_time:.2f} s "
              f"({self.walks_per_sec:.0f} walks/s, {ms:.4f} ms per point-walk)",
              file=out)
        print(f"mean walk length {self.mean_walk_length:.2f} steps | "
              f"clamp rate {self.clamp_rate:.4f} | "
              f"escaped rate {self.escaped_rate:.4f}", file=out)
        hist = self.terminal_histogram
        print("terminals: " + " ".join(f"{k}={hist[k]}" for k in TERMINAL_KINDS),
              file=out)
        if self.rmse is not None:
            print(f"rmse vs reference = {self.rmse:.6g}", file=out)
        if self.outside_points:
            shown = ", ".join(str(i) for i in self.outside_points[:8])
            more = ("" if len(self.outside_points) <= 8
                    else f" (+{len(self.outside_points) - 8} more)")
            print(f"warning: {len(self.outside_points)} evaluation points "
                  f"outside the domain: indices {shown}{more}", file=out)


# -- parallel point evaluation ----------------------------------------------------

_WORKER_SCENE = None


def _init_worker(scene):
    global _WORKER_SCENE
    _WORKER_SCENE = scene


def _point_task(args):
    kind, index, point, n_walks, cfg = args
    scene = _WORKER_SCENE
    if kind == "wost":
        res = estimate(scene, point, n_walks, cfg, point_index=index)
    else:
        res = run_baseline_walks(_BASELINES[kind], scene, point, n_walks, cfg,
                                 point_index=index)
    return index, replace(res, values=None)


def _evaluate_points(scene, points, n_walks, cfg, kind="wost", threads=1):
    """Run `kind` over all points; deterministic regardless of `threads`."""
    tasks = [(kind, i, np.asarray(p, dtype=np.float64), n_walks, cfg)
             for i, p in enumerate(points)]
    results = [None] * len(tasks)
    if threads <= 1:
        _init_worker(scene)
        for t in tasks:
            i, res = _point_task(t)
            results[i] = res
    else:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(scene,)) as pool:
            for i, res in pool.map(_point_task, tasks):
                results[i] = res
    return results


# -- figures ----------------------------------------------------------------------


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _solve_figures(plan, estimates, out_dir):
    plt = _pyplot()
    paths = []
    means = np.array([e.mean for e in estimates])
    errs = np.array([e.stderr for e in estimates])
    if plan.kind == "grid_slice":
        for name, data in (("mean", means), ("stderr", errs)):
            fig, ax = plt.subplots(figsize=(5, 4))
            im = ax.imshow(data.reshape(plan.height, plan.width),
                           origin="lower", cmap="viridis")
            fig.colorbar(im, ax=ax, label=name)
            ax.set_title(f"solution {name}")
            path = os.path.join(out_dir, f"solve_{name}.png")
            fig.savefig(path, dpi=110, bbox_inches="tight")
            plt.close(fig)
            paths.append(path)
    else:
        fig, ax = plt.subplots(figsize=(5, 4))
        idx = np.arange(len(means))
        ax.errorbar(idx, means, yerr=errs, fmt="o", capsize=3)
        ax.set_xlabel("point index")
        ax.set_ylabel("estimate")
        ax.set_title("solution estimates")
        path = os.path.join(out_dir, "solve_points.png")
        fig.savefig(path, dpi=110, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths


def _compare_figure(rows, out_dir):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    by_est = {}
    for name, n, rmse, _steps, _t in rows:
        by_est.setdefault(name, []).append((n, rmse))
    for name, pts in by_est.items():
        pts.sort()
        ns = [p[0] for p in pts]
        es = [max(p[1], 1e-300) for p in pts]
        ax.loglog(ns, es, "o-", label=name)
    ax.set_xlabel("walks per point")
    ax.set_ylabel("RMSE")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    path = os.path.join(out_dir, "compare_rmse.png")
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


# -- solve -----------------------------------------------------------------------


def _parse_overrides(pairs):
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise SceneParseError(f"--set expects key=value, got {p!r}")
        k, _, v = p.partition("=")
        out[k.strip()] = v.strip()
    return out


def _load(args):
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["estimator.seed"] = str(args.seed)
    if args.walks is not None:
        overrides["evaluation.walks"] = str(args.walks)
    return load_scene(args.config, overrides)


def _outside_points(scene, points):
    if scene.double_sided:
        return []  # containment is ill-defined for open boundaries
    return [i for i, p in enumerate(points) if not scene.contains(p)]


def cmd_solve(args) -> int:
    scene = _load(args)
    plan = scene.config.evaluation
    cfg = scene.config.estimator
    out_dir = args.out_dir
    reference = None
    if plan.reference_path:
        reference = read_reference(plan.reference_path, plan.n_points)
    t0 = time.perf_counter()
    estimates = _evaluate_points(scene, plan.points, plan.walks_per_point, cfg,
                                 kind="wost", threads=args.threads)
    wall = time.perf_counter() - t0
    rmse = None
    if reference is not None:
        means = np.array([e.mean for e in estimates])
        rmse = float(np.sqrt(np.mean((means - reference) ** 2)))
    report = RunReport(estimates=estimates, n_points=plan.n_points,
                       walks_per_point=plan.walks_per_point, wall_time=wall,
                       rmse=rmse, outside_points=_outside_points(scene,
                                                                 plan.points))
    paths = write_results(plan, estimates, out_dir, reference=reference)
    fig_paths = _solve_figures(plan, estimates, out_dir)
    report.print()
    written = [paths["csv"]] + [p for k, p in paths.items() if k != "csv"] \
        + fig_paths
    print("wrote " + " ".join(os.path.relpath(p) for p in written))
    return EXIT_OK


# -- compare ---------------------------------------------------------------------


def cmd_compare(args) -> int:
    scene = _load(args)
    plan = scene.config.evaluation
    est_cfg = scene.config.estimator
    names = [n.strip() for n in args.estimators.split(",") if n.strip()]
    for n in names:
        if n not in ESTIMATOR_NAMES:
            raise SceneValidationError(
                f"unknown estimator {n!r} (choose from "
                f"{', '.join(ESTIMATOR_NAMES)})")
    walk_counts = [int(t) for t in args.walk_counts.split(",") if t.strip()]
    if not walk_counts or any(n < 1 for n in walk_counts):
        raise SceneValidationError("--walk-counts needs positive integers")
    os.makedirs(args.out_dir, exist_ok=True)

    if plan.reference_path:
        reference = read_reference(plan.reference_path, plan.n_points)
    else:
        print(f"computing reference with {args.reference_walks} walks/point ...")
        ref_est = _evaluate_points(scene, plan.points, args.reference_walks,
                                   est_cfg, kind="wost", threads=args.threads)
        reference = np.array([e.mean for e in ref_est])

    base_cfg = BaselineConfig(epsilon=est_cfg.epsilon, zeta=args.zeta,
                              sde_step=args.sde_step,
                              max_steps=est_cfg.max_steps, seed=est_cfg.seed)
    rows = []
    for name in names:
        cfg = est_cfg if name == "wost" else base_cfg
        for n in walk_counts:
            t0 = time.perf_counter()
            ests = _evaluate_points(scene, plan.points, n, cfg, kind=name,
                                    threads=args.threads)
            wall = time.perf_counter() - t0
            means = np.array([e.mean for e in ests])
            rmse = float(np.sqrt(np.mean((means - reference) ** 2)))
            steps = float(np.mean([e.mean_steps for e in ests]))
            rows.append((name, n, rmse, steps, wall))
            print(f"{name:>12s} N={n:<6d} rmse={rmse:.6g} "
                  f"mean_steps={steps:.2f} wall={wall:.2f}s")

    lines = ["estimator,N,rmse,mean_steps,wall_time"]
    for name, n, rmse, steps, wall in rows:
        lines.append(f"{name},{n},{_fmt(rmse)},{_fmt(steps)},{_fmt(wall)}")
    wost_rows = sorted((n, r) for name, n, r, _s, _t in rows if name == "wost")
    slope = None
    if len(wost_rows) >= 2:
        ls = np.log([n for n, _ in wost_rows])
        le = np.log([max(r, 1e-300) for _, r in wost_rows])
        slope = float(np.polyfit(ls, le, 1)[0])
        lines.append(f"# wost_loglog_slope = {_fmt(slope)}")
    csv_path = os.path.join(args.out_dir, "compare.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    fig_path = _compare_figure(rows, args.out_dir)
    if slope is not None:
        print(f"wost log-log RMSE slope: {slope:.3f}")
    print(f"wrote {os.path.relpath(csv_path)} {os.path.relpath(fig_path)}")
    return EXIT_OK


# -- validate ---------------------------------------------------------------------


def _rel_close(a: float, b: float, tol: float) -> bool:
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def cmd_validate(args) -> int:
    dim = args.dimension
    if dim == 0:
        dim = 3 if args.mesh.endswith(".obj") else 2
    mesh = load_mesh(args.mesh, dim, name=os.path.basename(args.mesh))
    if mesh.is_empty:
        print("warning: mesh has no elements; 0 queries executed, trivially "
              "passing")
        return EXIT_OK
    from .snch import build_snch
    tree = build_snch(mesh)
    rng = np.random.default_rng(args.seed)
    lo, hi = mesh.aabb_lo, mesh.aabb_hi
    span = np.maximum(hi - lo, 1e-12)
    kinds = ("closest", "silhouette", "ray") if args.kind == "all" \
        else (args.kind,)
    tol = 1e-12
    mismatches = 0
    max_dev = 0.0
    for kind in kinds:
        for _ in range(args.queries):
            p = lo - 0.5 * span + rng.random(dim) * 2.0 * span
            if kind == "closest":
                dt, _pt, et = tree.closest_point(p)
                db, _pb, eb = brute.closest_point(mesh, p)
                dev = abs(dt - db) / max(1.0, db)
                ok = _rel_close(dt, db, tol) and et == eb
            elif kind == "silhouette":
                dt, ct = tree.silhouette_distance(p)
                db, cb = brute.closest_silhouette(mesh, p)
                dev = 0.0 if (math.isinf(dt) and math.isinf(db)) \
                    else abs(dt - db) / max(1.0, abs(db))
                ok = _rel_close(dt, db, tol) and ct == cb
            else:
                d = rng.normal(size=dim)
                d /= math.sqrt(float(d @ d))
                ht = tree.intersect(p, d, t_max=math.inf)
                hb = brute.ray_first_hit(mesh, p, d, t_max=math.inf)
                if ht is None or hb is None:
                    ok = ht is None and hb is None
                    dev = 0.0 if ok else math.inf
                else:
                    dev = abs(ht.t - hb.t) / max(1.0, hb.t)
                    ok = _rel_close(ht.t, hb.t, tol) and ht.element == hb.element
            max_dev = max(max_dev, dev)
            if not ok:
                mismatches += 1
    total = args.queries * len(kinds)
    print(f"{total} queries ({', '.join(kinds)}) on {mesh.n_elements} "
          f"elements: {mismatches} mismatches, max relative deviation "
          f"{max_dev:.3e}")
    if mismatches:
        print("FAIL: accelerated queries disagree with brute force",
              file=sys.stderr)
        return EXIT_MISMATCH
    print("PASS")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="starwalk",
        description="Grid-free Monte Carlo solver for Poisson problems with "
                    "mixed Dirichlet/Neumann boundaries")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--walks", type=int, default=None,
                       help="override walks per point")
        p.add_argument("--seed", type=int, default=None,
                       help="override estimator seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes over evaluation points")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any scene key (repeatable)")
        p.add_argument("--out-dir", default=".", help="output directory")

    ps = sub.add_parser("solve", help="solve the scene's evaluation plan")
    ps.add_argument("config")
    common(ps)

    pc = sub.add_parser("compare", help="compare estimators over walk counts")
    pc.add_argument("config")
    common(pc)
    pc.add_argument("--estimators", default="wost,wos_reflect,sde",
                    help="comma list of " + ",".join(ESTIMATOR_NAMES))
    pc.add_argument("--walk-counts", default="16,64,256,1024,4096",
                    help="comma list of walks-per-point values")
    pc.add_argument("--zeta", type=float, default=0.01,
                    help="reflection offset for wos_reflect")
    pc.add_argument("--sde-step", type=float, default=1e-4,
                    help="Euler-Maruyama step for sde")
    pc.add_argument("--reference-walks", type=int, default=REFERENCE_WALKS,
                    help="walks per point for the self-computed reference")

    pv = sub.add_parser("validate",
                        help="check accelerated queries against brute force")
    pv.add_argument("mesh")
    pv.add_argument("--kind", default="all",
                    choices=("closest", "silhouette", "ray", "all"))
    pv.add_argument("--queries", type=int, default=1000)
    pv.add_argument("--seed", type=int, default=0)
    pv.add_argument("--dimension", type=int, default=0, choices=(0, 2, 3),
                    help="mesh dimension (default: 3 for .obj else 2)")
    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_validate(args)
    except SceneParseError as err:
        print(f"parse error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except (SceneValidationError, MeshError, FileNotFoundError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
