"""``otaccel ot|barycenter|bench|gradcheck``.

Exit codes: 0 success, 1 I/O error, 2 iteration budget exhausted (or a
failed gradient check), 3 invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .aam import StoppingRule
from .barycenter import (BarycenterDual, BarycenterDualPoint, BarycenterProblem,
                         barycenter_estimate, run_accelerated_ibp, run_ibp,
                         wb_dual_gradient, wb_dual_value)
from .core import CostMatrix, smooth_marginals
from .inputs import InputError, grid_cost, load_cost, load_histogram, synthetic_pairs
from .oracle import finite_difference_gradient
from .ot import (ApproximationError, EntropicOTProblem, OTDualPoint,
                 approximate_ot, approximate_parameters, marginal_error,
                 ot_dual_gradient, ot_dual_value, run_accelerated_sinkhorn,
                 run_sinkhorn)

EXIT_OK, EXIT_IO, EXIT_EXHAUSTED, EXIT_CONFIG = 0, 1, 2, 3
OT_METHODS = ("sinkhorn", "aam-sinkhorn", "apdagd-baseline")
BARYCENTER_METHODS = ("ibp", "aam-ibp")
BENCH_COLUMNS = ("instance", "method", "eps", "iter", "dual", "feas_l1", "gap", "L", "A")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    method: str = "aam-sinkhorn"
    gamma: float | str = "auto"
    epsilon: float = 0.01
    max_iters: int = 100_000
    l0: float = 1.0
    seed: int = 0
    output_path: str | None = None
    check_interval: int = 1
    smooth: float | None = None
    workers: int = 1

    def validate(self, methods=OT_METHODS) -> "RunConfig":
        if self.method not in methods:
            raise ConfigError(f"method must be one of {', '.join(methods)}")
        if self.gamma != "auto" and not (isinstance(self.gamma, float) and self.gamma > 0):
            raise ConfigError("gamma must be 'auto' or a positive number")
        if not self.epsilon > 0:
            raise ConfigError("eps must be positive")
        if self.max_iters < 1:
            raise ConfigError("max-iters must be >= 1")
        if not self.l0 > 0:
            raise ConfigError("l0 must be positive")
        if self.check_interval < 1:
            raise ConfigError("check-interval must be >= 1")
        if self.smooth is not None and not 0 < self.smooth < 8:
            raise ConfigError("smooth must lie in (0, 8)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


def _gamma_arg(text):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("gamma must be 'auto' or a number") from None


def _config(args, default_method) -> RunConfig:
    return RunConfig(method=args.method or default_method, gamma=args.gamma,
                     epsilon=args.eps, max_iters=args.max_iters, l0=args.l0,
                     seed=args.seed, output_path=args.out,
                     check_interval=args.check_interval, smooth=args.smooth,
                     workers=args.workers)


# ---------------------------------------------------------------- outputs

def _summary_text(items: dict) -> str:
    lines = []
    for key, val in items.items():
        if isinstance(val, (float, np.floating)):
            val = repr(float(val))
        elif isinstance(val, np.integer):
            val = int(val)
        lines.append(f"{key}: {val}")
    return "\n".join(lines) + "\n"


def _write_matrix(path, M):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(M):
            w.writerow([repr(float(x)) for x in row])


def _emit(cfg: RunConfig, summary: dict, files: dict):
    """Write ``files`` (name -> writer callable) under ``--out``; summary to stdout."""
    text = _summary_text(summary)
    if cfg.output_path:
        os.makedirs(cfg.output_path, exist_ok=True)
        for name, write in files.items():
            write(os.path.join(cfg.output_path, name))
        with open(os.path.join(cfg.output_path, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _cost_for(n, cost_path, metric):
    if cost_path:
        C = load_cost(cost_path)
        if C.shape != (n, n):
            raise ConfigError(f"cost is {C.shape[0]}x{C.shape[1]}, histograms have length {n}")
        return C
    side = math.isqrt(n)
    if side * side != n:
        raise ConfigError("no --cost given and N is not a square grid size")
    return grid_cost(side, metric)


# ---------------------------------------------------------------- ot

def _certified(row, eps):
    return row.feasibility <= eps and abs(row.gap) <= eps


def solve_ot(cfg: RunConfig, C: CostMatrix, r, c):
    """Shared by ``ot`` and ``bench``: returns ``(summary dict, trace, plan)``."""
    t0 = time.perf_counter()
    if cfg.gamma == "auto":
        try:
            res = approximate_ot(C, r, c, cfg.epsilon, max_iters=cfg.max_iters,
                                 L0=cfg.l0, method=cfg.method,
                                 check_interval=cfg.check_interval)
        except ApproximationError as exc:
            return {"status": "max_iters", "iterations": cfg.max_iters,
                    "detail": str(exc)}, None, None
        X = res.plan.plan
        last = res.trace.last
        summary = {"status": "certified", "iterations": res.iterations,
                   "cost": res.cost, "gamma": res.gamma, "eps_prime": res.eps_prime,
                   "dual": last.value, "feas_l1": marginal_error(X, r, c),
                   "gap": last.gap}
        trace = res.trace
    else:
        prob = EntropicOTProblem(C, cfg.gamma, r, c)
        stop = StoppingRule(max_iters=cfg.max_iters,
                            predicate=lambda tr: tr.last.iteration > 0
                            and _certified(tr.last, cfg.epsilon))
        if cfg.method == "sinkhorn":
            _, plan, trace = run_sinkhorn(prob, stop)
        else:
            method = "adaptive" if cfg.method == "aam-sinkhorn" else "gradient"
            _, plan, trace, _ = run_accelerated_sinkhorn(prob, stop, cfg.l0, method)
        X = plan.plan
        last = trace.last
        ok = _certified(last, cfg.epsilon) or trace.status == "stationary"
        summary = {"status": "certified" if ok else "max_iters",
                   "iterations": last.iteration, "cost": float(np.sum(C.entries * X)),
                   "gamma": cfg.gamma, "dual": last.value, "feas_l1": last.feasibility,
                   "gap": last.gap}
    summary["seconds"] = time.perf_counter() - t0
    return summary, trace, X


def cmd_ot(args) -> int:
    cfg = _config(args, "aam-sinkhorn").validate(OT_METHODS)
    r = load_histogram(args.r, smooth=cfg.smooth)
    c = load_histogram(args.c, smooth=cfg.smooth)
    if len(r) != len(c):
        raise ConfigError("histograms differ in length")
    C = _cost_for(len(r), args.cost, args.metric)
    if cfg.gamma != "auto" and (r.weights.min() <= 0 or c.weights.min() <= 0):
        raise ConfigError("explicit gamma needs strictly positive histograms (use --smooth)")
    summary, trace, X = solve_ot(cfg, C, r.weights, c.weights)
    head = {"command": "ot", "method": cfg.method, "n": len(r), "eps": cfg.epsilon}
    files = {}
    if trace is not None:
        files["trace.csv"] = trace.to_csv
        files["plan.csv"] = lambda p: _write_matrix(p, X)
    _emit(cfg, {**head, **summary}, files)
    return EXIT_OK if summary["status"] == "certified" else EXIT_EXHAUSTED


# ---------------------------------------------------------------- barycenter

def cmd_barycenter(args) -> int:
    cfg = _config(args, "aam-ibp").validate(BARYCENTER_METHODS)
    measures = [load_histogram(p, smooth=cfg.smooth) for p in args.measures]
    n = len(measures[0])
    if any(len(p) != n for p in measures):
        raise ConfigError("measures differ in length")
    m = len(measures)
    if args.weights:
        try:
            w = np.array([float(x) for x in args.weights.split(",")])
        except ValueError:
            raise ConfigError("weights must be comma-separated numbers") from None
        if w.size != m or np.any(w <= 0):
            raise ConfigError("need one positive weight per measure")
    else:
        w = np.full(m, 1.0 / m)
    if abs(w.sum() - 1.0) > 1e-12:
        warnings.warn(f"weights sum to {w.sum():.6g}; renormalized")
        w = w / w.sum()
    if 3 * m * n * n * 8 > args.memory_cap_mb * 2 ** 20:
        raise ConfigError("kernels exceed --memory-cap-mb")
    C = _cost_for(n, args.cost, args.metric)
    P = [p.weights for p in measures]
    gamma = cfg.gamma
    if gamma == "auto":
        gamma, eps_prime = approximate_parameters(C.entries, cfg.epsilon)
        P = [smooth_marginals(p, eps_prime).weights for p in P]
    if any(p.min() <= 0 for p in P):
        raise ConfigError("measures must be strictly positive (use --smooth)")
    prob = BarycenterProblem(P, C, w, gamma)
    stop = StoppingRule(max_iters=cfg.max_iters,
                        predicate=lambda tr: tr.last.iteration > 0
                        and _certified(tr.last, cfg.epsilon))
    t0 = time.perf_counter()
    if cfg.method == "ibp":
        point, plans, trace = run_ibp(prob, stop)
    else:
        point, plans, trace, _ = run_accelerated_ibp(prob, stop, cfg.l0)
    X = np.stack([pl.plan for pl in plans])
    q = barycenter_estimate(X, w).weights
    last = trace.last
    ok = _certified(last, cfg.epsilon) or trace.status == "stationary"
    summary = {"command": "barycenter", "method": cfg.method, "m": m, "n": n,
               "eps": cfg.epsilon, "gamma": gamma,
               "status": "certified" if ok else "max_iters",
               "iterations": last.iteration, "dual": last.value,
               "feas_l1": last.feasibility, "gap": last.gap,
               "seconds": time.perf_counter() - t0}
    q_bar = w @ X.sum(axis=1)
    for l in range(m):
        summary[f"row_err_{l}"] = float(np.abs(X[l].sum(axis=1) - P[l]).sum())
        summary[f"col_err_{l}"] = float(np.abs(X[l].sum(axis=0) - q_bar).sum())
    files = {"trace.csv": trace.to_csv,
             "barycenter.csv": lambda p: _write_matrix(p, q[:, None])}
    _emit(cfg, summary, files)
    return EXIT_OK if ok else EXIT_EXHAUSTED


# ---------------------------------------------------------------- bench

def _bench_instance(job):
    cfg, index, r, c, C, eps_list = job
    out = []
    for eps in eps_list:
        for method in OT_METHODS:
            run_cfg = RunConfig(**{**asdict(cfg), "method": method, "epsilon": eps})
            summary, trace, _ = solve_ot(run_cfg, C, r, c)
            rows = [] if trace is None else [
                (index, method, eps, row.iteration, row.value, row.feasibility,
                 row.gap, row.L, row.A) for row in trace.rows]
            out.append((index, method, eps, summary["status"], summary["iterations"], rows))
    return out


def run_bench(cfg: RunConfig, pairs: int, side: int, eps_list, metric="sq_euclidean"):
    """Run every OT method on ``pairs`` seeded synthetic image pairs.

    Returns ``(results, long rows)`` where results are
    ``(instance, method, eps, status, iterations)`` tuples in a fixed order.
    """
    if pairs < 1:
        raise ConfigError("empty batch")
    C = grid_cost(side, metric)
    jobs = [(cfg, i, r, c, C, tuple(eps_list))
            for i, (r, c) in enumerate(synthetic_pairs(cfg.seed, pairs, side))]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(_bench_instance, jobs))
    else:
        chunks = [_bench_instance(j) for j in jobs]
    results, rows = [], []
    for chunk in chunks:
        for index, method, eps, status, iters, trace_rows in chunk:
            results.append((index, method, eps, status, iters))
            rows.extend(trace_rows)
    return results, rows


def bench_stats(results):
    """``{(method, eps): (mean, std, n_certified, n)}`` over iteration counts."""
    groups = {}
    for _, method, eps, status, iters in results:
        groups.setdefault((method, eps), []).append((status, iters))
    out = {}
    for key, vals in groups.items():
        it = np.array([v[1] for v in vals], dtype=float)
        ok = sum(v[0] == "certified" for v in vals)
        out[key] = (float(it.mean()), float(it.std()), ok, len(vals))
    return out


def bench_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for row in rows:
        w.writerow(list(row[:3]) + [row[3]] + [repr(float(x)) for x in row[4:]])
    return buf.getvalue()


def cmd_bench(args) -> int:
    cfg = _config(args, "aam-sinkhorn")
    cfg.method = "aam-sinkhorn"
    cfg.validate(OT_METHODS)
    if cfg.gamma != "auto":
        raise ConfigError("bench runs the eps-driven solver; use --gamma auto")
    try:
        eps_list = [float(x) for x in args.targets.split(",")]
    except ValueError:
        raise ConfigError("targets must be comma-separated numbers") from None
    if not eps_list or min(eps_list) <= 0:
        raise ConfigError("targets must be positive")
    results, rows = run_bench(cfg, args.pairs, args.side, eps_list, args.metric)
    stats = bench_stats(results)
    summary = {"command": "bench", "pairs": args.pairs, "side": args.side,
               "seed": cfg.seed}
    for (method, eps), (mean, std, ok, n) in sorted(stats.items()):
        summary[f"{method}@{eps:g}"] = f"{mean:.1f} +- {std:.1f} iterations ({ok}/{n} certified)"
    results_text = "instance,method,eps,status,iterations\n" + "".join(
        f"{i},{m},{e!r},{s},{k}\n" for i, m, e, s, k in results)

    def write_text(text):
        def writer(path):
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return writer

    _emit(cfg, summary, {"bench.csv": write_text(bench_csv(rows)),
                         "results.csv": write_text(results_text)})
    return EXIT_OK if all(r[3] == "certified" for r in results) else EXIT_EXHAUSTED


# ---------------------------------------------------------------- gradcheck

def gradient_check(n: int, m: int, gamma: float, points: int, seed: int, h: float = 1e-6):
    """Worst relative finite-difference error for the OT and barycenter duals."""
    rng = np.random.default_rng(seed)
    worst_ot = worst_wb = 0.0
    for _ in range(points):
        C = rng.uniform(0, 1, (n, n))
        r, c = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        prob = EntropicOTProblem(C, gamma, r, c)
        lam = rng.normal(size=2 * n)
        f = lambda x: ot_dual_value(prob, OTDualPoint.from_flat(x))
        g = np.concatenate(ot_dual_gradient(prob, OTDualPoint.from_flat(lam)))
        fd = finite_difference_gradient(f, lam, h)
        worst_ot = max(worst_ot, np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12))

        w = rng.dirichlet(np.ones(m))
        wb = BarycenterProblem(rng.dirichlet(np.ones(n), size=m),
                               [rng.uniform(0, 1, (n, n)) for _ in range(m)], w, gamma)
        dual = BarycenterDual(wb)
        pt = dual.project(rng.normal(size=dual.dim))
        grad = wb_dual_gradient(wb, BarycenterDualPoint.from_flat(pt, m)).flat()
        d = dual.project(rng.normal(size=dual.dim))
        fwb = lambda x: wb_dual_value(wb, BarycenterDualPoint.from_flat(x, m))
        dd = (fwb(pt + h * d) - fwb(pt - h * d)) / (2 * h)
        worst_wb = max(worst_wb, abs(dd - grad @ d) / max(abs(grad @ d), 1e-12))
    return float(worst_ot), float(worst_wb)


def cmd_gradcheck(args) -> int:
    if args.n < 1 or args.m < 1 or args.points < 1:
        raise ConfigError("n, m and points must be >= 1")
    gamma = 0.1 if args.gamma == "auto" else args.gamma
    worst_ot, worst_wb = gradient_check(args.n, args.m, gamma, args.points, args.seed)
    ok = max(worst_ot, worst_wb) <= args.tol
    sys.stdout.write(_summary_text({"command": "gradcheck", "n": args.n, "m": args.m,
                                    "gamma": gamma, "points": args.points,
                                    "ot_rel_err": worst_ot, "wb_rel_err": worst_wb,
                                    "status": "pass" if ok else "fail"}))
    return EXIT_OK if ok else EXIT_EXHAUSTED


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--method")
    common.add_argument("--gamma", type=_gamma_arg, default="auto")
    common.add_argument("--eps", type=float, default=0.01)
    common.add_argument("--max-iters", type=int, default=100_000)
    common.add_argument("--l0", type=float, default=1.0)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--smooth", type=float)
    common.add_argument("--out", help="output directory")
    common.add_argument("--check-interval", type=int, default=1)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--metric", choices=("sq_euclidean", "l1"), default="sq_euclidean")

    p = argparse.ArgumentParser(prog="otaccel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    ot = sub.add_parser("ot", parents=[common], help="transport between two histograms")
    ot.add_argument("r")
    ot.add_argument("c")
    ot.add_argument("--cost", help="CSV cost matrix (default: grid cost)")
    ot.set_defaults(func=cmd_ot)

    bc = sub.add_parser("barycenter", parents=[common], help="barycenter of measures")
    bc.add_argument("measures", nargs="+")
    bc.add_argument("--weights")
    bc.add_argument("--cost")
    bc.add_argument("--memory-cap-mb", type=float, default=256.0)
    bc.set_defaults(func=cmd_barycenter)

    be = sub.add_parser("bench", parents=[common], help="synthetic image benchmark")
    be.add_argument("--pairs", type=int, default=5)
    be.add_argument("--side", type=int, default=8)
    be.add_argument("--targets", default="0.01")
    be.set_defaults(func=cmd_bench)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    gc.add_argument("--n", type=int, default=6)
    gc.add_argument("--m", type=int, default=3)
    gc.add_argument("--points", type=int, default=20)
    gc.add_argument("--tol", type=float, default=1e-5)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, OSError) as exc:
        print(f"otaccel: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"otaccel: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
