"""Experiment runner: solve configured problems and emit CSV histories and summaries.

Default grids couple the time step to the mesh size: direct solves use
N = T*M (tau = h exactly); partitioned runs use N = T*M + 1 so the N-1
interior levels split evenly into the usual power-of-two subdomain
counts, matching the decomposition layouts of the solver modules.
"""

import argparse
import csv
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .discretize import Grid, assemble_system
from .errors import MaxItersExceededError, TimeDDError
from .linalg import KrylovConfig, gmres, lu_factor
from .partition import build_coarse_space, partition_time
from .problems import by_name, error_norms
from .schwarz import (
    SchwarzConfig,
    SchwarzPreconditioner,
    VARIANTS,
    build_subdomains,
    default_overlap,
    solve_stationary,
    thread_count,
)

SUMMARY_COLUMNS = [
    "problem", "variant", "levels", "K", "M", "N", "gamma", "mode",
    "iters", "status", "wall_seconds", "err_y", "err_p",
]
HISTORY_COLUMNS = ["iter", "abs_residual", "rel_residual"]
TABLE_K_VALUES = (2, 4, 8, 16, 32, 64)


@dataclass
class ExperimentConfig:
    problem: str = "example1"
    M: int = 16
    gamma: float = 1e-2
    variant: str = "asn"
    levels: int = 1
    K: tuple = (2,)
    overlap_steps: int | None = None   # None: derived from the variant
    mode: str = "stationary"           # stationary | gmres | direct
    rel_tol: float = 1e-7
    max_iters: int = 500
    seed: int = 0
    out_dir: str = "results"
    N: int | None = None               # explicit override of the default grid
    threads: int | None = None         # None: TIMEDD_THREADS

    def __post_init__(self):
        if self.problem not in ("example1", "example2"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.mode not in ("stationary", "gmres", "direct"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.levels not in (1, 2):
            raise ValueError("levels must be 1 or 2")
        if self.M <= 0 or self.gamma <= 0 or self.rel_tol <= 0 or self.max_iters <= 0:
            raise ValueError("M, gamma, rel_tol, and max_iters must be positive")
        if not self.K or any(k < 1 for k in self.K):
            raise ValueError("K list must contain positive integers")

    @property
    def overlap(self):
        if self.overlap_steps is not None:
            return self.overlap_steps
        return default_overlap(self.variant)


def default_N(T, M, mode):
    """Default time subdivisions: tau = h for direct solves, otherwise N-1 = T*M."""
    base = int(round(T * M))
    return base if mode == "direct" else base + 1


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_history(path, report):
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for k, rel in enumerate(report.history):
            writer.writerow([k, _fmt(rel * report.r0_norm), _fmt(rel)])


def _append_summary(path, rows):
    new_file = not os.path.exists(path)
    with open(path, "a", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])


def run_experiment(cfg):
    """Run one experiment sweep over cfg.K; returns (summary_rows, all_converged).

    Writes one history CSV per K value plus one appended summary row each.
    """
    case = by_name(cfg.problem, cfg.gamma)
    N = cfg.N if cfg.N is not None else default_N(case.T, cfg.M, cfg.mode)
    grid = Grid(case.dim, cfg.M, N, case.T)
    system = assemble_system(case.problem_spec(), grid)
    threads = cfg.threads if cfg.threads is not None else thread_count()
    os.makedirs(cfg.out_dir, exist_ok=True)

    rows = []
    all_converged = True
    for K in cfg.K:
        t0 = time.perf_counter()
        if cfg.mode == "direct":
            w = lu_factor(system.L).solve(system.b)
            r0 = float(np.linalg.norm(system.b))  # residual of the zero guess
            rel = float(np.linalg.norm(system.b - system.L @ w)) / r0
            history, iters, status = [1.0, rel], 1, "converged"
            report = _DirectReport(history, r0)
        else:
            part = partition_time(N, K, cfg.overlap)
            scfg = SchwarzConfig(
                variant=cfg.variant, levels=cfg.levels, rel_tol=cfg.rel_tol,
                max_iters=cfg.max_iters, seed=cfg.seed, threads=threads,
            )
            coarse = (build_coarse_space(part, system, solver=scfg.coarse_solver)
                      if cfg.levels == 2 else None)
            if cfg.mode == "stationary":
                try:
                    w, report = solve_stationary(system, part, coarse, scfg)
                except MaxItersExceededError as exc:
                    w, report = exc.iterate, exc.report
            else:  # gmres
                precond = SchwarzPreconditioner(system, part, coarse, scfg)
                x0 = np.random.default_rng(cfg.seed).random(system.size)
                w, report = gmres(
                    system.L, system.b, x0=x0, apply_M=precond,
                    cfg=KrylovConfig(rel_tol=cfg.rel_tol, max_iters=cfg.max_iters),
                )
            iters, status = report.iterations, report.status
        wall = time.perf_counter() - t0
        all_converged &= status == "converged"
        err_y, err_p = error_norms(case, grid, w)

        hist_name = (
            f"history_{cfg.problem}_{cfg.mode}_{cfg.variant}_lv{cfg.levels}_K{K}.csv"
        )
        _write_history(os.path.join(cfg.out_dir, hist_name), report)
        rows.append({
            "problem": cfg.problem, "variant": cfg.variant, "levels": cfg.levels,
            "K": K, "M": cfg.M, "N": N, "gamma": cfg.gamma, "mode": cfg.mode,
            "iters": iters, "status": status, "wall_seconds": wall,
            "err_y": err_y, "err_p": err_p,
        })
    _append_summary(os.path.join(cfg.out_dir, "summary.csv"), rows)
    return rows, all_converged


class _DirectReport:
    """Minimal history carrier for direct solves."""

    def __init__(self, history, r0_norm):
        self.history = history
        self.r0_norm = r0_norm
        self.iterations = 1
        self.status = "converged"


def reproduce_tables(out_dir, problem="example1", M=None, seed=0, rel_tol=1e-7):
    """Run the stand-alone solver sweep behind the iteration-count tables.

    All four variants, one and two levels, K in {2,...,64}.  Wall times are
    local measurements and not comparable across machines; only iteration
    counts are meant to be reproduced.  Returns {(levels, variant, K): iters}.
    """
    if M is None:
        M = 128 if problem == "example1" else 32
    case = by_name(problem)
    N = default_N(case.T, M, "stationary")
    grid = Grid(case.dim, M, N, case.T)
    system = assemble_system(case.problem_spec(), grid)
    os.makedirs(out_dir, exist_ok=True)

    sub_cache, coarse_cache = {}, {}
    counts, walls = {}, {}
    threads = thread_count()
    for levels in (1, 2):
        for variant in VARIANTS:
            overlap = default_overlap(variant)
            for K in TABLE_K_VALUES:
                part = partition_time(N, K, overlap)
                cfg = SchwarzConfig(variant=variant, levels=levels,
                                    rel_tol=rel_tol, seed=seed, threads=threads)
                key = (K, overlap)
                if key not in sub_cache:
                    sub_cache[key] = build_subdomains(system, part, cfg)
                coarse = None
                if levels == 2:
                    if key not in coarse_cache:
                        coarse_cache[key] = build_coarse_space(
                            part, system, solver=cfg.coarse_solver)
                    coarse = coarse_cache[key]
                t0 = time.perf_counter()
                _, report = solve_stationary(system, part, coarse, cfg,
                                             subdomains=sub_cache[key])
                counts[(levels, variant, K)] = report.iterations
                walls[(levels, variant, K)] = time.perf_counter() - t0

    for levels in (1, 2):
        path = os.path.join(out_dir, f"table_{levels}level_{problem}.csv")
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            header = ["K"]
            for variant in VARIANTS:
                header += [f"{variant.upper()}_iters",
                           f"{variant.upper()}_wall_s_noncomparable"]
            writer.writerow(header)
            for K in TABLE_K_VALUES:
                row = [K]
                for variant in VARIANTS:
                    row += [counts[(levels, variant, K)],
                            _fmt(walls[(levels, variant, K)])]
                writer.writerow(row)
    return counts


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="timedd",
        description="Time domain decomposition experiments for the "
                    "forward-backward optimality system.",
    )
    parser.add_argument("--problem", default="example1",
                        choices=["example1", "example2"])
    parser.add_argument("--M", type=int, default=None,
                        help="spatial subdivisions per axis (h = 1/M)")
    parser.add_argument("--N", type=int, default=None,
                        help="time subdivisions (default: T*M direct, T*M+1 otherwise)")
    parser.add_argument("--gamma", type=float, default=1e-2)
    parser.add_argument("--variant", default="asn", choices=list(VARIANTS))
    parser.add_argument("--levels", type=int, default=1, choices=[1, 2])
    parser.add_argument("--K", default="2",
                        help="comma-separated subdomain counts, e.g. 2,4,8")
    parser.add_argument("--overlap", type=int, default=None,
                        help="overlap width in time steps (default by variant)")
    parser.add_argument("--mode", default="stationary",
                        choices=["stationary", "gmres", "direct"])
    parser.add_argument("--tol", type=float, default=1e-7)
    parser.add_argument("--max-iters", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="results")
    parser.add_argument("--reproduce-tables", action="store_true",
                        help="run the full stand-alone solver table sweep instead")
    return parser.parse_args(argv)


def main(argv=None):
    args = _parse_args(argv)
    try:
        if args.reproduce_tables:
            counts = reproduce_tables(args.out, problem=args.problem,
                                      M=args.M, seed=args.seed,
                                      rel_tol=args.tol)
            for levels in (1, 2):
                print(f"{levels}-level iteration counts "
                      f"(K = {', '.join(str(k) for k in TABLE_K_VALUES)}):")
                for variant in VARIANTS:
                    vals = ", ".join(
                        str(counts[(levels, variant, K)]) for K in TABLE_K_VALUES
                    )
                    print(f"  {variant.upper()}: {vals}")
            return 0
        cfg = ExperimentConfig(
            problem=args.problem,
            M=args.M if args.M is not None else 16,
            gamma=args.gamma,
            variant=args.variant,
            levels=args.levels,
            K=tuple(int(tok) for tok in args.K.split(",") if tok.strip()),
            overlap_steps=args.overlap,
            mode=args.mode,
            rel_tol=args.tol,
            max_iters=args.max_iters,
            seed=args.seed,
            out_dir=args.out,
            N=args.N,
        )
        rows, all_converged = run_experiment(cfg)
    except (TimeDDError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for row in rows:
        print(f"{row['problem']} {row['mode']} {row['variant']} "
              f"lv{row['levels']} K={row['K']}: {row['iters']} iters "
              f"({row['status']}), err_y={row['err_y']:.3e}")
    return 0 if all_converged else 1


if __name__ == "__main__":
    sys.exit(main())
