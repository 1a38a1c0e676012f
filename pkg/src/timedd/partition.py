"""Time-domain partitioning and the algebraic coarse space.

Interior time levels 1..N-1 are split into K equally sized core blocks.
Without overlap the cores are both the solve ranges and the gluing
(ownership) ranges.  With overlap width d, each solve range widens to
[core_start - 2d, core_end + d] and the gluing boundaries shift d levels
left of the core interfaces, so every boundary sits inside an overlap
region.  Coarse nodes are the pairs straddling the gluing boundaries
plus the global end levels.  Layouts for N=17, K=4:

    no overlap   owned {1-4, 5-8, 9-12, 13-16} = extended
                 coarse {1,4,5,8,9,12,13,16}
    overlap 1    extended {1-5, 3-9, 7-13, 11-16}
                 owned    {1-3, 4-7, 8-11, 12-16}
                 coarse   {1,3,4,7,8,11,12,16}

The coarse operator is the Galerkin triple product Lc = R L E with E the
temporal linear interpolation tensorized over spatial nodes and both
fields, and R the row-normalized transpose of E.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import (
    CoarseSolveFailedError,
    DimensionMismatchError,
    IndivisibleGridError,
    OverlapTooLargeError,
)
from .linalg import KrylovConfig, bicgstab, ilu0, lu_factor

__all__ = [
    "TimePartition",
    "CoarseSpace",
    "partition_time",
    "select_coarse_nodes",
    "build_extension",
    "build_coarse_space",
    "coarse_correct",
]

COARSE_SOLVE_TOL = 1e-4
COARSE_SOLVE_MAX_ITERS = 200


@dataclass(frozen=True)
class TimePartition:
    """K subdomains over interior time levels, with ownership and overlap info.

    ``owned`` and ``extended`` hold inclusive (start, end) index pairs over
    1..N-1; ``virtual_left``/``virtual_right`` are the neighbor levels just
    outside each extended range (None at the global ends).
    """

    N: int
    K: int
    overlap_steps: int
    owned: tuple
    extended: tuple
    virtual_left: tuple
    virtual_right: tuple

    @property
    def n_steps(self):
        return self.N - 1


def partition_time(N, K, overlap_steps=0):
    """Split interior levels 1..N-1 into K subdomains.

    Each equally sized core block [s, e] yields the solve range
    [s - 2*overlap_steps, e + overlap_steps] clipped to the interior; the
    gluing (owned) boundaries sit overlap_steps levels left of the core
    interfaces, inside the overlap regions.
    """
    nt = N - 1
    if K < 1:
        raise ValueError("K must be >= 1")
    if overlap_steps < 0:
        raise ValueError("overlap_steps must be >= 0")
    if nt % K != 0:
        raise IndivisibleGridError(
            f"N-1 = {nt} interior levels not divisible by K = {K}"
        )
    size = nt // K
    if overlap_steps > 0 and size <= 2 * overlap_steps:
        raise OverlapTooLargeError(
            f"subdomain size {size} must exceed 2*overlap_steps = {2 * overlap_steps}"
        )
    d = overlap_steps
    core = [(i * size + 1, (i + 1) * size) for i in range(K)]
    extended = tuple(
        (max(1, s - 2 * d), min(nt, e + d)) for s, e in core
    )
    bounds = [0] + [e - d for _, e in core[:-1]] + [nt]
    owned = tuple((bounds[i] + 1, bounds[i + 1]) for i in range(K))
    virtual_left = tuple(a - 1 if a > 1 else None for a, _ in extended)
    virtual_right = tuple(b + 1 if b < nt else None for _, b in extended)
    return TimePartition(N, K, overlap_steps, owned, extended,
                         virtual_left, virtual_right)


def select_coarse_nodes(part):
    """Coarse time levels: the global end levels plus, per interior gluing
    boundary, the two levels straddling it."""
    nt = part.n_steps
    nodes = {1, nt}
    for i in range(part.K - 1):
        e = part.owned[i][1]
        nodes.update((e, e + 1))
    return np.array(sorted(nodes), dtype=int)


def build_extension(coarse_nodes, N):
    """Temporal extension operator (N-1 fine levels x coarse levels).

    Fine values are linear interpolations of the bracketing coarse nodes;
    rows at coarse nodes are unit vectors; fine levels outside the coarse
    hull copy the nearest coarse node.
    """
    nt = N - 1
    cn = np.asarray(coarse_nodes, dtype=int)
    if cn.size == 0:
        raise ValueError("need at least one coarse node")
    if np.any(np.diff(cn) <= 0):
        raise ValueError("coarse nodes must be strictly increasing")
    if cn[0] < 1 or cn[-1] > nt:
        raise ValueError(f"coarse nodes must lie within 1..{nt}")
    pos = {int(c): k for k, c in enumerate(cn)}
    rows, cols, vals = [], [], []
    for n in range(1, nt + 1):
        if n in pos:
            rows.append(n - 1)
            cols.append(pos[n])
            vals.append(1.0)
        elif n < cn[0]:
            rows.append(n - 1)
            cols.append(0)
            vals.append(1.0)
        elif n > cn[-1]:
            rows.append(n - 1)
            cols.append(len(cn) - 1)
            vals.append(1.0)
        else:
            k = int(np.searchsorted(cn, n))  # cn[k-1] < n < cn[k]
            w = (n - cn[k - 1]) / (cn[k] - cn[k - 1])
            rows.extend((n - 1, n - 1))
            cols.extend((k - 1, k))
            vals.extend((1.0 - w, w))
    return sp.csr_matrix((vals, (rows, cols)), shape=(nt, cn.size))


class CoarseSpace:
    """Coarse nodes with full-space extension E, restriction R, and Lc = R L E."""

    def __init__(self, coarse_nodes, E, R, Lc, solver):
        self.coarse_nodes = coarse_nodes
        self.E = E
        self.R = R
        self.Lc = Lc
        self.solver = solver
        if solver == "direct":
            self._lu = lu_factor(Lc)
            self._prec = None
        elif solver == "ilu_bicgstab":
            self._lu = None
            self._prec = ilu0(Lc)
        else:
            raise ValueError(f"unknown coarse solver {solver!r}")

    def solve_coarse(self, rhs):
        """Approximately solve Lc z = rhs with the configured solver."""
        if self._lu is not None:
            return self._lu.solve(rhs)
        cfg = KrylovConfig(rel_tol=COARSE_SOLVE_TOL,
                           max_iters=COARSE_SOLVE_MAX_ITERS)
        z, report = bicgstab(self.Lc, rhs, precond=self._prec, cfg=cfg)
        if report.status == "breakdown":
            raise CoarseSolveFailedError(
                f"coarse BiCGStab breakdown at iteration {report.iterations}, "
                f"relative residual {report.history[-1]:.3e}"
            )
        # max_iters is tolerated: the correction is allowed to be approximate
        return z


def build_coarse_space(part, system, solver=None):
    """Assemble the two-level coarse space for an assembled system.

    The temporal extension acts identically on every spatial node and on
    both fields; R is the row-normalized transpose of E and Lc the sparse
    Galerkin product. ``solver`` defaults to a sparse direct factorization
    in 1D and ILU(0)-BiCGStab in 2D.
    """
    if part.N != system.grid.N:
        raise DimensionMismatchError(
            f"partition N = {part.N} != grid N = {system.grid.N}"
        )
    coarse_nodes = select_coarse_nodes(part)
    Et = build_extension(coarse_nodes, part.N)
    col_sums = np.asarray(Et.sum(axis=0)).ravel()  # row sums of Et^T
    Rt = sp.diags(1.0 / col_sums) @ Et.T

    eye_s = sp.identity(system.S, format="csr")
    E_field = sp.kron(Et, eye_s, format="csr")
    R_field = sp.kron(Rt, eye_s, format="csr")
    E = sp.block_diag((E_field, E_field), format="csr")
    R = sp.block_diag((R_field, R_field), format="csr")
    Lc = (R @ system.L @ E).tocsr()
    Lc.sort_indices()

    if solver is None:
        solver = "direct" if system.grid.dim == 1 else "ilu_bicgstab"
    return CoarseSpace(coarse_nodes, E, R, Lc, solver)


def coarse_correct(system, coarse, w1, rhs=None):
    """One residual-based coarse correction: w1 + E Lc^{-1} R (rhs - L w1)."""
    w1 = np.asarray(w1, dtype=float)
    if w1.shape[0] != system.size:
        raise DimensionMismatchError(
            f"iterate length {w1.shape[0]} != system size {system.size}"
        )
    if rhs is None:
        rhs = system.b
    r = rhs - system.L @ w1
    z = coarse.solve_coarse(coarse.R @ r)
    return w1 + coarse.E @ z
