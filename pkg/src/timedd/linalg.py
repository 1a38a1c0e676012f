"""Sparse direct and Krylov kernels: LU, right-preconditioned GMRES, ILU(0), BiCGStab.

All iterative solvers report histories of *true* relative residual norms
``||b - A x_k|| / ||b - A x_0||``, recomputed from the current iterate at
every step, so the recorded numbers can be verified independently.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

from .errors import (
    BreakdownError,
    DimensionMismatchError,
    SingularMatrixError,
    ZeroPivotError,
)

__all__ = [
    "IterationReport",
    "KrylovConfig",
    "lu_factor",
    "gmres",
    "ilu0",
    "bicgstab",
]


@dataclass
class KrylovConfig:
    """Tolerance and iteration limits for the Krylov solvers."""

    rel_tol: float = 1e-7
    max_iters: int = 500
    restart: int | None = None  # None = full (unrestarted) GMRES

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class IterationReport:
    """Convergence record of one iterative solve.

    ``history[0]`` is the relative residual of the initial guess (1.0 for a
    nonzero initial residual); absolute norms are ``rel * r0_norm``.
    """

    history: list = field(default_factory=list)
    iterations: int = 0
    status: str = "converged"  # converged | max_iters | breakdown
    wall_seconds: float = 0.0
    r0_norm: float = 0.0
    seed: int | None = None

    @property
    def converged(self):
        return self.status == "converged"


def _as_operator(A):
    """Accept a sparse matrix / ndarray / callable and return a matvec callable."""
    if A is None:
        return None
    if callable(A) and not sp.issparse(A) and not isinstance(A, np.ndarray):
        return A
    return lambda v: A @ v


# ----------------------------------------------------------------------------
# sparse direct solve
# ----------------------------------------------------------------------------

class LUFactorization:
    """Sparse LU factors (SuperLU, partial pivoting) of a square matrix."""

    def __init__(self, superlu, shape):
        self._lu = superlu
        self.shape = shape

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise DimensionMismatchError(
                f"rhs length {b.shape[0]} != matrix size {self.shape[0]}"
            )
        return self._lu.solve(b)

    __call__ = solve


def lu_factor(A, pivot_tol=1e-14):
    """Factor a square sparse matrix with SuperLU.

    Raises SingularMatrixError when factorization fails or the smallest
    pivot falls below ``pivot_tol`` relative to the largest one.
    """
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"matrix not square: {A.shape}")
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise SingularMatrixError(str(exc)) from exc
    diag = np.abs(lu.U.diagonal())
    dmax = diag.max() if diag.size else 0.0
    if dmax == 0.0 or diag.min() <= pivot_tol * dmax:
        raise SingularMatrixError(
            f"pivot ratio {diag.min():.3e} / {dmax:.3e} below threshold {pivot_tol:.1e}"
        )
    return LUFactorization(lu, A.shape)


# ----------------------------------------------------------------------------
# right-preconditioned GMRES
# ----------------------------------------------------------------------------

def gmres(apply_A, b, x0=None, apply_M=None, cfg=None):
    """Right-preconditioned GMRES (modified Gram-Schmidt, Givens rotations).

    Solves ``A M z = b`` for ``z`` and returns ``x = x0 + M z``.  Because the
    preconditioner sits on the right, the Krylov residuals coincide with the
    residuals of the original system; the history nevertheless records
    ``||b - A x_k||/||b - A x_0||`` computed explicitly from each iterate.

    Parameters
    ----------
    apply_A, apply_M : sparse matrix or callable
        System operator and (optional) right preconditioner ``z -> M z``.
    b, x0 : ndarray
        Right-hand side and initial guess (default zero).
    cfg : KrylovConfig

    Returns
    -------
    (x, IterationReport)

    Raises
    ------
    BreakdownError
        When the Arnoldi step yields a zero vector while the current iterate
        has not converged (a converged iterate at that point is returned
        normally: the Krylov space became invariant).
    """
    cfg = cfg if cfg is not None else KrylovConfig()
    A = _as_operator(apply_A)
    M = _as_operator(apply_M) or (lambda v: v)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    t_start = time.perf_counter()

    r = b - A(x)
    r0_norm = float(np.linalg.norm(r))
    if r0_norm == 0.0:
        return x, IterationReport([0.0], 0, "converged", 0.0, 0.0)
    history = [1.0]
    restart = cfg.restart if cfg.restart is not None else cfg.max_iters

    total = 0
    status = "max_iters"
    while total < cfg.max_iters:
        r = b - A(x)
        beta = float(np.linalg.norm(r))
        if beta / r0_norm < cfg.rel_tol:
            status = "converged"
            break
        m = min(restart, cfg.max_iters - total)
        V = np.empty((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        V[0] = r / beta
        g[0] = beta

        x_latest = x
        cycle_done = False
        for j in range(m):
            z = M(V[j])
            w = A(z)
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            hnext = float(np.linalg.norm(w))
            H[j + 1, j] = hnext
            exhausted = hnext == 0.0
            if not exhausted:
                V[j + 1] = w / hnext

            # rotate the new column into upper-triangular form
            for i in range(j):
                hij = H[i, j]
                H[i, j] = cs[i] * hij + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * hij + cs[i] * H[i + 1, j]
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                # exhausted space with a singular projected system
                raise BreakdownError(
                    f"Arnoldi breakdown at iteration {total + 1}: "
                    "singular projected system"
                )
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]

            # current iterate and its true residual
            y = _back_substitute(H, g, j + 1)
            x_latest = x + M(y @ V[: j + 1])
            rel = float(np.linalg.norm(b - A(x_latest))) / r0_norm
            total += 1
            history.append(rel)
            if rel < cfg.rel_tol:
                status = "converged"
                cycle_done = True
                break
            if exhausted:
                # invariant Krylov space but residual still above tolerance
                raise BreakdownError(
                    f"Arnoldi breakdown at iteration {total}, "
                    f"relative residual {rel:.3e}"
                )
            if total >= cfg.max_iters:
                cycle_done = True
                break
        x = x_latest
        if (cycle_done and status == "converged") or total >= cfg.max_iters:
            break

    report = IterationReport(
        history, total, status, time.perf_counter() - t_start, r0_norm
    )
    return x, report


def _back_substitute(H, g, k):
    """Solve the leading k-by-k upper-triangular system from the Givens sweep."""
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        s = g[i] - H[i, i + 1 : k] @ y[i + 1 : k]
        y[i] = s / H[i, i]
    return y


# ----------------------------------------------------------------------------
# ILU(0)
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _ilu0_factor_kernel(n, indptr, indices, data, diag_ptr):
    """In-place IKJ ILU(0) on CSR arrays with sorted column indices.

    Returns -1 on success, otherwise the row index of a vanishing pivot.
    """
    for i in range(n):
        d = -1
        for pp in range(indptr[i], indptr[i + 1]):
            if indices[pp] == i:
                d = pp
                break
        if d == -1:
            return i
        diag_ptr[i] = d
    for i in range(n):
        row_end = indptr[i + 1]
        pp = indptr[i]
        while pp < row_end and indices[pp] < i:
            k = indices[pp]
            ukk = data[diag_ptr[k]]
            if ukk == 0.0:
                return k
            lik = data[pp] / ukk
            data[pp] = lik
            # merge row k's strict upper part with the tail of row i
            qq = diag_ptr[k] + 1
            rr = pp + 1
            k_end = indptr[k + 1]
            while qq < k_end and rr < row_end:
                ck = indices[qq]
                ci = indices[rr]
                if ck == ci:
                    data[rr] -= lik * data[qq]
                    qq += 1
                    rr += 1
                elif ck < ci:
                    qq += 1
                else:
                    rr += 1
            pp += 1
        if data[diag_ptr[i]] == 0.0:
            return i
    return -1


@njit(cache=True, nogil=True)
def _ilu0_solve_kernel(n, indptr, indices, data, diag_ptr, b, out):
    """Forward/back substitution with the packed ILU(0) factors."""
    for i in range(n):
        s = b[i]
        for pp in range(indptr[i], diag_ptr[i]):
            s -= data[pp] * out[indices[pp]]
        out[i] = s
    for i in range(n - 1, -1, -1):
        s = out[i]
        for pp in range(diag_ptr[i] + 1, indptr[i + 1]):
            s -= data[pp] * out[indices[pp]]
        out[i] = s / data[diag_ptr[i]]


class ILU0Preconditioner:
    """Zero-fill incomplete LU factors sharing the sparsity pattern of A.

    ``solve(r)`` applies ``(L U)^{-1} r`` by forward/back substitution; the
    unit-diagonal L and U are packed into one CSR copy of A's pattern.
    """

    def __init__(self, indptr, indices, data, diag_ptr):
        self._indptr = indptr
        self._indices = indices
        self._data = data
        self._diag_ptr = diag_ptr
        self.n = len(indptr) - 1

    def solve(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape[0] != self.n:
            raise DimensionMismatchError(
                f"rhs length {r.shape[0]} != matrix size {self.n}"
            )
        out = np.empty_like(r)
        _ilu0_solve_kernel(
            self.n, self._indptr, self._indices, self._data, self._diag_ptr, r, out
        )
        return out

    __call__ = solve

    def factors(self):
        """Return (L, U) as CSR matrices (L has a unit diagonal)."""
        n = self.n
        L = sp.lil_matrix((n, n))
        U = sp.lil_matrix((n, n))
        for i in range(n):
            for pp in range(self._indptr[i], self._indptr[i + 1]):
                j = self._indices[pp]
                if j < i:
                    L[i, j] = self._data[pp]
                else:
                    U[i, j] = self._data[pp]
            L[i, i] = 1.0
        return L.tocsr(), U.tocsr()


def ilu0(A):
    """ILU(0) factorization: no fill outside A's sparsity pattern.

    Requires every diagonal entry to be present in the pattern; raises
    ZeroPivotError (with the row index) when a pivot vanishes.
    """
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"matrix not square: {A.shape}")
    A.sort_indices()
    n = A.shape[0]
    data = A.data.astype(float).copy()
    diag_ptr = np.zeros(n, dtype=np.int64)
    bad = _ilu0_factor_kernel(
        n, A.indptr.astype(np.int64), A.indices.astype(np.int64), data, diag_ptr
    )
    if bad >= 0:
        raise ZeroPivotError(int(bad))
    return ILU0Preconditioner(
        A.indptr.astype(np.int64), A.indices.astype(np.int64), data, diag_ptr
    )


# ----------------------------------------------------------------------------
# preconditioned BiCGStab
# ----------------------------------------------------------------------------

def bicgstab(apply_A, b, precond=None, x0=None, cfg=None):
    """BiCGStab with an optional (right) preconditioner.

    The history records true relative residuals recomputed from the iterate.
    On a rho/omega breakdown the best iterate found so far is returned with
    ``status="breakdown"`` so callers can decide how to proceed.

    Returns
    -------
    (x, IterationReport)
    """
    cfg = cfg if cfg is not None else KrylovConfig()
    A = _as_operator(apply_A)
    M = _as_operator(precond) or (lambda v: v)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    t_start = time.perf_counter()

    r = b - A(x)
    r0_norm = float(np.linalg.norm(r))
    if r0_norm == 0.0:
        return x, IterationReport([0.0], 0, "converged", 0.0, 0.0)
    history = [1.0]
    if history[0] < cfg.rel_tol:  # degenerate tolerance >= 1
        return x, IterationReport(history, 0, "converged", 0.0, r0_norm)

    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    status = "max_iters"
    iters = 0
    for k in range(1, cfg.max_iters + 1):
        rho_new = float(rhat @ r)
        if rho_new == 0.0:
            status = "breakdown"
            break
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        phat = M(p)
        v = A(phat)
        denom = float(rhat @ v)
        if denom == 0.0:
            status = "breakdown"
            break
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / r0_norm < cfg.rel_tol:
            # half-step candidate: keep it only if the true residual confirms
            x_half = x + alpha * phat
            rel = float(np.linalg.norm(b - A(x_half))) / r0_norm
            if rel < cfg.rel_tol:
                x = x_half
                iters = k
                history.append(rel)
                status = "converged"
                break
        shat = M(s)
        t = A(shat)
        tt = float(t @ t)
        if tt == 0.0:
            status = "breakdown"
            break
        omega = float(t @ s) / tt
        if omega == 0.0:
            status = "breakdown"
            break
        x = x + alpha * phat + omega * shat
        r = s - omega * t
        iters = k
        rel = float(np.linalg.norm(b - A(x))) / r0_norm
        history.append(rel)
        if rel < cfg.rel_tol:
            status = "converged"
            break

    report = IterationReport(
        history, iters, status, time.perf_counter() - t_start, r0_norm
    )
    return x, report
