"""Space-time assembly of the coupled forward-backward optimality system.

The unknowns are the state Y and adjoint P at the interior time levels
t_1..t_{N-1} on the interior spatial nodes; Y^0 (initial condition) and
P^N (terminal condition, zero) are data and appear only in the right-hand
side.  Time stepping is the second-order leapfrog scheme with one-sided
BDF2 closures at the last state row and the first adjoint row.

Global unknown ordering: state block first, then adjoint block; inside a
block, time-major (all spatial nodes of t_1, then t_2, ...).  This keeps
each time level a contiguous slice per field.
"""

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, InvalidGridError

FIELDS = ("state", "adjoint")


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid: h = 1/M per axis, tau = T/N."""

    dim: int
    M: int
    N: int
    T: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise InvalidGridError(f"dim must be 1 or 2, got {self.dim}")
        if self.M < 3:
            raise InvalidGridError(f"M >= 3 required, got {self.M}")
        if self.N < 5:
            raise InvalidGridError(
                f"N >= 5 required (BDF2 closures span three interior levels), got {self.N}"
            )
        if self.T <= 0:
            raise InvalidGridError("T must be positive")

    @property
    def h(self):
        return 1.0 / self.M

    @property
    def tau(self):
        return self.T / self.N

    @property
    def n_steps(self):
        """Number of interior time levels (t_1..t_{N-1})."""
        return self.N - 1

    @property
    def interior_count(self):
        """Interior spatial nodes per time level."""
        return (self.M - 1) ** self.dim

    def times(self):
        """Interior time levels t_1..t_{N-1}."""
        return np.arange(1, self.N) * self.tau

    def interior_points(self):
        """Interior node coordinates, shape (S, dim), lexicographic order."""
        axis = np.arange(1, self.M) * self.h
        if self.dim == 1:
            return axis.reshape(-1, 1)
        x1, x2 = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([x1.ravel(), x2.ravel()])


@dataclass(frozen=True)
class ProblemSpec:
    """Continuous problem data.

    ``f``, ``g`` take an (npoints, dim) coordinate array and a scalar time;
    ``y0`` takes the coordinate array only.  ``exact`` optionally holds the
    pair (y, p) with the same calling convention as f/g.
    """

    dim: int
    T: float
    gamma: float
    f: Callable
    g: Callable
    y0: Callable
    exact: Optional[tuple] = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def _field_id(field):
    if field in (0, 1):
        return field
    try:
        return FIELDS.index(field)
    except ValueError:
        raise KeyError(f"unknown field {field!r}, expected 'state' or 'adjoint'")


class BlockSystem:
    """Assembled sparse operator L, right-hand side b, and the index maps.

    ``y0_values`` keeps the sampled initial state (its 1/(2 tau) shift is
    already folded into b) for solvers whose local closures reference Y^0.
    """

    def __init__(self, L, b, grid, gamma, y0_values=None):
        self.L = L
        self.b = b
        self.grid = grid
        self.gamma = gamma
        self.y0_values = y0_values
        self.S = grid.interior_count
        self.n_steps = grid.n_steps
        self.size = 2 * self.n_steps * self.S

    def index(self, field, n, node):
        """Global unknown index of (field, time level n in 1..N-1, spatial node)."""
        if not 1 <= n <= self.n_steps:
            raise IndexError(f"time level {n} outside 1..{self.n_steps}")
        if not 0 <= node < self.S:
            raise IndexError(f"spatial node {node} outside 0..{self.S - 1}")
        return _field_id(field) * self.n_steps * self.S + (n - 1) * self.S + node

    def time_block(self, field, n):
        """Slice of all spatial nodes of one field at time level n."""
        start = self.index(field, n, 0)
        return slice(start, start + self.S)

    def field_slice(self, field):
        half = self.n_steps * self.S
        f = _field_id(field)
        return slice(f * half, (f + 1) * half)

    def time_range_indices(self, field, n_first, n_last):
        """Contiguous global indices of one field over time levels [n_first, n_last]."""
        lo = self.index(field, n_first, 0)
        hi = self.index(field, n_last, 0) + self.S
        return np.arange(lo, hi)


def assemble_laplacian(dim, M):
    """Discrete Laplacian on interior nodes, homogeneous Dirichlet eliminated.

    1D: (1, -2, 1)/h^2 stencil; 2D: 5-point stencil via Kronecker sums.
    """
    m = M - 1
    h2 = (1.0 / M) ** 2
    main = np.full(m, -2.0)
    off = np.ones(m - 1)
    L1 = sp.diags([off, main, off], [-1, 0, 1], format="csr") / h2
    if dim == 1:
        return L1.tocsr()
    eye = sp.identity(m, format="csr")
    return (sp.kron(eye, L1) + sp.kron(L1, eye)).tocsr()


def time_scheme_blocks(n_levels, tau):
    """Time-difference couplings for a span of consecutive unknown levels.

    State rows use the leapfrog stencil with a backward BDF2 closure at the
    last level of the span; adjoint rows use leapfrog with a forward BDF2
    closure at the first level.  The full system is the span 1..N-1; a
    subdomain is a shorter span with the same structure.

    Returns (TA, TD, out_of_span) where ``out_of_span`` lists stencil
    entries reaching outside the span as (field, local_row, local_target,
    coeff) with local_target < 0 or >= n_levels.
    """
    if n_levels < 2:
        raise InvalidGridError("a scheme span needs at least two time levels")
    c = 1.0 / (2.0 * tau)
    TA = sp.lil_matrix((n_levels, n_levels))
    TD = sp.lil_matrix((n_levels, n_levels))
    out = []
    for r in range(n_levels):
        if r == n_levels - 1:  # backward BDF2 closes the state span
            TA[r, r] = -3 * c
            for dr, co in ((-1, 4 * c), (-2, -c)):
                if r + dr >= 0:
                    TA[r, r + dr] = co
                else:
                    out.append(("state", r, r + dr, co))
        else:  # leapfrog
            TA[r, r + 1] = -c
            if r >= 1:
                TA[r, r - 1] = c
            else:
                out.append(("state", r, r - 1, c))
        if r == 0:  # forward BDF2 closes the adjoint span
            TD[0, 0] = -3 * c
            for dr, co in ((1, 4 * c), (2, -c)):
                if dr <= n_levels - 1:
                    TD[0, dr] = co
                else:
                    out.append(("adjoint", 0, dr, co))
        else:  # leapfrog
            TD[r, r - 1] = -c
            if r + 1 <= n_levels - 1:
                TD[r, r + 1] = c
            else:
                out.append(("adjoint", r, r + 1, c))
    return TA.tocsr(), TD.tocsr(), out


def assemble_system(spec, grid):
    """Assemble L w = b for the fully coupled state/adjoint system.

    The state rows encode -(Y^{n+1}-Y^{n-1})/2tau + Lap Y^n - P^n/gamma = F^n
    and the adjoint rows (P^{n+1}-P^{n-1})/2tau + Lap P^n + Y^n = G^n, with
    the BDF2 closures in the last state row and first adjoint row.  Y^0 and
    P^N enter only through b.
    """
    if spec.dim != grid.dim:
        raise InvalidGridError(
            f"problem dim {spec.dim} != grid dim {grid.dim}"
        )
    nt = grid.n_steps
    S = grid.interior_count
    lap = assemble_laplacian(grid.dim, grid.M)
    TA, TD, out = time_scheme_blocks(nt, grid.tau)
    # the only stencil entries leaving the span 1..N-1 are the Y^0 and P^N
    # data references of the first state and last adjoint leapfrog rows
    assert {(f, lr) for f, lr, _, _ in out} == {("state", 0), ("adjoint", nt - 1)}

    eye_t = sp.identity(nt, format="csr")
    eye_s = sp.identity(S, format="csr")
    eye_full = sp.identity(nt * S, format="csr")
    A = sp.kron(eye_t, lap) + sp.kron(TA, eye_s)
    D = sp.kron(eye_t, lap) + sp.kron(TD, eye_s)
    L = sp.bmat(
        [[A, -eye_full / spec.gamma], [eye_full, D]], format="csr"
    )
    L.sort_indices()

    pts = grid.interior_points()
    y0_values = np.asarray(spec.y0(pts), dtype=float)
    b = np.empty(2 * nt * S)
    half = nt * S
    for r, t in enumerate(grid.times()):
        b[r * S : (r + 1) * S] = spec.f(pts, t)
        b[half + r * S : half + (r + 1) * S] = spec.g(pts, t)
    # initial condition shift: f^1 - y0/(2 tau); P^N = 0 adds nothing to g^{N-1}
    b[0:S] -= y0_values / (2.0 * grid.tau)

    if not np.all(np.isfinite(L.data)):
        raise ValueError("assembled matrix contains non-finite entries")
    if not np.all(np.isfinite(b)):
        raise ValueError("assembled right-hand side contains non-finite entries")
    return BlockSystem(L, b, grid, spec.gamma, y0_values=y0_values)


def residual(system, w):
    """b - L w."""
    w = np.asarray(w, dtype=float)
    if w.shape[0] != system.size:
        raise DimensionMismatchError(
            f"iterate length {w.shape[0]} != system size {system.size}"
        )
    return system.b - system.L @ w


def extract_control(system, w):
    """Optimal control u = p/gamma over all adjoint unknowns."""
    w = np.asarray(w, dtype=float)
    if w.shape[0] != system.size:
        raise DimensionMismatchError(
            f"iterate length {w.shape[0]} != system size {system.size}"
        )
    return w[system.field_slice("adjoint")] / system.gamma


def dump_system(system, path):
    """Write a debug dump: one JSON header line, then 'row col value' triplets."""
    coo = system.L.tocoo()
    header = {
        "dim": system.grid.dim,
        "M": system.grid.M,
        "N": system.grid.N,
        "gamma": system.gamma,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
