"""One-level and two-level Schwarz iterations in time, as solvers and preconditioners.

Four variants: multiplicative/additive sweeps over nonoverlapping or
overlapping time subdomains (MSN, ASN, MSO, ASO).  Each subdomain carries
its own discretization of the coupled system over its extended time span,
with the same structure as the global scheme: leapfrog rows closed by a
backward BDF2 state row at the span's last level and a forward BDF2
adjoint row at its first level.  The stencil entries that reach outside
the span become couplings: the state value just left of the span and the
adjoint value just right of it are read from the current approximation
(virtual boundary data), mirroring the forward/backward data flow of the
continuous subproblems.  After a sweep every global unknown keeps the
value from the subdomain that owns it.

A converged sweep therefore reproduces the coupled subdomain (hybrid)
solution; the global assembled system is the single-subdomain special
case.  A two-level method follows each sweep with one coarse-grid
residual correction based on the global operator.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .discretize import assemble_laplacian, time_scheme_blocks
from .errors import (
    CoarseSolveFailedError,
    MaxItersExceededError,
    RequiresTwoSubdomainsError,
    SubdomainSolveFailedError,
)
from .linalg import IterationReport, KrylovConfig, bicgstab, ilu0, lu_factor
from .partition import coarse_correct

VARIANTS = ("msn", "asn", "mso", "aso")

SUBDOMAIN_ITER_TOL = 1e-8
SUBDOMAIN_ITER_MAX = 1000


@dataclass
class SchwarzConfig:
    """Algorithm selection and iteration controls.

    ``subdomain_solver``/``coarse_solver`` default to sparse direct solves
    in 1D and ILU(0)-BiCGStab in 2D when left as None.
    """

    variant: str = "asn"
    levels: int = 1
    rel_tol: float = 1e-7
    max_iters: int = 500
    seed: int = 0
    subdomain_solver: str | None = None
    coarse_solver: str | None = None
    two_color: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.levels not in (1, 2):
            raise ValueError(f"levels must be 1 or 2, got {self.levels}")
        if self.rel_tol <= 0 or self.max_iters < 1:
            raise ValueError("rel_tol must be positive and max_iters >= 1")

    @property
    def multiplicative(self):
        return self.variant.startswith("m")

    @property
    def overlapping(self):
        return self.variant.endswith("o")


def default_overlap(variant):
    """Overlap width implied by the variant name (0 for *SN, 1 for *SO)."""
    return 1 if variant.endswith("o") else 0


def _check_compatible(cfg, part):
    if cfg.overlapping and part.overlap_steps < 1:
        raise ValueError(
            f"variant {cfg.variant} needs an overlapping partition "
            f"(overlap_steps >= 1, got {part.overlap_steps})"
        )
    if not cfg.overlapping and part.overlap_steps != 0:
        raise ValueError(
            f"variant {cfg.variant} needs a nonoverlapping partition "
            f"(overlap_steps == 0, got {part.overlap_steps})"
        )


class SubdomainSystem:
    """One subdomain's local discretization and its interface couplings.

    ``couplings`` is a sparse (n_local x global) matrix holding the stencil
    entries that reference unknowns outside the local span (the virtual
    boundary values); they are moved to the local right-hand side every
    sweep.  ``data_shift`` carries initial-condition contributions of
    closure rows whose stencil reaches back to Y^0 (short spans only);
    it applies to the physical right-hand side, not to residual systems.
    """

    def __init__(self, sid, span, indices, own_local, own_global,
                 A_local, couplings, coupling_levels, data_shift, solver):
        self.sid = sid
        self.span = span
        self.indices = indices
        self.own_local = own_local
        self.own_global = own_global
        self.A_local = A_local
        self.couplings = couplings
        self.coupling_levels = coupling_levels  # set of (field, time level)
        self.data_shift = data_shift
        self.solver = solver
        if solver == "direct":
            self._lu = lu_factor(A_local)
            self._prec = None
        elif solver == "ilu_bicgstab":
            self._lu = None
            self._prec = ilu0(A_local)
        else:
            raise ValueError(f"unknown subdomain solver {solver!r}")

    def local_rhs(self, rhs, w, physical=True):
        out = rhs[self.indices] - self.couplings @ w
        if physical and self.data_shift is not None:
            out = out + self.data_shift
        return out

    def solve(self, rhs_local):
        if self._lu is not None:
            return self._lu.solve(rhs_local)
        cfg = KrylovConfig(rel_tol=SUBDOMAIN_ITER_TOL,
                           max_iters=SUBDOMAIN_ITER_MAX)
        x, report = bicgstab(self.A_local, rhs_local, precond=self._prec, cfg=cfg)
        if not report.converged:
            raise SubdomainSolveFailedError(
                self.sid,
                f"BiCGStab {report.status} at relative residual {report.history[-1]:.3e}",
            )
        return x


def _assemble_local(system, a, b):
    """Local block matrix over levels [a, b] plus coupling/data bookkeeping."""
    grid = system.grid
    nt, S = system.n_steps, system.S
    n_levels = b - a + 1
    lap = assemble_laplacian(grid.dim, grid.M)
    TA, TD, out = time_scheme_blocks(n_levels, grid.tau)

    eye_t = sp.identity(n_levels, format="csr")
    eye_s = sp.identity(S, format="csr")
    eye_f = sp.identity(n_levels * S, format="csr")
    A = sp.kron(eye_t, lap) + sp.kron(TA, eye_s)
    D = sp.kron(eye_t, lap) + sp.kron(TD, eye_s)
    A_local = sp.bmat([[A, -eye_f / system.gamma], [eye_f, D]], format="csc")

    rows, cols, vals = [], [], []
    levels = set()
    data_shift = None
    for field, local_row, local_target, coeff in out:
        level = a + local_target
        block = local_row * S if field == "state" else (n_levels + local_row) * S
        if level == 0:
            # Y^0 reference: the leapfrog row's shift already sits in the
            # global rhs; closure rows reaching back need an explicit shift
            if not (field == "state" and local_row == 0):
                if system.y0_values is None:
                    raise ValueError("system lacks y0 samples for short subdomains")
                if data_shift is None:
                    data_shift = np.zeros(2 * n_levels * S)
                data_shift[block : block + S] -= coeff * system.y0_values
            continue
        if level == nt + 1:
            continue  # P^N = 0 terminal data
        if not 1 <= level <= nt:
            raise ValueError(
                f"subdomain span [{a}, {b}] too short for the closure stencils"
            )
        fid = 0 if field == "state" else 1
        start = fid * nt * S + (level - 1) * S
        rows.extend(range(block, block + S))
        cols.extend(range(start, start + S))
        vals.extend([coeff] * S)
        levels.add((field, level))
    couplings = sp.csr_matrix(
        (vals, (rows, cols)), shape=(2 * n_levels * S, system.size)
    )
    return A_local, couplings, levels, data_shift


def build_subdomains(system, part, cfg=None):
    """Assemble and factor the K local systems of a partition."""
    cfg = cfg if cfg is not None else SchwarzConfig()
    if part.N != system.grid.N:
        raise ValueError(f"partition N = {part.N} != grid N = {system.grid.N}")
    solver = cfg.subdomain_solver
    if solver is None:
        solver = "direct" if system.grid.dim == 1 else "ilu_bicgstab"

    S = system.S
    subdomains = []
    for sid in range(part.K):
        a, b = part.extended[sid]
        A_local, couplings, levels, data_shift = _assemble_local(system, a, b)
        indices = np.concatenate([
            system.time_range_indices("state", a, b),
            system.time_range_indices("adjoint", a, b),
        ])
        s, e = part.owned[sid]
        n_levels = b - a + 1
        own_state = np.arange((s - a) * S, (e - a + 1) * S)
        own_local = np.concatenate([own_state, n_levels * S + own_state])
        own_global = np.concatenate([
            system.time_range_indices("state", s, e),
            system.time_range_indices("adjoint", s, e),
        ])
        subdomains.append(SubdomainSystem(
            sid, (a, b), indices, own_local, own_global,
            A_local, couplings, levels, data_shift, solver,
        ))
    return subdomains


def build_hybrid_system(system, part):
    """Stack the local systems of a nonoverlapping partition into (L_dd, b_dd).

    The converged Schwarz iterate solves this coupled system exactly; it
    differs from the assembled global system only in the closure rows at
    the interior interfaces (both are second-order discretizations).
    """
    if part.overlap_steps != 0:
        raise ValueError("hybrid stacking is defined for nonoverlapping partitions")
    rows, cols, vals = [], [], []
    b_dd = system.b.copy()
    for a, b in part.extended:
        A_local, couplings, _, data_shift = _assemble_local(system, a, b)
        ix = np.concatenate([
            system.time_range_indices("state", a, b),
            system.time_range_indices("adjoint", a, b),
        ])
        local = A_local.tocoo()
        rows.extend(ix[local.row])
        cols.extend(ix[local.col])
        vals.extend(local.data)
        coup = couplings.tocoo()
        rows.extend(ix[coup.row])
        cols.extend(coup.col)
        vals.extend(coup.data)
        if data_shift is not None:
            b_dd[ix] += data_shift
    L_dd = sp.csr_matrix((vals, (rows, cols)),
                         shape=(system.size, system.size))
    return L_dd, b_dd


def sweep_additive(subdomains, rhs, w, threads=1, physical=True):
    """One additive sweep: all subdomains read the same input approximation.

    Local solves are independent (order-free) and may run concurrently;
    the result takes each unknown from its owning subdomain.
    """
    out = np.empty_like(w)

    def run(sd):
        return sd, sd.solve(sd.local_rhs(rhs, w, physical))

    if threads > 1 and len(subdomains) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, subdomains))
    else:
        results = [run(sd) for sd in subdomains]
    for sd, x_local in results:
        out[sd.own_global] = x_local[sd.own_local]
    return out


def sweep_multiplicative(subdomains, rhs, w, two_color=False, physical=True):
    """One multiplicative sweep: subdomains solved left to right.

    Each solve reads the latest available neighbor values.  The optional
    two-color schedule solves even-indexed subdomains against the incoming
    iterate, then odd-indexed ones against the updated iterate.
    """
    w = w.copy()
    if two_color:
        groups = (subdomains[0::2], subdomains[1::2])
    else:
        groups = tuple((sd,) for sd in subdomains)
    for group in groups:
        solved = [(sd, sd.solve(sd.local_rhs(rhs, w, physical))) for sd in group]
        for sd, x_local in solved:
            w[sd.own_global] = x_local[sd.own_local]
    return w


def _one_iteration(system, subdomains, coarse, cfg, rhs, w, physical=True):
    if cfg.multiplicative:
        w = sweep_multiplicative(subdomains, rhs, w, two_color=cfg.two_color,
                                 physical=physical)
    else:
        w = sweep_additive(subdomains, rhs, w, threads=cfg.threads,
                           physical=physical)
    if cfg.levels == 2:
        try:
            w = coarse_correct(system, coarse, w, rhs=rhs)
        except CoarseSolveFailedError:
            pass  # keep the one-level iterate and carry on
    return w


def solve_stationary(system, part, coarse=None, cfg=None, subdomains=None):
    """Run the configured Schwarz variant as a stand-alone iterative solver.

    Starts from a seeded uniform random guess and stops when the global
    relative residual drops below ``cfg.rel_tol``.  Raises
    MaxItersExceededError (carrying the report and best iterate) if the
    iteration cap is reached first.  ``subdomains`` may pass in prebuilt
    local systems to reuse factorizations across runs.
    """
    cfg = cfg if cfg is not None else SchwarzConfig()
    _check_compatible(cfg, part)
    if cfg.levels == 2 and coarse is None:
        raise ValueError("levels=2 requires a coarse space")
    t_start = time.perf_counter()
    if subdomains is None:
        subdomains = build_subdomains(system, part, cfg)

    rng = np.random.default_rng(cfg.seed)
    w = rng.random(system.size)
    r0_norm = float(np.linalg.norm(system.b - system.L @ w))
    history = [1.0]
    if r0_norm == 0.0:
        report = IterationReport([0.0], 0, "converged",
                                 time.perf_counter() - t_start, 0.0, cfg.seed)
        return w, report

    for k in range(1, cfg.max_iters + 1):
        w = _one_iteration(system, subdomains, coarse, cfg, system.b, w)
        rel = float(np.linalg.norm(system.b - system.L @ w)) / r0_norm
        history.append(rel)
        if rel < cfg.rel_tol:
            report = IterationReport(history, k, "converged",
                                     time.perf_counter() - t_start,
                                     r0_norm, cfg.seed)
            return w, report

    report = IterationReport(history, cfg.max_iters, "max_iters",
                             time.perf_counter() - t_start, r0_norm, cfg.seed)
    raise MaxItersExceededError(report, w)


class SchwarzPreconditioner:
    """One stationary iteration applied to the residual system L z = r from z = 0.

    Residual systems carry homogeneous initial/terminal data and the sweep
    starts from zero, so the application is a fixed linear map in r (local
    solves plus the optional coarse correction), as right-preconditioned
    GMRES requires; the additive variants reduce to fully independent
    local solves.
    """

    def __init__(self, system, part, coarse=None, cfg=None):
        cfg = cfg if cfg is not None else SchwarzConfig()
        _check_compatible(cfg, part)
        if cfg.levels == 2 and coarse is None:
            raise ValueError("levels=2 requires a coarse space")
        self.system = system
        self.coarse = coarse
        self.cfg = cfg
        self.subdomains = build_subdomains(system, part, cfg)

    def __call__(self, r):
        z = np.zeros_like(r)
        return _one_iteration(self.system, self.subdomains, self.coarse,
                              self.cfg, r, z, physical=False)

    apply = __call__


def apply_preconditioner(system, part, coarse, cfg, r):
    """Convenience wrapper; prefer a SchwarzPreconditioner instance in loops."""
    return SchwarzPreconditioner(system, part, coarse, cfg)(r)


@dataclass
class ProbeResult:
    """Interface-error decay diagnostics for the two-subdomain split."""

    variant: str
    m: np.ndarray                 # decay quantity per iteration (incl. k=0)
    state_interface_err: np.ndarray
    adjoint_interface_err: np.ndarray
    report: IterationReport


def monotonicity_probe(system, part, cfg=None, reference=None):
    """Track the interface-error decay quantities of the K=2 nonoverlapping split.

    Per iteration (including the initial guess) the probe records
    gamma*||e1(T1)||^2 + ||w2(T1)||^2 for ASN and ||w2(T1)||^2 for MSN,
    where e1 is the first subdomain's state error at its last owned level
    and w2 the second subdomain's adjoint error at its first owned level.
    Errors are measured against the direct solve of the stacked
    two-subdomain (hybrid) system, the exact limit of these iterations;
    the iteration stops when its residual against that system falls below
    ``cfg.rel_tol``.
    """
    cfg = cfg if cfg is not None else SchwarzConfig(variant="asn", rel_tol=1e-12)
    if part.K != 2 or part.overlap_steps != 0:
        raise RequiresTwoSubdomainsError(
            f"probe needs K=2 nonoverlapping, got K={part.K}, "
            f"overlap={part.overlap_steps}"
        )
    if cfg.variant not in ("asn", "msn"):
        raise ValueError("probe is defined for the nonoverlapping variants only")
    if cfg.levels != 1:
        raise ValueError("probe runs the one-level iteration")
    probe_cfg = SchwarzConfig(
        variant=cfg.variant, levels=1, rel_tol=cfg.rel_tol,
        max_iters=cfg.max_iters, seed=cfg.seed, subdomain_solver="direct",
    )
    L_dd, b_dd = build_hybrid_system(system, part)
    if reference is None:
        reference = lu_factor(L_dd).solve(b_dd)
    subdomains = build_subdomains(system, part, probe_cfg)

    interface = part.owned[0][1]
    idx_y1 = system.time_block("state", interface)
    idx_p2 = system.time_block("adjoint", interface + 1)
    gamma = system.gamma

    def measure(w):
        e1 = float(np.linalg.norm(w[idx_y1] - reference[idx_y1]))
        w2 = float(np.linalg.norm(w[idx_p2] - reference[idx_p2]))
        if probe_cfg.variant == "asn":
            return gamma * e1**2 + w2**2, e1, w2
        return w2**2, e1, w2

    t_start = time.perf_counter()
    rng = np.random.default_rng(probe_cfg.seed)
    w = rng.random(system.size)
    r0_norm = float(np.linalg.norm(b_dd - L_dd @ w))
    history = [1.0]
    m_hist, e_hist, w_hist = [], [], []
    m0, e0, w0 = measure(w)
    m_hist.append(m0)
    e_hist.append(e0)
    w_hist.append(w0)

    status = "max_iters"
    iters = probe_cfg.max_iters
    for k in range(1, probe_cfg.max_iters + 1):
        w = _one_iteration(system, subdomains, None, probe_cfg, system.b, w)
        mk, ek, wk = measure(w)
        m_hist.append(mk)
        e_hist.append(ek)
        w_hist.append(wk)
        rel = float(np.linalg.norm(b_dd - L_dd @ w)) / r0_norm
        history.append(rel)
        if rel < probe_cfg.rel_tol:
            status = "converged"
            iters = k
            break

    report = IterationReport(history, iters, status,
                             time.perf_counter() - t_start, r0_norm,
                             probe_cfg.seed)
    return ProbeResult(probe_cfg.variant, np.array(m_hist),
                       np.array(e_hist), np.array(w_hist), report)


def thread_count():
    """Worker cap for additive sweeps, from the TIMEDD_THREADS environment variable."""
    raw = os.environ.get("TIMEDD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
