import numpy as np
import pytest
import scipy.sparse as sp

from timedd.discretize import Grid, assemble_system, assemble_laplacian
from timedd.errors import (
    BreakdownError,
    DimensionMismatchError,
    SingularMatrixError,
    ZeroPivotError,
)
from timedd.linalg import KrylovConfig, bicgstab, gmres, ilu0, lu_factor
from timedd.partition import build_coarse_space, partition_time
from timedd.problems import example1
from timedd.schwarz import SchwarzConfig, SchwarzPreconditioner


def dirichlet_laplacian_1d(M):
    return assemble_laplacian(1, M)


# ---------------------------------------------------------------- lu_factor

def test_lu_identity():
    A = sp.identity(5, format="csr")
    b = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert np.allclose(lu_factor(A).solve(b), b, rtol=0, atol=1e-14)


def test_lu_matches_dense_gaussian_elimination():
    A = dirichlet_laplacian_1d(5)
    b = np.ones(4)
    x = lu_factor(A).solve(b)
    x_dense = np.linalg.solve(A.toarray(), b)  # independent dense oracle
    assert np.linalg.norm(x - x_dense) <= 1e-12 * np.linalg.norm(x_dense)


def test_lu_rank_deficient_raises():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMatrixError):
        lu_factor(A)


def test_lu_round_trip_random():
    rng = np.random.default_rng(3)
    A = dirichlet_laplacian_1d(12)
    lu = lu_factor(A)
    for _ in range(4):
        x = rng.standard_normal(A.shape[0])
        x_back = lu.solve(A @ x)
        assert np.linalg.norm(x_back - x) <= 1e-10 * np.linalg.norm(x)


def test_lu_shape_errors():
    A = sp.csr_matrix(np.ones((3, 2)))
    with pytest.raises(DimensionMismatchError):
        lu_factor(A)
    lu = lu_factor(sp.identity(4, format="csr"))
    with pytest.raises(DimensionMismatchError):
        lu.solve(np.ones(5))


# ---------------------------------------------------------------- gmres

def test_gmres_identity_one_iteration():
    A = sp.identity(6, format="csr")
    b = np.arange(1.0, 7.0)
    x, report = gmres(A, b)
    assert report.converged and report.iterations == 1
    assert np.allclose(x, b, atol=1e-12)


def test_gmres_diagonal_closed_form():
    A = sp.diags(np.arange(1.0, 11.0)).tocsr()
    b = np.ones(10)
    x, report = gmres(A, b, cfg=KrylovConfig(rel_tol=1e-10))
    assert report.converged
    assert np.abs(x - 1.0 / np.arange(1.0, 11.0)).max() <= 1e-9


def test_gmres_history_properties():
    rng = np.random.default_rng(7)
    A = sp.diags(np.linspace(1.0, 30.0, 40)).tocsr() + sp.random(
        40, 40, density=0.1, random_state=5
    ) * 0.1
    b = rng.standard_normal(40)
    x, report = gmres(A, b, cfg=KrylovConfig(rel_tol=1e-9))
    assert report.converged
    assert report.history[0] == 1.0
    # non-increasing true residuals (minimization property)
    h = report.history
    assert all(h[i + 1] <= h[i] * (1 + 1e-12) for i in range(len(h) - 1))
    # last entry matches a from-scratch recomputation
    rel = np.linalg.norm(b - A @ x) / report.r0_norm
    assert abs(rel - h[-1]) <= 1e-10 * max(rel, 1e-300)


def test_gmres_restarted():
    A = sp.diags(np.arange(1.0, 11.0)).tocsr()
    b = np.ones(10)
    x, report = gmres(A, b, cfg=KrylovConfig(rel_tol=1e-10, restart=4))
    assert report.converged
    assert np.abs(x - 1.0 / np.arange(1.0, 11.0)).max() <= 1e-8


def test_gmres_max_iters_status():
    A = sp.diags(np.linspace(1.0, 1e4, 200)).tocsr()
    b = np.ones(200)
    x, report = gmres(A, b, cfg=KrylovConfig(rel_tol=1e-14, max_iters=3))
    assert report.status == "max_iters"
    assert report.iterations == 3
    assert len(report.history) == 4


def test_gmres_happy_breakdown_is_convergence():
    # Krylov space from b = e1 is invariant under an upper-triangular A and
    # already contains the solution: the zero Arnoldi vector means exactness
    A = sp.csr_matrix(np.array([[1.0, 1.0], [0.0, 1.0]]))
    b = np.array([1.0, 0.0])
    x, report = gmres(A, b, cfg=KrylovConfig(rel_tol=1e-12))
    assert report.converged


def test_gmres_breakdown_without_convergence_raises():
    # singular projector: the invariant Krylov space cannot reach tolerance
    P = sp.csr_matrix(np.array([[1.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(BreakdownError):
        gmres(P, np.array([1.0, 0.0]), cfg=KrylovConfig(rel_tol=1e-13))


def test_gmres_with_schwarz_preconditioner_matches_direct():
    case = example1()
    grid = Grid(1, 16, 65, case.T)
    system = assemble_system(case.problem_spec(), grid)
    part = partition_time(65, 4, 0)
    precond = SchwarzPreconditioner(system, part, cfg=SchwarzConfig(variant="asn"))
    rng = np.random.default_rng(0)
    x0 = rng.random(system.size)
    x, report = gmres(system.L, system.b, x0=x0, apply_M=precond,
                      cfg=KrylovConfig(rel_tol=1e-10))
    assert report.converged
    h = report.history
    assert all(h[i + 1] <= h[i] * (1 + 1e-12) for i in range(len(h) - 1))
    x_direct = lu_factor(system.L).solve(system.b)
    assert np.linalg.norm(x - x_direct) <= 1e-8 * np.linalg.norm(x_direct)


# ---------------------------------------------------------------- ilu0

def test_ilu0_diagonal_exact():
    d = np.array([2.0, -3.0, 5.0, 0.5])
    A = sp.diags(d).tocsr()
    prec = ilu0(A)
    r = np.array([1.0, 1.0, 1.0, 1.0])
    assert np.allclose(prec.solve(r), r / d, atol=1e-14)


def test_ilu0_tridiagonal_equals_full_lu():
    # tridiagonal factorization has no fill, so ILU(0) is the exact LU
    A = dirichlet_laplacian_1d(9)
    prec = ilu0(A)
    lu = lu_factor(A)
    rng = np.random.default_rng(11)
    for _ in range(3):
        b = rng.standard_normal(A.shape[0])
        assert np.linalg.norm(prec.solve(b) - lu.solve(b)) <= 1e-10 * np.linalg.norm(b)


def test_ilu0_factors_share_pattern():
    A = dirichlet_laplacian_1d(6)
    L, U = ilu0(A).factors()
    prod = (L @ U).toarray()
    assert np.allclose(prod, A.toarray(), atol=1e-12)  # no fill for tridiagonal
    # strict pattern containment
    A_pattern = set(zip(*A.nonzero()))
    for i, j in zip(*L.nonzero()):
        assert i == j or (i, j) in A_pattern
    for i, j in zip(*U.nonzero()):
        assert (i, j) in A_pattern


def test_ilu0_on_coarse_matrix():
    case = example1()
    grid = Grid(1, 8, 17, case.T)
    system = assemble_system(case.problem_spec(), grid)
    part = partition_time(17, 4, 0)
    coarse = build_coarse_space(part, system, solver="direct")
    prec = ilu0(coarse.Lc)  # must factor without a zero pivot
    r = np.ones(coarse.Lc.shape[0])
    assert np.all(np.isfinite(prec.solve(r)))


def test_ilu0_zero_pivot_reports_row():
    A = sp.csr_matrix(np.array([[1.0, 1.0, 0.0],
                                [0.0, 0.0, 1.0],
                                [0.0, 1.0, 1.0]]))
    with pytest.raises(ZeroPivotError) as err:
        ilu0(A)
    assert err.value.row == 1


# ---------------------------------------------------------------- bicgstab

def test_bicgstab_identity():
    A = sp.identity(7, format="csr")
    b = np.arange(7.0)
    x, report = bicgstab(A, b)
    assert report.converged and report.iterations == 1
    assert np.allclose(x, b, atol=1e-12)


def test_bicgstab_spd_tridiagonal_vs_direct():
    A = -dirichlet_laplacian_1d(40)  # SPD
    rng = np.random.default_rng(2)
    b = rng.standard_normal(A.shape[0])
    x, report = bicgstab(A, b, precond=ilu0(A),
                         cfg=KrylovConfig(rel_tol=1e-10, max_iters=500))
    assert report.converged
    x_direct = lu_factor(A).solve(b)
    assert np.linalg.norm(x - x_direct) <= 1e-8 * np.linalg.norm(x_direct)
    # final entry matches recomputation
    rel = np.linalg.norm(b - A @ x) / report.r0_norm
    assert abs(rel - report.history[-1]) <= 1e-10 * max(rel, 1e-300)


def test_bicgstab_coarse_solve_settings():
    # coarse-grid defaults: tolerance 1e-4 within 200 iterations
    case = example1()
    grid = Grid(1, 8, 17, case.T)
    system = assemble_system(case.problem_spec(), grid)
    part = partition_time(17, 4, 0)
    coarse = build_coarse_space(part, system, solver="direct")
    Lc = coarse.Lc
    rng = np.random.default_rng(4)
    r = rng.standard_normal(Lc.shape[0])
    x, report = bicgstab(Lc, r, precond=ilu0(Lc),
                         cfg=KrylovConfig(rel_tol=1e-4, max_iters=200))
    assert report.converged
    assert report.iterations <= 200


def test_bicgstab_zero_rhs():
    A = sp.identity(4, format="csr")
    x, report = bicgstab(A, np.zeros(4))
    assert report.converged and report.iterations == 0
    assert np.all(x == 0)


def test_krylov_config_validation():
    with pytest.raises(ValueError):
        KrylovConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        KrylovConfig(max_iters=0)
