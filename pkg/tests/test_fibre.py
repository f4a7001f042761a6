import numpy as np
import pytest

from nonlocal_homog.errors import AssemblyError, UsageError
from nonlocal_homog.fibre import (FibreAssembler, coercivity_constant, hermitian_min_eig,
                                  symbol_oracle_mu1)
from nonlocal_homog.grid import CellGrid, operator_norm
from nonlocal_homog.kernel import MuSpec, TrigTerm, gaussian, moment, select_truncation

MU1 = MuSpec("constant", value=1.0)
MU_TRIG = MuSpec("exp-trig", terms=(TrigTerm(0.4, "cos", (2,), (-1,)),))


def assembler(kspec=gaussian([0.3], 0.09), mspec=MU_TRIG, n=48):
    return FibreAssembler(CellGrid(kspec.dim, n), kspec, mspec, select_truncation(kspec, 1e-13))


def test_constants_in_kernel_at_zero():
    A = assembler().fibre(np.zeros(1)).A
    assert np.abs(A @ np.ones(A.shape[0])).max() <= 1e-14


@pytest.mark.parametrize("xi", [0.0, 0.4, -2.5, np.pi])
def test_symbol_oracle_for_constant_mu(xi):
    asm = assembler(mspec=MU1, n=32)
    A = asm.fibre([xi]).A
    assert operator_norm(A - symbol_oracle_mu1(asm.grid, asm.kspec, [xi])) <= 1e-12 * operator_norm(A)


def test_symbol_oracle_2d():
    kspec = gaussian([0.2, -0.1], [[0.05, 0.01], [0.01, 0.03]])
    asm = FibreAssembler(CellGrid(2, 16), kspec, MuSpec("constant", value=1.0), select_truncation(kspec, 1e-13))
    xi = np.array([0.5, -1.1])
    A = asm.fibre(xi).A
    assert operator_norm(A - symbol_oracle_mu1(asm.grid, kspec, xi)) <= 1e-12 * operator_norm(A)


def test_symbol_oracle_rejects_weighted_mu():
    with pytest.raises(UsageError):
        symbol_oracle_mu1(CellGrid(1, 8), gaussian([0.0], 0.1), [0.0], MU_TRIG)


def test_derivatives_match_finite_differences():
    asm = assembler()
    ders = asm.derivatives()
    h = 1e-4
    Ap, Am, A0 = (asm.fibre([s]).A for s in (h, -h, 0.0))
    first = (Ap - Am) / (2 * h)
    second = (Ap - 2 * A0 + Am) / h**2
    assert np.abs(first - ders.first[0]).max() <= 1e-7
    assert np.abs(second - ders.second[0][0]).max() <= 1e-5


def test_potential_within_coefficient_bounds():
    asm = assembler()
    p = asm.potential
    assert asm.mu_minus * asm.mass <= p.min() and p.max() <= asm.mu_plus * asm.mass


def test_lipschitz_in_quasimomentum():
    asm = assembler()
    M1 = moment(asm.kspec, 1)
    for a, b in [(0.1, 0.3), (-1.0, 2.0), (3.0, -3.0)]:
        diff = operator_norm(asm.fibre([a]).A - asm.fibre([b]).A)
        assert diff <= asm.mu_plus * M1 * abs(a - b) * (1 + 1e-10)


def test_wrong_quasimomentum_shape():
    with pytest.raises(UsageError):
        assembler().fibre([0.1, 0.2])


def test_unresolved_kernel_raises_assembly_error():
    # a kernel far narrower than the grid spacing cannot satisfy the potential bounds
    kspec = gaussian([0.013], 1e-6)
    with pytest.raises(AssemblyError):
        FibreAssembler(CellGrid(1, 8), kspec, MU_TRIG, select_truncation(kspec, 1e-12)).potential


def test_accretivity_of_weighted_fibres():
    asm = assembler()
    from nonlocal_homog.stationary import build_G, derive_q0, solve_stationary
    B0, p = asm.fibre([0.0]).B.real, asm.potential
    psi, gap, lam = solve_stationary(build_G(B0, p), asm.grid)
    q0 = derive_q0(psi, p, asm.grid, gap, lam).q0
    for xi in (0.0, 0.3, 1.7, -3.0):
        A = asm.fibre([xi]).A
        assert hermitian_min_eig(q0[:, None] * A) >= -1e-12 * operator_norm(A)


def test_coercivity_constant_gaussian():
    est = coercivity_constant(gaussian([0.3], 0.09))
    # smallest eigenvalue of the second moment matrix: sigma^2 + c^2
    assert est.M_a == pytest.approx(0.18, rel=1e-14)
    assert 0 < est.C_a <= est.M_a / 4
    assert est.r_a > 0
    # A_hat(y) >= C_r on |y| >= r(a) at sampled points
    ys = np.linspace(est.r_a, est.search_radius, 2000)[:, None]
    assert est.A_hat(ys).min() >= est.C_r * (1 - 1e-9)
    # E(xi) <= M(a)/4 for |xi| <= r(a)
    xs = np.linspace(-est.r_a, est.r_a, 101)[:, None]
    assert est.E(xs).max() <= est.M_a / 4 * (1 + 1e-12)


def test_coercivity_2d_uses_smallest_eigenvalue():
    kspec = gaussian([0.3, 0.0], [[0.04, 0.0], [0.0, 0.09]])
    est = coercivity_constant(kspec)
    assert est.M_a == pytest.approx(0.09, rel=1e-12)
