import numpy as np
import pytest
import scipy.linalg as sla

from nonlocal_homog.errors import NumericError
from nonlocal_homog.fibre import FibreAssembler
from nonlocal_homog.grid import CellGrid, integral
from nonlocal_homog.kernel import MuSpec, TrigPoly, TrigTerm, gaussian, select_truncation
from nonlocal_homog.stationary import build_G, build_projectors, derive_q0, solve_stationary

from conftest import workspace


def stationary_for(kspec, mspec, n):
    grid = CellGrid(kspec.dim, n)
    asm = FibreAssembler(grid, kspec, mspec, select_truncation(kspec, 1e-13))
    fib = asm.fibre(np.zeros(grid.d))
    psi, gap, lam = solve_stationary(build_G(fib.B.real, fib.p), grid)
    return grid, fib.A.real, derive_q0(psi, fib.p, grid, gap, lam, A0=fib.A.real)


def test_separable_mu_with_even_kernel_has_closed_form_density():
    # mu(x, y) = f(x) g(y) and a even: A^* (g / f) = 0 exactly, also on the grid
    f = TrigPoly(1.0, (TrigTerm(0.3, "sin", (1,)),))
    g = TrigPoly(1.0, (TrigTerm(0.5, "cos", (2,)),))
    grid, A0, st = stationary_for(gaussian([0.0], 0.02), MuSpec("separable-trig", f=f, g=g), 64)
    x = grid.nodes
    ref = g(x) / f(x)
    ref = ref / integral(ref, grid).real
    assert np.abs(st.q0 - ref).max() <= 1e-10


def test_symmetric_mu_with_even_kernel_gives_uniform_density():
    mspec = MuSpec("exp-trig", terms=(TrigTerm(0.5, "cos", (1,), (1,)),))
    _, _, st = stationary_for(gaussian([0.0], 0.02), mspec, 64)
    assert np.abs(st.q0 - 1).max() <= 1e-10


def test_density_matches_null_space_oracle():
    mspec = MuSpec("exp-trig", terms=(TrigTerm(0.4, "cos", (2,), (-1,)),))
    grid, A0, st = stationary_for(gaussian([0.3], 0.09), mspec, 64)
    ns = sla.null_space(A0.T, rcond=1e-10)
    assert ns.shape[1] == 1
    ref = ns[:, 0] / integral(ns[:, 0], grid)
    assert np.abs(st.q0 - ref).max() <= 1e-9
    assert st.q_minus > 0 and st.gap > 1e-3
    assert st.residual <= 1e-12


@pytest.mark.parametrize("name", ["exp-trig-1d", "default-1d", "box-separable-1d"])
def test_density_converges_under_refinement(name):
    coarse, fine = workspace(name, n=64), workspace(name, n=128)
    from nonlocal_homog.grid import fourier_resample
    q = fourier_resample(coarse.stationary.q0, coarse.grid, fine.grid)
    assert np.abs(q - fine.stationary.q0).max() <= 1e-3


def test_projector_identities(ws_default):
    pr, q0 = ws_default.projectors, ws_default.stationary.q0
    assert np.allclose(pr.P @ pr.P, pr.P, atol=1e-13)
    assert np.allclose(pr.P @ pr.Q, 0, atol=1e-13)
    assert np.allclose(pr.P @ np.ones(len(q0)), 1, atol=1e-13)
    assert np.allclose(ws_default.A0 @ pr.P, 0, atol=1e-12)
    assert np.allclose(pr.P @ ws_default.A0, 0, atol=1e-12)


def test_projector_check_rejects_non_stationary_density(ws_default):
    grid = ws_default.grid
    q = 1 + 0.3 * np.cos(2 * np.pi * grid.nodes[:, 0])
    with pytest.raises(NumericError):
        build_projectors(q, grid, ws_default.A0)


def test_G_adjoint_fixes_constants(ws_default):
    G = build_G(ws_default.B0, ws_default.p)
    assert np.abs(G.T @ np.ones(G.shape[0]) - 1).max() <= 1e-13
