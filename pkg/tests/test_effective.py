import numpy as np
import pytest

from nonlocal_homog.effective import (BorderedSolver, effective_fibre_resolvent, effective_symbol)
from nonlocal_homog.grid import dft_basis, dft_synthesis, inner_product

from conftest import context, workspace

# Reference values from an independent oracle: central differences (h = 0.02, 0.01,
# Richardson-extrapolated) of the eigenvalue of A(xi) nearest zero, using
# lambda(xi) = i alpha xi + g0 xi^2 + O(xi^3).
EIGENVALUE_ORACLE = {
    "exp-trig-1d": (0.0, 0.046963395848),
    "default-1d": (0.0, 0.020777741197),
    "mixture-1d": (0.079584055930, 0.037238542987),
    "box-separable-1d": (0.092812946205, 0.043455208310),
}


@pytest.mark.parametrize("name", sorted(EIGENVALUE_ORACLE))
def test_effective_model_matches_eigenvalue_oracle(name):
    alpha, g0 = EIGENVALUE_ORACLE[name]
    model = workspace(name).model
    assert model.alpha[0] == pytest.approx(alpha, abs=1e-9)
    assert model.g0[0, 0] == pytest.approx(g0, rel=1e-8)


def test_constant_mu_closed_form(ws_shifted):
    # alpha = c, g0 = (sigma^2 + c^2) / 2, correctors vanish
    m = ws_shifted.model
    assert m.alpha[0] == pytest.approx(0.3, abs=1e-12)
    assert m.g0[0, 0] == pytest.approx(0.09, abs=1e-12)
    assert np.abs(m.correctors.v).max() <= 1e-12


def test_correctors_solve_cell_problem(ws_exptrig):
    ws = ws_exptrig
    corr, q0 = ws.model.correctors, ws.stationary.q0
    v, w, alpha = corr.v[0], corr.w[0], corr.alpha[0]
    assert np.abs(ws.A0 @ v - (w - alpha)).max() <= 1e-10
    assert abs(inner_product(v, q0, ws.grid)) <= 1e-12
    # drift is the q0-average of w
    assert inner_product(w, q0, ws.grid).real == pytest.approx(alpha, abs=1e-14)


def test_bordered_solver_is_reduced_resolvent(ws_exptrig):
    ws = ws_exptrig
    Q, A0 = ws.projectors.Q, ws.A0
    R1 = ws.solver.solve(np.eye(ws.grid.N))
    assert np.allclose(A0 @ R1, Q, atol=1e-10)
    assert np.allclose(R1 @ A0, Q, atol=1e-10)
    assert np.allclose(Q @ R1, R1, atol=1e-12)
    assert np.isfinite(BorderedSolver(A0, ws.stationary.q0).condition)


@pytest.mark.parametrize("name", ["exp-trig-1d", "mixture-1d"])
def test_two_routes_to_effective_matrix(name):
    ws = workspace(name)
    g_spec = context(name).terms.g
    assert np.abs(g_spec - ws.model.g_raw).max() <= 1e-6 * np.abs(ws.model.g_raw).max()


def test_effective_matrix_is_spd_above_lower_bound():
    for name in EIGENVALUE_ORACLE:
        m = workspace(name).model
        assert np.allclose(m.g0, m.g0.T)
        assert np.linalg.eigvalsh(m.g0)[0] >= 0.9 * m.lower_bound > 0


def test_effective_resolvent_matches_fourier_construction(ws_default):
    ws = ws_default
    grid, xi, eps = ws.grid, np.array([0.37]), 0.2
    sym = effective_symbol(grid, ws.model, xi, eps)
    ref = dft_synthesis(grid) @ ((1 / sym)[:, None] * dft_basis(grid)) @ np.diag(ws.stationary.q0)
    R0 = effective_fibre_resolvent(grid, ws.model, xi, eps)
    assert np.abs(R0 - ref).max() <= 1e-10 * np.abs(ref).max()


def test_effective_resolvent_overrides(ws_shifted):
    ws = ws_shifted
    xi, eps = np.array([0.1]), 0.3
    R_full = effective_fibre_resolvent(ws.grid, ws.model, xi, eps)
    R_nodrift = effective_fibre_resolvent(ws.grid, ws.model, xi, eps, alpha=np.zeros(1))
    assert np.abs(R_full - R_nodrift).max() > 1e-3
