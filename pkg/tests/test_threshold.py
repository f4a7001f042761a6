import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonlocal_homog.errors import ContourError
from nonlocal_homog.grid import operator_norm
from nonlocal_homog.kernel import fourier_transform, moment
from nonlocal_homog.threshold import (constants_ledger, estimate_gap, fit_loglog, riesz_projector,
                                      threshold_sweep, xi_bound)

from conftest import context, workspace


def test_gap_for_constant_mu_matches_discrete_symbol(ws_shifted):
    # for mu == 1 the spectrum of A(0) is {a_hat(0) - a_hat(2 pi k)} over resolved frequencies
    ws = ws_shifted
    gap = context("mu1-shifted").gap
    k = 2 * np.pi * ws.grid.frequencies
    symbol = fourier_transform(ws.kspec, np.zeros(1)) - fourier_transform(ws.kspec, k)
    d0 = np.abs(symbol[np.abs(symbol) > 1e-12]).min()
    assert gap.d0 == pytest.approx(d0, rel=1e-9)
    assert gap.K >= 1 / (2 * gap.d0 / 3) * (1 - 1e-12)


def test_riesz_projector_at_zero_is_P(ws_exptrig):
    gap = context("exp-trig-1d").gap
    r = riesz_projector(ws_exptrig.A0.astype(complex), gap)
    assert r.rank == 1
    assert operator_norm(r.F - ws_exptrig.projectors.P) <= 1e-10
    assert operator_norm(r.AF) <= 1e-10


def test_riesz_projector_near_threshold_is_spectral(ws_exptrig):
    ctx = context("exp-trig-1d")
    A = ws_exptrig.assembler.fibre([0.5 * ctx.gap.delta0]).A
    r = riesz_projector(A, ctx.gap)
    assert r.rank == 1
    assert operator_norm(r.F @ A - A @ r.F) <= 1e-9 * operator_norm(A)
    vals = np.linalg.eigvals(A)
    lam = vals[np.argmin(np.abs(vals))]
    assert np.trace(r.AF) == pytest.approx(lam, abs=1e-10)


def test_contour_failure_is_reported(ws_exptrig):
    ctx = context("exp-trig-1d")
    with pytest.raises(ContourError):
        riesz_projector(ws_exptrig.A0.astype(complex), ctx.gap, nodes=2, tol=1e-30, max_nodes=4)


def test_spectral_route_first_order_terms(ws_exptrig):
    terms = context("exp-trig-1d").terms
    assert terms.G1_defect <= 1e-10
    assert terms.R1_residual <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(0.1, 5))
def test_fit_loglog_recovers_power_law(slope, logc, spread):
    x = np.geomspace(1e-3, 1e-3 * 10**spread, 9)
    s, c, rms = fit_loglog(x, math.exp(logc) * x**slope)
    assert s == pytest.approx(slope, abs=1e-9)
    assert c == pytest.approx(logc, abs=1e-8)
    assert rms <= 1e-10


LEDGER_INPUTS = dict(d0=0.5, K=4.0, delta0=0.05, mu_minus=0.5, mu_plus=2.0, q_minus=0.8, q_plus=1.25,
                     M1=0.3, M2=0.1, M3=0.04, C_a=0.02, d=1)


def test_constants_ledger_hand_values():
    L = constants_ledger(**LEDGER_INPUTS)
    # 3/4 K^2 d0 mu_+ M1 = 0.75 * 16 * 0.5 * 2 * 0.3
    assert L.C1 == pytest.approx(3.6, rel=1e-14)
    # d0^2/4 (1.5 K^4 mu^3 M1^3 + K^2 mu M3 / 6 + K^3 mu^2 M1 M2)
    assert L.C2 == pytest.approx(0.0625 * (1.5 * 256 * 8 * 0.027 + 16 * 2 * 0.04 / 6 + 64 * 4 * 0.03), rel=1e-14)
    assert L.coercive_rate == pytest.approx(0.5 * 0.8 / 1.25 * 0.02, rel=1e-14)
    assert L.C3 == pytest.approx(1.25 * 4 * 0.5 * 1.25 * 3.6, rel=1e-14)
    assert L.C_rate >= L.C5_tilde >= L.C5 > 0


def test_ledger_monotone_in_K():
    base = constants_ledger(**LEDGER_INPUTS)
    bigger = constants_ledger(**{**LEDGER_INPUTS, "K": 5.0})
    for name in ("C1", "C2", "C3", "C4", "C5", "C_rate"):
        assert getattr(bigger, name) > getattr(base, name)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-4, 3.0), st.floats(1e-3, 1.0))
def test_xi_bound_is_bounded_by_inverse_eps(xi, eps):
    L = constants_ledger(**LEDGER_INPUTS)
    c = L.coercive_rate
    # C3 r / (c r^2 + e^2) <= C3 / (2 e sqrt c), and similarly for the cubic term
    cap = L.C3 / (2 * eps * math.sqrt(c)) + L.C4 * 0.65 / (eps * c**1.5)
    assert 0 < xi_bound(L, xi, eps) <= cap


def test_threshold_slopes_exp_trig():
    ws = workspace("exp-trig-1d", n=64)
    from nonlocal_homog.threshold import build_threshold_context
    rep = threshold_sweep(ws, build_threshold_context(ws), count=8)
    assert 0.9 <= rep.slopes["F_minus_P"][0] <= 1.1
    assert rep.slopes["Psi"][0] >= 2.7
    assert rep.slopes["lambda1_remainder"][0] >= 2.7
    assert all(r == 1 for r in rep.ranks)
    assert rep.C1_violations == 0


def test_gap_delta0_formula(ws_exptrig):
    gap = context("exp-trig-1d").gap
    M1, mu_plus = moment(ws_exptrig.kspec, 1), ws_exptrig.assembler.mu_plus
    ref = min(math.pi / 2, 1 / ((gap.d0 * gap.K**2 + 3 * gap.K) * M1 * mu_plus))
    assert gap.delta0 == pytest.approx(ref, rel=1e-14)
    again = estimate_gap(ws_exptrig.A0, M1, mu_plus)
    assert again.K == gap.K and again.d0 == gap.d0


def test_second_order_term_matches_finite_difference_with_drift():
    # alpha != 0 activates the P dA P dA R1 terms that vanish for symmetric fixtures
    ws, ctx = workspace("box-separable-1d"), context("box-separable-1d")
    assert abs(ws.model.alpha[0]) > 0.05

    def AF(x):
        return riesz_projector(ws.assembler.fibre([x]).A, ctx.gap).AF

    h = 1e-3
    fd = (AF(h) + AF(-h) - 2 * AF(0.0)) / (2 * h * h)
    G = 0.5 * ctx.terms.G2[0, 0]
    P, Q = ws.projectors.P, ws.projectors.Q
    assert operator_norm(P @ G @ Q) > 1e-3
    assert operator_norm(fd - G) <= 1e-7 * operator_norm(G)


def test_threshold_Psi_is_cubic_with_drift():
    ws, ctx = workspace("mixture-1d"), context("mixture-1d")
    rep = threshold_sweep(ws, ctx, count=8)
    assert rep.slopes["Psi"][0] >= 2.7
