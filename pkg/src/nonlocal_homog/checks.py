"""Cross-module invariant suite used by the ``selfcheck`` command."""
from __future__ import annotations

import numpy as np

from .config import DEFAULT_TOLERANCES
from .effective import effective_fibre_resolvent
from .fibre import hermitian_min_eig, symbol_oracle_mu1
from .grid import dft_basis, integral, norm, operator_norm
from .kernel import moment
from .report import check
from .threshold import resolvent_norm, riesz_projector, _annulus_points


def sample_quasimomenta(d, count=20, seed=0, include_zero=True):
    """Deterministic uniform samples of the dual cell, optionally led by xi = 0."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-np.pi, np.pi, size=(count - int(include_zero), d))
    return np.concatenate([np.zeros((1, d)), pts]) if include_zero else pts


def accretivity_checks(ws, xis, tol):
    """Smallest Hermitian-part eigenvalue of diag(q0) A(xi) against max(-tol |A|, slack mu_- q_- C(a) |xi|^2).

    Values are reported relative to |A(xi)|.
    """
    q0 = ws.stationary.q0
    coercive = ws.assembler.mu_minus * ws.stationary.q_minus * ws.coercivity.C_a
    worst_acc, worst_coer = np.inf, np.inf
    for xi in xis:
        A = ws.assembler.fibre(xi).A
        lam = hermitian_min_eig(q0[:, None] * A)
        scale = operator_norm(A)
        if not np.any(xi):
            worst_acc = min(worst_acc, lam / scale)
            continue
        floor = max(-tol["accretivity"] * scale, tol["coercivity_slack"] * coercive * float(xi @ xi))
        worst_acc = min(worst_acc, lam / scale)
        worst_coer = min(worst_coer, (lam - floor) / scale)
    return [
        check("accretivity", worst_acc, -tol["accretivity"], worst_acc >= -tol["accretivity"], "min"),
        check("coercivity", worst_coer, 0.0, worst_coer >= 0, "min"),
    ]


def run_selfcheck(ws, ctx, tol=None, seed=0):
    tol = {**DEFAULT_TOLERANCES, **(tol or {})}
    grid, asm, st, pr = ws.grid, ws.assembler, ws.stationary, ws.projectors
    P, Q, A0, q0 = pr.P, pr.Q, ws.A0, st.q0
    ones = np.ones(grid.N)
    nA = ws.A0_norm
    out = []

    r = norm(A0 @ ones, grid) / nA
    out.append(check("A0_annihilates_constants", r, 1e-10, r <= 1e-10))
    mass = ws.kspec.mass
    lo, hi = asm.mu_minus * mass, asm.mu_plus * mass
    slack = 1e-8
    ok = ws.p.min() >= lo - slack and ws.p.max() <= hi + slack
    out.append(check("potential_bounds", [float(ws.p.min()), float(ws.p.max())], [lo, hi], ok, "range"))
    Gs = ws.B0.T / ws.p[None, :]
    r = float(np.abs(Gs.T @ ones - ones).max())
    out.append(check("G_adjoint_fixes_constants", r, 1e-10, r <= 1e-10))
    res = norm(A0.T @ q0, grid) / nA
    out.append(check("stationarity_residual", res, tol["stationary_residual"], res <= tol["stationary_residual"]))
    I = abs(integral(q0, grid) - 1)
    out.append(check("q0_integral", I, tol["integral"], I <= tol["integral"] and q0.min() > 0))
    defect = max(operator_norm(P @ P - P), operator_norm(Q @ Q - Q), operator_norm(P @ Q))
    out.append(check("projector_identities", defect, tol["projector"], defect <= tol["projector"]))
    r = max(operator_norm(A0 @ P), operator_norm(P @ A0)) / nA
    out.append(check("projector_commutes_with_A0", r, tol["stationary_residual"], r <= tol["stationary_residual"]))

    ders = ws.derivatives
    r = max(float(np.abs(D @ ones - 1j * w).max()) for D, w in zip(ders.first, ws.model.correctors.w))
    out.append(check("w_two_routes", r, 1e-8, r <= 1e-8))
    corr = ws.model.correctors
    # backward error, floored at |A0| so that vanishing correctors do not inflate it
    r = max(corr.residuals[f"v{j}_residual"]
            / max(nA * norm(corr.v[j], grid) + norm(corr.w[j] - corr.alpha[j], grid), nA)
            for j in range(grid.d))
    out.append(check("cell_problem_residual", r, 1e-8, r <= 1e-8))
    r = max(corr.residuals[f"v{j}_constraint"] for j in range(grid.d))
    out.append(check("cell_problem_constraint", r, 1e-10, r <= 1e-10))
    lam = float(np.linalg.eigvalsh(ws.model.g0)[0])
    bound = tol["coercivity_slack"] * ws.model.lower_bound
    out.append(check("g0_positive_definite", lam, bound, lam >= bound, "min"))

    g_spec = ctx.terms.g
    rel = float(np.abs(g_spec - ws.model.g_raw).max() / np.abs(ws.model.g_raw).max())
    out.append(check("g_two_routes", rel, tol["two_route"], rel <= tol["two_route"]))
    out.append(check("G_j_equals_i_alpha_P", ctx.terms.G1_defect, 1e-8, ctx.terms.G1_defect <= 1e-8))
    nR1 = operator_norm(ctx.terms.R1)
    out.append(check("reduced_resolvent_bound", nR1, ctx.gap.K * (1 + 1e-3), nR1 <= ctx.gap.K * (1 + 1e-3)))

    xis = sample_quasimomenta(grid.d, 8, seed)
    out.extend(accretivity_checks(ws, xis, tol))

    riesz0 = riesz_projector(A0.astype(complex), ctx.gap)
    r = operator_norm(riesz0.F - P)
    out.append(check("riesz_projector_at_zero", r, tol["contour_defect"], r <= tol["contour_defect"]))
    xi_half = np.full(grid.d, 0.5 * ctx.gap.delta0 / np.sqrt(grid.d))
    Ah = asm.fibre(xi_half).A
    rz = riesz_projector(Ah, ctx.gap)
    comm = operator_norm(rz.F @ Ah - Ah @ rz.F) / operator_norm(Ah)
    ok = rz.rank == 1 and comm <= 1e-8
    out.append(check("riesz_rank_and_commutation", [rz.rank, comm], [1, 1e-8], ok, "rank,max"))
    worst = max(resolvent_norm(Ah, z) for z in _annulus_points(ctx.gap.d0, angles=8))
    cap = 1.5 * ctx.gap.K * (1 + tol["annulus_slack"])
    out.append(check("annulus_resolvent_bound", worst, cap, worst <= cap))

    ratio = np.sqrt(st.q_plus / st.q_minus)
    worst = 0.0
    for xi in xis[:4]:
        A = asm.fibre(xi).A
        for z in (-0.1, -1.0 + 0.5j):
            val = resolvent_norm(A, z) * abs(z.real) / ratio
            worst = max(worst, val)
    cap = 1 + tol["resolvent_slack"]
    out.append(check("left_half_plane_resolvent", worst, cap, worst <= cap))
    M1 = moment(ws.kspec, 1)
    worst = -np.inf
    for a, b in zip(xis[:-1], xis[1:]):
        lhs = operator_norm(asm.fibre(a).A - asm.fibre(b).A)
        worst = max(worst, lhs - asm.mu_plus * M1 * np.linalg.norm(a - b))
    out.append(check("lipschitz_in_xi", worst, tol["lipschitz"], worst <= tol["lipschitz"]))

    F = dft_basis(grid)
    u = np.random.default_rng(1).standard_normal(grid.N)
    r = abs(np.linalg.norm(F @ u) - norm(u, grid))
    out.append(check("dft_unitarity", r, 1e-12, r <= 1e-12))

    eps = 0.25
    R0 = effective_fibre_resolvent(grid, ws.model, np.zeros(grid.d), eps)
    c0 = (F @ R0 @ np.linalg.inv(F))[grid.zero_frequency, grid.zero_frequency]
    r = abs(c0 - eps**-2) * eps**2
    out.append(check("effective_resolvent_zero_frequency", r, 1e-10, r <= 1e-10))

    if ws.mspec.is_constant and ws.mspec.value == 1.0:
        worst = 0.0
        for xi in xis[:5]:
            A = asm.fibre(xi).A
            worst = max(worst, operator_norm(A - symbol_oracle_mu1(grid, ws.kspec, xi)) / operator_norm(A))
        out.append(check("symbol_oracle_equivalence", worst, tol["oracle"], worst <= tol["oracle"]))
    else:
        sv = np.linalg.svd(P, compute_uv=False)
        rank = int(np.sum(sv > 1e-8))
        r = float(np.abs(P @ ones - ones).max())
        out.append(check("P_rank_one_fixes_constants", [rank, r], [1, 1e-10], rank == 1 and r <= 1e-10,
                         "rank,max"))
    return out
