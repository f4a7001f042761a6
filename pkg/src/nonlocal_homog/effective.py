"""Effective drift, correctors and effective matrix, plus the effective fibre
resolvent in the discrete Fourier basis of the grid.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import AssemblyError, InvariantError, NumericError, SolverError
from .fibre import FibreAssembler, coercivity_constant, CoercivityEstimate, DerivativeStack
from .grid import CellGrid, inner_product, operator_norm
from .kernel import KernelSpec, MuSpec, TruncationPlan, _support_box, eval_kernel, eval_mu
from .stationary import (ProjectorSet, StationaryDensity, build_G, build_projectors, derive_q0,
                         solve_stationary)

CONDITION_CAP = 1e12
IMAG_TOL = 1e-10
CONSTRAINT_TOL = 1e-10
SPD_SLACK = 0.9


@dataclass
class CorrectorSet:
    w: np.ndarray          # (d, N)
    alpha: np.ndarray      # (d,)
    v: np.ndarray          # (d, N)
    w2: np.ndarray         # (d, d, N)
    w_tilde: np.ndarray    # (d, N)
    residuals: dict = field(default_factory=dict)


@dataclass
class EffectiveModel:
    alpha: np.ndarray
    g0: np.ndarray
    q0: np.ndarray
    lower_bound: float
    asymmetry: float
    g_raw: np.ndarray
    correctors: CorrectorSet | None = None


def _direct_moment_fields(grid: CellGrid, kspec: KernelSpec, mspec: MuSpec, plan: TruncationPlan,
                          powers_list, reverse=False, weights=None):
    """Fields x -> int (x-y)^beta a(+-(x-y)) mu(.,.) weight(y) dy by a direct lattice sum.

    Uses unreduced differences x_i - y_j + n over one extra shell, independent of
    the offset tables used for operator assembly.
    """
    x = grid.nodes
    N, d = grid.N, grid.d
    sign = -1.0 if reverse else 1.0
    mu = eval_mu(mspec, x[None, :, :], x[:, None, :]) if reverse else eval_mu(mspec, x[:, None, :], x[None, :, :])
    wy = np.ones(N) if weights is None else np.asarray(weights)
    out = np.zeros((len(powers_list), N))
    rng = range(-plan.radius - 1, plan.radius + 2)
    base = x[:, None, :] - x[None, :, :]
    boxes = [_support_box(part) for part in kspec.parts()]
    for shift in itertools.product(rng, repeat=d):
        s = np.asarray(shift, dtype=float)
        # skip shells whose difference range misses every part's support box
        if not any(np.all(sign * s - 1 < hi) and np.all(sign * s + 1 > lo) for lo, hi in boxes):
            continue
        z = base + s
        a = eval_kernel(kspec, sign * z)
        if not np.any(a):
            continue
        fac = a * mu * wy[None, :]
        for m, pw in enumerate(powers_list):
            mono = fac
            for k, e in enumerate(pw):
                if e:
                    mono = mono * z[..., k] ** int(e)
            out[m] += mono.sum(axis=1)
    return grid.weight * out


def _unit_powers(d):
    return [tuple(int(i == j) for i in range(d)) for j in range(d)]


def compute_wj(grid, kspec, mspec, plan, derivatives: DerivativeStack | None = None) -> np.ndarray:
    """w_j(x) = int (x-y)_j a(x-y) mu(x,y) dy, shape (d, N)."""
    w = _direct_moment_fields(grid, kspec, mspec, plan, _unit_powers(grid.d))
    if derivatives is not None:
        ones = np.ones(grid.N)
        for j, D in enumerate(derivatives.first):
            iw = D @ ones
            scale = max(1.0, np.abs(w[j]).max())
            if np.abs(iw.real).max() > 1e-8 * scale or np.abs(iw.imag - w[j]).max() > 1e-8 * scale:
                raise AssemblyError(f"w_{j}: two assembly routes disagree", stage="compute_wj")
    return w


def compute_alpha(w: np.ndarray, q0: np.ndarray, grid: CellGrid) -> np.ndarray:
    vals = np.array([inner_product(wj, q0, grid) for wj in w])
    if np.abs(vals.imag).max(initial=0.0) > IMAG_TOL:
        raise NumericError("compute_alpha: drift has an imaginary part", stage="compute_alpha")
    return vals.real


class BorderedSolver:
    """Factorization of [[A0, 1], [q0^T, 0]].

    Solving with right side f gives v with A0 v = f - (f, q0) 1 and (v, q0) = 0,
    that is v = Q A0^{-1} Q f.
    """

    def __init__(self, A0: np.ndarray, q0: np.ndarray):
        N = A0.shape[0]
        M = np.zeros((N + 1, N + 1), dtype=A0.dtype)
        M[:N, :N] = A0
        M[:N, N] = 1.0
        M[N, :N] = q0
        self.N = N
        self.lu = sla.lu_factor(M)
        anorm = np.abs(M).sum(axis=0).max()
        gecon = sla.lapack.get_lapack_funcs("gecon", (self.lu[0],))
        rcond, info = gecon(self.lu[0], anorm, norm="1")
        self.condition = np.inf if rcond == 0 else 1.0 / rcond
        if self.condition > CONDITION_CAP:
            raise SolverError(f"bordered system condition estimate {self.condition:.3g} exceeds "
                              f"{CONDITION_CAP:g}", stage="solve_cell_problem")

    def solve(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        rhs = np.concatenate([f, np.zeros((1,) + f.shape[1:], dtype=f.dtype)])
        return sla.lu_solve(self.lu, rhs)[: self.N]


def solve_cell_problem(A0, w_j, alpha_j, q0, grid: CellGrid, solver: BorderedSolver | None = None):
    """Corrector v with A0 v = w_j - alpha_j 1 and (v, q0) = 0."""
    solver = solver or BorderedSolver(A0, q0)
    f = w_j - alpha_j
    v = solver.solve(f)
    if np.iscomplexobj(v):
        v = v.real
    res = grid.weight**0.5 * np.linalg.norm(A0 @ v - f)
    constraint = abs(inner_product(v, q0, grid))
    return v, res, constraint


def compute_wkl_wtilde(grid, kspec, mspec, q0, plan, derivatives: DerivativeStack | None = None):
    """w_kl(x) = int (x-y)_k (x-y)_l a(x-y) mu(x,y) dy and
    w~_k(x) = int (x-y)_k a(y-x) mu(y,x) q0(y) dy."""
    d = grid.d
    pairs = [(k, l) for k in range(d) for l in range(k, d)]
    pw = [tuple(int(i == k) + int(i == l) for i in range(d)) for k, l in pairs]
    vals = _direct_moment_fields(grid, kspec, mspec, plan, pw)
    w2 = np.zeros((d, d, grid.N))
    for (k, l), f in zip(pairs, vals):
        w2[k, l] = w2[l, k] = f
    wt = _direct_moment_fields(grid, kspec, mspec, plan, _unit_powers(d), reverse=True, weights=q0)
    if derivatives is not None:
        ones = np.ones(grid.N)
        for k, l in pairs:
            route = derivatives.second[k][l] @ ones
            if np.abs(route - w2[k, l]).max() > 1e-8 * max(1.0, np.abs(w2[k, l]).max()):
                raise AssemblyError(f"w_{k}{l}: two assembly routes disagree", stage="compute_wkl_wtilde")
        for k in range(d):
            route = derivatives.first[k].conj().T @ q0
            if np.abs(route - 1j * wt[k]).max() > 1e-8 * max(1.0, np.abs(wt[k]).max()):
                raise AssemblyError(f"w~_{k}: two assembly routes disagree", stage="compute_wkl_wtilde")
    return w2, wt


def assemble_g0(correctors: CorrectorSet, q0, grid: CellGrid, lower_bound: float = 0.0) -> EffectiveModel:
    """g_kl = (w_kl, q0) - (v_k, w~_l) - (v_l, w~_k); the effective matrix is g / 2."""
    d = grid.d
    g = np.zeros((d, d))
    for k in range(d):
        for l in range(d):
            val = (inner_product(correctors.w2[k, l], q0, grid)
                   - inner_product(correctors.v[k], correctors.w_tilde[l], grid)
                   - inner_product(correctors.v[l], correctors.w_tilde[k], grid))
            g[k, l] = val.real
    asym = float(np.abs(g - g.T).max())
    g0 = 0.25 * (g + g.T)
    lam_min = float(np.linalg.eigvalsh(g0)[0])
    if lam_min < SPD_SLACK * lower_bound or lam_min <= 0:
        raise InvariantError(f"assemble_g0: smallest eigenvalue {lam_min:.6g} below "
                             f"{SPD_SLACK} * {lower_bound:.6g}", stage="assemble_g0")
    return EffectiveModel(correctors.alpha, g0, q0, lower_bound, asym, g, correctors)


def effective_symbol(grid: CellGrid, model: EffectiveModel, xi, eps: float) -> np.ndarray:
    """<g0 k, k> + i <alpha, k> + eps^2 over the grid frequencies, k = 2 pi n + xi."""
    k = 2 * np.pi * grid.frequencies + np.atleast_1d(np.asarray(xi, dtype=float))
    return np.einsum("mi,ij,mj->m", k, model.g0, k) + 1j * (k @ model.alpha) + eps**2


def effective_fibre_resolvent(grid: CellGrid, model: EffectiveModel, xi, eps: float,
                              alpha=None, q0=None) -> np.ndarray:
    """F^* diag(1 / symbol) F diag(q0) as an N x N matrix.

    The Fourier multiplier is circulant on the grid, so it is built from one
    inverse FFT of the symbol and the grid's difference index. ``alpha`` and
    ``q0`` override the model's drift and density (used for ablations).
    """
    if eps <= 0:
        raise NumericError("effective_fibre_resolvent: eps must be positive")
    if alpha is not None or q0 is not None:
        model = EffectiveModel(model.alpha if alpha is None else np.asarray(alpha, float), model.g0,
                               model.q0 if q0 is None else q0, model.lower_bound, model.asymmetry,
                               model.g_raw)
    sym = effective_symbol(grid, model, xi, eps)
    if np.any(sym == 0):
        raise NumericError("effective_fibre_resolvent: zero denominator")
    shape = (grid.n,) * grid.d
    table = np.fft.ifftn(np.fft.ifftshift((1.0 / sym).reshape(shape))).ravel()
    return table[grid.difference_index] * model.q0[None, :]


@dataclass
class Workspace:
    """Everything computed at xi = 0 for one (grid, kernel, mu, plan)."""
    grid: CellGrid
    kspec: KernelSpec
    mspec: MuSpec
    plan: TruncationPlan
    assembler: FibreAssembler
    A0: np.ndarray
    B0: np.ndarray
    p: np.ndarray
    A0_norm: float
    stationary: StationaryDensity
    projectors: ProjectorSet
    derivatives: DerivativeStack
    coercivity: CoercivityEstimate
    model: EffectiveModel
    solver: BorderedSolver


def build_workspace(grid: CellGrid, kspec: KernelSpec, mspec: MuSpec, plan: TruncationPlan,
                    q0_hook=None) -> Workspace:
    """Assemble A(0), solve for q0, build projectors, correctors and g0.

    ``q0_hook`` may replace the computed density (fault injection for self-checks);
    it bypasses the stationarity residual check.
    """
    asm = FibreAssembler(grid, kspec, mspec, plan)
    fib0 = asm.fibre(np.zeros(grid.d))
    A0, B0, p = fib0.A.real.copy(), fib0.B.real.copy(), fib0.p
    A0_norm = operator_norm(A0)
    G = build_G(B0, p)
    psi, gap, lam = solve_stationary(G, grid)
    stat = derive_q0(psi, p, grid, gap, lam, A0=A0 if q0_hook is None else None)
    if q0_hook is not None:
        q = np.asarray(q0_hook(stat.q0.copy()), dtype=float)
        stat = StationaryDensity(psi, q, float(q.min()), float(q.max()), stat.psi_minus, stat.psi_plus,
                                 gap, lam, psi_max_observed=stat.psi_max_observed)
    q0 = stat.q0
    proj = build_projectors(q0, grid, A0 if q0_hook is None else None)
    ders = asm.derivatives()
    coer = coercivity_constant(kspec)

    w = compute_wj(grid, kspec, mspec, plan, ders)
    alpha = compute_alpha(w, q0, grid)
    solver = BorderedSolver(A0, q0)
    v = np.zeros_like(w)
    residuals = {}
    for j in range(grid.d):
        v[j], res, cons = solve_cell_problem(A0, w[j], alpha[j], q0, grid, solver)
        residuals[f"v{j}_residual"] = res
        residuals[f"v{j}_constraint"] = cons
    w2, wt = compute_wkl_wtilde(grid, kspec, mspec, q0, plan, ders)
    corr = CorrectorSet(w, alpha, v, w2, wt, residuals)
    lower = asm.mu_minus * stat.q_minus * coer.C_a
    model = assemble_g0(corr, q0, grid, lower)
    return Workspace(grid, kspec, mspec, plan, asm, A0, B0, p, A0_norm, stat, proj, ders, coer,
                     model, solver)
