"""Spectral gap of A(0), Riesz projectors by contour quadrature, threshold
remainders, spectral-route G_j / G_kl, and the closed-form constant ledger.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ContourError, SolverError, SpectralError
from .grid import operator_norm
from .kernel import moment

K_RADII = (1 / 3, 1 / 2, 2 / 3)
K_ANGLES = 32
CONTOUR_NODES = 64
CONTOUR_MAX_NODES = 1024
PROJECTOR_DEFECT = 1e-8
RANK_TOL = 1e-6
ZERO_EIG_RTOL = 1e-8
D0_MIN = 1e-6


@dataclass
class SpectralGap:
    d0: float
    K: float
    delta0: float
    zero_eigenvalue: complex
    eigenvalues: np.ndarray
    radius: float
    K_samples: np.ndarray
    min_real_part: float

    @property
    def contour_radius(self):
        return 0.5 * self.d0


def _annulus_points(d0, angles=K_ANGLES, radii=K_RADII):
    th = 2 * np.pi * np.arange(angles) / angles
    return np.concatenate([r * d0 * np.exp(1j * th) for r in radii])


def resolvent_norm(A: np.ndarray, zeta: complex) -> float:
    """|(A - zeta)^{-1}| = 1 / smallest singular value."""
    s = sla.svdvals(A - zeta * np.eye(A.shape[0]))
    return np.inf if s[-1] == 0 else float(1.0 / s[-1])


def estimate_gap(A0: np.ndarray, M1: float, mu_plus: float, A0_norm: float | None = None) -> SpectralGap:
    """d0, K (sampled on the annulus d0/3 <= |zeta| <= 2 d0 / 3) and delta0."""
    A0_norm = operator_norm(A0) if A0_norm is None else A0_norm
    vals = sla.eigvals(A0)
    i = int(np.argmin(np.abs(vals)))
    if abs(vals[i]) > ZERO_EIG_RTOL * A0_norm:
        raise SpectralError(f"estimate_gap: no eigenvalue at 0 (nearest {abs(vals[i]):.3g})",
                            stage="estimate_gap")
    rest = np.delete(vals, i)
    d0 = float(np.min(np.abs(rest)))
    if d0 < D0_MIN:
        raise SpectralError(f"estimate_gap: d0 = {d0:.3g} below {D0_MIN:g}", stage="estimate_gap")
    zs = _annulus_points(d0)
    ks = np.array([resolvent_norm(A0, z) for z in zs])
    K = float(ks.max())
    delta0 = min(math.pi / 2, 1.0 / ((d0 * K**2 + 3 * K) * M1 * mu_plus))
    return SpectralGap(d0, K, delta0, complex(vals[i]), vals, 0.5 * d0, ks, float(vals.real.min()))


@dataclass
class RieszResult:
    F: np.ndarray
    AF: np.ndarray
    nodes: int
    defect: float
    rank: int


def _contour_sums(A, radius, m):
    N = A.shape[0]
    I = np.eye(N)
    F = np.zeros((N, N), dtype=complex)
    AF = np.zeros((N, N), dtype=complex)
    for k in range(m):
        z = radius * np.exp(2j * np.pi * k / m)
        R = sla.solve(A - z * I, I)
        F -= z * R
        AF -= z * z * R
    return F / m, AF / m


def riesz_projector(A: np.ndarray, gap: SpectralGap, nodes: int = CONTOUR_NODES,
                    tol: float = PROJECTOR_DEFECT, max_nodes: int = CONTOUR_MAX_NODES) -> RieszResult:
    """F = -(1/2 pi i) contour integral of (A - zeta)^{-1} over |zeta| = d0/2.

    Trapezoid rule, node count doubled until |F^2 - F| <= tol. A F is
    accumulated from the same resolvents weighted by zeta.
    """
    m = nodes
    while True:
        F, AF = _contour_sums(A, gap.contour_radius, m)
        defect = operator_norm(F @ F - F)
        if defect <= tol:
            break
        if 2 * m > max_nodes:
            raise ContourError(f"riesz_projector: defect {defect:.3g} after {m} nodes; the contour "
                               "is too close to the spectrum", stage="riesz_projector")
        m *= 2
    rank = int(np.sum(sla.svdvals(F) > RANK_TOL))
    return RieszResult(F, AF, m, defect, rank)


@dataclass
class SpectralTerms:
    R1: np.ndarray
    G1: list
    G2: np.ndarray          # (d, d, N, N)
    g: np.ndarray           # trace-extracted P G_kl P
    R1_residual: float
    G1_defect: float
    offdiag_norms: dict = field(default_factory=dict)


def spectral_G(derivatives, projectors, solver, alpha, A0, R1_tol=1e-8) -> SpectralTerms:
    """R1(0) = Q A(0)^{-1} Q, G_j = P d_jA P and the seven-term G_kl."""
    P, Q = projectors.P, projectors.Q
    N = P.shape[0]
    R1 = solver.solve(np.eye(N))
    scale = max(1.0, operator_norm(R1))
    res = operator_norm(R1 @ A0 @ Q - Q) / scale
    if res > R1_tol:
        raise SolverError(f"spectral_G: |R1 A0 Q - Q| = {res:.3g}", stage="spectral_G")
    D1 = derivatives.first
    D2 = derivatives.second
    d = len(D1)
    G1 = [P @ Dj @ P for Dj in D1]
    G1_defect = max(operator_norm(G1[j] - 1j * alpha[j] * P) for j in range(d))
    PD = [P @ Dj for Dj in D1]
    DP = [Dj @ P for Dj in D1]
    G2 = np.zeros((d, d, N, N), dtype=complex)
    g = np.zeros((d, d))
    off = {}
    for k in range(d):
        for l in range(k, d):
            M = (P @ D2[k][l] @ P
                 - PD[k] @ R1 @ DP[l] - PD[l] @ R1 @ DP[k]
                 - G1[k] @ D1[l] @ R1 - R1 @ D1[k] @ P @ DP[l]
                 - G1[l] @ D1[k] @ R1 - R1 @ D1[l] @ P @ DP[k])
            G2[k, l] = G2[l, k] = M
            PMP = P @ M @ P
            g[k, l] = g[l, k] = float(np.trace(PMP).real / np.trace(P).real)
            off[f"PG{k}{l}Q"] = operator_norm(P @ M @ Q)
            off[f"QG{k}{l}P"] = operator_norm(Q @ M @ P)
    return SpectralTerms(R1, G1, G2, g, res, G1_defect, off)


def second_order_term(terms: SpectralTerms, xi) -> np.ndarray:
    """[G]_2(xi) = 1/2 sum_kl G_kl xi_k xi_l."""
    xi = np.atleast_1d(xi)
    return 0.5 * np.einsum("k,l,klij->ij", xi, xi, terms.G2)


def threshold_remainders(xi, riesz: RieszResult, P, alpha, terms: SpectralTerms):
    """(|F(xi) - P|, |Psi(xi)|, lambda1(xi)) with Psi = A F - i<alpha, xi> P - [G]_2."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    Psi = riesz.AF - 1j * float(alpha @ xi) * P - second_order_term(terms, xi)
    return operator_norm(riesz.F - P), operator_norm(Psi), complex(np.trace(riesz.AF))


# ------------------------------------------------------------------ constants

@dataclass
class ConstantsLedger:
    C1: float
    C2: float
    C3: float
    C4: float
    S: float
    C5_1: float
    C5_2: float
    C5: float
    C5_tilde: float
    C_rate: float
    coercive_rate: float
    K_sampled: bool = True

    def as_dict(self):
        return dict(self.__dict__)


def constants_ledger(d0, K, delta0, mu_minus, mu_plus, q_minus, q_plus, M1, M2, M3, C_a, d) -> ConstantsLedger:
    """Closed-form constants of the threshold and resolvent estimates.

    ``C_rate`` is the constant of the sup-over-xi resolvent estimate,
    ``coercive_rate`` is mu_- q_- q_+^{-1} C(a).
    """
    C1 = 0.75 * K**2 * d0 * mu_plus * M1
    C2 = d0**2 / 4 * (1.5 * K**4 * mu_plus**3 * M1**3 + K**2 * mu_plus * M3 / 6
                      + K**3 * mu_plus**2 * M1 * M2)
    ratio = math.sqrt(q_plus / q_minus)
    C3 = 1.25 * K * d0 * ratio * C1
    S = (mu_plus * M2 + 6 * (mu_plus * M1) ** 2 * K) * (K * d0 / 2) ** 2
    C4 = 0.5 * K * d0 * (q_plus / q_minus) * (0.75 * K * d0 * C2 + 0.5 * C1 * S * d * (1 + 0.5 * K * d0))
    C5_1 = max(math.sqrt(3 * K) * (q_plus / q_minus) ** 0.25 * math.sqrt(1 + 0.75 * K * d0),
               ratio * (1 + 0.75 * K * d0) * 2 / math.sqrt(d0))
    c = mu_minus * q_minus / q_plus * C_a
    C5_2 = C3 / math.sqrt(c) + C4 / c**1.5
    C5 = C5_1 + C5_2
    C5_tilde = max(C5, ratio / math.sqrt(c) / delta0 * (1 + K * d0 / 2))
    C_rate = C5_tilde + q_plus / math.sqrt(mu_minus * q_minus * C_a) / math.pi
    return ConstantsLedger(C1, C2, C3, C4, S, C5_1, C5_2, C5, C5_tilde, C_rate, c)


def xi_bound(ledger: ConstantsLedger, xi_norm, eps):
    """Right side of the estimate for Xi(xi, eps)."""
    den = ledger.coercive_rate * xi_norm**2 + eps**2
    return ledger.C3 * xi_norm / den + ledger.C4 * xi_norm**3 / den**2


# -------------------------------------------------------------------- sweeps

def fit_loglog(x, y):
    """Least squares of log y on log x: (slope, intercept, rms residual)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    Amat = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(Amat, ly, rcond=None)
    resid = ly - Amat @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2)))


@dataclass
class ThresholdContext:
    gap: SpectralGap
    terms: SpectralTerms
    ledger: ConstantsLedger


def build_threshold_context(ws) -> ThresholdContext:
    M1, M2, M3 = (moment(ws.kspec, k) for k in (1, 2, 3))
    gap = estimate_gap(ws.A0, M1, ws.assembler.mu_plus, ws.A0_norm)
    terms = spectral_G(ws.derivatives, ws.projectors, ws.solver, ws.model.alpha, ws.A0)
    st = ws.stationary
    ledger = constants_ledger(gap.d0, gap.K, gap.delta0, ws.assembler.mu_minus, ws.assembler.mu_plus,
                              st.q_minus, st.q_plus, M1, M2, M3, ws.coercivity.C_a, ws.grid.d)
    return ThresholdContext(gap, terms, ledger)


@dataclass
class ThresholdReport:
    direction: np.ndarray
    xi_norms: np.ndarray
    F_minus_P: np.ndarray
    Psi: np.ndarray
    lambda1: np.ndarray
    lambda1_remainder: np.ndarray
    slopes: dict
    C1_violations: int
    contour_nodes: list
    ranks: list


def default_direction(d):
    return np.array([1.0]) if d == 1 else np.array([0.6, 0.8])


def threshold_sweep(ws, ctx: ThresholdContext, count: int = 12, xi_min: float = 1e-3,
                    direction=None) -> ThresholdReport:
    """Remainders at |xi| log-spaced in [xi_min, delta0] along one direction."""
    u = default_direction(ws.grid.d) if direction is None else np.asarray(direction, float)
    u = u / np.linalg.norm(u)
    radii = np.geomspace(xi_min, ctx.gap.delta0, count)
    P = ws.projectors.P
    alpha, g0 = ws.model.alpha, ws.model.g0
    fp, psi, lam, rem, nodes, ranks = [], [], [], [], [], []
    for r in radii:
        xi = r * u
        riesz = riesz_projector(ws.assembler.fibre(xi).A, ctx.gap)
        a, b, l1 = threshold_remainders(xi, riesz, P, alpha, ctx.terms)
        fp.append(a)
        psi.append(b)
        lam.append(l1)
        rem.append(abs(l1 - 1j * float(alpha @ xi) - float(xi @ g0 @ xi)))
        nodes.append(riesz.nodes)
        ranks.append(riesz.rank)
    fp, psi, lam, rem = map(np.asarray, (fp, psi, lam, rem))
    slopes = {
        "F_minus_P": fit_loglog(radii, fp),
        "Psi": fit_loglog(radii, psi),
        "lambda1_remainder": fit_loglog(radii, rem),
    }
    viol = int(np.sum(fp > ctx.ledger.C1 * radii))
    return ThresholdReport(u, radii, fp, psi, lam, rem, slopes, viol, nodes, ranks)


def xi_operator_norm(ws, ctx: ThresholdContext, xi, eps: float) -> float:
    """|Xi(xi, eps)| with Xi = (A(xi) + eps^2)^{-1} F(xi) - P / (<g0 xi, xi> + i <alpha, xi> + eps^2)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    A = ws.assembler.fibre(xi).A
    F = riesz_projector(A, ctx.gap).F
    N = A.shape[0]
    lead = float(xi @ ws.model.g0 @ xi) + 1j * float(ws.model.alpha @ xi) + eps**2
    try:
        RF = sla.solve(A + eps**2 * np.eye(N), F)
    except sla.LinAlgError as exc:
        raise SolverError(f"xi_operator_norm: factorization failed ({exc})", stage="xi_spot_check")
    return operator_norm(RF - ws.projectors.P / lead)


def xi_spot_check(ws, ctx: ThresholdContext, count: int = 10, eps_list=(0.25, 0.0625, 0.015625),
                  slack: float = 0.01, seed: int = 0) -> list:
    """Compare |Xi| with its closed-form bound at ``count`` deterministic (xi, eps) pairs in |xi| <= delta0."""
    rng = np.random.default_rng(seed)
    d = ws.grid.d
    radii = np.geomspace(1e-2 * ctx.gap.delta0, ctx.gap.delta0, count)
    out = []
    for i, r in enumerate(radii):
        u = rng.standard_normal(d)
        xi = r * u / np.linalg.norm(u)
        eps = float(eps_list[i % len(eps_list)])
        val = xi_operator_norm(ws, ctx, xi, eps)
        bound = float(xi_bound(ctx.ledger, r, eps))
        out.append({"xi": xi, "xi_norm": float(r), "eps": eps, "norm": val, "bound": bound,
                    "ratio": val / bound, "pass": bool(val <= bound * (1 + slack))})
    return out


def stability_scan(ws, ctx: ThresholdContext, xi_grid, angles: int = K_ANGLES) -> dict:
    """Rank of F(xi) and the largest annulus resolvent norm over the points of ``xi_grid`` in |xi| <= delta0."""
    xi_grid = np.atleast_2d(np.asarray(xi_grid, dtype=float))
    inside = xi_grid[np.linalg.norm(xi_grid, axis=1) <= ctx.gap.delta0 * (1 + 1e-12)]
    zs = _annulus_points(ctx.gap.d0, angles=angles)
    ranks, worst = [], 0.0
    for xi in inside:
        A = ws.assembler.fibre(xi).A
        ranks.append(riesz_projector(A, ctx.gap).rank)
        worst = max(worst, max(resolvent_norm(A, z) for z in zs))
    return {"points": len(inside), "ranks": ranks, "max_annulus_resolvent": worst,
            "annulus_cap": 1.5 * ctx.gap.K}
