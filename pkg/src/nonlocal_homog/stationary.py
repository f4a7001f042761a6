"""Stationary density q0 spanning the kernel of A(0)^*, and the projectors
P = (., q0) 1, P0 = (., 1) 1, Q = I - P.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from .errors import AssemblyError, NumericError, SpectralError
from .grid import CellGrid, operator_norm

DENSE_LIMIT = 4096
GAP_MIN = 1e-6
EIG_TOL = 1e-8
RESIDUAL_RTOL = 1e-8
PROJECTOR_TOL = 1e-10


@dataclass
class StationaryDensity:
    psi0: np.ndarray
    q0: np.ndarray
    q_minus: float
    q_plus: float
    psi_minus: float
    psi_plus: float
    gap: float
    eigenvalue: complex
    residual: float = float("nan")
    psi_max_observed: float = float("nan")


@dataclass
class ProjectorSet:
    P: np.ndarray
    P0: np.ndarray
    Q: np.ndarray
    defects: dict


def build_G(B0: np.ndarray, p: np.ndarray) -> np.ndarray:
    """G = B(0)^* diag(1/p); its adjoint fixes the constant function."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise AssemblyError("build_G: potential has a nonpositive node", stage="build_G")
    return np.asarray(B0).conj().T / p[None, :]


def _fix_phase(v: np.ndarray) -> np.ndarray:
    v = v / np.exp(1j * np.angle(v[np.argmax(np.abs(v))]))
    if v.real.mean() < 0:
        v = -v
    return v


def _inverse_iteration(G, shift=1.0 + 1e-3, tol=1e-13, max_iter=500):
    N = G.shape[0]
    lu = sla.lu_factor(G - shift * np.eye(N))
    v = np.ones(N) / np.sqrt(N)
    lam = shift
    for _ in range(max_iter):
        w = sla.lu_solve(lu, v)
        w /= np.linalg.norm(w)
        lam = np.vdot(w, G @ w)
        if np.linalg.norm(G @ w - lam * w) <= tol * max(1.0, abs(lam)):
            v = w
            break
        v = w
    try:
        near = eigs(G, k=3, sigma=shift, return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        raise SpectralError(f"solve_stationary: gap estimate did not converge ({exc})")
    others = sorted(np.abs(near - lam))[1:]
    return lam, v, float(others[0])


def solve_stationary(G: np.ndarray, grid: CellGrid):
    """Positive eigenvector of G at eigenvalue 1, normalized to unit integral.

    Returns (psi0, gap, eigenvalue).
    """
    N = G.shape[0]
    if N <= DENSE_LIMIT:
        vals, vecs = sla.eig(G)
        i = int(np.argmin(np.abs(vals - 1.0)))
        lam, v = vals[i], vecs[:, i]
        others = np.delete(vals, i)
        gap = float(np.min(np.abs(others - 1.0))) if others.size else np.inf
        # simplicity: a single eigenvalue in the disc of radius gap/2
        inside = int(np.sum(np.abs(vals - 1.0) < 0.5 * gap))
        if inside != 1:
            raise SpectralError(f"solve_stationary: {inside} eigenvalues near 1", stage="solve_stationary")
    else:
        lam, v, gap = _inverse_iteration(G)
    if abs(lam - 1.0) > EIG_TOL:
        raise SpectralError(f"solve_stationary: eigenvalue nearest 1 is {lam:.12g}", stage="solve_stationary")
    if gap <= GAP_MIN:
        raise SpectralError(f"solve_stationary: gap {gap:.3g} below {GAP_MIN:g}", stage="solve_stationary")
    v = _fix_phase(v)
    scale = np.abs(v).max()
    if np.abs(v.imag).max() > 1e-8 * scale:
        raise SpectralError("solve_stationary: eigenvector is not real after phase alignment",
                            stage="solve_stationary")
    psi = v.real
    if psi.min() <= -1e-10 * scale or psi.min() <= 0:
        raise SpectralError(f"solve_stationary: eigenvector changes sign (min {psi.min():.3g})",
                            stage="solve_stationary")
    psi = psi / (grid.weight * psi.sum())
    return psi, gap, complex(lam)


def derive_q0(psi0: np.ndarray, p: np.ndarray, grid: CellGrid, gap: float = float("nan"),
              eigenvalue: complex = 1.0, A0: np.ndarray | None = None) -> StationaryDensity:
    """q0 = c psi0 / p with c fixed by unit integral; checks A(0)^* q0 = 0 when A0 is given."""
    q = psi0 / p
    q = q / (grid.weight * q.sum())
    out = StationaryDensity(psi0, q, float(q.min()), float(q.max()), float(psi0.min()),
                            float(psi0.max()), gap, eigenvalue, psi_max_observed=float(psi0.max()))
    if A0 is not None:
        res = float(np.sqrt(grid.weight) * np.linalg.norm(A0.conj().T @ q))
        scale = operator_norm(A0)
        out.residual = res / scale
        if res > RESIDUAL_RTOL * scale:
            raise SpectralError(f"derive_q0: |A(0)^* q0| = {res:.3g} exceeds {RESIDUAL_RTOL:g} |A(0)|",
                                stage="derive_q0")
    return out


def build_projectors(q0: np.ndarray, grid: CellGrid, A0: np.ndarray | None = None,
                     tol: float = PROJECTOR_TOL) -> ProjectorSet:
    """Matrices of P u = (u, q0) 1, P0 u = (u, 1) 1 and Q = I - P."""
    N = grid.N
    ones = np.ones(N)
    P0 = grid.weight * np.outer(ones, ones)
    P = P0 * q0[None, :]
    Q = np.eye(N) - P
    defects = {
        "P^2-P": operator_norm(P @ P - P),
        "Q^2-Q": operator_norm(Q @ Q - Q),
        "PQ": operator_norm(P @ Q),
    }
    if A0 is not None:
        scale = operator_norm(A0)
        defects["A0P"] = operator_norm(A0 @ P) / scale
        defects["PA0"] = operator_norm(P @ A0) / scale
    bad = {k: v for k, v in defects.items() if v > (RESIDUAL_RTOL if k.startswith(("A0", "PA")) else tol)}
    if bad:
        raise NumericError(f"build_projectors: identities fail {bad}", stage="build_projectors")
    return ProjectorSet(P, P0, Q, defects)
