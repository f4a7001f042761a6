"""Fibre-wise resolvent comparison, sup over the dual cell, epsilon sweeps,
rate fits, the scaled certificate and ablations.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NumericError, UsageError
from .effective import effective_fibre_resolvent
from .grid import operator_norm
from .threshold import fit_loglog

ABLATION_MODES = ("no-drift", "no-q0", "neither")
SCALED_SLOPE_WINDOW = (0.8, 1.15)
DEFAULT_EPS = tuple(2.0**-k for k in range(2, 8))


@dataclass
class SweepConfig:
    eps: tuple = DEFAULT_EPS
    xi_count: int | None = None          # per axis; 64 in 1D, 16 in 2D
    patch_count: int = 16
    patch_directions: int | None = None  # 2 in 1D, 8 in 2D
    ablations: tuple = ()

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        if len(eps) < 1 or min(eps) <= 0 or any(b >= a for a, b in zip(eps[:-1], eps[1:])):
            raise UsageError("sweep.eps: values must be positive and strictly decreasing")
        self.eps = eps
        for m in self.ablations:
            if m not in ABLATION_MODES:
                raise UsageError(f"sweep.ablations: unknown mode {m!r}; expected {ABLATION_MODES}")

    def xi_grid(self, d: int, delta0: float, g_min: float | None = None, alpha=None) -> np.ndarray:
        """Uniform grid over [-pi, pi)^d plus a geometric refinement patch around xi = 0.

        The patch starts below min(eps)/2 and delta0/2. Without drift the error
        peaks near |xi| = eps / sqrt(g), so when the smallest eigenvalue ``g_min``
        of g0 is given the patch extends to 2 max(eps) / sqrt(g_min) (capped at pi).
        In 2D the patch directions start orthogonal to ``alpha``, where the drift
        gives no damping.
        """
        n = self.xi_count or (64 if d == 1 else 16)
        axis = -np.pi + 2 * np.pi * np.arange(n) / n
        uniform = np.stack([m.ravel() for m in np.meshgrid(*([axis] * d), indexing="ij")], axis=-1)
        ndir = self.patch_directions or (2 if d == 1 else 8)
        if d == 1:
            dirs = np.array([[1.0], [-1.0]])[:ndir]
        else:
            a = np.zeros(2) if alpha is None else np.asarray(alpha, float)
            base = np.arctan2(a[1], a[0]) + np.pi / 2 if np.linalg.norm(a) > 1e-12 else 0.0
            th = base + 2 * np.pi * np.arange(ndir) / ndir
            dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        lo = 0.5 * min(min(self.eps), delta0)
        hi = delta0
        if g_min is not None and g_min > 0:
            hi = min(np.pi, max(delta0, 2 * max(self.eps) / np.sqrt(g_min)))
        mags = np.geomspace(lo, hi, self.patch_count)
        patch = (mags[:, None, None] * dirs[None, :, :]).reshape(-1, d)
        return np.concatenate([uniform, patch])


def _variants(ws, modes):
    """Effective-model parameter overrides per curve name."""
    out = {"full": (None, None)}
    zero = np.zeros(ws.grid.d)
    ones = np.ones(ws.grid.N)
    for m in modes:
        if m == "no-drift":
            out[m] = (zero, None)
        elif m == "no-q0":
            out[m] = (None, ones)
        else:
            out[m] = (zero, ones)
    return out


def check_ablation(ws, mode, tol=1e-10):
    """Reject ablations that would be no-ops on this model."""
    if mode in ("no-drift",) and np.abs(ws.model.alpha).max() <= tol:
        raise UsageError(f"ablation {mode!r} needs a nonzero drift; alpha = {ws.model.alpha}",
                         stage="ablation")
    if mode == "no-q0" and np.abs(ws.stationary.q0 - 1).max() <= tol:
        raise UsageError("ablation 'no-q0' needs a nonconstant stationary density", stage="ablation")


def true_resolvent(A: np.ndarray, eps: float) -> np.ndarray:
    N = A.shape[0]
    try:
        return sla.solve(A + eps**2 * np.eye(N), np.eye(N))
    except sla.LinAlgError as exc:
        raise NumericError(f"fibre_error: factorization failed ({exc})", stage="fibre_error")


def fibre_error(ws, fibre, eps: float, alpha=None, q0=None) -> float:
    """|(A(xi) + eps^2)^{-1} - effective fibre resolvent| in operator norm."""
    R = true_resolvent(fibre.A, eps)
    R0 = effective_fibre_resolvent(ws.grid, ws.model, fibre.xi, eps, alpha=alpha, q0=q0)
    return operator_norm(R - R0)


def _errors_at(ws, xi, eps_list, variants):
    fib = ws.assembler.fibre(xi)
    out = np.zeros((len(variants), len(eps_list)))
    for j, eps in enumerate(eps_list):
        R = true_resolvent(fib.A, eps)
        for i, (alpha, q0) in enumerate(variants.values()):
            R0 = effective_fibre_resolvent(ws.grid, ws.model, xi, eps, alpha=alpha, q0=q0)
            out[i, j] = operator_norm(R - R0)
    return out


def sweep_errors(ws, xi_grid, eps_list, modes=(), threads: int = 1) -> dict:
    """Per-curve arrays of shape (len(xi_grid), len(eps_list))."""
    for m in modes:
        check_ablation(ws, m)
    variants = _variants(ws, modes)
    ws.assembler.potential  # warm the shared cache before threads start
    work = lambda xi: _errors_at(ws, xi, eps_list, variants)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, xi_grid))
    else:
        rows = [work(xi) for xi in xi_grid]
    stack = np.stack(rows)  # (xi, variant, eps)
    return {name: stack[:, i, :] for i, name in enumerate(variants)}


def sup_sweep(ws, xi_grid, eps: float, threads: int = 1) -> float:
    """E(eps): maximum fibre error over the quasimomentum grid."""
    return float(sweep_errors(ws, xi_grid, [eps], threads=threads)["full"].max())


def fit_rate(eps, E):
    """(slope, intercept, rms residual) of log E against log eps."""
    eps = np.asarray(eps, float)
    E = np.asarray(E, float)
    if len(eps) < 4:
        raise UsageError("fit_rate: need at least 4 points")
    if np.any(E <= 0) or np.any(eps <= 0):
        raise UsageError("fit_rate: values must be positive")
    return fit_loglog(eps, E)


@dataclass
class RateReport:
    eps: np.ndarray
    E: np.ndarray
    fit: tuple
    scaled: np.ndarray
    scaled_fit: tuple
    C_hat: float
    C_ledger: float
    verdict: str
    decays: bool
    ablations: dict = field(default_factory=dict)
    xi_grid: np.ndarray | None = None
    errors: np.ndarray | None = None
    argmax_xi: np.ndarray | None = None


def scaled_certificate(eps, E, window=SCALED_SLOPE_WINDOW):
    """eps^2 E(eps) with its fitted slope; PASS if the slope lies in ``window``."""
    eps = np.asarray(eps, float)
    scaled = eps**2 * np.asarray(E, float)
    fit = fit_rate(eps, scaled)
    ok = window[0] <= fit[0] <= window[1]
    return scaled, fit, ("PASS" if ok else "FAIL")


def rate_report(ws, ctx, config: SweepConfig | None = None, threads: int = 1) -> RateReport:
    config = config or SweepConfig()
    g_min = float(np.linalg.eigvalsh(ws.model.g0)[0])
    grid_xi = config.xi_grid(ws.grid.d, ctx.gap.delta0, g_min, ws.model.alpha)
    curves = sweep_errors(ws, grid_xi, config.eps, config.ablations, threads)
    eps = np.asarray(config.eps)
    full = curves.pop("full")
    E = full.max(axis=0)
    fit = fit_rate(eps, E)
    scaled, sfit, verdict = scaled_certificate(eps, E)
    abl = {}
    for name, errs in curves.items():
        Em = errs.max(axis=0)
        s, f, v = scaled_certificate(eps, Em)
        abl[name] = {"E": Em, "fit": fit_rate(eps, Em), "scaled": s, "scaled_fit": f, "verdict": v}
    return RateReport(eps, E, fit, scaled, sfit, float(np.max(eps * E)), ctx.ledger.C_rate, verdict,
                      bool(scaled[-1] < scaled[0] / 4), abl, grid_xi, full,
                      grid_xi[np.argmax(full, axis=0)])


def ablation(ws, ctx, mode: str, config: SweepConfig | None = None, threads: int = 1) -> dict:
    if mode not in ABLATION_MODES:
        raise UsageError(f"unknown ablation mode {mode!r}")
    config = config or SweepConfig()
    cfg = SweepConfig(config.eps, config.xi_count, config.patch_count, config.patch_directions, (mode,))
    return rate_report(ws, ctx, cfg, threads).ablations[mode]
