"""Nystrom assembly of the fibre operators A(xi) = diag(p) - B(xi), their
xi-derivatives at 0, the constant-coefficient symbol oracle and the
coercivity constant C(a).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import optimize

from .errors import AssemblyError, NumericError, UsageError
from .grid import CellGrid, dft_basis, dft_synthesis, operator_norm
from .kernel import (KernelSpec, MuSpec, TruncationPlan, eval_kernel, eval_mu, fourier_transform,
                     length_scale, lattice_terms, moment, mu_bounds,
                     second_moment_matrix, _eval_part, _support_box)

# relative slack on structural bounds; covers rectangle-rule error for smooth kernels
BOUND_RTOL = 1e-6


@dataclass
class FibreMatrix:
    xi: np.ndarray
    A: np.ndarray
    B: np.ndarray
    p: np.ndarray


@dataclass
class DerivativeStack:
    """first[j] = d_j A(0); second[k][l] = d_k d_l A(0)."""
    first: list
    second: list


class FibreAssembler:
    """Caches everything about (grid, kernel, mu, plan) that does not depend on xi.

    Offsets x_i - x_j reduced modulo Z^d take only n^d distinct values, so the
    periodized kernel is tabulated on those and gathered into N x N matrices.
    """

    def __init__(self, grid: CellGrid, kspec: KernelSpec, mspec: MuSpec, plan: TruncationPlan,
                 check_bounds: bool = True):
        if kspec.dim != grid.d:
            raise UsageError(f"kernel dimension {kspec.dim} does not match grid dimension {grid.d}")
        if mspec.dim not in (None, grid.d):
            raise UsageError(f"mu dimension {mspec.dim} does not match grid dimension {grid.d}")
        self.grid, self.kspec, self.mspec, self.plan = grid, kspec, mspec, plan
        self.check_bounds = check_bounds
        self.mu_minus, self.mu_plus = mu_bounds(mspec)
        self.mass = kspec.mass

        self.offsets = grid.difference_offsets
        self.diff_index = grid.difference_index

        x = grid.nodes
        self.mu = eval_mu(mspec, x[:, None, :], x[None, :, :])
        self.shells = [(w, vals) for w, vals in lattice_terms(kspec, self.offsets, plan)]

    # ---------------------------------------------------------- tabulations
    def kernel_table(self, xi) -> np.ndarray:
        """Periodized kernel on the distinct offsets."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        out = np.zeros(len(self.offsets), dtype=complex)
        for w, vals in self.shells:
            out += vals * np.exp(-1j * (w @ xi))
        return out

    def moment_table(self, powers) -> np.ndarray:
        """sum_n prod_j (z+n)_j^{powers_j} a(z+n) at xi = 0 on the distinct offsets."""
        out = np.zeros(len(self.offsets))
        for w, vals in self.shells:
            out += np.prod(w ** np.asarray(powers), axis=-1) * vals
        return out

    def gather(self, table) -> np.ndarray:
        """Integral-operator matrix h^d * table(x_i - x_j) * mu(x_i, x_j)."""
        return self.grid.weight * table[self.diff_index] * self.mu

    # ------------------------------------------------------------ operators
    @cached_property
    def potential(self) -> np.ndarray:
        B0 = self.gather(self.kernel_table(np.zeros(self.grid.d)).real)
        p = B0.sum(axis=1)
        if self.check_bounds:
            lo = self.mu_minus * self.mass * (1 - BOUND_RTOL)
            hi = self.mu_plus * self.mass * (1 + BOUND_RTOL)
            if p.min() < lo or p.max() > hi or p.min() <= 0:
                raise AssemblyError(
                    f"potential outside [mu_- |a|, mu_+ |a|] = [{lo:.6g}, {hi:.6g}]: "
                    f"range [{p.min():.6g}, {p.max():.6g}] (truncation or quadrature too coarse)",
                    stage="assemble_potential")
        return p

    def fibre(self, xi) -> FibreMatrix:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if xi.shape != (self.grid.d,):
            raise UsageError(f"quasimomentum must have {self.grid.d} components, got {xi.shape}")
        B = self.gather(self.kernel_table(xi))
        p = self.potential
        if self.check_bounds:
            absB = np.abs(B)
            schur = math.sqrt(absB.sum(axis=0).max() * absB.sum(axis=1).max())
            if schur > self.mu_plus * self.mass * (1 + BOUND_RTOL):
                raise AssemblyError(f"Schur bound violated: {schur:.6g} > mu_+ |a| = "
                                    f"{self.mu_plus * self.mass:.6g}", stage="assemble_fibre")
        A = -B
        A[np.diag_indices_from(A)] += p
        return FibreMatrix(xi, A, B, p)

    def derivatives(self) -> DerivativeStack:
        d = self.grid.d
        first = []
        for j in range(d):
            pw = [0] * d
            pw[j] = 1
            first.append(1j * self.gather(self.moment_table(pw)))
        second = [[None] * d for _ in range(d)]
        for k in range(d):
            for l in range(k, d):
                pw = [0] * d
                pw[k] += 1
                pw[l] += 1
                m = self.gather(self.moment_table(pw)).astype(complex)
                second[k][l] = second[l][k] = m
        if self.check_bounds:
            m1 = self.mu_plus * moment(self.kspec, 1) * (1 + BOUND_RTOL)
            m2 = self.mu_plus * moment(self.kspec, 2) * (1 + BOUND_RTOL)
            for j, D in enumerate(first):
                nrm = operator_norm(D)
                if nrm > m1:
                    raise AssemblyError(f"|d_{j}A(0)| = {nrm:.6g} exceeds mu_+ M_1 = {m1:.6g}",
                                        stage="assemble_derivatives")
            for k in range(d):
                for l in range(k, d):
                    nrm = operator_norm(second[k][l])
                    if nrm > m2:
                        raise AssemblyError(f"|d_{k}d_{l}A(0)| = {nrm:.6g} exceeds mu_+ M_2 = {m2:.6g}",
                                            stage="assemble_derivatives")
        return DerivativeStack(first, second)


def assemble_potential(grid, kspec, mspec, plan) -> np.ndarray:
    return FibreAssembler(grid, kspec, mspec, plan).potential


def assemble_fibre(grid, kspec, mspec, xi, plan) -> FibreMatrix:
    return FibreAssembler(grid, kspec, mspec, plan).fibre(xi)


def assemble_derivatives(grid, kspec, mspec, plan) -> DerivativeStack:
    return FibreAssembler(grid, kspec, mspec, plan).derivatives()


def symbol_oracle_mu1(grid: CellGrid, kspec: KernelSpec, xi, mspec: MuSpec | None = None) -> np.ndarray:
    """F* diag(a_hat(0) - a_hat(2 pi n + xi)) F for mu == 1."""
    if mspec is not None and not (mspec.is_constant and mspec.value == 1.0):
        raise UsageError("symbol_oracle_mu1 requires mu == 1", stage="symbol_oracle_mu1")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    k = 2 * np.pi * grid.frequencies + xi
    symbol = fourier_transform(kspec, np.zeros(grid.d)) - fourier_transform(kspec, k)
    return dft_synthesis(grid) @ (symbol[:, None] * dft_basis(grid))


def hermitian_min_eig(M) -> float:
    """Smallest eigenvalue of (M + M^H) / 2."""
    M = np.asarray(M)
    return float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])


# ---------------------------------------------------------------- coercivity

def _gauss_rule(kspec: KernelSpec, per_panel=None):
    """Tensor Gauss-Legendre nodes/weights carrying the kernel mass, split at each centre."""
    if per_panel is None:
        per_panel = 96 if kspec.dim == 1 else 48
    pts, wts = [], []
    x0, w0 = np.polynomial.legendre.leggauss(per_panel)
    for part in kspec.parts():
        lo, hi = _support_box(part, rel=1e-15)
        axes = []
        for i in range(kspec.dim):
            cuts = sorted({lo[i], hi[i], min(max(part.center[i], lo[i]), hi[i])})
            xs, ws = [], []
            for a, b in zip(cuts[:-1], cuts[1:]):
                if b > a:
                    xs.append(0.5 * (b - a) * x0 + 0.5 * (a + b))
                    ws.append(0.5 * (b - a) * w0)
            axes.append((np.concatenate(xs), np.concatenate(ws)))
        mesh = np.meshgrid(*[ax[0] for ax in axes], indexing="ij")
        wmesh = np.meshgrid(*[ax[1] for ax in axes], indexing="ij")
        z = np.stack([m.ravel() for m in mesh], axis=-1)
        w = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=-1)
        pts.append(z)
        wts.append(w * _eval_part(part, z))
    return np.concatenate(pts), np.concatenate(wts)


def _phi(lam):
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < 1e-3
    safe = np.where(small, 1.0, lam)
    return np.where(small, 0.5 - lam**2 / 24 + lam**4 / 720, (1 - np.cos(safe)) / safe**2)


def _directions(d, count=32):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    th = np.pi * np.arange(count) / count
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


@dataclass
class CoercivityEstimate:
    kspec: KernelSpec
    M_a: float
    r_a: float
    C_r: float
    C_pi: float
    C_a: float
    search_radius: float
    plateau_min: float

    def A_hat(self, y) -> np.ndarray:
        """A_hat(y) = int (1 - cos<z, y>) a(z) dz."""
        return self.kspec.mass - fourier_transform(self.kspec, y).real

    def E(self, xi) -> np.ndarray:
        """int a(z) |z|^2 |Phi(<xi, z>) - 1/2| dz."""
        z, w = _gauss_rule(self.kspec)
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if self.kspec.dim == 1 and xi.shape[-1] != 1:
            xi = xi.reshape(-1, 1)
        lam = xi @ z.T
        return np.abs(_phi(lam) - 0.5) @ (w * np.sum(z**2, axis=-1))


def _min_A_hat(kspec, r, Y, d):
    mass = kspec.mass
    f = lambda y: mass - fourier_transform(kspec, y).real
    if d == 1:
        ys = np.linspace(r, Y, 40001)[:, None]
        vals = f(ys)
        i = int(np.argmin(vals))
        lo, hi = ys[max(i - 1, 0), 0], ys[min(i + 1, len(ys) - 1), 0]
        res = optimize.minimize_scalar(lambda t: float(f(np.array([[t]]))[0]), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-12})
        return float(min(vals[i], res.fun))
    rads = np.linspace(r, Y, 801)
    dirs = _directions(2, 256)
    ys = (rads[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    vals = f(ys)
    i = int(np.argmin(vals))
    y0 = ys[i]

    def g(t):
        y = np.asarray(t)
        rad = np.linalg.norm(y)
        if rad < r or rad > Y:
            return np.inf
        return float(f(y[None, :])[0])

    res = optimize.minimize(g, y0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
    return float(min(vals[i], res.fun))


def coercivity_constant(kspec: KernelSpec) -> CoercivityEstimate:
    """Estimate M(a), r(a), C_r(a), C_pi(a) and C(a) = min{M/4, C_r/(pi^2 d), C_pi/(pi^2 d)}."""
    d = kspec.dim
    M_a = float(np.linalg.eigvalsh(second_moment_matrix(kspec))[0])
    if M_a <= 0:
        raise NumericError("coercivity: second-moment form is not positive", stage="coercivity_constant")
    Y = max(8 * np.pi, 10.0 / length_scale(kspec))

    est = CoercivityEstimate(kspec, M_a, 0.0, 0.0, 0.0, 0.0, Y, 0.0)
    radii = np.geomspace(1e-3, Y, 97)
    dirs = _directions(d)
    E = est.E((radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)).reshape(len(radii), -1).max(axis=1)
    ok = E <= 0.25 * M_a
    if not ok[0]:
        raise NumericError("coercivity: E(xi) exceeds M(a)/4 at the smallest sampled radius",
                           stage="coercivity_constant")
    first_bad = len(radii) if ok.all() else int(np.argmin(ok))
    r_a = float(radii[first_bad - 1])

    C_r = _min_A_hat(kspec, r_a, Y, d)
    C_pi = _min_A_hat(kspec, np.pi, Y, d) if r_a < np.pi else C_r
    # plateau check beyond the search box
    far = np.linspace(Y, 4 * Y, 4001)
    far_pts = (far[:, None, None] * _directions(d, 64)[None, :, :]).reshape(-1, d)
    plateau = float(est.A_hat(far_pts).min())
    C_r, C_pi = min(C_r, plateau), min(C_pi, plateau)
    C_a = min(0.25 * M_a, C_r / (np.pi**2 * d), C_pi / (np.pi**2 * d))
    if min(C_r, C_pi, C_a) <= 0:
        raise NumericError(f"coercivity: nonpositive minimum (C_r={C_r:.3g}, C_pi={C_pi:.3g})",
                           stage="coercivity_constant")
    est.r_a, est.C_r, est.C_pi, est.C_a, est.plateau_min = r_a, C_r, C_pi, C_a, plateau
    return est
