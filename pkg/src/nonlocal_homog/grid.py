"""Uniform midpoint grid on the unit cell, weighted L2 geometry, discrete
Fourier basis and operator norms.

Grid functions are plain complex (or real) numpy vectors of length N = n**d,
flattened in C order. The inner product is h^d * sum(u * conj(v)).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericError, UsageError

NORM_RTOL = 1e-8
DENSE_NORM_LIMIT = 256


@dataclass(frozen=True)
class CellGrid:
    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigError(f"grid.d: must be 1 or 2, got {self.d}")
        if self.n < 2 or self.n % 2:
            raise ConfigError(f"grid.n: must be an even integer >= 2, got {self.n}")

    @property
    def N(self) -> int:
        return self.n**self.d

    @property
    def weight(self) -> float:
        return float(self.n) ** -self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        """(N, d) array of cell midpoints."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def frequencies(self) -> np.ndarray:
        """(N, d) integer frequency vectors in {-n/2, ..., n/2-1}^d."""
        f = np.arange(-self.n // 2, self.n // 2)
        mesh = np.meshgrid(*([f] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def zero_frequency(self) -> int:
        return int(np.flatnonzero(~self.frequencies.any(axis=1))[0])

    @cached_property
    def difference_index(self) -> np.ndarray:
        """(N, N) index m(i, j) with x_i - x_j = m / n modulo Z^d, flattened like the nodes."""
        n, d = self.n, self.d
        coords = np.stack(np.unravel_index(np.arange(self.N), (n,) * d), axis=-1)
        diff = (coords[:, None, :] - coords[None, :, :]) % n
        return np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), (n,) * d)

    @cached_property
    def difference_offsets(self) -> np.ndarray:
        """(N, d) offsets m / n reduced to [-1/2, 1/2)^d, indexed as in ``difference_index``."""
        steps = np.arange(self.n)
        mesh = np.meshgrid(*([steps] * self.d), indexing="ij")
        o = np.stack([m.ravel() for m in mesh], axis=-1) / self.n
        return o - np.floor(o + 0.5)

    def ones(self) -> np.ndarray:
        return np.ones(self.N)

    def check(self, u, name="u"):
        u = np.asarray(u)
        if u.shape != (self.N,):
            raise UsageError(f"{name}: expected a grid function of length {self.N}, got shape {u.shape}")
        return u


def inner_product(u, v, grid: CellGrid | None = None) -> complex:
    """Weighted L2 inner product, linear in the first argument."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.ndim != 1:
        raise UsageError(f"inner_product: grid mismatch, shapes {u.shape} and {v.shape}")
    if grid is not None:
        grid.check(u)
    w = 1.0 / u.size if grid is None else grid.weight
    return complex(w * np.vdot(v, u))


def norm(u, grid: CellGrid | None = None) -> float:
    return float(np.sqrt(inner_product(u, u, grid).real))


def integral(u, grid: CellGrid) -> complex:
    return complex(grid.weight * np.sum(grid.check(u)))


def dft_basis(grid: CellGrid) -> np.ndarray:
    """Analysis matrix: node values -> plane-wave coefficients.

    Row m holds h^d exp(-2 pi i <k_m, x_j>), so it is unitary from weighted L2
    to plain l2 over the frequency set.
    """
    phase = grid.frequencies @ grid.nodes.T
    return grid.weight * np.exp(-2j * np.pi * phase)


def dft_synthesis(grid: CellGrid) -> np.ndarray:
    """Inverse of :func:`dft_basis`: coefficients -> node values."""
    return np.exp(2j * np.pi * (grid.nodes @ grid.frequencies.T))


def fourier_resample(u, source: CellGrid, target: CellGrid) -> np.ndarray:
    """Trigonometric interpolation of grid values onto another grid's nodes.

    The Nyquist frequency is dropped so real data stays real.
    """
    if source.d != target.d:
        raise UsageError("fourier_resample: grids differ in dimension")
    coef = dft_basis(source) @ source.check(u)
    keep = np.all(source.frequencies > -source.n // 2, axis=1)
    phase = target.nodes @ source.frequencies[keep].T
    out = np.exp(2j * np.pi * phase) @ coef[keep]
    return out.real if np.isrealobj(u) else out


def operator_norm(M, *, rtol: float = NORM_RTOL, seed: int = 0) -> float:
    """Largest singular value of a dense matrix.

    Small matrices use a dense SVD. Larger ones run Lanczos (ARPACK) on
    M^H M, whose Krylov space copes with clustered top singular values far
    better than plain power iteration; a dense SVD is the fallback.
    """
    M = np.asarray(M)
    if not np.all(np.isfinite(M)):
        raise NumericError("operator_norm: matrix has non-finite entries")
    if M.size == 0 or not np.any(M):
        return 0.0
    if min(M.shape) <= DENSE_NORM_LIMIT:
        return float(sla.svdvals(M)[0])
    MH = M.conj().T
    gram = spla.LinearOperator((M.shape[1], M.shape[1]), matvec=lambda v: MH @ (M @ v),
                               dtype=np.result_type(M.dtype, np.complex128))
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(M.shape[1]) + 1j * rng.standard_normal(M.shape[1])
    try:
        top = spla.eigsh(gram, k=1, which="LM", v0=v0, tol=rtol * 1e-4, return_eigenvectors=False)
        return float(np.sqrt(max(top[0].real, 0.0)))
    except spla.ArpackError:
        pass
    try:
        return float(sla.svdvals(M)[0])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"operator_norm: Lanczos and SVD both failed ({exc})")
