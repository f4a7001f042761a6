"""Convolution kernels a(z), periodic coefficients mu(x, y), and the lattice
periodization of the kernel at a quasimomentum.

Kernels are ``amplitude`` times a probability density, so ``||a||_1`` equals
the amplitude (or the sum of the component amplitudes for a mixture).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import ConfigError

KERNEL_FAMILIES = ("gaussian", "box", "exponential", "mixture")
MU_FAMILIES = ("constant", "exp-trig", "separable-trig")
TRIG_KINDS = ("cos", "sin")

MAX_TRUNCATION_RADIUS = 64
MOMENT_RTOL = 1e-10
# shells whose kernel values never exceed this fraction of the peak are dropped
# during assembly; they are below double precision resolution of the sum
_SHELL_PRUNE = 1e-20


def _as_vec(v, name):
    try:
        arr = np.atleast_1d(np.asarray(v, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a numeric vector, got {v!r}")
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name}: expected a finite numeric vector, got {v!r}")
    return tuple(float(x) for x in arr)


@dataclass(frozen=True)
class KernelSpec:
    """Analytic description of a nonnegative kernel a(z) on R^d, d in {1, 2}.

    gaussian     amplitude * N(center, covariance)
    box          amplitude * uniform density on prod [c_k - h_k, c_k + h_k)
    exponential  amplitude * density proportional to exp(-rate |z - center|)
    mixture      sum of ``components``
    """

    family: str
    center: tuple = (0.0,)
    amplitude: float = 1.0
    covariance: tuple | None = None
    halfwidths: tuple | None = None
    rate: float | None = None
    components: tuple = ()

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigError(f"kernel.family: unknown family {self.family!r}; "
                              f"expected one of {KERNEL_FAMILIES}")
        if self.family == "mixture":
            if not self.components:
                raise ConfigError("kernel.components: mixture needs at least one component")
            dims = {c.dim for c in self.components}
            if len(dims) != 1:
                raise ConfigError("kernel.components: components differ in dimension")
            if any(c.family == "mixture" for c in self.components):
                raise ConfigError("kernel.components: nested mixtures are not supported")
            return
        object.__setattr__(self, "center", _as_vec(self.center, "kernel.center"))
        d = len(self.center)
        if d not in (1, 2):
            raise ConfigError(f"kernel.center: dimension must be 1 or 2, got {d}")
        if not (self.amplitude > 0 and math.isfinite(self.amplitude)):
            raise ConfigError(f"kernel.amplitude: must be positive, got {self.amplitude}")
        if self.family == "gaussian":
            if self.covariance is None:
                raise ConfigError("kernel.covariance: required for gaussian")
            cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
            if cov.shape != (d, d):
                raise ConfigError(f"kernel.covariance: expected shape {(d, d)}, got {cov.shape}")
            if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() <= 0:
                raise ConfigError("kernel.covariance: must be symmetric positive definite")
            object.__setattr__(self, "covariance", tuple(tuple(float(x) for x in row) for row in cov))
        elif self.family == "box":
            if self.halfwidths is None:
                raise ConfigError("kernel.halfwidths: required for box")
            hw = _as_vec(self.halfwidths, "kernel.halfwidths")
            if len(hw) != d or min(hw) <= 0:
                raise ConfigError(f"kernel.halfwidths: need {d} positive values, got {hw}")
            object.__setattr__(self, "halfwidths", hw)
        elif self.family == "exponential":
            if self.rate is None or not (self.rate > 0 and math.isfinite(self.rate)):
                raise ConfigError(f"kernel.rate: must be positive, got {self.rate}")
            object.__setattr__(self, "rate", float(self.rate))

    @property
    def dim(self) -> int:
        if self.family == "mixture":
            return self.components[0].dim
        return len(self.center)

    @property
    def mass(self) -> float:
        if self.family == "mixture":
            return sum(c.mass for c in self.components)
        return self.amplitude

    def parts(self):
        return self.components if self.family == "mixture" else (self,)


def gaussian(center, variance_or_cov, amplitude=1.0) -> KernelSpec:
    c = _as_vec(center, "center")
    cov = np.asarray(variance_or_cov, dtype=float)
    if cov.ndim == 0:
        cov = cov * np.eye(len(c))
    return KernelSpec("gaussian", c, amplitude, covariance=cov.tolist())


# ---------------------------------------------------------------- evaluation

def _exp_norm(d, rate):
    sphere = 2.0 if d == 1 else 2.0 * math.pi
    return rate**d / (sphere * math.gamma(d))


def _eval_part(spec: KernelSpec, z: np.ndarray) -> np.ndarray:
    c = np.asarray(spec.center)
    w = z - c
    d = spec.dim
    if spec.family == "gaussian":
        cov = np.asarray(spec.covariance)
        icov = np.linalg.inv(cov)
        q = np.einsum("...i,ij,...j->...", w, icov, w)
        norm = 1.0 / math.sqrt((2 * math.pi) ** d * np.linalg.det(cov))
        return spec.amplitude * norm * np.exp(-0.5 * q)
    if spec.family == "box":
        h = np.asarray(spec.halfwidths)
        inside = np.all((w >= -h) & (w < h), axis=-1)
        return np.where(inside, spec.amplitude / np.prod(2 * h), 0.0)
    r = np.linalg.norm(w, axis=-1)
    return spec.amplitude * _exp_norm(d, spec.rate) * np.exp(-spec.rate * r)


def _as_points(z, d):
    z = np.asarray(z, dtype=float)
    if d == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    if z.shape[-1] != d:
        raise ConfigError(f"point dimension {z.shape[-1]} does not match kernel dimension {d}")
    return z


def eval_kernel(spec: KernelSpec, z) -> np.ndarray | float:
    """Kernel values a(z). ``z`` has trailing axis d (or is scalar/1-D in 1D)."""
    pts = _as_points(z, spec.dim)
    out = sum(_eval_part(p, pts) for p in spec.parts())
    return float(out) if np.ndim(out) == 0 else out


def fourier_transform(spec: KernelSpec, k) -> np.ndarray:
    """Closed-form a_hat(k) = int a(x) exp(-i <k, x>) dx."""
    k = _as_points(k, spec.dim)
    out = np.zeros(k.shape[:-1], dtype=complex)
    for p in spec.parts():
        phase = np.exp(-1j * (k @ np.asarray(p.center)))
        if p.family == "gaussian":
            q = np.einsum("...i,ij,...j->...", k, np.asarray(p.covariance), k)
            mag = np.exp(-0.5 * q)
        elif p.family == "box":
            h = np.asarray(p.halfwidths)
            mag = np.prod(np.sinc(k * h / np.pi), axis=-1)
        else:
            s = np.sum(k**2, axis=-1) / p.rate**2
            mag = 1.0 / (1.0 + s) if p.dim == 1 else (1.0 + s) ** -1.5
        out = out + p.amplitude * mag * phase
    return out


def first_moment_vector(spec: KernelSpec) -> np.ndarray:
    """int z a(z) dz."""
    return sum(p.amplitude * np.asarray(p.center) for p in spec.parts())


def second_moment_matrix(spec: KernelSpec) -> np.ndarray:
    """int z z^T a(z) dz."""
    d = spec.dim
    out = np.zeros((d, d))
    for p in spec.parts():
        c = np.asarray(p.center)
        if p.family == "gaussian":
            cov = np.asarray(p.covariance)
        elif p.family == "box":
            cov = np.diag(np.asarray(p.halfwidths) ** 2 / 3.0)
        else:
            cov = (d + 1) / p.rate**2 * np.eye(d)
        out += p.amplitude * (cov + np.outer(c, c))
    return out


def length_scale(spec: KernelSpec) -> float:
    """Smallest per-axis standard deviation over the mixture parts."""
    return float(min(np.sqrt(np.linalg.eigvalsh(second_moment_matrix(p) / p.amplitude
                                                - np.outer(p.center, p.center)).min())
                     for p in spec.parts()))


# ------------------------------------------------------------------- moments

def _folded_normal_moment(m, s, k):
    e = math.exp(-m * m / (2 * s * s))
    t = 1.0 - 2.0 * special.ndtr(-m / s)
    root = s * math.sqrt(2.0 / math.pi) * e
    if k == 1:
        return root + m * t
    if k == 3:
        return (m * m + 2 * s * s) * root + m * (m * m + 3 * s * s) * t
    raise ValueError(k)


def _closed_form_moment(p: KernelSpec, k: int):
    d = p.dim
    c = np.asarray(p.center)
    if k == 0:
        return p.amplitude
    if k == 2:
        return float(np.trace(second_moment_matrix(p)))
    if p.family == "gaussian" and d == 1:
        return p.amplitude * _folded_normal_moment(c[0], math.sqrt(p.covariance[0][0]), k)
    if p.family == "exponential" and not np.any(c):
        return p.amplitude * math.gamma(d + k) / (math.gamma(d) * p.rate**k)
    if p.family == "box" and d == 1:
        lo, hi = c[0] - p.halfwidths[0], c[0] + p.halfwidths[0]
        anti = lambda x: math.copysign(abs(x) ** (k + 1), x) / (k + 1)
        return p.amplitude * (anti(hi) - anti(lo)) / (hi - lo)
    return None


def _support_box(p: KernelSpec, rel=1e-16):
    """Axis-aligned box outside which the mass of (1+|z|^3) a is negligible."""
    c = np.asarray(p.center)
    if p.family == "box":
        h = np.asarray(p.halfwidths)
        return c - h, c + h
    for R in range(1, 10_000):
        if _part_tail(p, R, about_center=True) <= rel * p.amplitude:
            return c - R, c + R
    raise ConfigError("kernel: cannot bound the support for quadrature")


def _quad_moment(p: KernelSpec, k: int) -> float:
    lo, hi = _support_box(p)
    opts = {"epsrel": MOMENT_RTOL, "epsabs": 0.0, "limit": 400}
    if p.dim == 1:
        pts = sorted({lo[0], hi[0], 0.0, p.center[0]})
        pts = [x for x in pts if lo[0] <= x <= hi[0]]
        f = lambda x: abs(x) ** k * _eval_part(p, np.array([x]))
        return float(sum(integrate.quad(f, a, b, **opts)[0] for a, b in zip(pts[:-1], pts[1:])))
    f = lambda x, y: math.hypot(x, y) ** k * float(_eval_part(p, np.array([x, y])))
    brk = []
    for i in range(2):
        cand = {lo[i], hi[i], 0.0, p.center[i]}
        brk.append(sorted(v for v in cand if lo[i] <= v <= hi[i]))
    total = 0.0
    for a0, b0 in zip(brk[0][:-1], brk[0][1:]):
        for a1, b1 in zip(brk[1][:-1], brk[1][1:]):
            total += integrate.nquad(f, [[a0, b0], [a1, b1]],
                                     opts=[{"epsrel": MOMENT_RTOL, "epsabs": 0.0, "limit": 200}] * 2)[0]
    return float(total)


@lru_cache(maxsize=256)
def moment(spec: KernelSpec, k: int) -> float:
    """M_k(a) = int |z|^k a(z) dz for k in 0..3."""
    if k not in (0, 1, 2, 3):
        raise ConfigError(f"moment order must be in 0..3, got {k}")
    total = 0.0
    for p in spec.parts():
        v = _closed_form_moment(p, k)
        total += _quad_moment(p, k) if v is None else v
    if not math.isfinite(total):
        raise ConfigError(f"kernel moment M_{k} diverges")
    return float(total)


# ---------------------------------------------------------------- truncation

def _radial_partial(d, k, t, family, rate=1.0):
    """E[rho^k ; rho > t] for rho ~ chi_d (gaussian) or Gamma(d, rate) (exponential)."""
    t = max(t, 0.0)
    if family == "gaussian":
        a = 0.5 * (d + k)
        return 2 ** (0.5 * k) * math.gamma(a) / math.gamma(0.5 * d) * special.gammaincc(a, 0.5 * t * t)
    return math.gamma(d + k) / (math.gamma(d) * rate**k) * special.gammaincc(d + k, rate * t)


def _part_tail(p: KernelSpec, R: float, about_center=False) -> float:
    """Upper bound for int over {|w|_inf > R} of (1 + |w|^3) a(w) dw.

    With ``about_center`` the region is {|w - c|_inf > R} and the weight is 1.
    """
    d = p.dim
    c = np.asarray(p.center)
    cn = 0.0 if about_center else float(np.linalg.norm(c))
    cubic = () if about_center else tuple(range(4))
    if p.family == "box":
        h = np.asarray(p.halfwidths)
        lo, hi = (c - h, c + h) if not about_center else (-h, h)
        if np.all(lo >= -R) and np.all(hi <= R):
            return 0.0
        inner = np.prod(np.clip(np.minimum(hi, R) - np.maximum(lo, -R), 0.0, None))
        frac_out = 1.0 - inner / np.prod(hi - lo)
        wmax = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))
        return p.amplitude * frac_out * (1.0 + (0 if about_center else wmax**3))
    if p.family == "gaussian":
        s = math.sqrt(np.linalg.eigvalsh(np.asarray(p.covariance)).max())
        fam, rate = "gaussian", 1.0
    else:
        s, fam, rate = 1.0, "exponential", p.rate
    t = (R - cn) / s
    val = _radial_partial(d, 0, t, fam, rate)
    for j in cubic:
        val += math.comb(3, j) * cn ** (3 - j) * s**j * _radial_partial(d, j, t, fam, rate)
    return p.amplitude * val


def weighted_tail(spec: KernelSpec, R: int) -> float:
    """Bound on the (1+|z|^3)-weighted kernel mass outside the shells |n|_inf <= R."""
    return float(sum(_part_tail(p, R) for p in spec.parts()))


@dataclass(frozen=True)
class TruncationPlan:
    radius: int
    tau: float
    tail: float = 0.0

    def shells(self, d):
        rng = range(-self.radius, self.radius + 1)
        return [np.array(n, dtype=float) for n in itertools.product(rng, repeat=d)]


def select_truncation(spec: KernelSpec, tau: float, cap: int = MAX_TRUNCATION_RADIUS) -> TruncationPlan:
    """Smallest lattice radius R whose weighted tail is at most ``tau``."""
    if not tau > 0:
        raise ConfigError(f"truncation.tau must be positive, got {tau}")
    for R in range(cap + 1):
        tail = weighted_tail(spec, R)
        if tail <= tau:
            return TruncationPlan(R, float(tau), tail)
    raise ConfigError(f"truncation: radius would exceed cap {cap} for tau={tau:g}; "
                      "use a kernel with faster decaying tails or a larger tau")


def reduce_offsets(z: np.ndarray) -> np.ndarray:
    """Map offsets to [-1/2, 1/2)^d; the periodized kernel is Z^d-periodic."""
    return z - np.floor(z + 0.5)


def lattice_terms(spec: KernelSpec, z: np.ndarray, plan: TruncationPlan, prune=True):
    """Yield (w, a(w)) with w = z' + n over the shells of ``plan``, z' = reduced z."""
    zr = reduce_offsets(np.asarray(z, dtype=float))
    shells = sorted(plan.shells(spec.dim), key=lambda n: np.abs(n).max())
    peak = 0.0
    for n in shells:
        w = zr + n
        vals = eval_kernel(spec, w)
        if prune:
            vmax = float(np.max(vals)) if np.size(vals) else 0.0
            peak = max(peak, vmax)
            if vmax <= _SHELL_PRUNE * peak:
                continue
        yield w, vals


def periodized_kernel(spec: KernelSpec, xi, z, plan: TruncationPlan) -> np.ndarray | complex:
    """Truncated lattice sum  sum_n a(z+n) exp(-i <xi, z+n>)."""
    d = spec.dim
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    pts = _as_points(z, d)
    out = np.zeros(pts.shape[:-1], dtype=complex)
    for w, vals in lattice_terms(spec, pts, plan, prune=False):
        out += vals * np.exp(-1j * (w @ xi))
    return complex(out) if out.ndim == 0 else out


# ------------------------------------------------------------ coefficient mu

@dataclass(frozen=True)
class TrigTerm:
    """coef * cos|sin(2 pi (<kx, x> + <ky, y>))."""
    coef: float
    kind: str
    kx: tuple
    ky: tuple = ()

    def __post_init__(self):
        if self.kind not in TRIG_KINDS:
            raise ConfigError(f"mu term kind must be one of {TRIG_KINDS}, got {self.kind!r}")
        kx = tuple(int(v) for v in np.atleast_1d(self.kx))
        ky = tuple(int(v) for v in np.atleast_1d(self.ky)) if len(np.atleast_1d(self.ky)) else (0,) * len(kx)
        if len(kx) != len(ky) or len(kx) not in (1, 2):
            raise ConfigError(f"mu term wavevectors must have equal length 1 or 2, got {kx}, {ky}")
        if not math.isfinite(self.coef):
            raise ConfigError("mu term coefficient must be finite")
        object.__setattr__(self, "kx", kx)
        object.__setattr__(self, "ky", ky)
        object.__setattr__(self, "coef", float(self.coef))

    def __call__(self, x, y):
        phase = 2 * np.pi * (x @ np.asarray(self.kx, float) + y @ np.asarray(self.ky, float))
        return self.coef * (np.cos(phase) if self.kind == "cos" else np.sin(phase))


@dataclass(frozen=True)
class TrigPoly:
    """const + sum of terms in one variable (terms use ``kx`` only)."""
    const: float
    terms: tuple = ()

    def __call__(self, x):
        zero = np.zeros_like(x)
        return self.const + sum((t(x, zero) for t in self.terms), np.zeros(x.shape[:-1]))


@dataclass(frozen=True)
class MuSpec:
    family: str
    value: float = 1.0
    terms: tuple = ()
    f: TrigPoly | None = None
    g: TrigPoly | None = None

    def __post_init__(self):
        if self.family not in MU_FAMILIES:
            raise ConfigError(f"mu.family: unknown family {self.family!r}; expected one of {MU_FAMILIES}")
        if self.family == "constant" and not (self.value > 0 and math.isfinite(self.value)):
            raise ConfigError(f"mu.value: constant coefficient must be positive, got {self.value}")
        if self.family == "exp-trig" and not self.terms:
            raise ConfigError("mu.terms: exp-trig needs at least one term")
        if self.family == "separable-trig" and (self.f is None or self.g is None):
            raise ConfigError("mu.f / mu.g: separable-trig needs both factors")

    @property
    def dim(self):
        if self.family == "exp-trig":
            return len(self.terms[0].kx)
        if self.family == "separable-trig":
            for t in self.f.terms + self.g.terms:
                return len(t.kx)
        return None

    @property
    def is_constant(self):
        return self.family == "constant"


def eval_mu(spec: MuSpec, x, y) -> np.ndarray:
    """mu(x, y) with broadcasting over leading axes; trailing axis is d."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast_shapes(x.shape, y.shape)[:-1]
    if spec.family == "constant":
        return np.full(shape, spec.value)
    if spec.family == "exp-trig":
        return np.exp(sum(t(x, y) for t in spec.terms))
    return spec.f(x) * spec.g(y)


def _poly_extremes(poly: TrigPoly, d: int, coarse=None, levels=8):
    m = coarse or (512 if d == 1 else 96)
    axes = [np.arange(m) / m] * d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    vals = poly(pts)
    out = []
    for pick in (np.argmin, np.argmax):
        best = pts[pick(vals)]
        step = 1.0 / m
        for _ in range(levels):
            offs = np.arange(-4, 5) * (step / 4)
            local = np.stack(np.meshgrid(*([offs] * d), indexing="ij"), axis=-1).reshape(-1, d) + best
            lv = poly(local)
            best = local[pick(lv)]
            step /= 4
        out.append(float(poly(best[None, :])[0]))
    return out[0], out[1]


def mu_bounds(spec: MuSpec) -> tuple[float, float]:
    """(mu_-, mu_+): closed form for constant / exp-trig, grid search for separable."""
    if spec.family == "constant":
        return spec.value, spec.value
    if spec.family == "exp-trig":
        s = sum(abs(t.coef) for t in spec.terms)
        return math.exp(-s), math.exp(s)
    d = spec.dim or 1
    fmin, fmax = _poly_extremes(spec.f, d)
    gmin, gmax = _poly_extremes(spec.g, d)
    if fmin <= 0 or gmin <= 0:
        raise ConfigError("mu: a separable factor is not positive "
                          f"(min f = {fmin:.6g}, min g = {gmin:.6g})")
    return fmin * gmin, fmax * gmax
