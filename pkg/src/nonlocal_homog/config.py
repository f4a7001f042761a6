"""Run configuration: a single JSON document with a schema version.

Unknown keys are rejected and every error names the offending field.
``RunConfig.from_dict(cfg.to_dict())`` reproduces ``cfg``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, HomogError
from .grid import CellGrid
from .kernel import KernelSpec, MuSpec, TrigPoly, TrigTerm
from .rate import DEFAULT_EPS, SweepConfig

SCHEMA_VERSION = 1

DEFAULT_TOLERANCES = {
    "oracle": 1e-10,
    "stationary_residual": 1e-8,
    "integral": 1e-10,
    "projector": 1e-10,
    "accretivity": 1e-10,
    "coercivity_slack": 0.9,
    "two_route": 1e-6,
    "contour_defect": 1e-8,
    "rank": 1e-6,
    "annulus_slack": 1e-3,
    "resolvent_slack": 1e-6,
    "lipschitz": 1e-8,
    "fp_slope_min": 0.9,
    "fp_slope_max": 1.1,
    "psi_slope_min": 2.7,
    "lambda_slope_min": 2.7,
    "scaled_slope_min": 0.8,
    "scaled_slope_max": 1.15,
    "xi_bound_slack": 0.01,
}

_KERNEL_KEYS = {"family", "center", "amplitude", "covariance", "halfwidths", "rate", "components"}
_MU_KEYS = {"family", "value", "terms", "f", "g"}
_TOP_KEYS = {"schema_version", "name", "kernel", "mu", "grid", "truncation", "threshold", "sweep",
             "tolerances", "output"}


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}")


def _num(obj, key, where, default=None, kind=float):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}.{key}: required")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    if kind is int and int(val) != val:
        raise ConfigError(f"{where}.{key}: expected an integer, got {val!r}")
    return kind(val)


def _wrap(where, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except HomogError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(where) else f"{where}: {msg}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


# ------------------------------------------------------------------ kernel

def kernel_from_dict(obj, where="kernel") -> KernelSpec:
    _check_keys(obj, _KERNEL_KEYS, where)
    family = obj.get("family")
    if family == "mixture":
        comps = obj.get("components")
        if not isinstance(comps, list) or not comps:
            raise ConfigError(f"{where}.components: expected a nonempty list")
        parts = tuple(kernel_from_dict(c, f"{where}.components[{i}]") for i, c in enumerate(comps))
        return _wrap(where, KernelSpec, "mixture", components=parts)
    kw = {k: obj[k] for k in ("covariance", "halfwidths", "rate") if k in obj}
    if "center" not in obj:
        raise ConfigError(f"{where}.center: required")
    amp = _num(obj, "amplitude", where, 1.0)
    return _wrap(where, KernelSpec, family, obj["center"], amp, **kw)


def kernel_to_dict(spec: KernelSpec) -> dict:
    if spec.family == "mixture":
        return {"family": "mixture", "components": [kernel_to_dict(c) for c in spec.components]}
    out = {"family": spec.family, "center": list(spec.center), "amplitude": spec.amplitude}
    if spec.family == "gaussian":
        out["covariance"] = [list(r) for r in spec.covariance]
    elif spec.family == "box":
        out["halfwidths"] = list(spec.halfwidths)
    else:
        out["rate"] = spec.rate
    return out


# ---------------------------------------------------------------------- mu

def _term_from_dict(obj, where, coef_key):
    _check_keys(obj, {coef_key, "kind", "kx", "ky"}, where)
    coef = _num(obj, coef_key, where)
    if "kind" not in obj or "kx" not in obj:
        raise ConfigError(f"{where}: 'kind' and 'kx' are required")
    return _wrap(where, TrigTerm, coef, obj["kind"], tuple(obj["kx"]), tuple(obj.get("ky", ())))


def _term_to_dict(t: TrigTerm, coef_key, with_y=True):
    out = {coef_key: t.coef, "kind": t.kind, "kx": list(t.kx)}
    if with_y:
        out["ky"] = list(t.ky)
    return out


def _poly_from_dict(obj, where):
    _check_keys(obj, {"const", "terms"}, where)
    terms = obj.get("terms", [])
    if not isinstance(terms, list):
        raise ConfigError(f"{where}.terms: expected a list")
    return TrigPoly(_num(obj, "const", where),
                    tuple(_term_from_dict(t, f"{where}.terms[{i}]", "coef") for i, t in enumerate(terms)))


def mu_from_dict(obj, where="mu") -> MuSpec:
    _check_keys(obj, _MU_KEYS, where)
    family = obj.get("family")
    if family == "constant":
        return _wrap(where, MuSpec, "constant", value=_num(obj, "value", where, 1.0))
    if family == "exp-trig":
        terms = obj.get("terms")
        if not isinstance(terms, list) or not terms:
            raise ConfigError(f"{where}.terms: expected a nonempty list")
        parsed = tuple(_term_from_dict(t, f"{where}.terms[{i}]", "beta") for i, t in enumerate(terms))
        return _wrap(where, MuSpec, "exp-trig", terms=parsed)
    if family == "separable-trig":
        for key in ("f", "g"):
            if key not in obj:
                raise ConfigError(f"{where}.{key}: required for separable-trig")
        return _wrap(where, MuSpec, "separable-trig", f=_poly_from_dict(obj["f"], f"{where}.f"),
                     g=_poly_from_dict(obj["g"], f"{where}.g"))
    raise ConfigError(f"{where}.family: unknown family {family!r}")


def mu_to_dict(spec: MuSpec) -> dict:
    if spec.family == "constant":
        return {"family": "constant", "value": spec.value}
    if spec.family == "exp-trig":
        return {"family": "exp-trig", "terms": [_term_to_dict(t, "beta") for t in spec.terms]}
    poly = lambda p: {"const": p.const, "terms": [_term_to_dict(t, "coef", False) for t in p.terms]}
    return {"family": "separable-trig", "f": poly(spec.f), "g": poly(spec.g)}


# ------------------------------------------------------------------- config

@dataclass
class ThresholdConfig:
    count: int = 12
    xi_min: float = 1e-3
    direction: list | None = None


@dataclass
class RunConfig:
    kernel: KernelSpec
    mu: MuSpec
    grid: CellGrid
    tau: float = 1e-12
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output: str = "out"
    name: str = ""

    @classmethod
    def from_dict(cls, obj) -> "RunConfig":
        obj = copy.deepcopy(obj)
        _check_keys(obj, _TOP_KEYS, "config")
        ver = obj.get("schema_version")
        if ver != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {ver!r}")
        for key in ("kernel", "mu", "grid"):
            if key not in obj:
                raise ConfigError(f"{key}: required")
        kernel = kernel_from_dict(obj["kernel"])
        mu = mu_from_dict(obj["mu"])
        g = obj["grid"]
        _check_keys(g, {"d", "n"}, "grid")
        grid = _wrap("grid", CellGrid, _num(g, "d", "grid", kind=int), _num(g, "n", "grid", kind=int))
        if kernel.dim != grid.d:
            raise ConfigError(f"kernel: dimension {kernel.dim} does not match grid.d = {grid.d}")
        if mu.dim not in (None, grid.d):
            raise ConfigError(f"mu: dimension {mu.dim} does not match grid.d = {grid.d}")
        tr = obj.get("truncation", {})
        _check_keys(tr, {"tau"}, "truncation")
        tau = _num(tr, "tau", "truncation", 1e-12)
        if tau <= 0:
            raise ConfigError("truncation.tau: must be positive")

        th = obj.get("threshold", {})
        _check_keys(th, {"count", "xi_min", "direction"}, "threshold")
        direction = th.get("direction")
        if direction is not None and (not isinstance(direction, list) or len(direction) != grid.d):
            raise ConfigError(f"threshold.direction: expected a list of {grid.d} numbers")
        thc = ThresholdConfig(_num(th, "count", "threshold", 12, int),
                              _num(th, "xi_min", "threshold", 1e-3), direction)
        if thc.count < 4 or thc.xi_min <= 0:
            raise ConfigError("threshold: count must be >= 4 and xi_min positive")

        sw = obj.get("sweep", {})
        _check_keys(sw, {"eps", "xi_count", "patch_count", "patch_directions", "ablations"}, "sweep")
        eps = sw.get("eps", list(DEFAULT_EPS))
        if not isinstance(eps, list) or len(eps) < 4:
            raise ConfigError("sweep.eps: expected a list of at least 4 values")
        opt_int = lambda k: None if sw.get(k) is None else _num(sw, k, "sweep", kind=int)
        sweep = _wrap("sweep", SweepConfig, tuple(eps), opt_int("xi_count"),
                      _num(sw, "patch_count", "sweep", 16, int), opt_int("patch_directions"),
                      tuple(sw.get("ablations", ())))

        tol = dict(DEFAULT_TOLERANCES)
        user_tol = obj.get("tolerances", {})
        _check_keys(user_tol, DEFAULT_TOLERANCES, "tolerances")
        for k in user_tol:
            tol[k] = _num(user_tol, k, "tolerances")
        out = obj.get("output", "out")
        if not isinstance(out, str):
            raise ConfigError("output: expected a directory path string")
        name = obj.get("name", "")
        if not isinstance(name, str):
            raise ConfigError("name: expected a string")
        return cls(kernel, mu, grid, tau, thc, sweep, tol, out, name)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "kernel": kernel_to_dict(self.kernel),
            "mu": mu_to_dict(self.mu),
            "grid": {"d": self.grid.d, "n": self.grid.n},
            "truncation": {"tau": self.tau},
            "threshold": {"count": self.threshold.count, "xi_min": self.threshold.xi_min,
                          "direction": self.threshold.direction},
            "sweep": {"eps": list(self.sweep.eps), "xi_count": self.sweep.xi_count,
                      "patch_count": self.sweep.patch_count,
                      "patch_directions": self.sweep.patch_directions,
                      "ablations": list(self.sweep.ablations)},
            "tolerances": dict(self.tolerances),
            "output": self.output,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _cos(beta, kx, ky):
    return {"beta": beta, "kind": "cos", "kx": kx, "ky": ky}


def _gauss(center, var):
    d = len(center)
    return {"family": "gaussian", "center": center,
            "covariance": [[var if i == j else 0.0 for j in range(d)] for i in range(d)]}


FIXTURES = {
    # constant coefficient, centred kernel: alpha = 0, g0 = sigma^2 / 2, q0 = 1
    "mu1-symmetric": {"kernel": _gauss([0.0], 0.09), "mu": {"family": "constant", "value": 1.0},
                      "grid": {"d": 1, "n": 128}},
    # constant coefficient, shifted kernel: alpha = c, g0 = (sigma^2 + c^2) / 2
    "mu1-shifted": {"kernel": _gauss([0.3], 0.09), "mu": {"family": "constant", "value": 1.0},
                    "grid": {"d": 1, "n": 128}},
    "exp-trig-1d": {"kernel": _gauss([0.0], 0.09),
                    "mu": {"family": "exp-trig", "terms": [_cos(0.4, [2], [-1])]},
                    "grid": {"d": 1, "n": 128}},
    "exp-trig-2d": {"kernel": _gauss([0.0, 0.0], 0.09),
                    "mu": {"family": "exp-trig", "terms": [_cos(0.4, [2, 0], [-1, 0]),
                                                           _cos(0.4, [0, 1], [1, -1])]},
                    "grid": {"d": 2, "n": 24}},
    # rate fixture: even kernel and parity-even mu give alpha = 0 with q0 != 1
    "default-1d": {"kernel": _gauss([0.0], 0.04),
                   "mu": {"family": "exp-trig", "terms": [_cos(0.8, [2], [-1])]},
                   "grid": {"d": 1, "n": 128}},
    # shifted kernel in 2D: alpha = (a, 0) with a != 0
    "shifted-2d": {"kernel": _gauss([0.3, 0.0], 0.04),
                   "mu": {"family": "exp-trig", "terms": [_cos(0.8, [2, 0], [-1, 0]),
                                                          _cos(0.8, [0, 2], [0, -1])]},
                   "grid": {"d": 2, "n": 24}},
    "box-separable-1d": {"kernel": {"family": "box", "center": [0.1], "halfwidths": [0.5]},
                         "mu": {"family": "separable-trig",
                                "f": {"const": 1.0, "terms": [{"coef": 0.3, "kind": "sin", "kx": [1]}]},
                                "g": {"const": 1.0, "terms": [{"coef": 0.3, "kind": "cos", "kx": [1]}]}},
                         "grid": {"d": 1, "n": 64}},
    "mixture-1d": {"kernel": {"family": "mixture", "components": [
                       {**_gauss([0.2], 0.04), "amplitude": 0.6},
                       {"family": "exponential", "center": [-0.1], "rate": 6.0, "amplitude": 0.4}]},
                   "mu": {"family": "exp-trig", "terms": [_cos(0.3, [1], [0]), _cos(0.2, [0], [1])]},
                   "grid": {"d": 1, "n": 96}},
}


def fixture(name: str, **overrides) -> RunConfig:
    if name not in FIXTURES:
        raise ConfigError(f"unknown fixture {name!r}; available: {sorted(FIXTURES)}")
    obj = {"schema_version": SCHEMA_VERSION, "name": name, **copy.deepcopy(FIXTURES[name])}
    obj.update(overrides)
    return RunConfig.from_dict(obj)


def load_config(source: str) -> RunConfig:
    """Read a JSON config file, or a built-in fixture when ``source`` names one."""
    path = Path(source)
    if not path.exists():
        if source in FIXTURES:
            return fixture(source)
        raise ConfigError(f"config: no such file or fixture {source!r}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return RunConfig.from_dict(obj)
