"""Rotation-invariant weights dmu = e^{-w(|x|)} dx and the operator L_mu."""
from dataclasses import dataclass, field
from math import lgamma, log, pi
from typing import Optional

import numpy as np

from .errors import LabError
from .fields import ScalarField
from .reports import CheckReport

FAMILIES = ("lebesgue", "gaussian", "power", "heavy_tail", "custom")


@dataclass(frozen=True, eq=False)
class RadialWeight:
    """The profile w with w' and w''.

    lebesgue   w = 0
    gaussian   w = r^2/2
    power      w = r^alpha/alpha, alpha >= 1
    heavy_tail w = b log(1 + r^a)
    custom     user callables (w, dw, d2w)
    """
    family: str = "lebesgue"
    params: dict = field(default_factory=dict)
    funcs: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise LabError("CONFIG_ERROR", "unknown weight family", family=self.family)
        if self.family == "power" and self.params.get("alpha", 2.0) < 1:
            raise LabError("CONFIG_ERROR", "power weight needs alpha >= 1")
        if self.family == "heavy_tail" and (self.params.get("a", 0) <= 0 or self.params.get("b", 0) <= 0):
            raise LabError("CONFIG_ERROR", "heavy_tail weight needs a, b > 0")
        if self.family == "custom" and self.funcs is None:
            raise LabError("CONFIG_ERROR", "custom weight needs (w, dw, d2w)")

    def w(self, r):
        r = np.asarray(r, dtype=float)
        f, p = self.family, self.params
        if f == "lebesgue":
            return np.zeros_like(r)
        if f == "gaussian":
            return 0.5 * r * r
        if f == "power":
            return r ** p["alpha"] / p["alpha"]
        if f == "heavy_tail":
            return p["b"] * np.log1p(r ** p["a"])
        return np.asarray(self.funcs[0](r), dtype=float)

    def dw(self, r):
        r = np.asarray(r, dtype=float)
        f, p = self.family, self.params
        if f == "lebesgue":
            return np.zeros_like(r)
        if f == "gaussian":
            return r.copy()
        if f == "power":
            return r ** (p["alpha"] - 1)
        if f == "heavy_tail":
            a, b = p["a"], p["b"]
            return b * a * r ** (a - 1) / (1 + r ** a)
        return np.asarray(self.funcs[1](r), dtype=float)

    def d2w(self, r):
        r = np.asarray(r, dtype=float)
        f, p = self.family, self.params
        if f == "lebesgue":
            return np.zeros_like(r)
        if f == "gaussian":
            return np.ones_like(r)
        if f == "power":
            al = p["alpha"]
            return (al - 1) * r ** (al - 2) if al != 2 else np.ones_like(r)
        if f == "heavy_tail":
            a, b = p["a"], p["b"]
            ra = r ** a
            with np.errstate(divide="ignore", invalid="ignore"):
                core = (a - 1) * r ** (a - 2) * (1 + ra) - a * r ** (2 * a - 2)
            return b * a * core / (1 + ra) ** 2
        return np.asarray(self.funcs[2](r), dtype=float)

    def origin_limit(self):
        """lim_{r->0} w'(r)/r (= w''(0)), or None when it does not exist."""
        f, p = self.family, self.params
        if f == "lebesgue":
            return 0.0
        if f == "gaussian":
            return 1.0
        if f == "power":
            al = p["alpha"]
            return 1.0 if al == 2 else (0.0 if al > 2 else None)
        if f == "heavy_tail":
            a = p["a"]
            return 2.0 * p["b"] if a == 2 else (0.0 if a > 2 else None)
        eps = 1e-7
        q1 = float(self.dw(np.array(eps))) / eps
        q2 = float(self.d2w(np.array(eps)))
        if np.isfinite(q1) and np.isfinite(q2) and abs(q1 - q2) <= 1e-4 * (1 + abs(q2)):
            return q2
        return None

    def dw_over_r(self, r):
        r = np.asarray(r, dtype=float)
        safe = np.where(r > 0, r, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = self.dw(r) / safe
        if np.any(r == 0):
            lim = self.origin_limit()
            q = np.where(r == 0, np.inf if lim is None else lim, q)
        return q

    def finite_mass(self, n):
        if self.family in ("gaussian", "power"):
            return True
        if self.family == "heavy_tail":
            return self.params["a"] * self.params["b"] > n
        return False

    def to_spec(self):
        if self.family == "custom":
            return {"family": "custom"}
        return {"family": self.family, **{k: float(v) for k, v in self.params.items()}}


def gaussian():
    return RadialWeight("gaussian")


def lebesgue():
    return RadialWeight("lebesgue")


def power(alpha):
    return RadialWeight("power", {"alpha": float(alpha)})


def heavy_tail(a, b):
    return RadialWeight("heavy_tail", {"a": float(a), "b": float(b)})


def custom(w, dw, d2w):
    return RadialWeight("custom", {}, (w, dw, d2w))


def sphere_area(n):
    """Surface area of S^{n-1} (2 for n = 1)."""
    return 2.0 * pi ** (n / 2) / np.exp(lgamma(n / 2))


def ball_volume(n):
    return pi ** (n / 2) / np.exp(lgamma(n / 2 + 1))


@dataclass(frozen=True, eq=False)
class WeightedMeasure:
    """mu on R^n with density e^{-w(|x|)}; the gaussian family is normalized to gamma_n."""
    weight: RadialWeight
    n: int

    @property
    def log_normalizer(self):
        return 0.5 * self.n * log(2 * pi) if self.weight.family == "gaussian" else 0.0

    def log_density_radial(self, r):
        return -self.weight.w(r) - self.log_normalizer

    def density(self, x):
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return np.exp(self.log_density_radial(r))

    @property
    def is_lebesgue(self):
        return self.weight.family == "lebesgue"

    def tail_radius(self, tol=1e-18):
        """R with e^{-w(R)} R^n below tol (relative to the bulk), or None for infinite mass."""
        if not self.weight.finite_mass(self.n):
            return None
        R = 1.0
        while R < 1e8:
            if float(self.weight.w(np.array(R))) - self.n * log(R) > -log(tol):
                return R
            R *= 1.25
        return R

    @property
    def potential(self) -> ScalarField:
        return ScalarField(self.n, lambda x: potential_eval(self, x)[0],
                           lambda x: potential_eval(self, x)[1],
                           lambda x: potential_eval(self, x)[2],
                           {"kind": "measure", **self.to_spec()})

    def to_spec(self):
        return {**self.weight.to_spec(), "dimension": self.n}


def measure(family="lebesgue", n=1, **params) -> WeightedMeasure:
    return WeightedMeasure(RadialWeight(family, {k: float(v) for k, v in params.items()}), n)


def measure_from_spec(spec: dict) -> WeightedMeasure:
    spec = dict(spec)
    family = spec.pop("family", "lebesgue")
    n = int(spec.pop("dimension", 1))
    allowed = {"lebesgue": set(), "gaussian": set(), "power": {"alpha"}, "heavy_tail": {"a", "b"}}
    if family not in allowed:
        raise LabError("CONFIG_ERROR", "unknown measure family", family=family)
    extra = set(spec) - allowed[family]
    if extra:
        raise LabError("CONFIG_ERROR", "unknown measure keys", keys=sorted(extra))
    return measure(family, n, **spec)


def validate_weight(w: RadialWeight) -> CheckReport:
    """Sample w' and r^2 w'' + r w' on a geometric grid in [1e-6, 1e6]."""
    r = np.geomspace(1e-6, 1e6, 513)
    with np.errstate(over="ignore", invalid="ignore"):
        d1 = w.dw(r)
        conv = r * r * w.d2w(r) + r * d1
    i1 = int(np.nanargmin(d1))
    i2 = int(np.nanargmin(conv))
    m1, m2 = float(d1[i1]), float(conv[i2])
    margin = min(m1, m2)
    ok = bool(np.all(np.isfinite(d1)) and np.all(np.isfinite(conv)) and margin >= -1e-10)
    witness = {"r_min_dw": float(r[i1]), "min_dw": m1, "r_min_convexity": float(r[i2]),
               "min_convexity": m2, "weight": w.to_spec()}
    return CheckReport("validate_weight", margin, 1e-10, "holds" if ok else "violated", witness)


def potential_eval(mu: WeightedMeasure, x):
    """(W, grad W, hess W) at x, using the radial limit at the origin."""
    x = np.asarray(x, dtype=float)
    n = mu.n
    if x.shape[-1] != n:
        raise ValueError(f"point must have {n} components")
    wt = mu.weight
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0) and wt.origin_limit() is None:
        raise LabError("SINGULAR_ORIGIN", "w'(r)/r has no limit at the origin", weight=wt.to_spec())
    safe = np.where(r > 0, r, 1.0)
    xh = x / safe[..., None]
    W = wt.w(r)
    dw = wt.dw(r)
    grad = np.where(r > 0, dw, 0.0)[..., None] * xh
    a = wt.dw_over_r(r)
    b = np.where(r > 0, wt.d2w(safe), a)
    outer = xh[..., :, None] * xh[..., None, :]
    hess = a[..., None, None] * (np.eye(n) - outer) + b[..., None, None] * outer
    return W, grad, hess


def lmu_apply(mu: WeightedMeasure, u: ScalarField, x):
    """L_mu u = Laplacian(u) - <grad W, grad u>."""
    x = np.asarray(x, dtype=float)
    _, gW, _ = potential_eval(mu, x)
    return u.laplacian(x) - np.sum(gW * u.grad(x), axis=-1)
