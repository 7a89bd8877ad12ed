"""Marginal profiles phi(t), alpha(t) and their concavity verdicts."""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import LabError
from .fields import ScalarField
from .geometry import ConcaveFunction, ConvexDomainFamily, SymmetricBody, section_body, whole_space
from .integrate import QuadratureSpec, build_rule, measure_body, weighted_power_mass
from .measures import WeightedMeasure
from .reports import ProfileReport


def kappa_n(kappa: float, n: int) -> float:
    """Exponent kappa/(1 + n kappa) of the integrated mean; +inf maps to 1/n."""
    if np.isinf(kappa):
        return 1.0 / n if kappa > 0 else -np.inf
    denom = 1.0 + n * kappa
    if denom == 0:
        return -np.inf
    return kappa / denom


@dataclass(frozen=True, eq=False)
class MarginalProblem:
    family: ConvexDomainFamily
    phi: ConcaveFunction
    measure: WeightedMeasure
    beta: float
    gamma: Optional[float] = None
    spec: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        if not self.beta > 0:
            raise LabError("CONFIG_ERROR", "beta must be positive", beta=self.beta)
        n = self.family.n
        if self.phi.n != n or self.measure.n != n:
            raise LabError("GRID_MISMATCH", "family, Phi and measure dimensions differ")
        if self.gamma is None:
            object.__setattr__(self, "gamma", 1.0 / (self.beta + n))
        if not 0 < self.gamma <= 1.0 / n + 1e-15:
            raise LabError("CONFIG_ERROR", "gamma must lie in (0, 1/n]", gamma=self.gamma)

    @property
    def n(self):
        return self.family.n

    def to_spec(self):
        return {"family": self.family.spec, "phi": self.phi.to_spec(), "measure": self.measure.to_spec(),
                "beta": self.beta, "gamma": self.gamma}


def phi_with_error(P: MarginalProblem, t: float):
    """(phi(t), propagated quadrature error); (0, 0) on empty sections."""
    K = section_body(P.family, t)
    if K is None:
        return 0.0, 0.0
    est = weighted_power_mass(K, P.phi, P.beta, P.measure, P.spec, t=t)
    if est.value <= 0:
        return 0.0, est.error_estimate
    val = est.value ** P.gamma
    return val, P.gamma * val / est.value * est.error_estimate


def phi_eval(P: MarginalProblem, t: float) -> float:
    """phi(t) = (integral of Phi(t, .)^beta over Omega_t)^gamma."""
    return phi_with_error(P, t)[0]


def _check_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) < 3:
        raise LabError("TOO_FEW_POINTS", "need at least three grid points")
    d = np.diff(t)
    if np.any(d <= 0):
        raise LabError("CONFIG_ERROR", "t grid must be strictly increasing")
    h = float(np.mean(d))
    if np.max(np.abs(d - h)) > 1e-9 * max(1.0, abs(h)):
        raise LabError("CONFIG_ERROR", "t grid must be uniform")
    return t, h


def _support_edge(empty, inside, outside, tol=1e-10):
    """Bisection between a nonempty and an empty parameter."""
    a, b = inside, outside
    while abs(b - a) > tol:
        m = 0.5 * (a + b)
        if empty(m):
            b = m
        else:
            a = m
    return 0.5 * (a + b)


def second_difference_report(name, evaluate: Callable, t_grid, *, empty: Callable = None,
                             details=None, log=False) -> ProfileReport:
    """Second differences at spacing h and h/2 with noise-aware tolerances.

    ``evaluate(t)`` returns (value, error, is_empty).  A point is flagged
    when D2 exceeds 10x the stencil-propagated error; the verdict is
    "violated" only when both stencils flag the same point.
    """
    t, h = _check_grid(t_grid)
    vals, errs, emp = zip(*(evaluate(float(s)) for s in t))
    vals, errs, emp = np.array(vals), np.array(errs), np.array(emp)
    if np.sum(~emp) < 3:
        raise LabError("TOO_FEW_POINTS", "fewer than three nonempty grid points")
    floor = 1e-14 * np.abs(vals) + (1e-14 if log else 0.0)
    errs = np.maximum(errs, floor)
    m = len(t)
    d2 = [None] * m
    d2h = [None] * m
    tol = [None] * m
    tolh = [None] * m
    flags = []
    for i in range(1, m - 1):
        if emp[i - 1] or emp[i] or emp[i + 1]:
            continue
        d2[i] = (vals[i - 1] - 2 * vals[i] + vals[i + 1]) / h ** 2
        tol[i] = 10 * (errs[i - 1] + 2 * errs[i] + errs[i + 1]) / h ** 2
        lo, elo, e1 = evaluate(float(t[i] - h / 2))
        hi, ehi, e2 = evaluate(float(t[i] + h / 2))
        if not (e1 or e2):
            elo = max(elo, 1e-14 * abs(lo) + (1e-14 if log else 0.0))
            ehi = max(ehi, 1e-14 * abs(hi) + (1e-14 if log else 0.0))
            d2h[i] = (lo - 2 * vals[i] + hi) / (h / 2) ** 2
            tolh[i] = 10 * (elo + 2 * errs[i] + ehi) / (h / 2) ** 2
        flags.append((d2[i] > tol[i], d2h[i] is not None and d2h[i] > tolh[i]))
    present = [i for i in range(m) if d2[i] is not None]
    if not present:
        raise LabError("TOO_FEW_POINTS", "no complete stencil inside the support")
    if any(a and b for a, b in flags):
        verdict = "violated"
    elif any(a or b for a, b in flags):
        verdict = "inconclusive"
    else:
        verdict = "concave"
    imin = min(present, key=lambda i: d2[i])
    imax = max(present, key=lambda i: d2[i])
    support = None
    if empty is not None and np.any(emp):
        nonempty = np.flatnonzero(~emp)
        lo_i, hi_i = nonempty[0], nonempty[-1]
        lo = _support_edge(empty, t[lo_i], t[lo_i - 1]) if lo_i > 0 else float(t[0])
        hi = _support_edge(empty, t[hi_i], t[hi_i + 1]) if hi_i < m - 1 else float(t[-1])
        support = [lo, hi]
    det = dict(details or {})
    det.update(h=h, tolerance_half=tolh)
    return ProfileReport(name, t.tolist(), vals.tolist(), d2, d2h, tol, d2[imin], float(t[imin]), d2[imax],
                         verdict, support, det)


def concavity_report(P: MarginalProblem, t_grid) -> ProfileReport:
    """Profile of phi on a uniform grid with a concavity verdict."""

    def evaluate(s):
        K = section_body(P.family, s)
        if K is None:
            return 0.0, 0.0, True
        v, e = phi_with_error(P, s)
        return v, e, v == 0.0

    def empty(s):
        return section_body(P.family, s) is None

    return second_difference_report("concavity", evaluate, t_grid, empty=empty,
                                    details={"problem": P.to_spec(), "beta": P.beta, "gamma": P.gamma})


# ---------------------------------------------------------------------------
# log-concavity of alpha(t) = integral of e^{-V(t, x)} dmu(x)


@dataclass(frozen=True, eq=False)
class JointPotential:
    """V(t, x) = a t^2/2 + b t + V0(e^{s t} x) for an even convex V0.

    s = 0 gives a t-independent shape; s = 1 gives the profile t -> mu(e^t K)
    when V0 is a smoothed indicator of K.
    """
    base: ScalarField
    a: float = 0.0
    b: float = 0.0
    s: float = 1.0

    @property
    def n(self):
        return self.base.n

    def value(self, t, x):
        y = np.exp(self.s * t)[..., None] * x if np.ndim(t) else np.exp(self.s * t) * x
        return 0.5 * self.a * np.square(t) + self.b * t + self.base.value(y)

    def hessian(self, t, x):
        """Full (n+1)x(n+1) Hessian in (t, x), the gradient in x and in t."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        e = np.exp(self.s * t)[..., None]
        y = e * x
        g = self.base.grad(y)
        H = self.base.hess(y)
        s = self.s
        Hy = np.einsum("...ij,...j->...i", H, y)
        gy = np.sum(g * y, axis=-1)
        vtt = self.a + s * s * (np.sum(Hy * y, axis=-1) + gy)
        vtx = s * e * (Hy + g)
        vxx = (e ** 2)[..., None] * H
        n = self.n
        out = np.empty(t.shape + (n + 1, n + 1))
        out[..., 0, 0] = vtt
        out[..., 0, 1:] = vtx
        out[..., 1:, 0] = vtx
        out[..., 1:, 1:] = vxx
        grad_x = e * g
        return out, grad_x

    def to_spec(self):
        return {"kind": "scaled", "a": self.a, "b": self.b, "s": self.s, "base": self.base.spec}


def kappa_condition_margin(V: JointPotential, kappa: float, box_t, box_x=3.0, points=4096):
    """min eigenvalue of hess V - kappa [[<grad_x V, x>, grad_x V^T], [grad_x V, 0]] on a Halton cloud."""
    n = V.n
    cloud = qmc.Halton(d=n + 1, scramble=False).random(points + 1)[1:]
    t = box_t[0] + (box_t[1] - box_t[0]) * cloud[:, 0]
    x = box_x * (2 * cloud[:, 1:] - 1)
    H, gx = V.hessian(t, x)
    M = np.zeros_like(H)
    M[:, 0, 0] = np.sum(gx * x, axis=-1)
    M[:, 0, 1:] = gx
    M[:, 1:, 0] = gx
    ev = np.linalg.eigvalsh(H - kappa * M)[:, 0]
    i = int(np.argmin(ev))
    return float(ev[i]), {"t": float(t[i]), "x": x[i].tolist()}


def log_marginal_alpha(V: JointPotential, mu: WeightedMeasure, t_grid, kappa: float = 0.0, *,
                       spec: QuadratureSpec = None, box_x: float = 3.0) -> ProfileReport:
    """Profile of log alpha(t) with alpha(t) = integral of e^{-V(t, x)} dmu(x) over R^n."""
    if not 0.0 <= kappa <= 1.0:
        raise LabError("CONFIG_ERROR", "kappa must lie in [0, 1]", kappa=kappa)
    n = V.n
    t = np.asarray(t_grid, dtype=float)
    rng = np.random.default_rng(0)
    sample_x = box_x * (2 * rng.random((256, n)) - 1)
    for s in (t[0], t[len(t) // 2], t[-1]):
        asym = np.max(np.abs(V.value(s, sample_x) - V.value(s, -sample_x)))
        if asym > 1e-10 * (1 + np.max(np.abs(V.value(s, sample_x)))):
            raise LabError("NOT_EVEN", "V(t, .) is not even", t=float(s), asymmetry=float(asym))
    spec = spec or QuadratureSpec()
    whole = whole_space(n, spec.grid if spec.grid is not None and spec.grid.n == n else None)

    def evaluate(s):
        def f(x):
            return np.exp(-V.value(s, x))
        est = build_rule(whole, mu, spec, probe=f).integrate(f)
        return float(np.log(est.value)), est.error_estimate / est.value, False

    margin, where = kappa_condition_margin(V, kappa, (float(t[0]), float(t[-1])), box_x)
    return second_difference_report("log_alpha", evaluate, t, log=True,
                                    details={"kappa": kappa, "kappa_margin": margin, "kappa_witness": where,
                                             "potential": V.to_spec(), "measure": mu.to_spec()})


def b_profile_check(K: SymmetricBody, mu: WeightedMeasure, t_grid, spec: QuadratureSpec = None) -> ProfileReport:
    """Profile of t -> log mu(e^t K)."""

    def evaluate(s):
        est = measure_body(K.scaled(np.exp(s)), mu, spec)
        return float(np.log(est.value)), est.error_estimate / est.value, False

    return second_difference_report("b_profile", evaluate, t_grid, log=True,
                                    details={"body": K.to_spec(), "measure": mu.to_spec()})


# ---------------------------------------------------------------------------
# negative exponents


@dataclass(frozen=True)
class ConvexQuadratic:
    """Psi(t, x) = c + b t + a t^2 + q |x|^2 with c > 0 and a, q >= 0."""
    c: float
    b: float = 0.0
    a: float = 0.0
    q: float = 1.0

    def __post_init__(self):
        if not self.c > 0 or self.a < 0 or self.q < 0:
            raise LabError("CONFIG_ERROR", "need c > 0 and a, q >= 0")

    def value(self, x, t):
        return self.c + self.b * t + self.a * t * t + self.q * np.sum(np.asarray(x) ** 2, axis=-1)

    def to_spec(self):
        return {"kind": "convex_quadratic", "c": self.c, "b": self.b, "a": self.a, "q": self.q}


def negative_exponent_report(family: ConvexDomainFamily, psi: ConvexQuadratic, beta: float,
                             mu: WeightedMeasure, t_grid, spec: QuadratureSpec = None) -> ProfileReport:
    """Convexity profile of phi(t) = (int Psi(t, .)^{-beta} dmu)^{-1/(beta-n)} for beta > n.

    The stored values and second differences are those of -phi, so the
    usual "concave" verdict means phi looked convex.
    """
    n = family.n
    if not beta > n:
        raise LabError("CONFIG_ERROR", "beta must exceed the dimension", beta=beta, n=n)
    e = -1.0 / (beta - n)

    def evaluate(s):
        K = section_body(family, s)
        if K is None:
            return 0.0, 0.0, True

        def f(x):
            v = psi.value(x, s)
            if np.any(v <= 0):
                raise LabError("NOT_POSITIVE", "Psi must stay positive", t=s)
            return v ** -beta
        est = build_rule(K, mu, spec, probe=f).integrate(f)
        val = est.value ** e
        return -val, abs(e) * val / est.value * est.error_estimate, False

    def empty(s):
        return section_body(family, s) is None

    return second_difference_report("negative_exponent", evaluate, t_grid, empty=empty,
                                    details={"family": family.spec, "psi": psi.to_spec(), "beta": beta,
                                             "measure": mu.to_spec(), "sign": "values are -phi"})
