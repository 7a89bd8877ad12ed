"""Margin checkers for the inequalities around weighted concavity principles.

Every checker returns a CheckReport whose margin is >= 0 when the
inequality holds.  A margin below -tolerance is only called "violated" when
a recomputation by the other quadrature route (polar <-> Monte Carlo, or a
refined order for torsion) agrees; otherwise the verdict is "inconclusive".
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import LabError
from .fields import ScalarField, half_square_norm
from .geometry import (ConcaveFunction, SymmetricBody, ball, body_from_spec, constant, minkowski_combine,
                       whole_space)
from .integrate import QuadratureSpec, build_rule, weighted_power_mass
from .marginals import kappa_n
from .measures import WeightedMeasure, ball_volume, measure, sphere_area, validate_weight
from .reports import CheckReport
from .variation import _unit_gl


def _tolerance(err, scale):
    return max(10.0 * err, 1e-10 * max(1.0, abs(scale)))


def _finish(name, margin, err, witness, theorem, details, confirm: Optional[Callable] = None, scale=1.0):
    """Verdict; a violation needs the second route to agree."""
    tol = _tolerance(err, scale)
    details = dict(details)
    details["error_estimate"] = err
    if margin >= -tol:
        verdict = "holds"
    elif confirm is None:
        verdict = "inconclusive"
    else:
        m2, e2 = confirm()
        details.update(mc_margin=m2, mc_error=e2)
        verdict = "violated" if m2 + 4 * e2 < 0 else "inconclusive"
    return CheckReport(name, margin, tol, verdict, witness, theorem, details)


def _other(spec: QuadratureSpec):
    """The second quadrature route used to confirm a violation."""
    spec = spec or QuadratureSpec()
    return spec.with_mode("polar" if spec.mode == "mc" else "mc")


# ---------------------------------------------------------------------------
# kappa-means and Borell-Brascamp-Lieb


def kappa_mean(a, b, kappa, lam):
    """M_kappa^lam(a, b) with max / geometric / min at kappa = inf / 0 / -inf."""
    a, b = float(a), float(b)
    if kappa == np.inf:
        return max(a, b)
    if kappa == -np.inf:
        return min(a, b)
    if a <= 0 or b <= 0:
        return 0.0 if kappa <= 0 else (lam * a ** kappa + (1 - lam) * b ** kappa) ** (1 / kappa)
    if kappa == 0:
        return a ** lam * b ** (1 - lam)
    return float(_power_mean_log(np.log(a), np.log(b), kappa, lam))


def _power_mean_log(la, lb, kappa, lam):
    """(lam a^k + (1-lam) b^k)^(1/k) from log a, log b; stable as k -> 0."""
    with np.errstate(over="ignore", invalid="ignore"):
        s = lam * np.expm1(kappa * la) + (1 - lam) * np.expm1(kappa * lb)
        return np.exp(np.log1p(s) / kappa)


def _kappa_mean_array(a, b, kappa, lam):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if kappa == np.inf:
        return np.maximum(a, b)
    if kappa == -np.inf:
        return np.minimum(a, b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kappa == 0:
            return a ** lam * b ** (1 - lam)
        out = (lam * a ** kappa + (1 - lam) * b ** kappa) ** (1 / kappa)
        pos = (a > 0) & (b > 0)
        return np.where(pos, _power_mean_log(np.log(np.where(pos, a, 1.0)), np.log(np.where(pos, b, 1.0)),
                                             kappa, lam), out)


@dataclass(frozen=True, eq=False)
class Bump:
    """Nonnegative function on R^n.

    indicator: weight * 1_{body + center}
    gaussian:  weight * exp(-rate |x - center|^2)
    """
    kind: str
    n: int
    weight: float
    center: tuple
    body: Optional[SymmetricBody] = None
    rate: float = 1.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        y = x - np.asarray(self.center)
        if self.kind == "indicator":
            return self.weight * (self.body.gauge(y) <= 1.0).astype(float)
        return self.weight * np.exp(-self.rate * np.sum(y * y, axis=-1))

    def integral(self, mu: WeightedMeasure, spec: QuadratureSpec = None):
        c = np.asarray(self.center, dtype=float)
        leb = measure("lebesgue", self.n)
        if self.kind == "indicator":
            if mu.is_lebesgue:
                f = self.weight
            else:
                def f(y):
                    return self.weight * mu.density(y + c)
            return build_rule(self.body, leb, spec).integrate(f)

        def g(y):
            return self.weight * np.exp(-self.rate * np.sum(y * y, axis=-1)) * mu.density(y + c)
        return build_rule(whole_space(self.n), leb, spec, probe=g).integrate(g)

    def sample_box(self):
        c = np.asarray(self.center, dtype=float)
        hw = self.body.half_widths() if self.kind == "indicator" else np.full(self.n, 5.0 / np.sqrt(self.rate))
        return c - hw, c + hw

    def to_spec(self):
        d = {"kind": self.kind, "dimension": self.n, "weight": self.weight, "center": list(self.center)}
        if self.kind == "indicator":
            d["body"] = self.body.to_spec()
        else:
            d["rate"] = self.rate
        return d


def indicator(body: SymmetricBody, center=None, weight=1.0) -> Bump:
    center = tuple(np.zeros(body.n) if center is None else np.atleast_1d(np.asarray(center, dtype=float)))
    return Bump("indicator", body.n, float(weight), center, body)


def gaussian_bump(center, rate=1.0, weight=1.0) -> Bump:
    c = tuple(np.atleast_1d(np.asarray(center, dtype=float)))
    return Bump("gaussian", len(c), float(weight), c, None, float(rate))


def bump_from_spec(spec: dict) -> Bump:
    if spec.get("kind") == "indicator":
        return indicator(body_from_spec(spec["body"]), spec.get("center"), spec.get("weight", 1.0))
    if spec.get("kind") == "gaussian":
        return gaussian_bump(spec["center"], spec.get("rate", 1.0), spec.get("weight", 1.0))
    raise LabError("CONFIG_ERROR", "unknown bump kind", kind=spec.get("kind"))


def prekopa_interpolant(f: Bump, g: Bump, lam: float) -> Bump:
    """Exact sup-convolution h(z) = sup f(x)^lam g(y)^(1-lam) over z = lam x + (1-lam) y for gaussians."""
    if f.kind != "gaussian" or g.kind != "gaussian":
        raise LabError("CONFIG_ERROR", "interpolant is closed-form for gaussian bumps only")
    rate = 1.0 / (lam / f.rate + (1 - lam) / g.rate)
    center = lam * np.asarray(f.center) + (1 - lam) * np.asarray(g.center)
    return gaussian_bump(center, rate, f.weight ** lam * g.weight ** (1 - lam))


def bbl_hypothesis_margin(f: Bump, g: Bump, h: Bump, kappa, lam, points=4096):
    """min of h(lam x + (1-lam) y) - M_kappa(f(x), g(y)) over a Halton cloud of pairs with f g > 0."""
    n = f.n
    cloud = qmc.Halton(d=2 * n, scramble=False).random(points + 1)[1:]
    flo, fhi = f.sample_box()
    glo, ghi = g.sample_box()
    x = flo + (fhi - flo) * cloud[:, :n]
    y = glo + (ghi - glo) * cloud[:, n:]
    fx, gy = f.value(x), g.value(y)
    keep = (fx > 0) & (gy > 0)
    if not np.any(keep):
        return np.inf, {}
    x, y, fx, gy = x[keep], y[keep], fx[keep], gy[keep]
    hz = h.value(lam * x + (1 - lam) * y)
    rhs = _kappa_mean_array(fx, gy, kappa, lam)
    slack = hz - rhs
    scale = np.maximum(1.0, np.abs(rhs))
    i = int(np.argmin(slack / scale))
    return float(slack[i] / scale[i]), {"x": x[i].tolist(), "y": y[i].tolist()}


def _bbl_margin(f, g, h, kappa, lam, mu, spec):
    n = f.n
    kn = kappa_n(kappa, n)
    If, Ig, Ih = (b.integral(mu, spec) for b in (f, g, h))
    rhs = kappa_mean(If.value, Ig.value, kn, lam)
    # first-order error propagation through the mean
    eps = 1e-7
    dfa = (kappa_mean(If.value * (1 + eps), Ig.value, kn, lam) - rhs) / (eps * If.value) if If.value > 0 else 1.0
    dfb = (kappa_mean(If.value, Ig.value * (1 + eps), kn, lam) - rhs) / (eps * Ig.value) if Ig.value > 0 else 1.0
    err = Ih.error_estimate + abs(dfa) * If.error_estimate + abs(dfb) * Ig.error_estimate
    return Ih.value - rhs, err, {"int_f": If.value, "int_g": Ig.value, "int_h": Ih.value, "kappa_n": kn}


def bbl_check(f: Bump, g: Bump, h: Bump, kappa: float, lam: float, mu: WeightedMeasure = None,
              spec: QuadratureSpec = None) -> CheckReport:
    """int h dmu - M_{kappa_n}^lam(int f dmu, int g dmu)."""
    n = f.n
    if not (kappa >= -1.0 / n - 1e-15):
        raise LabError("CONFIG_ERROR", "kappa must lie in [-1/n, inf]", kappa=kappa)
    if not 0 < lam < 1:
        raise LabError("CONFIG_ERROR", "lambda must lie in (0, 1)", lam=lam)
    mu = mu or measure("lebesgue", n)
    hyp, where = bbl_hypothesis_margin(f, g, h, kappa, lam)
    margin, err, det = _bbl_margin(f, g, h, kappa, lam, mu, spec)
    hyp_ok = hyp >= -1e-12
    det.update(hypothesis_margin=hyp, hypothesis_witness=where, hypothesis="pass" if hyp_ok else "HYPOTHESIS_FAIL")
    log_concave = mu.weight.family in ("lebesgue", "gaussian") or (
        mu.weight.family == "power" and mu.weight.params["alpha"] >= 1)
    theorem = hyp_ok and (mu.is_lebesgue or (kappa == 0 and log_concave))
    witness = {"f": f.to_spec(), "g": g.to_spec(), "h": h.to_spec(), "kappa": kappa, "lam": lam,
               "measure": mu.to_spec()}

    def confirm():
        m, e, _ = _bbl_margin(f, g, h, kappa, lam, mu, _other(spec))
        return m, e
    return _finish("bbl", margin, err, witness, theorem, det, confirm, det["int_h"])


def bbl_counterexample(M=10.0, n=1, kappa=1.0, lam=0.5, translated=True):
    """Ball indicators pushed apart by M under the standard Gaussian measure.

    ``translated=False`` gives f = 1_{B+Me1}, g = 1_{B-Me1}, h = 1_B; their
    integrals are tiny against mu(B), so that triple satisfies the
    inequality.  ``translated=True`` shifts the whole configuration by +Me1:
    f = 1_B, g = 1_{B+2Me1}, h = 1_{B+Me1}; now the interpolant sits in the
    far tail and the inequality fails.
    """
    B = ball(n, 1.0)
    e1 = np.eye(n)[0]
    mu = measure("gaussian", n)
    if translated:
        f, g, h = indicator(B, 0 * e1), indicator(B, 2 * M * e1), indicator(B, M * e1)
    else:
        f, g, h = indicator(B, M * e1), indicator(B, -M * e1), indicator(B, 0 * e1)
    return f, g, h, mu, kappa, lam


def bbl_counterexample_check(M=10.0, n=1, kappa=1.0, lam=0.5, spec: QuadratureSpec = None) -> CheckReport:
    """The translated configuration, with the untranslated margin reported alongside."""
    f, g, h, mu, kappa, lam = bbl_counterexample(M, n, kappa, lam, translated=True)
    rep = bbl_check(f, g, h, kappa, lam, mu, spec)
    lit = bbl_check(*bbl_counterexample(M, n, kappa, lam, translated=False)[:3], kappa, lam, mu, spec)
    rep.details["untranslated_margin"] = lit.margin
    rep.details["M"] = M
    return rep


# ---------------------------------------------------------------------------
# dimensional Brunn-Minkowski for nu_beta


def _nu_beta_power(K, phi, beta, mu, spec, expo):
    est = weighted_power_mass(K, phi, beta, mu, spec)
    v = est.value ** expo
    return v, expo * v / est.value * est.error_estimate if est.value > 0 else est.error_estimate


def dim_bm_check(K: SymmetricBody, L: SymmetricBody, lam: float, phi: ConcaveFunction = None, beta: float = 1.0,
                 mu: WeightedMeasure = None, spec: QuadratureSpec = None) -> CheckReport:
    """nu_beta(lam K + (1-lam) L)^{1/(beta+n)} - lam nu_beta(K)^{..} - (1-lam) nu_beta(L)^{..}."""
    n = K.n
    phi = phi or constant(1.0, n)
    mu = mu or measure("lebesgue", n)
    expo = 1.0 / (beta + n)
    M = minkowski_combine(K, L, lam)

    def run(sp):
        vm, em = _nu_beta_power(M, phi, beta, mu, sp, expo)
        vk, ek = _nu_beta_power(K, phi, beta, mu, sp, expo)
        vl, el = _nu_beta_power(L, phi, beta, mu, sp, expo)
        return vm - lam * vk - (1 - lam) * vl, em + lam * ek + (1 - lam) * el, (vm, vk, vl)

    margin, err, (vm, vk, vl) = run(spec)
    theorem = validate_weight(mu.weight).holds
    witness = {"K": K.to_spec(), "L": L.to_spec(), "lam": lam, "phi": phi.to_spec(), "beta": beta,
               "measure": mu.to_spec()}
    det = {"combination": vm, "K": vk, "L": vl, "exponent": expo}
    return _finish("dim_bm", margin, err, witness, theorem, det, lambda: run(_other(spec))[:2], vm)


# ---------------------------------------------------------------------------
# Gaussian B-inequality, local form


def _combine(rule, fns, F):
    """F(integrals) with first-order propagation of the per-integral errors."""
    ests = [rule.integrate(f) for f in fns]
    I = np.array([e.value for e in ests])
    E = np.array([e.error_estimate for e in ests])
    val = float(F(I))
    err = 0.0
    for k in range(len(I)):
        step = 1e-6 * max(abs(I[k]), 1e-300)
        up, dn = I.copy(), I.copy()
        up[k] += step
        dn[k] -= step
        err += abs((F(up) - F(dn)) / (2 * step)) * E[k]
    return val, float(err), I


def b_local_margin(V: ScalarField = None, D=None, spec: QuadratureSpec = None, n: int = None) -> CheckReport:
    """2 int <x, D^2 x> dmu - Var_mu(<x, D x>) for dmu ~ e^{-V} dgamma_n."""
    n = V.n if V is not None else (len(D) if D is not None else (n or 1))
    d = np.ones(n) if D is None else np.asarray(D, dtype=float).reshape(n)
    g = measure("gaussian", n)

    def dens(x):
        return np.ones(x.shape[:-1]) if V is None else np.exp(-V.value(x))

    def q(x):
        return np.sum(d * x * x, axis=-1)

    fns = [dens, lambda x: dens(x) * q(x), lambda x: dens(x) * q(x) ** 2,
           lambda x: dens(x) * np.sum(d * d * x * x, axis=-1)]

    def F(I):
        m1, m2 = I[1] / I[0], I[2] / I[0]
        return 2 * I[3] / I[0] - (m2 - m1 * m1)

    def run(sp):
        rule = build_rule(whole_space(n), g, sp, probe=fns[2])
        return _combine(rule, fns, F)

    margin, err, I = run(spec)
    lhs = 2 * I[3] / I[0]
    witness = {"V": None if V is None else V.spec, "D": d.tolist()}
    det = {"lhs": lhs, "variance": lhs - margin}
    return _finish("b_local", margin, err, witness, True, det, lambda: run(_other(spec))[:2], lhs)


# ---------------------------------------------------------------------------
# Brascamp-Lieb variance inequality


def _spd_check(H, code, message, points, tol=1e-12):
    ev = np.linalg.eigvalsh(H)
    scale = max(1.0, float(np.max(np.abs(ev))))
    lo = ev[..., 0]
    i = int(np.argmin(lo))
    if lo[i] <= tol * scale:
        raise LabError(code, message, location=np.asarray(points)[i].tolist(), eigenvalue=float(lo[i]))


def brascamp_lieb_margin(G: ScalarField = None, f: ScalarField = None, spec: QuadratureSpec = None,
                         n: int = 1) -> CheckReport:
    """int <(hess G)^{-1} grad f, grad f> dnu - Var_nu(f) for dnu ~ e^{-G} dx.

    G defaults to |x|^2/2, i.e. nu is the standard Gaussian.
    """
    G = G or half_square_norm(f.n if f is not None else n)
    n = G.n
    leb = measure("lebesgue", n)

    def dens(x):
        return np.exp(-G.value(x))

    def quad(x):
        g = f.grad(x)
        return np.einsum("...i,...i->...", g, np.linalg.solve(G.hess(x), g[..., None])[..., 0])

    fns = [dens, lambda x: dens(x) * f.value(x), lambda x: dens(x) * f.value(x) ** 2,
           lambda x: dens(x) * quad(x)]

    def F(I):
        m1, m2 = I[1] / I[0], I[2] / I[0]
        return I[3] / I[0] - (m2 - m1 * m1)

    def run(sp):
        rule = build_rule(whole_space(n), leb, sp, probe=lambda x: dens(x) * (1 + f.value(x) ** 2))
        live = rule.weights * dens(rule.points) > 0
        # the nodes can miss an isolated degenerate point, so probe the origin and a fixed cloud too
        probe = 6 * qmc.Halton(d=n, scramble=False).random(257)[1:] - 3
        pts = np.vstack([rule.points[live], np.zeros((1, n)), probe])
        _spd_check(G.hess(pts), "NOT_STRICTLY_LOGCONCAVE", "hess G is not positive definite", pts)
        return _combine(rule, fns, F)

    margin, err, I = run(spec)
    var = I[2] / I[0] - (I[1] / I[0]) ** 2
    witness = {"G": G.spec, "f": f.spec}
    det = {"energy": I[3] / I[0], "variance": var}
    return _finish("brascamp_lieb", margin, err, witness, True, det, lambda: run(_other(spec))[:2], max(var, 1.0))


# ---------------------------------------------------------------------------
# weighted Poincare-type inequality for nu_beta


def _phi_rule(C, phi, exponent, mu, spec):
    """Rule on C for integrands carrying a factor Phi^exponent that may vanish on the boundary."""
    spec = spec or QuadratureSpec()
    if spec.mode != "polar" or float(exponent) == int(exponent) and exponent >= 0:
        return build_rule(C, mu, spec)
    scale = float(np.max(np.abs(phi.value(np.zeros((1, C.n))))))

    def mask(d):
        return np.abs(phi.value(C.rho(d)[:, None] * d)) <= 1e-9 * max(scale, 1e-300)
    if not np.any(mask(C.grid.directions)):
        return build_rule(C, mu, spec)
    return build_rule(C, mu, spec, boundary_mask=mask, boundary_exponent=float(exponent))


def _inverse_form(A, v):
    """<A^+ v, v> for symmetric A >= 0, +inf when v leaves the range of A."""
    ev, U = np.linalg.eigh(A)
    c = np.einsum("...ji,...j->...i", U, v)
    top = np.max(np.abs(ev), axis=-1, keepdims=True)
    zero = ev <= 1e-12 * np.maximum(top, 1e-300)
    vn = np.linalg.norm(v, axis=-1, keepdims=True)
    leak = np.any(zero & (np.abs(c) > 1e-10 * np.maximum(vn, 1e-300)), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.sum(np.where(zero, 0.0, c * c / np.where(zero, 1.0, ev)), axis=-1)
    return np.where(leak, np.inf, q)


def poincare_margin(mu: WeightedMeasure, C: SymmetricBody, phi: ConcaveFunction, beta: float,
                    f: ScalarField, spec: QuadratureSpec = None) -> CheckReport:
    """int <(-hess Phi)^{-1} grad g, grad g>/Phi dnu + n/(beta+n) (int f dnu)^2 - (beta-1) Var_nu(f).

    nu = Phi^beta mu / nu_beta(C) on C and g = f Phi.  The form with
    -hess Phi itself in place of its inverse is reported as
    ``margin_hessian_form``; that variant is not invariant under Phi -> c Phi.
    """
    if not beta > 0:
        raise LabError("CONFIG_ERROR", "beta must be positive", beta=beta)
    n = C.n

    def P(x):
        v = phi.value(x)
        if np.any(v < -1e-12):
            raise LabError("NOT_NONNEGATIVE", "Phi is negative inside C", location=np.asarray(x)[np.argmin(v)].tolist())
        return np.maximum(v, 0.0)

    def grad_g(x):
        return f.grad(x) * P(x)[..., None] + f.value(x)[..., None] * phi.grad_x(x)

    def energy(x, inverse=True):
        A = -phi.hess_x(x)
        v = grad_g(x)
        if inverse:
            return _inverse_form(A, v)
        return np.einsum("...i,...ij,...j->...", v, A, v)

    def moments(sp, inverse=True):
        ra = _phi_rule(C, phi, beta, mu, sp)
        rb = _phi_rule(C, phi, beta - 1, mu, sp)
        H = -phi.hess_x(ra.points)
        ev = np.linalg.eigvalsh(H)[..., 0]
        scale = max(1.0, float(np.max(np.abs(H))))
        if np.min(ev) < -1e-10 * scale:
            i = int(np.argmin(ev))
            raise LabError("NOT_CONCAVE", "Phi is not concave", location=ra.points[i].tolist())
        ests = [ra.integrate(lambda x: P(x) ** beta * f.value(x) ** k) for k in range(3)]
        ests.append(rb.integrate(lambda x: P(x) ** (beta - 1) * energy(x, inverse)))
        return ests

    def F(I):
        m1, m2 = I[1] / I[0], I[2] / I[0]
        return I[3] / I[0] + n / (beta + n) * m1 * m1 - (beta - 1) * (m2 - m1 * m1)

    def run(sp, inverse=True):
        try:
            ests = moments(sp, inverse)
        except LabError as e:
            if e.code == "NON_FINITE_INTEGRAND":
                return np.inf, 0.0, None
            raise
        I = np.array([e.value for e in ests])
        E = np.array([e.error_estimate for e in ests])
        val = float(F(I))
        err = 0.0
        for k in range(4):
            step = 1e-6 * max(abs(I[k]), 1e-300)
            up, dn = I.copy(), I.copy()
            up[k] += step
            dn[k] -= step
            err += abs((F(up) - F(dn)) / (2 * step)) * E[k]
        return val, float(err), I

    margin, err, I = run(spec)
    direct_form, _, _ = run(spec, inverse=False)
    det = {"margin_hessian_form": direct_form}
    if I is not None:
        m1, m2 = I[1] / I[0], I[2] / I[0]
        det.update(energy=I[3] / I[0], mean=m1, variance=m2 - m1 * m1)
    else:
        det["energy"] = np.inf
    witness = {"measure": mu.to_spec(), "C": C.to_spec(), "phi": phi.to_spec(), "beta": beta, "f": f.spec}
    return _finish("poincare", margin, err, witness, True, det, lambda: run(_other(spec))[:2])


# ---------------------------------------------------------------------------
# torsional rigidity


@dataclass(frozen=True, eq=False)
class TorsionSolution:
    """Radial profile of the Dirichlet solution of L_mu u = -1 on an interval or ball."""
    n: int
    radius: float
    s: np.ndarray
    u: np.ndarray
    du: np.ndarray
    tau: float
    tau_energy: float

    @property
    def agreement(self):
        return abs(self.tau - self.tau_energy)


def _torsion_geometry(K: SymmetricBody):
    if K.n == 1:
        return float(K.max_radius())
    if K.kind == "ball":
        return float(K.params["r"]) if "r" in K.params else float(K.max_radius())
    raise LabError("CONFIG_ERROR", "torsion needs an interval or a ball", kind=K.kind)


def torsion_solve(K: SymmetricBody, mu: WeightedMeasure = None, order: int = 48, panels: int = 8):
    """tau_mu(K) = int u dmu for L_mu u = -1 in K, u = 0 on the boundary.

    With rho(s) = s^{n-1} e^{-w(s)},  u'(s) = -(1/rho(s)) int_0^s rho and
    u(s) = -int_s^R u'.  Both are Gauss-Legendre quadratures after the
    substitutions sigma = s y and sigma = s + (R - s) y.
    """
    n = K.n
    mu = mu or measure("lebesgue", n)
    R = _torsion_geometry(K)
    y, wy = _unit_gl(order)
    w = mu.weight.w

    def du(s):
        s = np.asarray(s, dtype=float)
        inner = s[..., None] * y
        with np.errstate(over="ignore"):
            k = y ** (n - 1) * np.exp(w(s)[..., None] - w(inner))
        return -s * np.sum(wy * k, axis=-1)

    def u(s):
        s = np.asarray(s, dtype=float)
        pts = s[..., None] + (R - s)[..., None] * y
        return (R - s) * np.sum(wy * -du(pts), axis=-1)

    edges = np.linspace(0.0, R, panels + 1)
    s = np.concatenate([a + (b - a) * y for a, b in zip(edges[:-1], edges[1:])])
    ws = np.concatenate([(b - a) * wy for a, b in zip(edges[:-1], edges[1:])])
    dens = sphere_area(n) * s ** (n - 1) * np.exp(mu.log_density_radial(s))
    us, dus = u(s), du(s)
    tau = float(np.sum(ws * dens * us))
    tau_e = float(np.sum(ws * dens * dus ** 2))
    return tau, TorsionSolution(n, R, s, us, dus, tau, tau_e)


def torsion_bm_check(K: SymmetricBody, L: SymmetricBody, lam: float, mu: WeightedMeasure = None,
                     order: int = 48) -> CheckReport:
    """tau(lam K + (1-lam) L)^{1/(n+2)} - lam tau(K)^{1/(n+2)} - (1-lam) tau(L)^{1/(n+2)}.

    A theorem for Lebesgue measure; exploratory for weighted mu.  The error
    estimate is the mass/energy disagreement; a refined solve (twice the
    order) plays the role of the second route for violations.
    """
    n = K.n
    mu = mu or measure("lebesgue", n)
    e = 1.0 / (n + 2)
    M = minkowski_combine(K, L, lam)

    def run(q):
        sols = [torsion_solve(B, mu, q)[1] for B in (M, K, L)]
        vals = [sol.tau ** e for sol in sols]
        errs = [e * v / sol.tau * sol.agreement for v, sol in zip(vals, sols)]
        m = vals[0] - lam * vals[1] - (1 - lam) * vals[2]
        return m, errs[0] + lam * errs[1] + (1 - lam) * errs[2], [sol.tau for sol in sols]

    margin, err, taus = run(order)
    witness = {"K": K.to_spec(), "L": L.to_spec(), "lam": lam, "measure": mu.to_spec()}
    det = {"tau_combination": taus[0], "tau_K": taus[1], "tau_L": taus[2], "exponent": e}
    return _finish("torsion_bm", margin, err, witness, mu.is_lebesgue, det, lambda: run(2 * order)[:2],
                   taus[0] ** e)


def torsion_sqrt_concavity(a: float, b: float, mu: WeightedMeasure = None, lam_points: int = 17,
                           x_points: int = 17, h: float = 1e-2, order: int = 48) -> CheckReport:
    """Largest eigenvalue of the (lam, x) Hessian of sqrt(u) on the 1-D domains [-r, r], r = lam a + (1-lam) b.

    The Hessian is a Richardson combination of central differences at h and
    h/2; their disagreement sets the per-point tolerance.  Margin is minus
    the largest eigenvalue.  Exploratory outside Lebesgue measure.
    """
    mu = mu or measure("lebesgue", 1)
    y, wy = _unit_gl(order)
    w = mu.weight.w

    def root(lam, x):
        R = lam * a + (1 - lam) * b
        s = abs(x)
        pts = s + (R - s) * y
        du = -pts * np.sum(wy * np.exp(w(pts)[:, None] - w(pts[:, None] * y)), axis=-1)
        return np.sqrt(max((R - s) * float(np.sum(wy * -du)), 0.0))

    def hess(lam, x, k):
        f0 = root(lam, x)
        fll = (root(lam + k, x) - 2 * f0 + root(lam - k, x)) / k ** 2
        fxx = (root(lam, x + k) - 2 * f0 + root(lam, x - k)) / k ** 2
        flx = (root(lam + k, x + k) - root(lam + k, x - k) - root(lam - k, x + k) + root(lam - k, x - k)) / (4 * k * k)
        return np.array([[fll, flx], [flx, fxx]]), f0

    worst, where, tol_at, flagged = -np.inf, None, 0.0, False
    slack = np.inf
    for lam in np.linspace(0.1, 0.9, lam_points):
        R = lam * a + (1 - lam) * b
        for x in np.linspace(-0.8 * R, 0.8 * R, x_points):
            H1, f0 = hess(lam, x, h)
            H2, _ = hess(lam, x, h / 2)
            H = (4 * H2 - H1) / 3
            top = float(np.linalg.eigvalsh(H)[-1])
            tol = 10 * float(np.max(np.abs(H2 - H1))) + 1e-12 * abs(f0) / h ** 2
            both = min(np.linalg.eigvalsh(H1)[-1], np.linalg.eigvalsh(H2)[-1]) > tol
            if tol - top < slack:
                slack = tol - top
                worst, where, tol_at, flagged = top, {"lam": float(lam), "x": float(x)}, tol, both
    margin = -worst
    verdict = "holds" if margin >= -tol_at else ("violated" if flagged else "inconclusive")
    witness = {"a": a, "b": b, "measure": mu.to_spec(), **where}
    return CheckReport("torsion_sqrt_concavity", margin, tol_at, verdict, witness, mu.is_lebesgue,
                       {"fd_step": h})


# ---------------------------------------------------------------------------
# transference: Phi^beta as a beta-dimensional ball volume


def lift_check(K: SymmetricBody, phi: ConcaveFunction, beta: int, mu: WeightedMeasure = None,
               spec: QuadratureSpec = None) -> CheckReport:
    """Compare nu_beta(K) with c_beta (mu x m^beta){(x, y): x in K, |y| <= Phi(x)} by Monte Carlo.

    c_beta = 1/vol(B_2^beta).  Margin = 3 sigma - |difference|, so that
    margin >= 0 means agreement within three standard errors.
    """
    if beta not in (1, 2, 3) or int(beta) != beta:
        raise LabError("UNSUPPORTED_BETA", "lift needs beta in {1, 2, 3}", beta=beta)
    beta = int(beta)
    n = K.n
    mu = mu or measure("lebesgue", n)
    spec = spec or QuadratureSpec()
    quad = weighted_power_mass(K, phi, beta, mu, spec.with_mode("polar"))
    hw = K.half_widths()
    probe = np.random.default_rng(0).uniform(-hw, hw, size=(4096, n))
    pmax = float(np.max(phi.value(np.zeros((1, n))))) * 1.0
    pmax = max(pmax, float(np.max(phi.value(probe))))
    if pmax <= 0:
        raise LabError("NOT_NONNEGATIVE", "Phi has no positive part on K")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed, spawn_key=(spec.instance, 1))))
    N = spec.mc_samples
    box = float(np.prod(2 * hw)) * (2 * pmax) ** beta
    total, total2, done = 0.0, 0.0, 0
    chunk = 250_000
    while done < N:
        m = min(chunk, N - done)
        x = rng.uniform(-hw, hw, size=(m, n))
        yv = rng.uniform(-pmax, pmax, size=(m, beta))
        inside = (K.gauge(x) <= 1.0) & (np.linalg.norm(yv, axis=-1) <= np.maximum(phi.value(x), 0.0))
        v = np.where(inside, mu.density(x), 0.0) * box
        total += float(v.sum())
        total2 += float((v * v).sum())
        done += m
    mean = total / N
    var = max(total2 / N - mean * mean, 0.0)
    c = 1.0 / ball_volume(beta)
    est = c * mean
    se = c * np.sqrt(var / N)
    diff = abs(est - quad.value)
    margin = 3 * se - diff
    verdict = "holds" if margin >= 0 else ("violated" if diff > 3 * se + 10 * quad.error_estimate else "inconclusive")
    witness = {"K": K.to_spec(), "phi": phi.to_spec(), "beta": beta, "measure": mu.to_spec(),
               "samples": N, "seed": spec.seed}
    det = {"quadrature": quad.value, "quadrature_error": quad.error_estimate, "monte_carlo": est,
           "standard_error": se, "c_beta": c}
    return CheckReport("lift", float(margin), float(3 * se), verdict, witness, True, det)
