"""Neumann solves, boundary kinematics and the second derivative of marginals.

Everything here lives on geometries where the weighted Neumann problem is
an ODE: an interval [-R, R] (n = 1) or a ball of radius R with radial data.
Writing rho for the density of nu in the reduced coordinate s, the
equation L_nu u = f becomes (rho u')' = rho f, so u' is a single quadrature
and u'' follows from the equation itself.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Union

import numpy as np

from .errors import LabError
from .fields import ScalarField
from .geometry import SymmetricBody, ball, direction_grid, interval, whole_space
from .integrate import QuadratureSpec, build_rule
from .marginals import MarginalProblem
from .measures import WeightedMeasure, measure, potential_eval, sphere_area


@lru_cache(maxsize=None)
def _unit_gl(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class SolverGeometry:
    """[-R, R] for kind "interval", the radial segment [0, R] for kind "ball"."""
    kind: str
    n: int
    radius: float

    def __post_init__(self):
        if self.kind not in ("interval", "ball"):
            raise LabError("CONFIG_ERROR", "geometry must be interval or ball", kind=self.kind)
        if self.kind == "interval" and self.n != 1:
            raise LabError("CONFIG_ERROR", "interval geometry is one-dimensional")
        if not self.radius > 0:
            raise LabError("EMPTY_BODY", "radius must be positive", radius=self.radius)

    @property
    def lo(self):
        return -self.radius if self.kind == "interval" else 0.0

    def jacobian(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "interval":
            return np.ones_like(s)
        return sphere_area(self.n) * s ** (self.n - 1)

    def nodes(self, panels=8, order=32):
        """Composite Gauss-Legendre nodes and weights (Jacobian included)."""
        x, w = _unit_gl(order)
        edges = np.linspace(self.lo, self.radius, panels + 1)
        s = (edges[:-1, None] + np.diff(edges)[:, None] * x).ravel()
        ws = (np.diff(edges)[:, None] * w).ravel()
        return s, ws * self.jacobian(s)

    def boundary(self):
        """Boundary points in s and their surface weights."""
        R = self.radius
        if self.kind == "interval":
            return np.array([-R, R]), np.array([1.0, 1.0])
        return np.array([R]), np.array([sphere_area(self.n) * R ** (self.n - 1)])

    def body(self):
        return interval(self.radius) if self.kind == "interval" else ball(self.n, self.radius)


def interval_geometry(R):
    return SolverGeometry("interval", 1, float(R))


def ball_geometry(n, R):
    return SolverGeometry("ball", int(n), float(R))


@dataclass(frozen=True, eq=False)
class NeumannSolution:
    geometry: SolverGeometry
    s: np.ndarray
    u: np.ndarray
    du: np.ndarray
    boundary_derivative: tuple
    compatibility_defect: float
    residual: float
    du_fn: Callable = field(repr=False)
    d2u_fn: Callable = field(repr=False)


def solve_neumann(G: Callable, dG: Callable, f: Callable, neumann, geometry: SolverGeometry, *,
                  grid_points=512, tol=1e-8, inner_order=64) -> NeumannSolution:
    """Solve L_nu u = f with outward normal derivative ``neumann``, dnu ~ e^{-G}.

    G, dG and f are vectorized functions of the reduced coordinate s.
    ``neumann`` is (left, right) on an interval and a scalar on a ball.
    The solution is pinned by u(0) = 0.
    """
    geo = geometry
    R, a = geo.radius, geo.lo
    g0 = float(G(np.array(0.0)))
    s_q, w_q = geo.nodes()
    rho = np.exp(-(G(s_q) - g0)) * w_q
    mass = float(np.sum(rho))
    bs, bw = geo.boundary()
    brho = np.exp(-(G(bs) - g0)) * bw
    if geo.kind == "interval":
        left, right = (float(v) for v in neumann)
        flux = brho[0] * left + brho[1] * right
    else:
        left = right = float(neumann)
        flux = brho[0] * right
    fq = f(s_q)
    defect = (float(np.sum(rho * fq)) - flux) / mass
    scale = (float(np.sum(rho * np.abs(fq))) + abs(flux)) / mass
    if abs(defect) > tol * max(1.0, scale):
        raise LabError("INCOMPATIBLE_DATA", "Neumann data violate the compatibility condition",
                       defect=defect, scale=scale)
    x, w = _unit_gl(inner_order)
    n = geo.n

    def du_fn(s):
        s = np.asarray(s, dtype=float)
        Gs = G(s)[..., None]
        if geo.kind == "interval":
            sig = a + (s - a)[..., None] * x
            inner = np.sum(w * np.exp(Gs - G(sig)) * f(sig), axis=-1)
            return -left * np.exp(G(s) - float(G(np.array(a)))) + (s - a) * inner
        sig = s[..., None] * x
        inner = np.sum(w * x ** (n - 1) * np.exp(Gs - G(sig)) * f(sig), axis=-1)
        return s * inner

    def d2u_fn(s):
        s = np.asarray(s, dtype=float)
        d1 = du_fn(s)
        out = f(s) + dG(s) * d1
        if geo.kind == "ball":
            out = out - (n - 1) * d1 / s
        return out

    s = np.linspace(a, R, grid_points)
    du = du_fn(s)
    xu, wu = _unit_gl(32)
    u = s * np.sum(wu * du_fn(s[:, None] * xu), axis=-1)
    # independent residual: fourth-order difference of u' against the equation
    d = 1e-3 * R
    inner_s = s[(s >= a + 2 * d) & (s <= R - 2 * d)]
    if geo.kind == "ball":
        inner_s = inner_s[inner_s >= 4 * d]
    fd = (du_fn(inner_s - 2 * d) - 8 * du_fn(inner_s - d) + 8 * du_fn(inner_s + d) - du_fn(inner_s + 2 * d)) / (12 * d)
    lhs = fd - dG(inner_s) * du_fn(inner_s)
    if geo.kind == "ball":
        lhs = lhs + (n - 1) * du_fn(inner_s) / inner_s
    residual = float(np.max(np.abs(lhs - f(inner_s)))) if len(inner_s) else 0.0
    if geo.kind == "interval":
        bd = (float(-du_fn(np.array(-R))), float(du_fn(np.array(R))))
    else:
        bd = (float(du_fn(np.array(R))),)
    return NeumannSolution(geo, s, u, du, bd, defect, residual, du_fn, d2u_fn)


# ---------------------------------------------------------------------------
# boundary kinematics


@dataclass(frozen=True)
class BoundaryKinematics:
    """Normal speed psi = r'(t0) and its derivative psi_dot = r''(t0) for ball sections.

    II is 1/r on the sphere of radius r (absent for n = 1).
    """
    n: int
    t0: float
    radius: float
    psi: float
    psi_dot: float

    @property
    def second_fundamental_form(self):
        return None if self.n == 1 else 1.0 / self.radius

    def mean_curvature(self, dG_boundary):
        """H = tr II - dG/dn at the boundary of the reduced geometry."""
        return (self.n - 1) / self.radius - dG_boundary

    @classmethod
    def from_family(cls, family, t0):
        if not family.has_radius or family.dradius is None or family.d2radius is None:
            raise LabError("MISSING_KINEMATICS", "family has no radius profile", kind=family.kind)
        r = float(family.radius(t0))
        if not r > 0:
            raise LabError("EMPTY_BODY", "section is empty at t0", t0=t0)
        return cls(family.n, float(t0), r, float(family.dradius(t0)), float(family.d2radius(t0)))


def level_set_delta(phi, kin: BoundaryKinematics, y, tol=1e-8) -> float:
    """delta(y) = -<grad_x Phi(t0, y), n(y)>, checked against d_t Phi = delta psi."""
    y = np.asarray(y, dtype=float).reshape(kin.n)
    normal = y / np.linalg.norm(y)
    delta = float(-phi.grad_x(y, kin.t0) @ normal)
    dt = float(phi.d_t(y, kin.t0))
    mismatch = abs(dt - delta * kin.psi)
    if delta < -1e-10 or mismatch > tol * (1 + abs(dt)):
        raise LabError("LEVELSET_MISMATCH", "boundary identity fails", delta=delta, d_t=dt,
                       psi=kin.psi, mismatch=mismatch)
    return delta


# ---------------------------------------------------------------------------
# second derivative of phi


class _Reduced:
    """Phi(t0, .), W and their derivatives along the reduced coordinate s."""

    def __init__(self, P: MarginalProblem, kin: BoundaryKinematics):
        n = P.n
        if n > 1 and not P.phi.is_radial:
            raise LabError("CONFIG_ERROR", "sections of dimension >= 2 need a radial Phi")
        self.P, self.kin = P, kin
        self.geo = interval_geometry(kin.radius) if n == 1 else ball_geometry(n, kin.radius)
        self.e1 = np.eye(n)[0]
        self.wt = P.measure.weight

    def _x(self, s):
        return np.asarray(s, dtype=float)[..., None] * self.e1

    def phi(self, s):
        return self.P.phi.value(self._x(s), self.kin.t0)

    def phi_r(self, s):
        return self.P.phi.grad_x(self._x(s), self.kin.t0) @ self.e1

    def phi_rr(self, s):
        return self.e1 @ self.P.phi.hess_x(self._x(s), self.kin.t0) @ self.e1

    def phi_t(self, s):
        return self.P.phi.d_t(self._x(s), self.kin.t0)

    def phi_tt(self, s):
        return self.P.phi.d_tt(self._x(s), self.kin.t0)

    def phi_tr(self, s):
        return self.P.phi.d_tx(self._x(s), self.kin.t0) @ self.e1

    def W(self, s):
        return self.wt.w(np.abs(s))

    def dW(self, s):
        return np.sign(s) * self.wt.dw(np.abs(s))

    def d2W(self, s):
        return self.wt.d2w(np.abs(s))

    def G(self, s):
        return self.W(s) - self.P.beta * np.log(self.phi(s))

    def dG(self, s):
        return self.dW(s) - self.P.beta * self.phi_r(s) / self.phi(s)


def _nu_weights(red: _Reduced):
    """Normalized nu weights on bulk nodes and on the boundary."""
    s, w = red.geo.nodes()
    bs, bw = red.geo.boundary()
    ph = red.phi(s)
    bph = red.phi(bs)
    if np.min(ph) <= 0 or np.min(bph) <= 0:
        i = int(np.argmin(ph))
        raise LabError("NOT_POSITIVE", "Phi must be positive on the closed section",
                       s=float(s[i]), value=float(min(np.min(ph), np.min(bph))))
    g0 = float(red.G(np.array(0.0)))
    rho = np.exp(-(red.G(s) - g0)) * w
    brho = np.exp(-(red.G(bs) - g0)) * bw
    Z = float(np.sum(rho))
    return s, rho / Z, bs, brho / Z


def marginal_neumann_solution(P: MarginalProblem, kin: BoundaryKinematics) -> NeumannSolution:
    """u with L_nu u = d_t Phi/Phi - B - C/beta and du/dn = -psi/beta."""
    red = _Reduced(P, kin)
    s, rho, bs, brho = _nu_weights(red)
    beta = P.beta
    B = float(np.sum(rho * red.phi_t(s) / red.phi(s)))
    C = kin.psi * float(np.sum(brho))

    def f(x):
        return red.phi_t(x) / red.phi(x) - B - C / beta
    data = -kin.psi / beta
    neu = (data, data) if red.geo.kind == "interval" else data
    return solve_neumann(red.G, red.dG, f, neu, red.geo)


def second_variation_terms(P: MarginalProblem, t0: float, kin: BoundaryKinematics = None,
                           sol: NeumannSolution = None) -> dict:
    """Every term of the formula for (1/gamma) phi''(t0)/phi(t0), plus the u-free form.

    Keys T1..T10 follow the order bulk Hessian term, Bochner bulk, (L_mu u)^2,
    the five products of A, B, C, and the two boundary integrals; the
    tangential boundary terms vanish for this geometry and are reported as 0.
    ``transport`` is the boundary term beta * int (d_t Phi/Phi) psi dnu coming
    from the t-dependence of the density Phi^beta on the moving boundary; it
    cancels T9.  ``rhs_without_transport`` leaves it out and disagrees with finite
    differences whenever d_t Phi * psi is nonzero on the boundary.
    ``direct`` evaluates the same quantity without u, through the variance,
    the mean curvature term and the boundary speed.
    """
    kin = kin or BoundaryKinematics.from_family(P.family, t0)
    red = _Reduced(P, kin)
    s, rho, bs, brho = _nu_weights(red)
    sol = sol or marginal_neumann_solution(P, kin)
    beta, gamma, n = P.beta, P.gamma, P.n
    ph = red.phi(s)
    q = red.phi_t(s) / ph
    B = float(np.sum(rho * q))
    C = kin.psi * float(np.sum(brho))
    du = sol.du_fn(s)
    d2u = sol.d2u_fn(s)
    lap_u = d2u + ((n - 1) * du / s if n > 1 else 0.0)
    lmu = lap_u - red.dW(s) * du
    hs = d2u ** 2 + ((n - 1) * (du / s) ** 2 if n > 1 else 0.0)
    A = float(np.sum(rho * lmu))
    hx = red.phi_tt(s) - 2 * beta * red.phi_tr(s) * du + beta ** 2 * red.phi_rr(s) * du ** 2
    bq = red.phi_t(bs) / red.phi(bs)
    k = 1.0 / beta - gamma
    T = {
        "T1": beta * float(np.sum(rho * hx / ph)),
        "T2": -beta ** 2 * float(np.sum(rho * (hs + red.d2W(s) * du ** 2))),
        "T3": -beta * float(np.sum(rho * lmu ** 2)),
        "T4": -beta * (1 - beta * gamma) * B ** 2,
        "T5": -k * C ** 2,
        "T6": -2 * beta * A * B,
        "T7": -2 * A * C,
        "T8": -2 * beta * k * B * C,
        "T9": -beta * kin.psi * float(np.sum(brho * bq)),
        "T10": kin.psi_dot * float(np.sum(brho)),
        "tangential": 0.0,
        # d/dt of the density Phi(t, .)^beta carried along the moving boundary
        "transport": beta * kin.psi * float(np.sum(brho * bq)),
    }
    rhs = float(sum(T.values()))
    rhs_without_transport = rhs - T["transport"]
    # u-free form
    var = float(np.sum(rho * (q - B) ** 2))
    H = kin.mean_curvature(red.dG(bs) * np.sign(bs))
    direct = (beta * float(np.sum(rho * red.phi_tt(s) / ph)) + beta * (beta - 1) * var
              + beta * (beta * gamma - 1) * B ** 2 + 2 * beta * (gamma - 1) * B * C + (gamma - 1) * C ** 2
              + 2 * beta * kin.psi * float(np.sum(brho * bq)) + kin.psi_dot * float(np.sum(brho))
              + kin.psi ** 2 * float(np.sum(brho * H)))
    return {**T, "A": A, "B": B, "C": C, "rhs": rhs, "rhs_without_transport": rhs_without_transport, "direct": direct,
            "neumann_residual": sol.residual, "compatibility_defect": sol.compatibility_defect}


def second_variation_rhs(P: MarginalProblem, t0: float, kin: BoundaryKinematics = None,
                         sol: NeumannSolution = None) -> float:
    """(1/gamma) phi''(t0)/phi(t0) assembled from the Neumann solution u."""
    return second_variation_terms(P, t0, kin, sol)["rhs"]


# ---------------------------------------------------------------------------
# Bochner-Reilly identity


def bochner_terms(V: ScalarField, u: ScalarField, geometry: SolverGeometry, psi: Callable = None,
                  radial_order=64) -> dict:
    """Both sides of the weighted Reilly formula for dnu ~ e^{-V} on an interval or ball.

    ``psi`` defaults to the normal derivative of u.  Boundary terms use
    H = tr II - <grad V, n>, II = |.|^2/R on the sphere, and the tangential
    gradient of psi computed from the Hessian of u.
    """
    n, R = geometry.n, geometry.radius
    rule = build_rule(geometry.body(), measure("lebesgue", n), QuadratureSpec(radial_order=radial_order))
    x, w = rule.points, rule.weights
    dens = np.exp(-V.value(x))
    Z = float(np.sum(w * dens))
    w = w * dens / Z
    gu, Hu, gV, HV = u.grad(x), u.hess(x), V.grad(x), V.hess(x)
    lnu = np.trace(Hu, axis1=-2, axis2=-1) - np.sum(gV * gu, axis=-1)
    lhs = float(np.sum(w * lnu ** 2))
    hs = float(np.sum(w * np.sum(Hu * Hu, axis=(-2, -1))))
    pot = float(np.sum(w * np.einsum("...i,...ij,...j->...", gu, HV, gu)))
    grid = direction_grid(n)
    nh = grid.directions
    y = R * nh
    bw = grid.weights * R ** (n - 1) * np.exp(-V.value(y)) / Z
    gub, Hub = u.grad(y), u.hess(y)
    dn = np.sum(gub * nh, axis=-1)
    ps = dn if psi is None else np.asarray(psi(y), dtype=float)
    H = (n - 1) / R - np.sum(V.grad(y) * nh, axis=-1)
    mean_term = float(np.sum(bw * H * ps ** 2))
    if n == 1:
        ii_term = cross = 0.0
    else:
        proj = np.eye(n) - nh[:, :, None] * nh[:, None, :]
        tu = np.einsum("kij,kj->ki", proj, gub)
        tpsi = np.einsum("kij,kj->ki", proj, np.einsum("kij,kj->ki", Hub, nh)) + tu / R
        ii_term = float(np.sum(bw * np.sum(tu * tu, axis=-1) / R))
        cross = float(np.sum(bw * -2 * np.sum(tu * tpsi, axis=-1)))
    rhs = hs + pot + mean_term + ii_term + cross
    scale = abs(lhs) + abs(hs) + abs(pot) + abs(mean_term) + abs(ii_term) + abs(cross)
    return {"lhs": lhs, "hessian": hs, "potential": pot, "mean_curvature": mean_term,
            "second_fundamental_form": ii_term, "cross": cross, "rhs": rhs,
            "residual": lhs - rhs, "scale": scale}


def bochner_residual(V: ScalarField, u: ScalarField, geometry: SolverGeometry, psi: Callable = None) -> float:
    """LHS - RHS of the weighted Reilly formula."""
    return bochner_terms(V, u, geometry, psi)["residual"]


# ---------------------------------------------------------------------------
# hereditary and spectral margins


def _potential_parts(mu, x):
    if isinstance(mu, WeightedMeasure):
        return potential_eval(mu, x)
    return mu.value(x), mu.grad(x), mu.hess(x)


def _nu_rule(mu, factor, body, spec, n):
    """Points and normalized nu weights for dnu ~ factor dmu on body."""
    body = body if body is not None else whole_space(n)
    spec = spec or QuadratureSpec()
    if isinstance(mu, WeightedMeasure):
        base = mu

        def dens(x):
            return np.ones(x.shape[:-1]) if factor is None else np.asarray(factor(x), dtype=float)
    else:
        base = measure("lebesgue", n)

        def dens(x):
            v = np.exp(-mu.value(x))
            return v if factor is None else v * np.asarray(factor(x), dtype=float)
    rule = build_rule(body, base, spec, probe=dens)
    x = rule.points
    d = dens(x)
    w = rule.weights * d
    Z = float(np.sum(w))
    if not Z > 0:
        raise LabError("EMPTY_BODY", "nu has zero mass")
    return x, w / Z, dens


def _check_even(fns, n, radius, label):
    rng = np.random.default_rng(12345)
    pts = radius * (2 * rng.random((512, n)) - 1)
    for name, fn in fns:
        if fn is None:
            continue
        a, b = np.asarray(fn(pts), dtype=float), np.asarray(fn(-pts), dtype=float)
        asym = float(np.max(np.abs(a - b)))
        if asym > 1e-8 * max(1.0, float(np.max(np.abs(a)))):
            raise LabError("NOT_EVEN", f"{name} is not even", asymmetry=asym, where=label)


def hereditary_parts(mu: Union[WeightedMeasure, ScalarField], u: ScalarField, factor: Callable = None,
                     body: SymmetricBody = None, spec: QuadratureSpec = None) -> dict:
    n = u.n
    R = body.max_radius() if body is not None and np.isfinite(body.max_radius()) else 2.0
    _check_even([("nu density", factor), ("u", u.value)], n, R, "hereditary")
    x, w, _ = _nu_rule(mu, factor, body, spec, n)
    _, gW, HW = _potential_parts(mu, x)
    gu, Hu = u.grad(x), u.hess(x)
    I1 = float(np.sum(w * (np.sum(Hu * Hu, axis=(-2, -1)) + np.einsum("...i,...ij,...j->...", gu, HW, gu))))
    A = float(np.sum(w * (np.trace(Hu, axis1=-2, axis2=-1) - np.sum(gW * gu, axis=-1))))
    D = float(np.sum(w * (n - np.sum(gW * x, axis=-1))))
    ratio = 0.0 if abs(D) < 1e-12 else A * A / D
    return {"bulk": I1, "mean": A, "denominator": D, "ratio": ratio, "margin": I1 - ratio}


def hereditary_margin(mu: Union[WeightedMeasure, ScalarField], u: ScalarField, factor: Callable = None,
                      body: SymmetricBody = None, spec: QuadratureSpec = None) -> float:
    """int (|hess u|^2 + <hess W grad u, grad u>) dnu - (int L_mu u dnu)^2 / int L_mu(|x|^2/2) dnu.

    nu has density ``factor`` with respect to mu on ``body`` (default R^n).
    ``mu`` may be a radial WeightedMeasure or a general potential W, in
    which case dmu = e^{-W} dx.  A denominator below 1e-12 in absolute value
    makes the ratio term 0.
    """
    return hereditary_parts(mu, u, factor, body, spec)["margin"]


def spectral_margin(mu: WeightedMeasure, v: ScalarField, factor: Callable = None,
                    body: SymmetricBody = None, spec: QuadratureSpec = None) -> float:
    """int |hess v|^2 dnu - int (w'(|x|)/|x|) |grad v|^2 dnu."""
    n = v.n
    R = body.max_radius() if body is not None and np.isfinite(body.max_radius()) else 2.0
    _check_even([("nu density", factor), ("v", v.value)], n, R, "spectral")
    x, w, _ = _nu_rule(mu, factor, body, spec, n)
    gv, Hv = v.grad(x), v.hess(x)
    q = mu.weight.dw_over_r(np.linalg.norm(x, axis=-1))
    return float(np.sum(w * np.sum(Hv * Hv, axis=(-2, -1))) - np.sum(w * q * np.sum(gv * gv, axis=-1)))
