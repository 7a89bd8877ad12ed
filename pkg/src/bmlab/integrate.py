"""Quadrature of f against mu over symmetric convex bodies.

A :class:`Rule` is a set of nodes and weights (density already folded in)
plus alternate rules used for the error estimate.  Polar rules run
Gauss-Legendre along rays; the error estimate is the change when the
radial order is halved, plus the change under a coarser sphere grid.  Monte
Carlo rules stratify the bounding ball into radius octiles and report the
stratified standard error.
"""
from dataclasses import dataclass, replace
from math import ceil, log2
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import roots_jacobi

from .errors import LabError
from .geometry import DirectionGrid, SymmetricBody, ConcaveFunction
from .measures import WeightedMeasure, ball_volume, measure

ANALYTIC_RHO = ("ball", "box", "ellipsoid", "polytope", "whole", "radial")


@dataclass(frozen=True)
class QuadratureSpec:
    mode: str = "polar"
    radial_order: int = 64
    grid: Optional[DirectionGrid] = None
    mc_samples: int = 2_000_000
    seed: int = 0
    instance: int = 0

    def __post_init__(self):
        mode = {"monte_carlo": "mc"}.get(self.mode, self.mode)
        if mode not in ("polar", "mc"):
            raise LabError("CONFIG_ERROR", "quadrature mode must be polar or mc", mode=self.mode)
        object.__setattr__(self, "mode", mode)
        if self.radial_order < 2 or self.mc_samples < 16:
            raise LabError("CONFIG_ERROR", "quadrature orders must be >= 2")

    def with_mode(self, mode):
        return replace(self, mode=mode)


@dataclass(frozen=True)
class IntegralEstimate:
    value: float
    error_estimate: float
    node_count: int


def _gl(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _gj(order, beta):
    x, w = roots_jacobi(order, beta, 0.0)
    return x, w


@dataclass(frozen=True, eq=False)
class Rule:
    n: int
    points: np.ndarray
    weights: np.ndarray
    alternates: tuple = ()
    strata: Optional[tuple] = None
    node_count: int = 0

    def _eval(self, f, pts):
        if callable(f):
            vals = np.asarray(f(pts), dtype=float)
            vals = np.broadcast_to(vals, pts.shape[:-1])
        else:
            vals = np.full(pts.shape[:-1], float(f))
        bad = ~np.isfinite(vals)
        if np.any(bad):
            loc = pts[np.argmax(bad)].tolist()
            raise LabError("NON_FINITE_INTEGRAND", "integrand is not finite", location=loc)
        return vals

    def values(self, f):
        return self._eval(f, self.points)

    def integrate(self, f) -> IntegralEstimate:
        vals = self._eval(f, self.points)
        value = float(np.sum(self.weights * vals))
        if self.strata is not None:
            labels, per = self.strata
            y = self.weights * vals * per
            err2 = 0.0
            for k in range(int(labels.max(initial=-1)) + 1):
                yk = y[labels == k]
                s1 = yk.sum() / per
                s2 = (yk ** 2).sum() / per
                err2 += max(s2 - s1 * s1, 0.0) / (per - 1)
            return IntegralEstimate(value, float(np.sqrt(err2)), self.node_count)
        err = 0.0
        for pts, wts in self.alternates:
            err += abs(float(np.sum(wts * self._eval(f, pts))) - value)
        return IntegralEstimate(value, err, self.node_count)


def _angular(K: SymmetricBody, grid: DirectionGrid):
    """Primary and coarse direction sets with weights."""
    n = grid.n
    if n == 1:
        return (grid.directions, grid.weights), None
    breaks = K.angular_breaks() if n == 2 else None
    if breaks is not None:
        m = grid.shape[0]
        b = np.sort(np.mod(breaks, 2 * np.pi))
        b = np.concatenate([b, [b[0] + 2 * np.pi]])
        panels = len(b) - 1
        q = max(8, int(ceil(m / panels)))

        def rule(order):
            s, w = _gl(order)
            ang = (b[:-1, None] + (b[1:] - b[:-1])[:, None] * s[None, :]).ravel()
            wt = ((b[1:] - b[:-1])[:, None] * w[None, :]).ravel()
            return np.stack([np.cos(ang), np.sin(ang)], axis=-1), wt
        return rule(q), rule(max(4, q // 2))
    if n == 2:
        return (grid.directions, grid.weights), (grid.directions[::2], 2 * grid.weights[::2])
    m, p = grid.shape
    d = grid.directions.reshape(m, p, 3)[::2].reshape(-1, 3)
    w = 2 * grid.weights.reshape(m, p)[::2].ravel()
    return (grid.directions, grid.weights), (d, w)


def _fractions(rmax):
    if rmax <= 2.0 or not np.isfinite(rmax):
        return np.array([0.0, 1.0])
    k = min(6, int(ceil(log2(rmax))))
    return np.concatenate([[0.0], 2.0 ** -np.arange(k, -1, -1.0)])


def _rays(dirs, aw, reff, order, mu, gj_mask=None, gj_beta=None):
    n = dirs.shape[1]
    fr = _fractions(float(np.max(reff)))
    s0, w0 = _gl(order)
    s = np.concatenate([fr[i] + (fr[i + 1] - fr[i]) * s0 for i in range(len(fr) - 1)])
    ws = np.concatenate([(fr[i + 1] - fr[i]) * w0 for i in range(len(fr) - 1)])
    S = np.broadcast_to(s, (len(dirs), len(s))).copy()
    WS = np.broadcast_to(ws, (len(dirs), len(s))).copy()
    if gj_mask is not None and np.any(gj_mask):
        a = fr[-2]
        x, v = _gj(order, gj_beta)
        sj = a + (1 - a) * (x + 1) / 2
        wj = ((1 - a) / 2) ** (1 + gj_beta) * v / (1 - sj) ** gj_beta
        S[gj_mask, -order:] = sj
        WS[gj_mask, -order:] = wj
    r = reff[:, None] * S
    pts = r[..., None] * dirs[:, None, :]
    dens = np.exp(mu.log_density_radial(r))
    wts = reff[:, None] * WS * aw[:, None] * r ** (n - 1) * dens
    return pts.reshape(-1, n), wts.ravel()


def _probe_radius(f, mu, dirs):
    rs = 2.0 ** np.arange(-2, 14)
    vals = []
    for R in rs:
        pts = R * dirs
        v = np.abs(np.asarray(f(pts), dtype=float)) if callable(f) else abs(float(f))
        v = np.max(np.where(np.isfinite(v), v, np.inf))
        vals.append(v * float(np.exp(mu.log_density_radial(np.array(R)))) * R ** mu.n)
    vals = np.array(vals)
    peak = int(np.argmax(vals))
    for i in range(peak, len(rs)):
        if vals[i] < 1e-18 * vals[peak]:
            return float(rs[i])
    raise LabError("NON_FINITE_INTEGRAND", "integrand does not decay on an unbounded domain")


def _cap(K, mu, radius, probe, dirs):
    if radius is not None:
        return float(radius)
    rho = K.rho(dirs)
    tail = mu.tail_radius()
    if np.all(np.isfinite(rho)) and (tail is None or np.max(rho) <= tail):
        return np.inf
    if tail is not None:
        if probe is None:
            return tail
        return max(tail, _probe_radius(probe, mu, dirs)) if mu.weight.family != "gaussian" else tail
    if probe is None:
        raise LabError("NON_FINITE_INTEGRAND", "unbounded domain needs a truncation radius or decaying integrand")
    return _probe_radius(probe, mu, dirs)


def polar_rule(K: SymmetricBody, mu: WeightedMeasure, spec: "QuadratureSpec" = None, *,
               boundary_mask=None, boundary_exponent=None, radius=None, probe=None) -> Rule:
    spec = spec or QuadratureSpec()
    grid = spec.grid if spec.grid is not None and spec.grid.n == K.n else K.grid
    (dirs, aw), coarse = _angular(K, grid)
    cap = _cap(K, mu, radius, probe, dirs)
    p = spec.radial_order

    def build(d, w, order):
        rho = K.rho(d)
        reff = np.minimum(rho, cap)
        mask = None
        if boundary_exponent is not None:
            mask = (rho <= cap) & (boundary_mask(d) if callable(boundary_mask) else True)
            mask = np.broadcast_to(mask, rho.shape)
        return _rays(d, w, reff, order, mu, mask, boundary_exponent)

    main = build(dirs, aw, p)
    alts = [build(dirs, aw, max(2, p // 2))]
    if coarse is not None:
        alts.append(build(coarse[0], coarse[1], p))
    return Rule(K.n, main[0], main[1], tuple(alts), None, len(main[1]))


def _fast_rho(K):
    if K.kind in ANALYTIC_RHO or K.n == 1:
        return K.rho
    if K.kind == "scaled":
        inner = _fast_rho(K.params["body"])
        return lambda th: K.params["s"] * inner(th)
    if K.n == 2:
        m = 8192
        ang = 2 * np.pi * np.arange(m + 1) / m
        table = K.rho(np.stack([np.cos(ang), np.sin(ang)], axis=-1))
        return lambda th: np.interp(np.mod(np.arctan2(th[..., 1], th[..., 0]), 2 * np.pi), ang, table)

    def chunked(th):
        out = np.empty(th.shape[:-1])
        flat = th.reshape(-1, th.shape[-1])
        res = out.reshape(-1)
        for i in range(0, len(flat), 20000):
            res[i:i + 20000] = K.rho(flat[i:i + 20000])
        return out
    return chunked


def mc_rule(K: SymmetricBody, mu: WeightedMeasure, spec: "QuadratureSpec" = None, *,
            radius=None, probe=None) -> Rule:
    spec = spec or QuadratureSpec(mode="mc")
    n = K.n
    dirs = K.grid.directions
    cap = _cap(K, mu, radius, probe, dirs)
    R = min(K.max_radius(), cap)
    if not np.isfinite(R):
        raise LabError("NON_FINITE_INTEGRAND", "Monte Carlo needs a bounded sampling ball")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed, spawn_key=(spec.instance,))))
    per = max(2, spec.mc_samples // 8)
    rho = _fast_rho(K)
    pts_all, w_all, lab_all = [], [], []
    for k in range(8):
        a, b = k * R / 8, (k + 1) * R / 8
        u = rng.random(per)
        r = (a ** n + u * (b ** n - a ** n)) ** (1.0 / n)
        if n == 1:
            d = np.where(rng.random(per) < 0.5, -1.0, 1.0)[:, None]
        else:
            d = rng.standard_normal((per, n))
            d /= np.linalg.norm(d, axis=-1, keepdims=True)
        inside = r <= rho(d) if K.kind != "whole" else np.ones(per, bool)
        inside &= r <= cap
        vol = ball_volume(n) * (b ** n - a ** n)
        pts_all.append(r[inside, None] * d[inside])
        w_all.append(np.exp(mu.log_density_radial(r[inside])) * vol / per)
        lab_all.append(np.full(int(inside.sum()), k))
    pts = np.concatenate(pts_all)
    return Rule(n, pts, np.concatenate(w_all), (), (np.concatenate(lab_all), per), 8 * per)


def build_rule(K, mu=None, spec=None, *, boundary_mask=None, boundary_exponent=None,
               radius=None, probe=None) -> Rule:
    if K is None:
        raise LabError("EMPTY_BODY", "cannot integrate over an empty body")
    mu = mu or measure("lebesgue", K.n)
    if mu.n != K.n:
        raise LabError("GRID_MISMATCH", "measure and body dimensions differ")
    spec = spec or QuadratureSpec()
    if spec.mode == "mc":
        return mc_rule(K, mu, spec, radius=radius, probe=probe)
    return polar_rule(K, mu, spec, boundary_mask=boundary_mask, boundary_exponent=boundary_exponent,
                      radius=radius, probe=probe)


def integrate_body(K: SymmetricBody, f: Union[Callable, float], mu: WeightedMeasure = None,
                   spec: QuadratureSpec = None, *, boundary_exponent=None, radius=None) -> IntegralEstimate:
    """Integral of f over K against mu.

    Parameters
    ----------
    K : SymmetricBody
        Domain; ``whole_space(n)`` integrates over R^n with tail truncation.
    f : callable or float
        Vectorized on points of shape (..., n).
    boundary_exponent : float, optional
        f vanishes like dist(x, boundary)^exponent; the outer half of every
        ray then uses Gauss-Jacobi nodes.
    """
    rule = build_rule(K, mu, spec, boundary_exponent=boundary_exponent, radius=radius, probe=f)
    return rule.integrate(f)


def measure_body(K: SymmetricBody, mu: WeightedMeasure = None, spec: QuadratureSpec = None) -> IntegralEstimate:
    return integrate_body(K, 1.0, mu, spec)


def weighted_power_mass(K: SymmetricBody, phi: ConcaveFunction, beta: float, mu: WeightedMeasure = None,
                        spec: QuadratureSpec = None, t: float = 0.0) -> IntegralEstimate:
    """nu_beta(K) = integral over K of Phi(t, .)^beta dmu."""
    if beta <= 0:
        raise LabError("CONFIG_ERROR", "beta must be positive", beta=beta)
    if K is None:
        raise LabError("EMPTY_BODY", "cannot integrate over an empty body")
    mu = mu or measure("lebesgue", K.n)
    spec = spec or QuadratureSpec()

    def f(x):
        v = phi.value(x, t)
        if np.any(v < -1e-12):
            bad = np.asarray(x)[np.argmin(v)] if np.ndim(v) else x
            raise LabError("NOT_NONNEGATIVE", "Phi is negative inside K", location=np.asarray(bad).tolist())
        return np.maximum(v, 0.0) ** beta

    gj = None
    mask = None
    if spec.mode == "polar" and float(beta) != int(beta) and K.kind != "whole":
        scale = float(np.max(np.abs(phi.value(np.zeros((1, K.n)), t))))

        def mask(d):
            return np.abs(phi.value(K.rho(d)[:, None] * d, t)) <= 1e-9 * max(scale, 1e-300)
        if np.any(mask(K.grid.directions)):
            gj = float(beta)
    rule = build_rule(K, mu, spec, boundary_mask=mask, boundary_exponent=gj, probe=f)
    return rule.integrate(f)
