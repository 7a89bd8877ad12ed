"""Origin-symmetric convex bodies, domain families in R^{n+1}, concave functions.

Bodies are stored as support values on a direction grid.  Builtin families
(ball, box, ellipsoid, polytope) also carry an analytic tag so that support
and radial functions are exact; Minkowski combinations stay exact through
the support function and, in the plane, through a refined radial solve.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.spatial import ConvexHull

from .errors import LabError

UNIT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DirectionGrid:
    """Antipodally symmetric quadrature grid on the unit sphere S^{n-1}.

    Weights sum to the surface area of S^{n-1} (2, 2*pi, 4*pi).
    """
    n: int
    directions: np.ndarray
    weights: np.ndarray
    shape: tuple
    antipode: np.ndarray

    def __len__(self):
        return len(self.weights)

    def same_as(self, other):
        if self is other:
            return True
        return (self.n == other.n and self.shape == other.shape
                and np.array_equal(self.directions, other.directions))


@lru_cache(maxsize=None)
def direction_grid(n: int, size: Optional[int] = None, polar: Optional[int] = None) -> DirectionGrid:
    """Default grids: {-1, +1}; 512 equally spaced angles; 64 x 32 product grid."""
    if n == 1:
        dirs = np.array([[-1.0], [1.0]])
        return DirectionGrid(1, dirs, np.ones(2), (2,), np.array([1, 0]))
    if n == 2:
        m = size or 512
        if m % 2 or m < 4:
            raise ValueError("planar grid size must be even and >= 4")
        ang = 2.0 * np.pi * np.arange(m) / m
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        anti = (np.arange(m) + m // 2) % m
        return DirectionGrid(2, dirs, np.full(m, 2.0 * np.pi / m), (m,), anti)
    if n == 3:
        m = size or 64
        p = polar or 32
        if m % 2:
            raise ValueError("azimuthal grid size must be even")
        az = 2.0 * np.pi * np.arange(m) / m
        z, wz = np.polynomial.legendre.leggauss(p)
        s = np.sqrt(1.0 - z ** 2)
        dirs = np.stack([np.outer(np.cos(az), s).ravel(), np.outer(np.sin(az), s).ravel(),
                         np.tile(z, m)], axis=-1)
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        w = np.outer(np.full(m, 2.0 * np.pi / m), wz).ravel()
        k, j = np.divmod(np.arange(m * p), p)
        anti = ((k + m // 2) % m) * p + (p - 1 - j)
        return DirectionGrid(3, dirs, w, (m, p), anti)
    raise ValueError("dimension must be 1, 2 or 3")


def _unit(theta, n):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != n:
        raise ValueError(f"direction must have {n} components")
    if np.any(np.abs(np.linalg.norm(theta, axis=-1) - 1.0) > UNIT_TOL):
        raise ValueError("direction must be a unit vector")
    return theta


def _golden_min(fun, lo, hi, iters=70):
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo.copy(), hi.copy()
    for _ in range(iters):
        c = b - inv * (b - a)
        d = a + inv * (b - a)
        left = fun(c) < fun(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    mid = 0.5 * (a + b)
    return mid, fun(mid)


@dataclass(frozen=True, eq=False)
class SymmetricBody:
    """Origin-symmetric convex body given by support values on a grid.

    ``kind`` is one of ball, box, ellipsoid, polytope, minkowski, scaled,
    radial, grid or whole (all of R^n).  ``params`` holds the analytic data.
    """
    grid: DirectionGrid
    support: np.ndarray
    kind: str = "grid"
    params: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.grid.n

    # support and radial functions -------------------------------------
    def h(self, theta):
        theta = np.asarray(theta, dtype=float)
        k, p = self.kind, self.params
        if k == "ball":
            return np.full(theta.shape[:-1], p["r"])
        if k == "box":
            return np.abs(theta) @ p["a"]
        if k == "ellipsoid":
            return np.sqrt((theta ** 2) @ (p["a"] ** 2))
        if k == "polytope":
            return np.max(theta @ p["vertices"].T, axis=-1)
        if k == "scaled":
            return p["s"] * p["body"].h(theta)
        if k == "minkowski":
            lam = p["lam"]
            return lam * p["K"].h(theta) + (1.0 - lam) * p["L"].h(theta)
        if k == "whole":
            return np.full(theta.shape[:-1], np.inf)
        if k == "radial":
            pts = p["rho_grid"][:, None] * self.grid.directions
            return np.max(theta @ pts.T, axis=-1)
        return self._interp_support(theta)

    def _interp_support(self, theta):
        g = self.grid
        if g.n == 1:
            return np.where(theta[..., 0] < 0, self.support[0], self.support[1])
        if g.n == 2:
            m = g.shape[0]
            ang = np.mod(np.arctan2(theta[..., 1], theta[..., 0]), 2 * np.pi)
            pos = ang / (2 * np.pi / m)
            i0 = np.floor(pos).astype(int) % m
            frac = pos - np.floor(pos)
            return (1 - frac) * self.support[i0] + frac * self.support[(i0 + 1) % m]
        m, pp = g.shape
        table = self.support.reshape(m, pp)
        z_nodes = g.directions[:pp, 2]
        ang = np.mod(np.arctan2(theta[..., 1], theta[..., 0]), 2 * np.pi)
        pos = ang / (2 * np.pi / m)
        i0 = np.floor(pos).astype(int) % m
        frac = pos - np.floor(pos)
        z = np.clip(theta[..., 2], z_nodes[0], z_nodes[-1])
        j0 = np.clip(np.searchsorted(z_nodes, z) - 1, 0, pp - 2)
        zf = (z - z_nodes[j0]) / (z_nodes[j0 + 1] - z_nodes[j0])

        def row(i):
            return (1 - zf) * table[i, j0] + zf * table[i, j0 + 1]
        return (1 - frac) * row(i0) + frac * row((i0 + 1) % m)

    def rho(self, theta):
        theta = np.asarray(theta, dtype=float)
        k, p = self.kind, self.params
        if k == "ball":
            return np.full(theta.shape[:-1], p["r"])
        if k == "box":
            with np.errstate(divide="ignore"):
                return np.min(p["a"] / np.abs(theta), axis=-1)
        if k == "ellipsoid":
            return 1.0 / np.sqrt((theta ** 2) @ (1.0 / p["a"] ** 2))
        if k == "polytope":
            if self.n == 1:
                return np.full(theta.shape[:-1], np.max(np.abs(p["vertices"])))
            eq = p["equations"]
            return 1.0 / np.max(theta @ eq[:, :-1].T / (-eq[:, -1]), axis=-1)
        if k == "scaled":
            return p["s"] * p["body"].rho(theta)
        if k == "whole":
            return np.full(theta.shape[:-1], np.inf)
        if k == "radial":
            return p["rho"](theta)
        if self.n == 1:
            return self.h(theta)
        return self._rho_numeric(theta)

    def _rho_numeric(self, theta):
        shape = theta.shape[:-1]
        th = theta.reshape(-1, self.n)
        g = self.grid
        dots = th @ g.directions.T
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dots > 1e-12, self.support[None, :] / dots, np.inf)
        best = np.argmin(ratio, axis=1)
        coarse = ratio[np.arange(len(th)), best]
        if self.n != 2 or self.kind != "minkowski":
            return coarse.reshape(shape)
        alpha = np.arctan2(th[:, 1], th[:, 0])
        eta0 = np.arctan2(g.directions[best, 1], g.directions[best, 0])
        eta0 = alpha + np.angle(np.exp(1j * (eta0 - alpha)))
        step = 2 * np.pi / g.shape[0]
        lim = 0.5 * np.pi - 1e-9
        lo = np.maximum(eta0 - step, alpha - lim)
        hi = np.minimum(eta0 + step, alpha + lim)

        def fun(eta):
            e = np.stack([np.cos(eta), np.sin(eta)], axis=-1)
            return self.h(e) / np.cos(eta - alpha)
        _, val = _golden_min(fun, lo, hi)
        return np.minimum(val, coarse).reshape(shape)

    def gauge(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        rho = self.rho(x / safe[..., None])
        return np.where(r > 0, r / rho, 0.0)

    def contains(self, x, tol=0.0):
        return self.gauge(x) <= 1.0 + tol

    def half_widths(self):
        return self.h(np.eye(self.n))

    def max_radius(self):
        k, p = self.kind, self.params
        if k == "ball":
            return float(p["r"])
        if k == "box":
            return float(np.linalg.norm(p["a"]))
        if k == "ellipsoid":
            return float(np.max(p["a"]))
        if k == "polytope":
            return float(np.max(np.linalg.norm(p["vertices"], axis=-1)))
        if k == "scaled":
            return p["s"] * p["body"].max_radius()
        if k == "minkowski":
            return p["lam"] * p["K"].max_radius() + (1 - p["lam"]) * p["L"].max_radius()
        if k == "whole":
            return np.inf
        if k == "radial":
            return float(np.max(p["rho_grid"]))
        return float(np.max(self.support))

    def angular_breaks(self):
        """Angles where the planar radial function has kinks, or None."""
        if self.n != 2:
            return None
        k, p = self.kind, self.params
        if k == "box":
            c = np.arctan2(p["a"][1], p["a"][0])
            return np.array([c, np.pi - c, np.pi + c, 2 * np.pi - c])
        if k == "polytope":
            v = p["vertices"][p["hull_vertices"]]
            return np.sort(np.mod(np.arctan2(v[:, 1], v[:, 0]), 2 * np.pi))
        if k == "scaled":
            return p["body"].angular_breaks()
        return None

    def scaled(self, s):
        s = float(s)
        if self.kind == "ball":
            return ball(self.n, s * self.params["r"], self.grid)
        if self.kind in ("box", "ellipsoid"):
            return _make(self.grid, self.kind, a=s * self.params["a"])
        if self.kind == "scaled":
            return self.params["body"].scaled(s * self.params["s"])
        if self.kind == "whole":
            return self
        return SymmetricBody(self.grid, s * self.support, "scaled", {"s": s, "body": self})

    def to_spec(self):
        k, p = self.kind, self.params
        if k == "ball":
            return {"kind": "ball", "radius": float(p["r"]), "dimension": self.n}
        if k in ("box", "ellipsoid"):
            key = "half_widths" if k == "box" else "semi_axes"
            return {"kind": k, key: [float(a) for a in p["a"]]}
        if k == "polytope":
            return {"kind": "polytope", "vertices": p["vertices"][: len(p["vertices"]) // 2].tolist()}
        if k == "whole":
            return {"kind": "whole", "dimension": self.n}
        if k == "scaled":
            return {"kind": "scaled", "factor": p["s"], "body": p["body"].to_spec()}
        if k == "minkowski":
            return {"kind": "minkowski", "lam": p["lam"], "K": p["K"].to_spec(), "L": p["L"].to_spec()}
        return {"kind": "grid", "dimension": self.n, "support": self.support.tolist()}


def _make(grid, kind, **params):
    if kind in ("box", "ellipsoid"):
        params["a"] = np.asarray(params["a"], dtype=float).reshape(grid.n)
        if np.any(params["a"] <= 0):
            raise LabError("EMPTY_BODY", f"{kind} needs positive axes")
    body = SymmetricBody(grid, np.empty(0), kind, params)
    support = body.h(grid.directions)
    object.__setattr__(body, "support", support)
    return body


def ball(n: int, r: float = 1.0, grid: Optional[DirectionGrid] = None) -> SymmetricBody:
    if r <= 0:
        raise LabError("EMPTY_BODY", "ball radius must be positive", r=r)
    return _make(grid or direction_grid(n), "ball", r=float(r))


def interval(a: float, grid: Optional[DirectionGrid] = None) -> SymmetricBody:
    """The segment [-a, a] in R^1 (tagged as a box)."""
    return box([a], grid)


def box(half_widths, grid: Optional[DirectionGrid] = None) -> SymmetricBody:
    a = np.atleast_1d(np.asarray(half_widths, dtype=float))
    return _make(grid or direction_grid(len(a)), "box", a=a)


def ellipsoid(semi_axes, grid: Optional[DirectionGrid] = None) -> SymmetricBody:
    a = np.atleast_1d(np.asarray(semi_axes, dtype=float))
    return _make(grid or direction_grid(len(a)), "ellipsoid", a=a)


def polytope(vertices, grid: Optional[DirectionGrid] = None) -> SymmetricBody:
    """Symmetric polytope conv(+-v_i) from the listed vertices."""
    v = np.atleast_2d(np.asarray(vertices, dtype=float))
    n = v.shape[1]
    allv = np.vstack([v, -v])
    params = {"vertices": allv}
    if n >= 2:
        try:
            hull = ConvexHull(allv)
        except Exception as exc:
            raise LabError("EMPTY_BODY", "degenerate polytope") from exc
        params["equations"] = hull.equations
        params["hull_vertices"] = hull.vertices
    elif np.max(np.abs(allv)) <= 0:
        raise LabError("EMPTY_BODY", "degenerate polytope")
    return _make(grid or direction_grid(n), "polytope", **params)


def grid_body(support, grid: DirectionGrid) -> SymmetricBody:
    """Body known only through support values on ``grid``."""
    support = np.asarray(support, dtype=float)
    if support.shape != (len(grid),):
        raise LabError("GRID_MISMATCH", "support length differs from grid size")
    if np.any(support <= 0):
        raise LabError("EMPTY_BODY", "support must be positive")
    return SymmetricBody(grid, support, "grid", {})


def whole_space(n: int, grid: Optional[DirectionGrid] = None) -> SymmetricBody:
    g = grid or direction_grid(n)
    return SymmetricBody(g, np.full(len(g), np.inf), "whole", {})


def radial_body(rho, grid: Optional[DirectionGrid] = None, n: int = 2) -> SymmetricBody:
    """Star body from a vectorized radial function (used for super-level sets)."""
    g = grid or direction_grid(n)
    rho_grid = np.asarray(rho(g.directions), dtype=float)
    if np.any(rho_grid <= 0):
        raise LabError("EMPTY_BODY", "radial function must be positive")
    body = SymmetricBody(g, np.empty(0), "radial", {"rho": rho, "rho_grid": rho_grid})
    object.__setattr__(body, "support", body.h(g.directions))
    return body


def support_eval(body: SymmetricBody, direction) -> float:
    """Support function h_K(theta) for a unit vector theta."""
    if body is None:
        raise LabError("EMPTY_BODY", "empty section has no support function")
    theta = _unit(direction, body.n)
    return float(body.h(theta)) if theta.ndim == 1 else body.h(theta)


def radial_from_support(body: SymmetricBody, direction) -> float:
    """Radial function rho_K(theta) = max{r >= 0 : r theta in K}."""
    if body is None:
        raise LabError("EMPTY_BODY", "empty section has no radial function")
    theta = _unit(direction, body.n)
    return float(body.rho(theta)) if theta.ndim == 1 else body.rho(theta)


def minkowski_combine(K: SymmetricBody, L: SymmetricBody, lam: float) -> SymmetricBody:
    """lam*K + (1-lam)*L; the support array is combined exactly per direction."""
    if K is None or L is None:
        raise LabError("EMPTY_BODY", "cannot combine an empty body")
    if not K.grid.same_as(L.grid):
        raise LabError("GRID_MISMATCH", "bodies live on different direction grids")
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    if lam == 1.0:
        return K
    if lam == 0.0:
        return L
    support = lam * K.support + (1.0 - lam) * L.support
    if K.kind == L.kind == "ball":
        kind, params = "ball", {"r": lam * K.params["r"] + (1 - lam) * L.params["r"]}
    elif K.kind == L.kind == "box" or K.n == 1:
        a = lam * K.half_widths() + (1 - lam) * L.half_widths()
        kind, params = "box", {"a": a}
    else:
        kind, params = "minkowski", {"K": K, "L": L, "lam": lam}
    return SymmetricBody(K.grid, support, kind, params)


def body_from_spec(spec: dict, grid: Optional[DirectionGrid] = None) -> SymmetricBody:
    kind = spec.get("kind")
    if kind == "ball":
        return ball(int(spec.get("dimension", 1)), float(spec["radius"]), grid)
    if kind == "interval":
        return interval(float(spec["half_width"]), grid)
    if kind == "box":
        return box(spec["half_widths"], grid)
    if kind == "ellipsoid":
        return ellipsoid(spec["semi_axes"], grid)
    if kind == "polytope":
        return polytope(spec["vertices"], grid)
    if kind == "whole":
        return whole_space(int(spec.get("dimension", 1)), grid)
    if kind == "scaled":
        return body_from_spec(spec["body"], grid).scaled(float(spec["factor"]))
    if kind == "minkowski":
        return minkowski_combine(body_from_spec(spec["K"], grid), body_from_spec(spec["L"], grid),
                                 float(spec["lam"]))
    if kind == "grid":
        n = int(spec.get("dimension", 1))
        return grid_body(spec["support"], grid or direction_grid(n))
    raise LabError("CONFIG_ERROR", "unknown body kind", kind=kind)


def sublinearity_defect(body: SymmetricBody, pairs: int = 2000, seed: int = 0) -> float:
    """Largest h((a+b)/|a+b|)*|a+b| - h(a) - h(b) over sampled grid pairs (<= 0 for convex)."""
    g = body.grid
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(g), pairs)
    j = rng.integers(0, len(g), pairs)
    s = g.directions[i] + g.directions[j]
    norm = np.linalg.norm(s, axis=-1)
    keep = norm > 1e-8
    mid = s[keep] / norm[keep, None]
    lhs = body.h(mid) * norm[keep]
    return float(np.max(lhs - body.support[i[keep]] - body.support[j[keep]], initial=-np.inf))


# ---------------------------------------------------------------------------
# concave functions of (t, x)


@dataclass(frozen=True, eq=False)
class ConcaveFunction:
    """Even concave function Phi(t, x) from a builtin family.

    quadratic: c + b t - a t^2 - x^T Q x
    power:     c + b t - s (a t^2 + |x|^2)^(p/2),  p >= 1
    constant:  c
    min:       pointwise minimum of the pieces
    expression/custom: user supplied, derivatives symbolic or by differences
    """
    n: int
    kind: str
    params: dict
    pieces: tuple = ()

    # values -----------------------------------------------------------
    def value(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "quadratic":
            return p["c"] + p["b"] * t - p["a"] * t * t - np.einsum("...i,ij,...j->...", x, p["Q"], x)
        if k == "power":
            rr = p["a"] * t * t + np.sum(x * x, axis=-1)
            return p["c"] + p["b"] * t - p["s"] * rr ** (0.5 * p["p"])
        if k == "constant":
            return np.full(x.shape[:-1], float(p["c"]))
        if k == "min":
            return np.min(np.stack([q.value(x, t) for q in self.pieces]), axis=0)
        return np.asarray(p["fn"](t, x), dtype=float)

    def __call__(self, x, t=0.0):
        return self.value(x, t)

    def _active(self, x, t):
        vals = np.stack([q.value(x, t) for q in self.pieces])
        return np.argmin(vals, axis=0)

    def _select(self, x, t, name, extra_dims):
        idx = self._active(x, t)
        out = np.stack([getattr(q, name)(x, t) for q in self.pieces])
        idx = idx.reshape((1,) + idx.shape + (1,) * extra_dims)
        return np.take_along_axis(out, idx, axis=0)[0]

    def grad_x(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "quadratic":
            return -2.0 * x @ p["Q"]
        if k == "power":
            rr = p["a"] * t * t + np.sum(x * x, axis=-1)
            return -(p["s"] * p["p"] * _pow(rr, p["p"] - 2))[..., None] * x
        if k == "constant":
            return np.zeros_like(x)
        if k == "min":
            return self._select(x, t, "grad_x", 1)
        return self._fd(x, t, "x")

    def hess_x(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        n = self.n
        k, p = self.kind, self.params
        if k == "quadratic":
            return np.broadcast_to(-2.0 * p["Q"], x.shape + (n,)).copy()
        if k == "power":
            rr = p["a"] * t * t + np.sum(x * x, axis=-1)
            sp = p["s"] * p["p"]
            out = (sp * _pow(rr, p["p"] - 2))[..., None, None] * np.eye(n)
            if p["p"] != 2:
                out = out + (sp * (p["p"] - 2) * _pow(rr, p["p"] - 4))[..., None, None] * (
                    x[..., :, None] * x[..., None, :])
            return -out
        if k == "constant":
            return np.zeros(x.shape + (n,))
        if k == "min":
            return self._select(x, t, "hess_x", 2)
        return self._fd(x, t, "xx")

    def d_t(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "quadratic":
            return np.full(x.shape[:-1], p["b"] - 2.0 * p["a"] * t)
        if k == "power":
            rr = p["a"] * t * t + np.sum(x * x, axis=-1)
            return p["b"] - p["s"] * p["p"] * _pow(rr, p["p"] - 2) * p["a"] * t
        if k == "constant":
            return np.zeros(x.shape[:-1])
        if k == "min":
            return self._select(x, t, "d_t", 0)
        return self._fd(x, t, "t")

    def d_tt(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "quadratic":
            return np.full(x.shape[:-1], -2.0 * p["a"])
        if k == "power":
            rr = p["a"] * t * t + np.sum(x * x, axis=-1)
            sp = p["s"] * p["p"]
            out = sp * _pow(rr, p["p"] - 2) * p["a"]
            if p["p"] != 2:
                out = out + sp * (p["p"] - 2) * _pow(rr, p["p"] - 4) * (p["a"] * t) ** 2
            return -out
        if k == "constant":
            return np.zeros(x.shape[:-1])
        if k == "min":
            return self._select(x, t, "d_tt", 0)
        return self._fd(x, t, "tt")

    def d_tx(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "quadratic" or k == "constant":
            return np.zeros_like(x)
        if k == "power":
            if p["p"] == 2:
                return np.zeros_like(x)
            rr = p["a"] * t * t + np.sum(x * x, axis=-1)
            return -(p["s"] * p["p"] * (p["p"] - 2) * _pow(rr, p["p"] - 4) * p["a"] * t)[..., None] * x
        if k == "min":
            return self._select(x, t, "d_tx", 1)
        return self._fd(x, t, "tx")

    # finite differences for user-supplied functions ---------------------
    def _fd(self, x, t, what):
        if "derivs" in self.params:
            return self.params["derivs"][what](x, t)
        scale = self.params.get("scale", 1.0)
        f = self.params["fn"]
        n = self.n
        c1 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
        o1 = np.array([-2, -1, 1, 2])
        c2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
        o2 = np.array([-2, -1, 0, 1, 2])
        h1 = 1e-5 * scale
        h2 = 1e-3 * scale
        if what == "t":
            return sum(c * f(t + o * h1, x) for c, o in zip(c1, o1)) / h1
        if what == "tt":
            return sum(c * f(t + o * h2, x) for c, o in zip(c2, o2)) / h2 ** 2
        eye = np.eye(n)
        if what == "x":
            return np.stack([sum(c * f(t, x + o * h1 * eye[i]) for c, o in zip(c1, o1)) / h1
                             for i in range(n)], axis=-1)
        if what == "tx":
            return np.stack([sum(c * sum(cc * f(t + oo * h2, x + o * h2 * eye[i])
                                         for cc, oo in zip(c1, o1)) / h2
                                 for c, o in zip(c1, o1)) / h2 for i in range(n)], axis=-1)
        rows = []
        for i in range(n):
            row = []
            for j in range(n):
                if i == j:
                    row.append(sum(c * f(t, x + o * h2 * eye[i]) for c, o in zip(c2, o2)) / h2 ** 2)
                else:
                    row.append(sum(c * sum(cc * f(t, x + o * h2 * eye[i] + oo * h2 * eye[j])
                                           for cc, oo in zip(c1, o1)) / h2
                                   for c, o in zip(c1, o1)) / h2)
            rows.append(np.stack(row, axis=-1))
        return np.stack(rows, axis=-2)

    # structure ----------------------------------------------------------
    @property
    def is_radial(self):
        """True when Phi(t, .) depends on |x| only."""
        if self.kind in ("power", "constant"):
            return True
        if self.kind == "quadratic":
            Q = self.params["Q"]
            return bool(np.allclose(Q, Q[0, 0] * np.eye(self.n), rtol=0, atol=1e-15))
        if self.kind == "min":
            return all(q.is_radial for q in self.pieces)
        return bool(self.params.get("radial", False))

    def scaled(self, c):
        """c * Phi, staying inside the family."""
        c = float(c)
        k, p = self.kind, dict(self.params)
        if k == "quadratic":
            p.update(c=c * p["c"], b=c * p["b"], a=c * p["a"], Q=c * p["Q"])
        elif k == "power":
            p.update(c=c * p["c"], b=c * p["b"], s=c * p["s"])
        elif k == "constant":
            p.update(c=c * p["c"])
        elif k == "min":
            return ConcaveFunction(self.n, "min", {}, tuple(q.scaled(c) for q in self.pieces))
        else:
            fn = p["fn"]
            p["fn"] = lambda t, x: c * fn(t, x)
            p.pop("derivs", None)
        return ConcaveFunction(self.n, k, p)

    def to_spec(self):
        k, p = self.kind, self.params
        if k == "quadratic":
            return {"kind": "quadratic", "c": p["c"], "b": p["b"], "a": p["a"], "Q": p["Q"].tolist()}
        if k == "power":
            return {"kind": "power", "dimension": self.n,
                    **{key: p[key] for key in ("c", "b", "a", "s", "p")}}
        if k == "constant":
            return {"kind": "constant", "c": p["c"], "dimension": self.n}
        if k == "min":
            return {"kind": "min", "pieces": [q.to_spec() for q in self.pieces]}
        if "expr" in p:
            return {"kind": "expression", "expr": p["expr"], "dimension": self.n}
        return {"kind": "custom", "dimension": self.n}


def _pow(rr, e):
    """rr**(e/2) for rr >= 0 with the convention 0**0 = 1."""
    rr = np.asarray(rr, dtype=float)
    if e == 0:
        return np.ones_like(rr)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rr > 0, rr ** (0.5 * e), 0.0 if e > 0 else np.inf)


def quadratic_cap(c, Q=None, n=1, a=0.0, b=0.0) -> ConcaveFunction:
    Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-14 or a < 0:
        raise LabError("NOT_CONCAVE", "quadratic cap needs Q >= 0 and a >= 0")
    return ConcaveFunction(n, "quadratic", {"c": float(c), "b": float(b), "a": float(a),
                                            "Q": 0.5 * (Q + Q.T)})


def power_cap(c, p, n=1, s=1.0, a=0.0, b=0.0) -> ConcaveFunction:
    if p < 1 or s < 0 or a < 0:
        raise LabError("NOT_CONCAVE", "power cap needs p >= 1, s >= 0, a >= 0")
    return ConcaveFunction(n, "power", {"c": float(c), "b": float(b), "a": float(a),
                                        "s": float(s), "p": float(p)})


def constant(c, n=1) -> ConcaveFunction:
    return ConcaveFunction(n, "constant", {"c": float(c)})


def min_of(*pieces) -> ConcaveFunction:
    return ConcaveFunction(pieces[0].n, "min", {}, tuple(pieces))


def custom(fn, n, scale=1.0, radial=False) -> ConcaveFunction:
    """Wrap fn(t, x); derivatives by 4th-order central differences."""
    return ConcaveFunction(n, "custom", {"fn": fn, "scale": float(scale), "radial": radial})


def from_expression(expr: str, n: int, radial: bool = False) -> ConcaveFunction:
    """Phi(t, x) from an expression in t and x0..x{n-1} with symbolic derivatives."""
    import sympy
    from .fields import _symbols
    syms, names = _symbols(n)
    tsym = sympy.Symbol("t", real=True)
    names = dict(names, t=tsym)
    e = sympy.sympify(expr, locals=names)
    args = (tsym,) + tuple(syms)

    def lam(ex):
        fn = sympy.lambdify(args, ex, "numpy")

        def run(t, x):
            x = np.asarray(x, dtype=float)
            out = fn(t, *(x[..., i] for i in range(n)))
            return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()
        return run

    f0 = lam(e)
    ft = lam(sympy.diff(e, tsym))
    ftt = lam(sympy.diff(e, tsym, 2))
    fx = [lam(sympy.diff(e, s)) for s in syms]
    ftx = [lam(sympy.diff(e, tsym, s)) for s in syms]
    fxx = [[lam(sympy.diff(e, a, b)) for b in syms] for a in syms]
    derivs = {
        "t": lambda x, t: ft(t, x),
        "tt": lambda x, t: ftt(t, x),
        "x": lambda x, t: np.stack([g(t, x) for g in fx], axis=-1),
        "tx": lambda x, t: np.stack([g(t, x) for g in ftx], axis=-1),
        "xx": lambda x, t: np.stack([np.stack([g(t, x) for g in row], axis=-1) for row in fxx], axis=-2),
    }
    return ConcaveFunction(n, "expression", {"fn": f0, "derivs": derivs, "expr": expr, "radial": radial})


def concave_from_spec(spec: dict) -> ConcaveFunction:
    kind = spec.get("kind")
    if kind == "quadratic":
        Q = np.atleast_2d(np.asarray(spec.get("Q", [[1.0]]), dtype=float))
        return quadratic_cap(spec["c"], Q, Q.shape[0], spec.get("a", 0.0), spec.get("b", 0.0))
    if kind == "power":
        return power_cap(spec["c"], spec["p"], int(spec.get("dimension", 1)), spec.get("s", 1.0),
                         spec.get("a", 0.0), spec.get("b", 0.0))
    if kind == "constant":
        return constant(spec["c"], int(spec.get("dimension", 1)))
    if kind == "min":
        return min_of(*(concave_from_spec(s) for s in spec["pieces"]))
    if kind == "expression":
        return from_expression(spec["expr"], int(spec.get("dimension", 1)), bool(spec.get("radial", False)))
    raise LabError("CONFIG_ERROR", "unknown concave function kind", kind=kind)


def evenness_defect(phi: ConcaveFunction, points, t=0.0) -> float:
    points = np.asarray(points, dtype=float)
    return float(np.max(np.abs(phi.value(points, t) - phi.value(-points, t)), initial=0.0))


def concavity_defect(phi: ConcaveFunction, lo, hi, samples=2000, seed=0) -> float:
    """Largest midpoint defect (f(a)+f(b))/2 - f((a+b)/2) over random (t, x) pairs in a box."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    a = lo + (hi - lo) * rng.random((samples, len(lo)))
    b = lo + (hi - lo) * rng.random((samples, len(lo)))
    m = 0.5 * (a + b)
    fa, fb, fm = (phi.value(z[:, 1:], z[:, 0]) for z in (a, b, m))
    return float(np.max(0.5 * (fa + fb) - fm))


# ---------------------------------------------------------------------------
# domain families in R^{n+1}


@dataclass(frozen=True, eq=False)
class ConvexDomainFamily:
    """Sections t -> Omega_t of a convex set in R^{n+1}.

    ``radius`` (with derivatives) is present when every section is a
    centered ball or interval; it drives the boundary kinematics.
    """
    n: int
    t_lo: float
    t_hi: float
    kind: str
    section_fn: Callable
    radius: Optional[Callable] = None
    dradius: Optional[Callable] = None
    d2radius: Optional[Callable] = None
    spec: Optional[dict] = None

    @property
    def has_radius(self):
        return self.radius is not None


def section_body(family: ConvexDomainFamily, t: float):
    """The slice Omega_t, or None when it is empty."""
    if not family.t_lo - 1e-12 <= t <= family.t_hi + 1e-12:
        raise LabError("OUT_OF_RANGE", "t outside the family interval", t=t,
                       interval=(family.t_lo, family.t_hi))
    return family.section_fn(float(t))


def minkowski_path(K: SymmetricBody, L: SymmetricBody) -> ConvexDomainFamily:
    """t -> tK + (1-t)L on [0, 1]."""
    if not K.grid.same_as(L.grid):
        raise LabError("GRID_MISMATCH", "bodies live on different direction grids")
    radius = dr = d2r = None
    if K.kind == L.kind == "ball" or K.n == 1:
        rk, rl = float(K.half_widths()[0]), float(L.half_widths()[0])
        radius = lambda t: t * rk + (1 - t) * rl
        dr = lambda t: rk - rl
        d2r = lambda t: 0.0
    return ConvexDomainFamily(K.n, 0.0, 1.0, "minkowski", lambda t: minkowski_combine(K, L, t),
                              radius, dr, d2r, {"kind": "minkowski", "K": K.to_spec(), "L": L.to_spec()})


def radius_profile(n, r, dr, d2r, t_lo, t_hi, grid=None, spec=None) -> ConvexDomainFamily:
    """Sections are centered balls (intervals when n = 1) of radius r(t)."""
    g = grid or direction_grid(n)

    def section(t):
        rad = r(t)
        return ball(n, rad, g) if rad > 0 else None
    return ConvexDomainFamily(n, t_lo, t_hi, "profile", section, r, dr, d2r, spec)


def sqrt_quadratic_profile(n, c0, c1=0.0, c2=1.0, t_range=None, grid=None) -> ConvexDomainFamily:
    """r(t) = sqrt(c0 + c1 t - c2 t^2): a solid ellipsoid of revolution when c2 > 0.

    With c0 = c2 = 1 and n = 1 the domain is the unit disc.
    """
    if c2 < 0:
        raise LabError("NOT_CONCAVE", "c2 must be nonnegative for a convex domain")
    if t_range is None:
        if c2 <= 0:
            raise ValueError("t_range is required when c2 = 0")
        disc = np.sqrt(c1 * c1 + 4 * c0 * c2)
        t_range = ((c1 - disc) / (2 * c2), (c1 + disc) / (2 * c2))

    def q(t):
        return c0 + c1 * t - c2 * t * t

    def r(t):
        return float(np.sqrt(max(q(t), 0.0)))

    def dr(t):
        return (c1 - 2 * c2 * t) / (2 * r(t))

    def d2r(t):
        return (-2 * c2 - 2 * dr(t) ** 2) / (2 * r(t))
    spec = {"kind": "profile", "dimension": n, "t_range": list(map(float, t_range)),
            "profile": {"type": "sqrt_quadratic", "c0": c0, "c1": c1, "c2": c2}}
    return radius_profile(n, r, dr, d2r, float(t_range[0]), float(t_range[1]), grid, spec)


def affine_profile(n, r0, r1, t_range, grid=None) -> ConvexDomainFamily:
    """r(t) = r0 + r1 t: a truncated cone."""
    spec = {"kind": "profile", "dimension": n, "t_range": list(map(float, t_range)),
            "profile": {"type": "affine", "r0": r0, "r1": r1}}
    return radius_profile(n, lambda t: r0 + r1 * t, lambda t: r1, lambda t: 0.0,
                          float(t_range[0]), float(t_range[1]), grid, spec)


def superlevel_family(phi: ConcaveFunction, level: float, t_range, r_max: float,
                      grid=None) -> ConvexDomainFamily:
    """Sections {x : Phi(t, x) >= level}, radial function found by bisection on rays."""
    n = phi.n
    g = grid or direction_grid(n)

    def rho_at(t):
        def rho(theta):
            theta = np.asarray(theta, dtype=float)
            lo = np.zeros(theta.shape[:-1])
            hi = np.full(theta.shape[:-1], float(r_max))
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                inside = phi.value(mid[..., None] * theta, t) >= level
                lo = np.where(inside, mid, lo)
                hi = np.where(inside, hi, mid)
            return 0.5 * (lo + hi)
        return rho

    def section(t):
        if phi.value(np.zeros(n), t) <= level:
            return None
        if phi.is_radial:
            return ball(n, float(rho_at(t)(np.eye(n)[0])), g)
        return radial_body(rho_at(t), g, n)

    radius = dr = d2r = None
    if phi.is_radial:
        e1 = np.eye(n)[0]

        def radius(t):
            return float(rho_at(t)(e1)) if phi.value(np.zeros(n), t) > level else 0.0

        def dr(t):
            x = radius(t) * e1
            return float(-phi.d_t(x, t) / (phi.grad_x(x, t) @ e1))

        def d2r(t):
            x = radius(t) * e1
            r1 = dr(t)
            fr = phi.grad_x(x, t) @ e1
            ftt = phi.d_tt(x, t)
            ftr = phi.d_tx(x, t) @ e1
            frr = e1 @ phi.hess_x(x, t) @ e1
            return float(-(ftt + 2 * ftr * r1 + frr * r1 * r1) / fr)
    spec = {"kind": "superlevel", "phi": phi.to_spec(), "level": level,
            "t_range": list(map(float, t_range)), "r_max": r_max}
    return ConvexDomainFamily(n, float(t_range[0]), float(t_range[1]), "superlevel", section,
                              radius, dr, d2r, spec)


def family_from_spec(spec: dict, grid=None) -> ConvexDomainFamily:
    kind = spec.get("kind")
    if kind == "minkowski":
        return minkowski_path(body_from_spec(spec["K"], grid), body_from_spec(spec["L"], grid))
    if kind == "profile":
        n = int(spec.get("dimension", 1))
        prof = spec["profile"]
        tr = spec.get("t_range")
        if prof.get("type") == "sqrt_quadratic":
            return sqrt_quadratic_profile(n, prof["c0"], prof.get("c1", 0.0), prof.get("c2", 1.0), tr, grid)
        if prof.get("type") == "affine":
            return affine_profile(n, prof["r0"], prof["r1"], tr, grid)
        raise LabError("CONFIG_ERROR", "unknown profile type", type=prof.get("type"))
    if kind == "superlevel":
        return superlevel_family(concave_from_spec(spec["phi"]), float(spec["level"]),
                                 spec["t_range"], float(spec["r_max"]), grid)
    if kind == "fixed":
        body = body_from_spec(spec["body"], grid)
        lo, hi = spec.get("t_range", [0.0, 1.0])
        r = dr = d2r = None
        if body.kind == "ball" or body.n == 1:
            rad = float(body.half_widths()[0])
            r, dr, d2r = (lambda t: rad), (lambda t: 0.0), (lambda t: 0.0)
        return ConvexDomainFamily(body.n, float(lo), float(hi), "fixed", lambda t: body, r, dr, d2r, spec)
    raise LabError("CONFIG_ERROR", "unknown family kind", kind=kind)


# ---------------------------------------------------------------------------


def concave_extension(phi: ConcaveFunction, theta: SymmetricBody, omega: SymmetricBody, x,
                      points: int = 33) -> float:
    """Concave extension of Phi from the closed inner body to omega.

    Phi~(x) = sup{lam Phi(z) : z in Theta, x = lam z + (1-lam) y, y in Omega}.
    The sup runs over a tensor grid on Theta (plus x itself), so the value is
    approximate from below.
    """
    x = np.asarray(x, dtype=float)
    dirs = omega.grid.directions
    if np.any(theta.rho(dirs) >= omega.rho(dirs)):
        raise LabError("BAD_NESTING", "inner body must lie strictly inside omega")
    if omega.gauge(x) > 1.0 + 1e-12:
        raise LabError("OUT_OF_RANGE", "point outside omega", x=x.tolist())
    hw = theta.half_widths()
    axes = [np.linspace(-w, w, points) for w in hw]
    z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, theta.n)
    z = z[theta.gauge(z) <= 1.0 + 1e-12]
    if theta.gauge(x) <= 1.0 + 1e-12:
        z = np.vstack([z, x])
    lo = np.zeros(len(z))
    hi = np.ones(len(z))

    def slack(lam):
        return omega.gauge(x - lam[:, None] * z) - (1.0 - lam)
    full = slack(hi) <= 1e-14
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        ok = slack(mid) <= 0.0
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    lam = np.where(full, 1.0, lo)
    vals = np.maximum(phi.value(z), 0.0)
    return float(np.max(lam * vals))
