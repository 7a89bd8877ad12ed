"""Scalar fields on R^n with gradient and Hessian access.

A field evaluates on arrays of points with shape ``(..., n)`` and returns
values of shape ``(...)``, gradients ``(..., n)`` and Hessians ``(..., n, n)``.
Fields built from expressions or parameters keep a JSON ``spec`` so that
instances can be serialized and replayed.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import sympy

from .errors import LabError


@dataclass(frozen=True, eq=False)
class ScalarField:
    n: int
    value: Callable
    grad: Callable
    hess: Callable
    spec: Optional[dict] = None

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    def laplacian(self, x):
        return np.trace(self.hess(np.asarray(x, dtype=float)), axis1=-2, axis2=-1)


def _symbols(n):
    syms = sympy.symbols(" ".join(f"x{i}" for i in range(n)), real=True)
    syms = (syms,) if n == 1 else tuple(syms)
    names = {f"x{i}": s for i, s in enumerate(syms)}
    for alias, s in zip("xyz", syms):
        names.setdefault(alias, s)
    if n == 1:
        names["x"] = syms[0]
    return syms, names


def _vectorize(fn, nargs):
    def run(x):
        x = np.asarray(x, dtype=float)
        out = fn(*(x[..., i] for i in range(nargs)))
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()
    return run


def from_expression(expr: str, n: int) -> ScalarField:
    """Build a field from a sympy-parsable expression in ``x0..x{n-1}``.

    For n = 1 the variable may be written ``x``; for n = 2, 3 the aliases
    ``x, y, z`` name the coordinates.  Derivatives are symbolic.
    """
    syms, names = _symbols(n)
    try:
        e = sympy.sympify(expr, locals=names)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise LabError("BAD_EXPRESSION", str(exc), expr=expr) from None
    free = {s.name for s in e.free_symbols} - {s.name for s in syms}
    if free:
        raise LabError("BAD_EXPRESSION", "unknown symbols", symbols=sorted(free))
    grads = [sympy.diff(e, s) for s in syms]
    hess = [[sympy.diff(g, s) for s in syms] for g in grads]
    f0 = _vectorize(sympy.lambdify(syms, e, "numpy"), n)
    f1 = [_vectorize(sympy.lambdify(syms, g, "numpy"), n) for g in grads]
    f2 = [[_vectorize(sympy.lambdify(syms, h, "numpy"), n) for h in row] for row in hess]

    def grad(x):
        return np.stack([g(x) for g in f1], axis=-1)

    def hessian(x):
        return np.stack([np.stack([h(x) for h in row], axis=-1) for row in f2], axis=-2)

    return ScalarField(n, f0, grad, hessian, {"kind": "expression", "expr": expr, "dimension": n})


def radial_field(g, dg, d2g, n, spec=None) -> ScalarField:
    """Field x -> g(|x|) given the profile and its first two derivatives."""

    def value(x):
        return g(np.linalg.norm(x, axis=-1))

    def grad(x):
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        return (np.where(r > 0, dg(r) / safe, 0.0))[..., None] * x

    def hess(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        xh = x / safe[..., None]
        a = np.where(r > 0, dg(r) / safe, d2g(r))
        b = d2g(r)
        eye = np.eye(n)
        outer = xh[..., :, None] * xh[..., None, :]
        return a[..., None, None] * (eye - outer) + b[..., None, None] * outer

    return ScalarField(n, value, grad, hess, spec)


def zero_field(n) -> ScalarField:
    def value(x):
        return np.zeros(np.shape(x)[:-1])

    def grad(x):
        return np.zeros(np.shape(x))

    def hess(x):
        return np.zeros(np.shape(x) + (n,))

    return ScalarField(n, value, grad, hess, {"kind": "zero", "dimension": n})


def half_square_norm(n) -> ScalarField:
    """The field |x|^2/2."""
    eye = np.eye(n)

    def hess(x):
        return np.broadcast_to(eye, np.shape(x) + (n,)).copy()

    return ScalarField(n, lambda x: 0.5 * np.sum(np.asarray(x) ** 2, axis=-1),
                       lambda x: np.array(x, dtype=float), hess,
                       {"kind": "expression", "expr": "+".join(f"x{i}**2/2" for i in range(n)),
                        "dimension": n})


def ridge_potential(n, quadratic=(), ridges=()) -> ScalarField:
    """Convex potential  sum c <x, A x> + sum d |<v, x> - b|^p.

    ``quadratic`` holds ``(c, A)`` pairs with c >= 0 and A positive
    semidefinite; ``ridges`` holds ``(d, v, p, b)`` with d >= 0 and p >= 1.
    With every offset b = 0 the potential is even.
    """
    quads = [(float(c), np.asarray(A, dtype=float).reshape(n, n)) for c, A in quadratic]
    rid = [(float(d), np.asarray(v, dtype=float).reshape(n), float(p), float(b))
           for d, v, p, b in ridges]
    mat = sum((c * 0.5 * (A + A.T) for c, A in quads), np.zeros((n, n)))

    def value(x):
        x = np.asarray(x, dtype=float)
        out = np.einsum("...i,ij,...j->...", x, mat, x)
        for d, v, p, b in rid:
            out = out + d * np.abs(x @ v - b) ** p
        return out

    def grad(x):
        x = np.asarray(x, dtype=float)
        out = 2.0 * x @ mat
        for d, v, p, b in rid:
            s = x @ v - b
            out = out + (d * p * np.abs(s) ** (p - 1) * np.sign(s))[..., None] * v
        return out

    def hess(x):
        x = np.asarray(x, dtype=float)
        out = np.broadcast_to(2.0 * mat, x.shape + (n,)).copy()
        for d, v, p, b in rid:
            if p == 1:
                continue
            s = np.abs(x @ v - b)
            with np.errstate(divide="ignore"):
                k = d * p * (p - 1) * (s ** (p - 2) if p != 2 else np.ones_like(s))
            out = out + k[..., None, None] * np.outer(v, v)
        return out

    spec = {"kind": "ridge", "dimension": n,
            "quadratic": [{"c": c, "A": A.tolist()} for c, A in quads],
            "ridges": [{"d": d, "v": v.tolist(), "p": p, "b": b} for d, v, p, b in rid]}
    return ScalarField(n, value, grad, hess, spec)


def field_from_spec(spec: dict) -> ScalarField:
    """Inverse of the ``spec`` attached to builtin fields."""
    kind = spec.get("kind")
    n = int(spec.get("dimension", 1))
    if kind == "expression":
        return from_expression(str(spec["expr"]), n)
    if kind == "zero":
        return zero_field(n)
    if kind == "ridge":
        quad = [(q["c"], q["A"]) for q in spec.get("quadratic", [])]
        rid = [(r["d"], r["v"], r["p"], r.get("b", 0.0)) for r in spec.get("ridges", [])]
        return ridge_potential(n, quad, rid)
    raise LabError("CONFIG_ERROR", "unknown field kind", kind=kind)


def asymmetry(field: ScalarField, points) -> float:
    """Largest |F(x) - F(-x)| over the given points."""
    points = np.asarray(points, dtype=float)
    return float(np.max(np.abs(field.value(points) - field.value(-points)), initial=0.0))
