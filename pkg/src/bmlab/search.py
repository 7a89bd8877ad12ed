"""Seeded randomized margin sweeps.

An instance is a plain JSON dict that fully describes one check, so the
argmin of a sweep can be replayed from the report alone.  Instance ``i`` of
a sweep draws from its own Philox stream keyed by (seed, i); results do not
depend on how indices are spread over worker processes.
"""
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import LabError
from .fields import field_from_spec
from .geometry import (affine_profile, body_from_spec, concave_from_spec, family_from_spec, minkowski_combine,
                       sqrt_quadratic_profile)
from .inequalities import (b_local_margin, bbl_check, brascamp_lieb_margin, bump_from_spec, dim_bm_check,
                           gaussian_bump, indicator, kappa_mean, poincare_margin, prekopa_interpolant,
                           torsion_bm_check, torsion_sqrt_concavity)
from .integrate import QuadratureSpec
from .marginals import (ConvexQuadratic, MarginalProblem, b_profile_check, concavity_report,
                        negative_exponent_report, phi_eval)
from .measures import measure_from_spec
from .reports import SearchReport
from .variation import hereditary_parts, spectral_margin, second_variation_terms

THEOREM_TARGETS = ("dim_bm", "bbl", "brascamp_lieb", "b_local", "hereditary", "spectral", "poincare",
                   "torsion_bm", "b_profile", "concavity", "second_variation")
EXPLORATORY_TARGETS = ("hereditary_product", "torsion_bm_weighted", "torsion_sqrt", "negative_exponent")
TARGETS = THEOREM_TARGETS + EXPLORATORY_TARGETS


@dataclass(frozen=True)
class InstanceSpec:
    target: str
    count: int = 100
    seed: int = 0
    dimension: int = 1
    params: dict = field(default_factory=dict)
    quad: str = "polar"

    def __post_init__(self):
        if self.target not in TARGETS:
            raise LabError("CONFIG_ERROR", "unknown search target", target=self.target, known=list(TARGETS))
        if self.count < 1:
            raise LabError("CONFIG_ERROR", "count must be at least 1", count=self.count)
        if self.dimension not in (1, 2, 3):
            raise LabError("CONFIG_ERROR", "dimension must be 1, 2 or 3", dimension=self.dimension)
        for k, v in self.params.items():
            if isinstance(v, (list, tuple)) and len(v) == 2 and not v[0] <= v[1]:
                raise LabError("CONFIG_ERROR", "empty parameter range", param=k, range=list(v))

    @property
    def theorem(self):
        return self.target in THEOREM_TARGETS


def _rng(seed, index):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


class _Draw:
    """Range lookups with per-spec overrides: params[name] is a value or [lo, hi]."""

    def __init__(self, rng, params):
        self.rng = rng
        self.params = params

    def u(self, name, lo, hi):
        v = self.params.get(name, (lo, hi))
        if isinstance(v, (list, tuple)):
            return float(self.rng.uniform(v[0], v[1])) if v[0] < v[1] else float(v[0])
        return float(v)

    def choice(self, name, options):
        v = self.params.get(name)
        if v is not None and not isinstance(v, (list, tuple)):
            return v
        opts = list(v) if v is not None else list(options)
        return opts[int(self.rng.integers(len(opts)))]


# ---------------------------------------------------------------------------
# generators


def _measure(d: _Draw, n, default=("lebesgue", "gaussian", "power", "heavy_tail")):
    fam = d.choice("measure", default)
    if fam == "power":
        return {"family": "power", "alpha": d.u("alpha", 1.0, 4.0), "dimension": n}
    if fam == "heavy_tail":
        a = d.u("a", 1.0, 3.0)
        return {"family": "heavy_tail", "a": a, "b": d.u("b", (n + 1) / a, (n + 4) / a), "dimension": n}
    return {"family": fam, "dimension": n}


def _body(d: _Draw, n, kind=None, scale=(0.3, 2.0)):
    if n == 1:
        return {"kind": "interval", "half_width": d.u("size", *scale)}
    kind = kind or d.choice("body", ("ball", "box"))
    if kind == "ball":
        return {"kind": "ball", "radius": d.u("size", *scale), "dimension": n}
    if kind == "ellipsoid":
        return {"kind": "ellipsoid", "semi_axes": [d.u("size", *scale) for _ in range(n)]}
    return {"kind": "box", "half_widths": [d.u("size", *scale) for _ in range(n)]}


def _psd(d: _Draw, n, lo=0.1, hi=1.0):
    A = d.rng.standard_normal((n, n))
    Q, _ = np.linalg.qr(A)
    ev = d.rng.uniform(lo, hi, n)
    return (Q * ev) @ Q.T


def _cap(d: _Draw, n, radius, t_coeffs=False, radial=False):
    """Quadratic cap c + b t - a t^2 - <x, Q x> kept positive on the ball of the given radius."""
    Q = np.eye(n) * d.u("q", 0.1, 1.0) if radial else _psd(d, n)
    a = d.u("cap_a", 0.0, 1.0) if t_coeffs else 0.0
    b = d.u("cap_b", -0.5, 0.5) if t_coeffs else 0.0
    top = float(np.max(np.linalg.eigvalsh(Q))) * radius ** 2 + abs(b) + a
    c = top * d.u("cap_lift", 1.05, 2.0) + 0.05
    return {"kind": "quadratic", "c": c, "b": b, "a": a, "Q": Q.tolist()}


def _ridge(d: _Draw, n, p_range=(1.0, 6.0), min_quadratic=0.0, terms=2):
    quad = [{"c": d.u("quad_c", min_quadratic, min_quadratic + 1.0), "A": _psd(d, n, 0.2, 1.0).tolist()}]
    ridges = []
    for _ in range(terms):
        v = d.rng.standard_normal(n)
        ridges.append({"d": d.u("ridge_d", 0.0, 1.0), "v": (v / np.linalg.norm(v)).tolist(),
                       "p": d.u("ridge_p", *p_range), "b": 0.0})
    return {"kind": "ridge", "dimension": n, "quadratic": quad, "ridges": ridges}


def _polynomial(d: _Draw, n, degree=3, even=False):
    names = ["x0", "x1", "x2"][:n]
    terms = []
    for i, x in enumerate(names):
        for k in range(1, degree + 1):
            if even and k % 2:
                continue
            terms.append(f"({d.rng.normal():.17g})*{x}**{k}")
        if n > 1 and i + 1 < n:
            terms.append(f"({d.rng.normal():.17g})*{x}**2*{names[i + 1]}**2" if even else
                         f"({d.rng.normal():.17g})*{x}*{names[i + 1]}")
    return {"kind": "expression", "expr": " + ".join(terms) or "0", "dimension": n}


def random_instance(spec: InstanceSpec, index: int) -> dict:
    """Deterministic instance for (spec.seed, index); hypotheses hold by construction."""
    if not 0 <= index < spec.count:
        raise LabError("CONFIG_ERROR", "index out of range", index=index, count=spec.count)
    d = _Draw(_rng(spec.seed, index), spec.params)
    n = spec.dimension
    t = spec.target
    inst = {"target": t, "seed": spec.seed, "index": index, "dimension": n, "quad": spec.quad}
    if t == "dim_bm":
        K, L = _body(d, n), _body(d, n)
        kind = K.get("kind")
        if n > 1:
            L = _body(d, n, kind)
        R = max(body_from_spec(K).max_radius(), body_from_spec(L).max_radius())
        inst.update(K=K, L=L, lam=d.u("lam", 0.05, 0.95), beta=d.u("beta", 0.5, 3.0),
                    phi=_cap(d, n, R), measure=_measure(d, n, ("gaussian",)))
    elif t == "bbl":
        kappa = d.params.get("kappa", 0.0)
        lam = d.u("lam", 0.1, 0.9)
        if kappa == 0.0:
            f = gaussian_bump(d.rng.uniform(-1, 1, n), d.u("rate", 0.3, 3.0), d.u("weight", 0.2, 3.0))
            g = gaussian_bump(d.rng.uniform(-1, 1, n), d.u("rate", 0.3, 3.0), d.u("weight", 0.2, 3.0))
            h = prekopa_interpolant(f, g, lam)
        else:
            K = body_from_spec(_body(d, n, "ball"))
            L = body_from_spec(_body(d, n, "ball"))
            cf, cg = d.rng.uniform(-1, 1, n), d.rng.uniform(-1, 1, n)
            wf, wg = d.u("weight", 0.2, 3.0), d.u("weight", 0.2, 3.0)
            f, g = indicator(K, cf, wf), indicator(L, cg, wg)
            h = indicator(minkowski_combine(K, L, lam), lam * cf + (1 - lam) * cg,
                          kappa_mean(wf, wg, float(kappa), lam))
        inst.update(f=f.to_spec(), g=g.to_spec(), h=h.to_spec(), kappa=float(kappa), lam=lam,
                    measure={"family": "lebesgue", "dimension": n})
    elif t == "brascamp_lieb":
        inst.update(G=_ridge(d, n, (2.0, 6.0), min_quadratic=0.25), f=_polynomial(d, n, 3))
    elif t == "b_local":
        inst.update(V=_ridge(d, n, (1.0, 6.0)), D=[d.u("D", -2.0, 2.0) for _ in range(n)])
    elif t in ("hereditary", "spectral", "hereditary_product"):
        R = d.u("body_radius", 0.5, 3.0)
        body = {"kind": "interval", "half_width": R} if n == 1 else {"kind": "ball", "radius": R, "dimension": n}
        degenerate = d.rng.random() < d.params.get("degenerate_fraction", 0.2)
        inst.update(body=None if degenerate else body,
                    factor=None if degenerate else _ridge(d, n, (2.0, 6.0)),
                    u=_polynomial(d, n, 4, even=True))
        if t == "hereditary_product":
            # W(x) = sum_i a_i x_i^2 + b_i x_i^4: a non-radial even log-concave product measure
            inst["potential"] = {"kind": "ridge", "dimension": n, "quadratic": [],
                                 "ridges": [r for i in range(n) for r in (
                                     {"d": d.u("prod_a", 0.2, 1.0), "v": np.eye(n)[i].tolist(), "p": 2.0, "b": 0.0},
                                     {"d": d.u("prod_b", 0.0, 0.5), "v": np.eye(n)[i].tolist(), "p": 4.0, "b": 0.0})]}
        else:
            # on all of R^n polynomial test functions need tails lighter than any power
            inst["measure"] = _measure(d, n, ("gaussian", "power") if degenerate else ("gaussian", "power", "heavy_tail"))
            if inst["measure"]["family"] == "power":
                # C^2 at the origin needs alpha = 2 or alpha > 2
                inst["measure"]["alpha"] = d.u("alpha", 2.0, 4.0)
            if inst["measure"]["family"] == "heavy_tail":
                inst["measure"]["a"] = 2.0
                inst["measure"]["b"] = d.u("b", (n + 1) / 2, (n + 4) / 2)
    elif t == "poincare":
        C = _body(d, n)
        R = body_from_spec(C).max_radius()
        phi = _cap(d, n, R)
        phi["c"] = float(np.max(np.linalg.eigvalsh(np.asarray(phi["Q"])))) * R * R * d.u("cap_lift", 1.0, 2.0)
        inst.update(C=C, phi=phi, beta=d.u("beta", 0.5, 3.0), f=_polynomial(d, n, 4, even=True),
                    measure=_measure(d, n))
    elif t in ("torsion_bm", "torsion_bm_weighted"):
        kind = "ball"
        inst.update(K=_body(d, n, kind), L=_body(d, n, kind), lam=d.u("lam", 0.05, 0.95),
                    measure={"family": "lebesgue", "dimension": n} if t == "torsion_bm" else
                    _measure(d, n, ("gaussian", "power", "heavy_tail")))
    elif t == "torsion_sqrt":
        inst.update(a=d.u("size", 0.3, 2.0), b=d.u("size", 0.3, 2.0),
                    measure=_measure(d, 1, ("lebesgue", "gaussian", "power")), dimension=1)
    elif t == "b_profile":
        inst.update(K=_body(d, n), measure=_measure(d, n, ("gaussian", "power", "heavy_tail")),
                    t_grid=[-1.0, 1.0, 9])
    elif t == "concavity":
        K, L = _body(d, n), _body(d, n)
        if n > 1:
            L = _body(d, n, K["kind"])
        R = max(body_from_spec(K).max_radius(), body_from_spec(L).max_radius())
        inst.update(family={"kind": "minkowski", "K": K, "L": L}, phi=_cap(d, n, R, t_coeffs=True),
                    beta=d.u("beta", 0.3, 3.0), measure=_measure(d, n), t_grid=[0.0, 1.0, 9])
    elif t == "second_variation":
        if n > 2:
            n = inst["dimension"] = 2
        if d.rng.random() < 0.5:
            c0, c2 = d.u("c0", 0.5, 2.0), d.u("c2", 0.2, 2.0)
            c1 = d.u("c1", -0.5, 0.5)
            fam = sqrt_quadratic_profile(n, c0, c1, c2)
            lo, hi = fam.t_lo, fam.t_hi
            t0 = lo + (hi - lo) * d.u("t0_frac", 0.3, 0.7)
            R = float(np.sqrt(c0 + c1 * c1 / (4 * c2)))
        else:
            r0, r1 = d.u("r0", 0.5, 2.0), d.u("r1", -0.4, 0.4)
            fam = affine_profile(n, r0, r1, (-1.0, 1.0))
            t0 = d.u("t0", -0.5, 0.5)
            R = r0 + abs(r1)
        phi = _cap(d, n, R, t_coeffs=True, radial=True)
        mu = _measure(d, n)
        # the reduced solver needs w'(r)/r bounded at the origin
        if mu["family"] == "power":
            mu["alpha"] = d.u("alpha", 2.0, 4.0)
        if mu["family"] == "heavy_tail":
            mu["a"] = 2.0
        inst.update(family=fam.spec, phi=phi, beta=d.u("beta", 0.5, 3.0), t0=t0, measure=mu, fd_step=1e-3)
    elif t == "negative_exponent":
        K, L = _body(d, n, "ball"), _body(d, n, "ball")
        inst.update(family={"kind": "minkowski", "K": K, "L": L},
                    psi={"c": d.u("psi_c", 0.2, 2.0), "b": d.u("psi_b", -1.0, 1.0), "a": d.u("psi_a", 0.0, 1.0),
                         "q": d.u("psi_q", 0.0, 2.0)},
                    beta=n + d.u("beta_excess", 0.2, 4.0), measure=_measure(d, n, ("lebesgue", "gaussian", "power")),
                    t_grid=[0.0, 1.0, 9])
        if inst["measure"]["family"] == "power":
            inst["measure"]["alpha"] = d.u("alpha", 1.0, 4.0)
    return inst


# ---------------------------------------------------------------------------
# evaluation


def _profile_slack(rep):
    """Smallest tol - D2 over the stencil points (>= 0 when nothing is flagged)."""
    pairs = [(tol - d2) for d2, tol in zip(rep.d2, rep.tolerance) if d2 is not None]
    return float(min(pairs)), float(rep.tolerance[rep.d2.index(rep.max_d2)])


def _grid(spec):
    lo, hi, m = spec
    return np.linspace(float(lo), float(hi), int(m))


def evaluate_instance(inst: dict, spec: QuadratureSpec = None):
    """(margin, tolerance, verdict) for one serialized instance."""
    t = inst["target"]
    q = spec or QuadratureSpec(mode=inst.get("quad", "polar"), seed=int(inst["seed"]), instance=int(inst["index"]))
    if t == "dim_bm":
        r = dim_bm_check(body_from_spec(inst["K"]), body_from_spec(inst["L"]), inst["lam"],
                         concave_from_spec(inst["phi"]), inst["beta"], measure_from_spec(inst["measure"]), q)
    elif t == "bbl":
        r = bbl_check(bump_from_spec(inst["f"]), bump_from_spec(inst["g"]), bump_from_spec(inst["h"]),
                      inst["kappa"], inst["lam"], measure_from_spec(inst["measure"]), q)
    elif t == "brascamp_lieb":
        r = brascamp_lieb_margin(field_from_spec(inst["G"]), field_from_spec(inst["f"]), q)
    elif t == "b_local":
        r = b_local_margin(field_from_spec(inst["V"]), inst["D"], q)
    elif t in ("hereditary", "spectral", "hereditary_product"):
        u = field_from_spec(inst["u"])
        body = body_from_spec(inst["body"]) if inst.get("body") else None
        factor = None
        if inst.get("factor"):
            psi = field_from_spec(inst["factor"])
            factor = lambda x: np.exp(-psi.value(x))
        mu = field_from_spec(inst["potential"]) if t == "hereditary_product" else measure_from_spec(inst["measure"])
        if t == "spectral":
            m = spectral_margin(mu, u, factor, body, q)
        else:
            m = hereditary_parts(mu, u, factor, body, q)["margin"]
        tol = 1e-8
        return float(m), tol, "holds" if m >= -tol else "violated"
    elif t == "poincare":
        r = poincare_margin(measure_from_spec(inst["measure"]), body_from_spec(inst["C"]),
                            concave_from_spec(inst["phi"]), inst["beta"], field_from_spec(inst["f"]), q)
    elif t in ("torsion_bm", "torsion_bm_weighted"):
        r = torsion_bm_check(body_from_spec(inst["K"]), body_from_spec(inst["L"]), inst["lam"],
                             measure_from_spec(inst["measure"]))
    elif t == "torsion_sqrt":
        r = torsion_sqrt_concavity(inst["a"], inst["b"], measure_from_spec(inst["measure"]))
    elif t == "b_profile":
        rep = b_profile_check(body_from_spec(inst["K"]), measure_from_spec(inst["measure"]), _grid(inst["t_grid"]), q)
        m, tol = _profile_slack(rep)
        return m, tol, {"concave": "holds"}.get(rep.verdict, rep.verdict)
    elif t == "concavity":
        P = MarginalProblem(family_from_spec(inst["family"]), concave_from_spec(inst["phi"]),
                            measure_from_spec(inst["measure"]), inst["beta"], spec=q)
        rep = concavity_report(P, _grid(inst["t_grid"]))
        m, tol = _profile_slack(rep)
        return m, tol, {"concave": "holds"}.get(rep.verdict, rep.verdict)
    elif t == "second_variation":
        return _second_variation_margin(inst, q)
    elif t == "negative_exponent":
        ps = inst["psi"]
        rep = negative_exponent_report(family_from_spec(inst["family"]),
                                       ConvexQuadratic(ps["c"], ps["b"], ps["a"], ps["q"]), inst["beta"],
                                       measure_from_spec(inst["measure"]), _grid(inst["t_grid"]), q)
        m, tol = _profile_slack(rep)
        return m, tol, {"concave": "holds"}.get(rep.verdict, rep.verdict)
    else:
        raise LabError("CONFIG_ERROR", "unknown target", target=t)
    return float(r.margin), float(r.tolerance), r.verdict


def _second_variation_margin(inst, q):
    """1e-4 (1 + |D2 phi|) - |gamma phi rhs - D2 phi| at t0 with a 4th-order stencil."""
    P = MarginalProblem(family_from_spec(inst["family"]), concave_from_spec(inst["phi"]),
                        measure_from_spec(inst["measure"]), inst["beta"], spec=q)
    t0, h = inst["t0"], inst["fd_step"]
    v = [phi_eval(P, t0 + k * h) for k in (-2, -1, 0, 1, 2)]
    d2 = (-v[0] + 16 * v[1] - 30 * v[2] + 16 * v[3] - v[4]) / (12 * h * h)
    rhs = second_variation_terms(P, t0)["rhs"]
    formula = P.gamma * v[2] * rhs
    tol = 1e-4 * (1 + abs(d2))
    m = tol - abs(formula - d2)
    return float(m), 0.0, "holds" if m >= 0 else "violated"


def replay(inst: dict) -> float:
    """Margin of a serialized instance, as stored in a SearchReport."""
    return evaluate_instance(inst)[0]


def _run_one(args):
    spec, index = args
    inst = random_instance(spec, index)
    try:
        m, tol, verdict = evaluate_instance(inst)
    except LabError as e:
        return index, float("nan"), 0.0, "error:" + e.code
    return index, m, tol, verdict


def _jobs(jobs):
    env = os.environ.get("BMLAB_JOBS")
    if env:
        jobs = int(env)
    return max(1, int(jobs or 1))


def search_min_margin(spec: InstanceSpec, jobs: int = 1) -> SearchReport:
    """Evaluate every instance and summarize the smallest margin."""
    jobs = _jobs(jobs)
    work = [(spec, i) for i in range(spec.count)]
    if jobs == 1 or spec.count == 1:
        results = [_run_one(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work, chunksize=max(1, spec.count // (4 * jobs))))
    results.sort(key=lambda r: r[0])
    margins = [r[1] for r in results]
    verdicts = [r[3] for r in results]
    arr = np.array(margins, dtype=float)
    finite = arr[np.isfinite(arr)]
    if np.any(~np.isnan(arr)):
        i = int(np.nanargmin(arr))
    else:
        i = 0
    if finite.size:
        lo, hi = float(finite.min()), float(finite.max())
        counts, edges = np.histogram(finite, bins=64, range=(lo, hi) if hi > lo else (lo - 0.5, hi + 0.5))
    else:
        counts, edges = np.zeros(64, int), np.linspace(0, 1, 65)
    tally = {}
    for v in verdicts:
        tally[v] = tally.get(v, 0) + 1
    if not spec.theorem:
        verdict = "exploratory"
    elif any(v == "violated" for v in verdicts):
        verdict = "violated"
    elif any(v != "holds" for v in verdicts):
        verdict = "inconclusive"
    else:
        verdict = "holds"
    return SearchReport(spec.target, spec.seed, spec.count, spec.dimension, spec.theorem, float(arr[i]), i,
                        random_instance(spec, i), counts.tolist(), edges.tolist(), margins,
                        float(results[i][2]), verdict,
                        {"ranges": dict(spec.params), "quad": spec.quad, "verdicts": tally})
