"""Command-line front end.

    bmlab <command> --config <path> [--out <dir>] [--seed <u64>] [--quad polar|mc] [--jobs N]

Exit status: 0 when every theorem-status verdict holds, 1 when one is
violated, 2 on a configuration or output error.
"""
import argparse
import json
import os
import sys

import numpy as np

from .errors import LabError
from .fields import field_from_spec
from .geometry import body_from_spec, concave_from_spec, family_from_spec
from .inequalities import (b_local_margin, bbl_check, bbl_counterexample_check, brascamp_lieb_margin,
                           bump_from_spec, dim_bm_check, lift_check, poincare_margin, torsion_bm_check,
                           torsion_solve, torsion_sqrt_concavity)
from .integrate import QuadratureSpec
from .marginals import MarginalProblem, b_profile_check, concavity_report, phi_with_error
from .measures import measure, measure_from_spec, validate_weight
from .reports import CheckReport, ProfileReport, SearchReport, report_to_csv, report_to_json
from .search import InstanceSpec, search_min_margin
from .variation import hereditary_parts, second_variation_terms, spectral_margin

COMMANDS = ("marginal-profile", "second-variation", "check", "b-profile", "torsion", "search")
COMMON = {"command", "seed", "quadrature"}
QUAD_KEYS = {"mode", "radial_order", "mc_samples"}

# command -> (required keys, optional keys)
SCHEMA = {
    "marginal-profile": ({"family", "phi", "measure", "beta", "t_grid"}, {"gamma"}),
    "second-variation": ({"family", "phi", "measure", "beta", "t0"}, {"gamma", "fd_step"}),
    "b-profile": ({"body", "measure", "t_grid"}, set()),
    "torsion": ({"body", "measure"}, set()),
    "search": ({"target"}, {"count", "dimension", "params"}),
}
CHECKS = {
    "dim_bm": ({"K", "L", "lam"}, {"phi", "beta", "measure"}),
    "bbl": ({"f", "g", "h", "kappa", "lam"}, {"measure"}),
    "bbl_counterexample": (set(), {"M", "dimension", "kappa", "lam"}),
    "brascamp_lieb": ({"f"}, {"G"}),
    "b_local": ({"dimension"}, {"V", "D"}),
    "poincare": ({"measure", "C", "phi", "beta", "f"}, set()),
    "torsion_bm": ({"K", "L", "lam"}, {"measure"}),
    "torsion_sqrt": ({"a", "b"}, {"measure"}),
    "lift": ({"K", "phi", "beta"}, {"measure"}),
    "hereditary": ({"measure", "u"}, {"body", "factor"}),
    "spectral": ({"measure", "u"}, {"body", "factor"}),
}


class ConfigError(Exception):
    pass


def _require(cond, field, message):
    if not cond:
        raise ConfigError(f"{field}: {message}")


def _keys(cfg, required, optional, where):
    missing = sorted(required - set(cfg))
    _require(not missing, where, f"missing keys {missing}")
    extra = sorted(set(cfg) - required - optional)
    _require(not extra, where, f"unknown keys {extra}")


def _number(cfg, key, positive=False):
    v = cfg[key]
    _require(isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v), key, "must be a number")
    if positive:
        _require(v > 0, key, f"must be positive, got {v}")
    return float(v)


def _grid(cfg, key="t_grid"):
    v = cfg[key]
    _require(isinstance(v, list) and len(v) == 3, key, "must be [lo, hi, count]")
    lo, hi, m = v
    _require(isinstance(m, int) and m >= 3, key, "count must be an integer >= 3")
    _require(lo < hi, key, "lo must be below hi")
    return np.linspace(float(lo), float(hi), m)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config line {e.lineno} column {e.colno}: {e.msg}") from None
    _require(isinstance(cfg, dict), "config", "top level must be an object")
    return cfg


def _quad(cfg, seed, mode):
    q = dict(cfg.get("quadrature", {}))
    _require(isinstance(q, dict), "quadrature", "must be an object")
    extra = sorted(set(q) - QUAD_KEYS)
    _require(not extra, "quadrature", f"unknown keys {extra}")
    if mode:
        q["mode"] = mode
    try:
        return QuadratureSpec(mode=q.get("mode", "polar"), radial_order=int(q.get("radial_order", 64)),
                              mc_samples=int(q.get("mc_samples", 2_000_000)), seed=seed)
    except LabError as e:
        raise ConfigError(f"quadrature: {e}") from None


def _admissible(mu):
    return validate_weight(mu.weight).holds


def run_command(command, cfg, *, seed=None, quad=None, jobs=1, check=None):
    """Execute one command from a parsed config; returns the report."""
    _require(command in COMMANDS, "command", f"unknown command {command!r}")
    seed = int(seed if seed is not None else cfg.get("seed", 0))
    q = _quad(cfg, seed, quad)
    body = {k: v for k, v in cfg.items() if k not in COMMON}
    if command == "check":
        name = check or body.pop("check", None)
        body.pop("check", None)
        _require(name in CHECKS, "check", f"unknown check {name!r}; known {sorted(CHECKS)}")
        _keys(body, *CHECKS[name], "check." + name)
        return _run_check(name, body, q)
    _keys(body, *SCHEMA[command], command)
    if command in ("marginal-profile", "second-variation"):
        beta = _number(body, "beta", positive=True)
        mu = measure_from_spec(body["measure"])
        P = MarginalProblem(family_from_spec(body["family"]), concave_from_spec(body["phi"]), mu, beta,
                            body.get("gamma"), q)
        if command == "marginal-profile":
            rep = concavity_report(P, _grid(body))
            rep.details["theorem"] = _admissible(mu)
            return rep
        return _second_variation(P, _number(body, "t0"), float(body.get("fd_step", 1e-3)))
    if command == "b-profile":
        mu = measure_from_spec(body["measure"])
        rep = b_profile_check(body_from_spec(body["body"]), mu, _grid(body), q)
        rep.details["theorem"] = _admissible(mu)
        return rep
    if command == "torsion":
        K = body_from_spec(body["body"])
        mu = measure_from_spec(body["measure"])
        tau, sol = torsion_solve(K, mu)
        tol = 1e-9 * max(1.0, abs(tau))
        margin = tol - sol.agreement
        return CheckReport("torsion", margin, tol, "holds" if margin >= 0 else "violated",
                           {"body": K.to_spec(), "measure": mu.to_spec()}, True,
                           {"tau": tau, "tau_energy": sol.tau_energy, "radius": sol.radius,
                            "s": sol.s.tolist(), "u": sol.u.tolist(), "du": sol.du.tolist()})
    spec = InstanceSpec(body["target"], int(body.get("count", 100)), seed, int(body.get("dimension", 1)),
                        dict(body.get("params", {})), q.mode)
    return search_min_margin(spec, jobs)


def _second_variation(P, t0, h):
    terms = second_variation_terms(P, t0)
    vals = [phi_with_error(P, t0 + k * h)[0] for k in (-2, -1, 0, 1, 2)]
    fd = (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (12 * h * h)
    phi = vals[2]
    formula = P.gamma * phi * terms["rhs"]
    tol = 1e-4 * (1 + abs(fd))
    margin = tol - abs(formula - fd)
    det = {"phi": phi, "phi_dd": formula, "phi_dd_fd": fd, "fd_step": h, "t0": t0,
           "phi_dd_without_transport": P.gamma * phi * terms["rhs_without_transport"], **terms}
    return CheckReport("second_variation", margin, tol, "holds" if margin >= 0 else "violated",
                       P.to_spec(), True, det)


def _run_check(name, c, q):
    def mu_of(key="measure", n=None):
        if key in c:
            return measure_from_spec(c[key])
        return measure("lebesgue", n or 1)

    if name == "dim_bm":
        K, L = body_from_spec(c["K"]), body_from_spec(c["L"])
        phi = concave_from_spec(c["phi"]) if "phi" in c else None
        mu = mu_of(n=K.n)
        rep = dim_bm_check(K, L, _number(c, "lam"), phi, float(c.get("beta", 1.0)), mu, q)
        rep.theorem = rep.theorem and _admissible(mu)
        return rep
    if name == "bbl":
        f, g, h = (bump_from_spec(c[k]) for k in "fgh")
        kappa = c["kappa"]
        kappa = {"inf": np.inf, "-inf": -np.inf}.get(kappa, kappa)
        return bbl_check(f, g, h, float(kappa), _number(c, "lam"), mu_of(n=f.n), q)
    if name == "bbl_counterexample":
        return bbl_counterexample_check(float(c.get("M", 10.0)), int(c.get("dimension", 1)),
                                        float(c.get("kappa", 1.0)), float(c.get("lam", 0.5)), q)
    if name == "brascamp_lieb":
        f = field_from_spec(c["f"])
        G = field_from_spec(c["G"]) if "G" in c else None
        return brascamp_lieb_margin(G, f, q, n=f.n)
    if name == "b_local":
        V = field_from_spec(c["V"]) if "V" in c else None
        return b_local_margin(V, c.get("D"), q, n=int(c["dimension"]))
    if name == "poincare":
        return poincare_margin(mu_of(), body_from_spec(c["C"]), concave_from_spec(c["phi"]),
                               _number(c, "beta", positive=True), field_from_spec(c["f"]), q)
    if name == "torsion_bm":
        K = body_from_spec(c["K"])
        return torsion_bm_check(K, body_from_spec(c["L"]), _number(c, "lam"), mu_of(n=K.n))
    if name == "torsion_sqrt":
        return torsion_sqrt_concavity(_number(c, "a", True), _number(c, "b", True), mu_of())
    if name == "lift":
        K = body_from_spec(c["K"])
        return lift_check(K, concave_from_spec(c["phi"]), c["beta"], mu_of(n=K.n), q)
    # hereditary / spectral
    u = field_from_spec(c["u"])
    mu = measure_from_spec(c["measure"])
    bod = body_from_spec(c["body"]) if "body" in c else None
    factor = None
    if "factor" in c:
        psi = field_from_spec(c["factor"])
        factor = lambda x: np.exp(-psi.value(x))
    if name == "spectral":
        m = spectral_margin(mu, u, factor, bod, q)
        det = {}
    else:
        det = hereditary_parts(mu, u, factor, bod, q)
        m = det["margin"]
    tol = 1e-8
    return CheckReport(name, m, tol, "holds" if m >= -tol else "violated", dict(c), _admissible(mu), det)


def _theorem_violated(rep):
    if isinstance(rep, SearchReport):
        return rep.theorem and rep.verdict == "violated"
    if isinstance(rep, ProfileReport):
        return bool(rep.details.get("theorem", True)) and rep.verdict == "violated"
    return rep.theorem and rep.verdict == "violated"


def emit_report(report, out_dir):
    """Write report.json and report.csv into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report_to_json(report))
    with open(os.path.join(out_dir, "report.csv"), "w") as fh:
        fh.write(report_to_csv(report))


def build_parser():
    p = argparse.ArgumentParser(prog="bmlab", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("name", nargs="?", help="check name for the check command")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int)
    p.add_argument("--quad", choices=("polar", "mc"))
    p.add_argument("--jobs", type=int, default=1)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    jobs = int(os.environ.get("BMLAB_JOBS", args.jobs))
    try:
        cfg = load_config(args.config)
        if "command" in cfg:
            _require(cfg["command"] == args.command, "command",
                     f"config is for {cfg['command']!r}, not {args.command!r}")
        rep = run_command(args.command, cfg, seed=args.seed, quad=args.quad, jobs=jobs, check=args.name)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except LabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (KeyError, TypeError, ValueError) as e:
        print(f"config error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    try:
        emit_report(rep, args.out)
    except OSError as e:
        print(f"output error: {e}", file=sys.stderr)
        return 2
    verdict = getattr(rep, "verdict", "")
    print(f"{args.command}: verdict={verdict}")
    return 1 if _theorem_violated(rep) else 0


if __name__ == "__main__":
    sys.exit(main())
