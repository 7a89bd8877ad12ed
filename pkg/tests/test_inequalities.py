from math import erf, sqrt

import numpy as np
import pytest
from scipy.integrate import solve_bvp, quad

from bmlab.errors import LabError
from bmlab.fields import from_expression
from bmlab.geometry import ball, box, constant, from_expression as concave_expression, interval, quadratic_cap
from bmlab.inequalities import (b_local_margin, bbl_check, bbl_counterexample, bbl_counterexample_check,
                                brascamp_lieb_margin, dim_bm_check, gaussian_bump, indicator, kappa_mean,
                                lift_check, poincare_margin, prekopa_interpolant, torsion_bm_check,
                                torsion_solve, torsion_sqrt_concavity)
from bmlab.integrate import QuadratureSpec
from bmlab.measures import measure


def g1(a):
    return erf(a / sqrt(2))


# kappa-means

def test_kappa_mean_special_cases():
    assert kappa_mean(1, 4, 0, 0.5) == pytest.approx(2.0)
    assert kappa_mean(1, 4, 1, 0.5) == pytest.approx(2.5)
    assert kappa_mean(1, 4, -1, 0.5) == pytest.approx(1.6)
    assert kappa_mean(1, 4, np.inf, 0.3) == 4
    assert kappa_mean(1, 4, -np.inf, 0.3) == 1
    assert kappa_mean(0, 4, -1, 0.5) == 0.0
    assert kappa_mean(0, 4, 1, 0.5) == pytest.approx(2.0)


# dimensional Brunn-Minkowski

def test_dim_bm_gaussian_intervals_against_erf():
    rep = dim_bm_check(interval(1.0), interval(2.0), 0.5, mu=measure("gaussian", 1))
    exact = sqrt(g1(1.5)) - 0.5 * sqrt(g1(1.0)) - 0.5 * sqrt(g1(2.0))
    assert rep.margin == pytest.approx(exact, abs=1e-12)
    assert rep.verdict == "holds" and rep.theorem


def test_dim_bm_lebesgue_boxes():
    # Phi = 1, beta = 1: vol^{1/3} of boxes, 2 * (0.75*0.75*4)^{1/3} - (0.5*4)^{1/3} against box volumes
    rep = dim_bm_check(box([1.0, 0.5]), box([0.5, 1.0]), 0.5)
    exact = 2.25 ** (1 / 3) - 2.0 ** (1 / 3)
    assert rep.margin == pytest.approx(exact, abs=1e-10)
    assert rep.verdict == "holds"


def test_dim_bm_cap_inside_the_unit_ball():
    rep = dim_bm_check(ball(2, 0.5), ball(2, 1.0), 0.4, phi=quadratic_cap(1.0, n=2), beta=2.0)
    assert rep.margin >= -rep.tolerance


# Borell-Brascamp-Lieb

def test_prekopa_gaussians_hold_with_hypothesis():
    f, g = gaussian_bump([1.0], 1.0, 2.0), gaussian_bump([-2.0], 0.5, 0.5)
    h = prekopa_interpolant(f, g, 0.3)
    rep = bbl_check(f, g, h, 0.0, 0.3)
    assert rep.details["hypothesis"] == "pass"
    assert rep.verdict == "holds" and rep.theorem
    assert rep.margin > 0


def test_bbl_flags_a_failed_hypothesis_without_raising():
    f, g = indicator(interval(1.0), [0.0]), indicator(interval(1.0), [4.0])
    h = indicator(interval(0.1), [2.0])
    rep = bbl_check(f, g, h, 1.0, 0.5)
    assert rep.details["hypothesis"] == "HYPOTHESIS_FAIL"
    assert not rep.theorem


def test_bbl_rejects_bad_kappa():
    f = indicator(interval(1.0))
    with pytest.raises(LabError):
        bbl_check(f, f, f, -2.0, 0.5)


def test_bbl_counterexample_margins():
    # kappa = 1 in dimension 1 gives the mean with exponent 1/2; gamma([-1,1]+2M) is negligible
    M = 10.0
    rep = bbl_counterexample_check(M, 1, 1.0, 0.5)
    mass = lambda c: 0.5 * (erf((c + 1) / sqrt(2)) - erf((c - 1) / sqrt(2)))
    exact = mass(M) - (0.5 * sqrt(mass(0)) + 0.5 * sqrt(mass(2 * M))) ** 2
    assert rep.margin == pytest.approx(exact, abs=1e-10)
    assert rep.margin < 0
    assert rep.details["hypothesis"] == "pass"
    assert rep.details["untranslated_margin"] == pytest.approx(mass(0) - mass(M), abs=1e-10)
    assert not rep.theorem


def test_bbl_counterexample_confirmed_by_monte_carlo():
    f, g, h, mu, kappa, lam = bbl_counterexample(10.0, 1)
    rep = bbl_check(f, g, h, kappa, lam, mu, QuadratureSpec(mode="mc", mc_samples=400_000, seed=5))
    assert rep.verdict == "violated"


# Gaussian B-inequality, local form

@pytest.mark.parametrize("n", [1, 2, 3])
def test_b_local_saturates_for_gaussian(n):
    rep = b_local_margin(n=n)
    assert abs(rep.margin) < 1e-9
    assert rep.details["lhs"] == pytest.approx(2 * n, abs=1e-9)
    assert rep.verdict == "holds"


def test_b_local_with_an_even_potential():
    rep = b_local_margin(from_expression("x**4", 1))
    assert rep.margin == pytest.approx(0.455, abs=2e-3)
    assert rep.verdict == "holds"


# Brascamp-Lieb

def test_brascamp_lieb_gaussian_cases():
    assert abs(brascamp_lieb_margin(f=from_expression("x", 1)).margin) < 1e-10
    assert brascamp_lieb_margin(f=from_expression("x**2", 1)).margin == pytest.approx(2.0, abs=1e-10)


def test_brascamp_lieb_needs_strict_convexity():
    with pytest.raises(LabError) as e:
        brascamp_lieb_margin(from_expression("x**4", 1), from_expression("x", 1))
    assert e.value.code == "NOT_STRICTLY_LOGCONCAVE"


def test_brascamp_lieb_against_scipy():
    G, f = from_expression("x**2 + x**4", 1), from_expression("x**3", 1)
    rep = brascamp_lieb_margin(G, f)
    w = lambda x: np.exp(-x ** 2 - x ** 4)
    Z = quad(w, -np.inf, np.inf)[0]
    m1 = quad(lambda x: w(x) * x ** 3, -np.inf, np.inf)[0] / Z
    m2 = quad(lambda x: w(x) * x ** 6, -np.inf, np.inf)[0] / Z
    e = quad(lambda x: w(x) * 9 * x ** 4 / (2 + 12 * x ** 2), -np.inf, np.inf)[0] / Z
    assert rep.margin == pytest.approx(e - (m2 - m1 ** 2), abs=1e-9)


# Poincare-type inequality

def test_poincare_interval_against_scipy():
    phi = quadratic_cap(1.0, n=1)
    f = from_expression("x**2", 1)
    rep = poincare_margin(measure("lebesgue", 1), interval(1.0), phi, 2.0, f)
    P = lambda x: 1 - x * x
    Z = quad(lambda x: P(x) ** 2, -1, 1)[0]
    m1 = quad(lambda x: P(x) ** 2 * x ** 2, -1, 1)[0] / Z
    m2 = quad(lambda x: P(x) ** 2 * x ** 4, -1, 1)[0] / Z
    # g = x^2 (1 - x^2), g' = 2x - 4x^3, (-Phi'')^{-1} = 1/2
    en = quad(lambda x: P(x) * (2 * x - 4 * x ** 3) ** 2 / 2, -1, 1)[0] / Z
    exact = en + (1 / 3) * m1 ** 2 - (m2 - m1 ** 2)
    assert rep.margin == pytest.approx(exact, abs=1e-10)
    assert rep.margin == pytest.approx(0.0986, abs=1e-3)
    assert rep.verdict == "holds"


def test_poincare_is_invariant_under_scaling_phi():
    f = from_expression("x**2", 1)
    a = poincare_margin(measure("lebesgue", 1), interval(1.0), quadratic_cap(1.0, n=1), 2.0, f)
    b = poincare_margin(measure("lebesgue", 1), interval(1.0), concave_expression("3 - 3*x**2", 1), 2.0, f)
    assert a.margin == pytest.approx(b.margin, abs=1e-10)
    assert a.details["margin_hessian_form"] != pytest.approx(b.details["margin_hessian_form"], abs=1e-3)


def test_poincare_input_errors():
    f = from_expression("x", 1)
    with pytest.raises(LabError) as e:
        poincare_margin(measure("lebesgue", 1), interval(1.0), concave_expression("1 + x**2", 1), 2.0, f)
    assert e.value.code == "NOT_CONCAVE"
    with pytest.raises(LabError) as e:
        poincare_margin(measure("lebesgue", 1), interval(2.0), quadratic_cap(1.0, n=1), 2.0, f)
    assert e.value.code == "NOT_NONNEGATIVE"


# torsion

@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_torsion_interval(a):
    tau, sol = torsion_solve(interval(a))
    assert tau == pytest.approx(2 * a ** 3 / 3, rel=1e-12)
    assert sol.agreement < 1e-12


@pytest.mark.parametrize("R", [0.5, 1.0, 1.7])
def test_torsion_disc(R):
    tau, sol = torsion_solve(ball(2, R))
    assert tau == pytest.approx(np.pi * R ** 4 / 8, rel=1e-12)


def test_torsion_ball_three_dims():
    # u = (R^2 - r^2)/6, tau = 4 pi R^5 / 45
    tau, _ = torsion_solve(ball(3, 1.2))
    assert tau == pytest.approx(4 * np.pi * 1.2 ** 5 / 45, rel=1e-12)


def test_gaussian_torsion_against_a_bvp_solver():
    # u'' - x u' = -1 on [-1, 1], u(+-1) = 0, tau = int u dgamma_1
    s = np.linspace(-1, 1, 201)
    sol = solve_bvp(lambda x, y: np.vstack([y[1], x * y[1] - 1]), lambda a, b: np.array([a[0], b[0]]),
                    s, np.zeros((2, s.size)), tol=1e-12, max_nodes=100000)
    ref = quad(lambda x: sol.sol(x)[0] * np.exp(-x * x / 2) / np.sqrt(2 * np.pi), -1, 1, epsabs=1e-14)[0]
    tau, ts = torsion_solve(interval(1.0), measure("gaussian", 1))
    assert tau == pytest.approx(ref, abs=1e-9)
    assert ts.agreement < 1e-9


def test_torsion_rejects_general_bodies():
    with pytest.raises(LabError):
        torsion_solve(box([1.0, 2.0]))


def test_torsion_bm_homothets():
    rep = torsion_bm_check(interval(1.0), interval(3.0), 0.3)
    assert abs(rep.margin) <= 1e-9
    assert rep.verdict == "holds" and rep.theorem


def test_weighted_torsion_bm_is_exploratory():
    rep = torsion_bm_check(interval(1.0), interval(2.0), 0.5, measure("gaussian", 1))
    assert not rep.theorem
    assert rep.margin < 0


def test_torsion_sqrt_lebesgue():
    rep = torsion_sqrt_concavity(1.0, 2.0, lam_points=5, x_points=5)
    assert rep.verdict == "holds"


# lift

def test_lift_quadratic_cap():
    # nu_1([-1,1]) with Phi = 1 - x^2 is 4/3; with beta = 2 the mass is 16/15
    spec = QuadratureSpec(mc_samples=200_000, seed=1)
    rep = lift_check(interval(1.0), quadratic_cap(1.0, n=1), 2, spec=spec)
    assert rep.details["quadrature"] == pytest.approx(16 / 15, abs=1e-12)
    assert rep.verdict == "holds"


def test_lift_rejects_other_beta():
    with pytest.raises(LabError) as e:
        lift_check(interval(1.0), constant(1.0), 4)
    assert e.value.code == "UNSUPPORTED_BETA"
