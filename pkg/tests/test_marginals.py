import numpy as np
import pytest
import sympy as sp

from bmlab.errors import LabError
from bmlab.fields import from_expression
from bmlab.geometry import (constant, interval, minkowski_path, quadratic_cap,
                            sqrt_quadratic_profile, ball)
from bmlab.marginals import (ConvexQuadratic, JointPotential, MarginalProblem, b_profile_check,
                             concavity_report, kappa_condition_margin, kappa_n, log_marginal_alpha,
                             negative_exponent_report, phi_eval, second_difference_report)
from bmlab.measures import measure


def disc_problem():
    return MarginalProblem(sqrt_quadratic_profile(1, 1.0, 0.0, 1.0), quadratic_cap(2.0, np.eye(1), n=1, a=1.0),
                           measure("lebesgue", 1), 1.0)


def disc_phi_closed_form():
    t = sp.Symbol("t")
    r = sp.sqrt(1 - t ** 2)
    return sp.sqrt(2 * r * (2 - t ** 2) - 2 * r ** 3 / 3), t


def test_kappa_n_conventions():
    assert kappa_n(1.0, 2) == pytest.approx(1 / 3)
    assert kappa_n(np.inf, 3) == pytest.approx(1 / 3)
    assert kappa_n(-0.5, 2) == -np.inf
    assert kappa_n(0.0, 2) == 0.0


def test_disc_marginal_matches_closed_form():
    P = disc_problem()
    F, t = disc_phi_closed_form()
    for s in (0.0, 0.3, -0.7):
        assert phi_eval(P, s) == pytest.approx(float(F.subs(t, s)), rel=1e-12)
    assert phi_eval(P, 0.0) == pytest.approx(np.sqrt(10 / 3), rel=1e-14)


def test_disc_profile_is_concave_with_support():
    wide = MarginalProblem(sqrt_quadratic_profile(1, 1.0, 0.0, 1.0, t_range=(-1.2, 1.2)),
                           quadratic_cap(2.0, np.eye(1), n=1, a=1.0), measure("lebesgue", 1), 1.0)
    rep = concavity_report(wide, np.linspace(-1.2, 1.2, 13))
    assert rep.verdict == "concave"
    assert rep.support == pytest.approx([-1.0, 1.0], abs=1e-8)
    F, t = disc_phi_closed_form()
    i = rep.t.index(0.0) if 0.0 in rep.t else int(np.argmin(np.abs(rep.t)))
    exact = float(((F.subs(t, 0.2) - 2 * F.subs(t, 0) + F.subs(t, -0.2)) / 0.04).evalf())
    assert rep.d2[i] == pytest.approx(exact, rel=1e-10)


def test_constant_profile_has_zero_second_differences():
    P = MarginalProblem(minkowski_path(interval(1.0), interval(1.0)), constant(1.0), measure("lebesgue", 1), 1.0)
    rep = concavity_report(P, np.linspace(0, 1, 5))
    assert all(abs(v) < 1e-12 for v in rep.d2 if v is not None)
    assert rep.verdict == "concave"


def test_grid_validation():
    P = disc_problem()
    with pytest.raises(LabError) as e:
        concavity_report(P, [0.0, 0.1])
    assert e.value.code == "TOO_FEW_POINTS"
    with pytest.raises(LabError):
        concavity_report(P, [0.0, 0.1, 0.3])


def test_convex_profile_is_flagged():
    def evaluate(s):
        return s * s, 1e-15, False
    rep = second_difference_report("x2", evaluate, np.linspace(-1, 1, 7))
    assert rep.verdict == "violated"
    assert rep.max_d2 == pytest.approx(2.0)


def test_problem_validation():
    fam = sqrt_quadratic_profile(1, 1.0, 0.0, 1.0)
    with pytest.raises(LabError):
        MarginalProblem(fam, quadratic_cap(2.0), measure("lebesgue", 1), -1.0)
    with pytest.raises(LabError):
        MarginalProblem(fam, quadratic_cap(2.0), measure("lebesgue", 1), 1.0, gamma=2.0)
    with pytest.raises(LabError) as e:
        MarginalProblem(fam, quadratic_cap(2.0), measure("lebesgue", 2), 1.0)
    assert e.value.code == "GRID_MISMATCH"


def test_log_alpha_of_scaled_gaussian():
    # alpha(t) = int e^{-e^{2t} x^2/2} dgamma_1 = (1 + e^{2t})^{-1/2}
    V = JointPotential(from_expression("x**2/2", 1), s=1.0)
    t = np.linspace(-1, 1, 9)
    rep = log_marginal_alpha(V, measure("gaussian", 1), t)
    assert np.allclose(rep.values, -0.5 * np.log1p(np.exp(2 * t)), atol=1e-12)
    assert rep.verdict == "concave"


def test_log_alpha_rejects_odd_potentials():
    V = JointPotential(from_expression("x**2/2 + x", 1), s=0.0)
    with pytest.raises(LabError) as e:
        log_marginal_alpha(V, measure("gaussian", 1), np.linspace(0, 1, 5))
    assert e.value.code == "NOT_EVEN"


def test_kappa_condition_for_a_convex_potential():
    V = JointPotential(from_expression("x**2/2 + y**2", 2), a=1.0, s=0.0)
    m, _ = kappa_condition_margin(V, 0.0, (-1, 1))
    assert m == pytest.approx(1.0)


def test_b_profile_of_the_gaussian_interval():
    rep = b_profile_check(interval(1.0), measure("gaussian", 1), np.linspace(-1, 1, 9))
    assert rep.values[4] == pytest.approx(np.log(0.6826894921370859), abs=1e-12)
    assert rep.verdict == "concave"


def test_b_profile_in_the_plane():
    rep = b_profile_check(ball(2, 1.0), measure("gaussian", 2), np.linspace(-1, 1, 9))
    assert np.allclose(rep.values, np.log(1 - np.exp(-np.exp(2 * np.linspace(-1, 1, 9)) / 2)), atol=1e-11)
    assert rep.verdict == "concave"


def test_negative_exponent_profile_values():
    # Psi = 1 + x^2 on [-1, 1]: int Psi^{-2} = 1/2 + pi/4, exponent -1/(2-1)
    fam = minkowski_path(interval(1.0), interval(1.0))
    rep = negative_exponent_report(fam, ConvexQuadratic(1.0), 2.0, measure("lebesgue", 1), np.linspace(0, 1, 5))
    assert rep.values[0] == pytest.approx(-1 / (0.5 + np.pi / 4), rel=1e-12)
    with pytest.raises(LabError):
        negative_exponent_report(fam, ConvexQuadratic(1.0), 0.5, measure("lebesgue", 1), np.linspace(0, 1, 5))
