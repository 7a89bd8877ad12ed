import numpy as np
import pytest
import sympy as sp

from bmlab.errors import LabError
from bmlab.fields import from_expression, half_square_norm, zero_field
from bmlab.geometry import ball, from_expression as concave_expression, quadratic_cap, sqrt_quadratic_profile
from bmlab.marginals import MarginalProblem, phi_eval
from bmlab.measures import measure
from bmlab.variation import (BoundaryKinematics, ball_geometry, bochner_terms, hereditary_margin,
                             interval_geometry, level_set_delta, second_variation_terms, solve_neumann,
                             spectral_margin)


def zero(s):
    return np.zeros_like(np.asarray(s, dtype=float))


def disc_problem():
    return MarginalProblem(sqrt_quadratic_profile(1, 1.0, 0.0, 1.0), quadratic_cap(2.0, np.eye(1), n=1, a=1.0),
                           measure("lebesgue", 1), 1.0)


def disc_phi_dd(t0):
    t = sp.Symbol("t")
    r = sp.sqrt(1 - t ** 2)
    F = sp.sqrt(2 * r * (2 - t ** 2) - 2 * r ** 3 / 3)
    return float(sp.diff(F, t, 2).subs(t, t0).evalf(30))


# Neumann solver

def test_neumann_interval_polynomial():
    # u'' = x on [-1, 1] with zero outward data gives u' = (x^2 - 1)/2
    geo = interval_geometry(1.0)
    sol = solve_neumann(zero, zero, lambda s: np.asarray(s, float), (0.0, 0.0), geo)
    s = np.linspace(-1, 1, 11)
    assert np.allclose(sol.du_fn(s), s ** 2 / 2 - 0.5, atol=1e-13)
    assert np.allclose(sol.boundary_derivative, (0.0, 0.0), atol=1e-13)
    assert sol.residual < 1e-8


def test_neumann_interval_nonzero_data():
    # u = x^2/2: u'' = 1, outward derivative 1 at both ends, compatible since 2 = 2
    sol = solve_neumann(zero, zero, lambda s: np.ones_like(np.asarray(s, float)), (1.0, 1.0), interval_geometry(1.0))
    s = np.linspace(-1, 1, 9)
    assert np.allclose(sol.du_fn(s), s, atol=1e-13)
    assert np.allclose(sol.u, sol.s ** 2 / 2, atol=1e-12)


def test_neumann_gaussian_weight():
    # u = x^2/2 with G = x^2/2: u'' - x u' = 1 - x^2
    G = lambda s: np.asarray(s, float) ** 2 / 2
    dG = lambda s: np.asarray(s, float)
    sol = solve_neumann(G, dG, lambda s: 1 - np.asarray(s, float) ** 2, (1.5, 1.5), interval_geometry(1.5))
    s = np.linspace(-1.5, 1.5, 7)
    assert np.allclose(sol.du_fn(s), s, atol=1e-11)
    assert sol.residual < 1e-7


def test_neumann_ball():
    # u = |x|^2/2 in the unit ball of R^3: Laplacian 3, outward derivative 1
    geo = ball_geometry(3, 1.0)
    sol = solve_neumann(zero, zero, lambda s: 3 * np.ones_like(np.asarray(s, float)), 1.0, geo)
    s = np.linspace(0.1, 1, 7)
    assert np.allclose(sol.du_fn(s), s, atol=1e-12)
    assert np.allclose(sol.d2u_fn(s), 1.0, atol=1e-10)


def test_incompatible_neumann_data():
    with pytest.raises(LabError) as e:
        solve_neumann(zero, zero, lambda s: np.ones_like(np.asarray(s, float)), (0.0, 0.0), interval_geometry(1.0))
    assert e.value.code == "INCOMPATIBLE_DATA"


def test_geometry_validation():
    with pytest.raises(LabError):
        ball_geometry(2, -1.0)


# second variation on the disc

def test_disc_terms_at_zero():
    T = second_variation_terms(disc_problem(), 0.0)
    assert T["rhs"] == pytest.approx(-9 / 5, abs=1e-10)
    assert T["T1"] == pytest.approx(-1.2, abs=1e-12)
    assert T["T10"] == pytest.approx(-0.6, abs=1e-12)
    P = disc_problem()
    phi_dd = P.gamma * phi_eval(P, 0.0) * T["rhs"]
    assert phi_dd == pytest.approx(-0.9 * np.sqrt(10 / 3), abs=1e-10)
    assert phi_dd == pytest.approx(disc_phi_dd(0.0), abs=1e-10)


def test_disc_off_center_formula_and_direct_route():
    P = disc_problem()
    T = second_variation_terms(P, 0.5)
    exact = disc_phi_dd(0.5)
    assert exact == pytest.approx(-2.1690393068, abs=1e-9)
    phi = phi_eval(P, 0.5)
    assert P.gamma * phi * T["rhs"] == pytest.approx(exact, abs=1e-8)
    assert T["direct"] == pytest.approx(T["rhs"], abs=1e-8)
    # the form without the boundary transport of the density misses it here
    assert abs(P.gamma * phi * T["rhs_without_transport"] - exact) > 1e-2
    assert T["transport"] + T["T9"] == pytest.approx(0.0, abs=1e-14)


def test_radial_ball_matches_finite_differences():
    # ellipsoid of revolution over the unit disc in R^2 with a gaussian weight
    fam = sqrt_quadratic_profile(2, 1.0, 0.0, 1.0)
    P = MarginalProblem(fam, quadratic_cap(2.0, np.eye(2), n=2, a=0.5), measure("gaussian", 2), 2.0)
    t0, h = 0.3, 1e-3
    T = second_variation_terms(P, t0)
    v = [phi_eval(P, t0 + k * h) for k in (-2, -1, 0, 1, 2)]
    fd = (-v[0] + 16 * v[1] - 30 * v[2] + 16 * v[3] - v[4]) / (12 * h * h)
    assert P.gamma * v[2] * T["rhs"] == pytest.approx(fd, abs=1e-5 * (1 + abs(fd)))
    assert T["direct"] == pytest.approx(T["rhs"], abs=1e-7 * (1 + abs(T["rhs"])))


def test_kinematics_need_a_profile():
    from bmlab.geometry import box, minkowski_path
    fam = minkowski_path(box([1.0, 1.0]), box([1.0, 2.0]))
    with pytest.raises(LabError) as e:
        BoundaryKinematics.from_family(fam, 0.5)
    assert e.value.code == "MISSING_KINEMATICS"


def test_level_set_delta():
    # Phi(t, x) = 1 - t^2 - x^2 vanishes on |x| = r(t) = sqrt(1 - t^2)
    phi = concave_expression("1 - t**2 - x**2", 1)
    kin = BoundaryKinematics.from_family(sqrt_quadratic_profile(1, 1.0, 0.0, 1.0), 0.6)
    y = kin.radius
    assert level_set_delta(phi, kin, [y]) == pytest.approx(2 * y)
    with pytest.raises(LabError) as e:
        level_set_delta(concave_expression("1 - t - x**2", 1), kin, [y])
    assert e.value.code == "LEVELSET_MISMATCH"


# Bochner identity

BOCHNER_U = {1: ["x**2", "x**4 - x", "x**3 + 2*x**2 - x + 1"],
             2: ["x**2 + 3*y**2", "x*y + x**3", "x**4 + x**2*y**2 - y**3 + x"]}


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("gaussian", [False, True])
def test_bochner_identity_for_polynomials(n, gaussian):
    geo = interval_geometry(1.3) if n == 1 else ball_geometry(2, 1.3)
    V = half_square_norm(n) if gaussian else zero_field(n)
    for expr in BOCHNER_U[n]:
        T = bochner_terms(V, from_expression(expr, n), geo)
        assert abs(T["residual"]) <= 1e-8 * T["scale"], expr


def test_bochner_detects_a_missing_term():
    T = bochner_terms(zero_field(2), from_expression("x**3 + y**2*x", 2), ball_geometry(2, 1.0))
    assert abs(T["lhs"] - (T["rhs"] - T["cross"])) > 1e-3


# hereditary and spectral margins

def test_hereditary_margin_gaussian_is_nonnegative():
    mu = measure("gaussian", 2)
    for expr in ["x**2 + y**2", "x**4 + x*y", "x**2*y**2"]:
        assert hereditary_margin(mu, from_expression(expr, 2)) >= -1e-9


def test_hereditary_margin_vanishes_on_the_quadratic():
    # with zero potential u = |x|^2/2 saturates the Cauchy-Schwarz step: n - n^2/n
    m = hereditary_margin(zero_field(2), half_square_norm(2), body=ball(2, 1.0))
    assert abs(m) < 1e-10
    # under gamma_2 the same u leaves 2 int |x|^2 dnu
    g = hereditary_margin(measure("gaussian", 2), half_square_norm(2), body=ball(2, 1.0))
    assert g > 0.5


def test_spectral_margin_and_evenness():
    mu = measure("gaussian", 1)
    # int v''^2 - int v'^2 with v = x^2 under gamma_1: 4 - 4 = 0
    assert spectral_margin(mu, from_expression("x**2", 1)) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(LabError) as e:
        spectral_margin(mu, from_expression("x**3", 1))
    assert e.value.code == "NOT_EVEN"
