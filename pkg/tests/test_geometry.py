import numpy as np
import pytest

from bmlab.errors import LabError
from bmlab.geometry import (ball, body_from_spec, box, concave_from_spec, concavity_defect, constant,
                            direction_grid, ellipsoid, evenness_defect, interval, minkowski_combine,
                            minkowski_path, polytope, power_cap, quadratic_cap, section_body,
                            sqrt_quadratic_profile, sublinearity_defect, whole_space)


@pytest.mark.parametrize("n, total", [(1, 2.0), (2, 2 * np.pi), (3, 4 * np.pi)])
def test_direction_grid_weights_sum_to_sphere_area(n, total):
    g = direction_grid(n)
    assert g.weights.sum() == pytest.approx(total, rel=1e-12)
    assert np.allclose(g.directions[g.antipode], -g.directions)


def test_ball_support_and_radial_functions():
    B = ball(3, 1.5)
    d = direction_grid(3).directions[:50]
    assert np.allclose(B.h(d), 1.5)
    assert np.allclose(B.rho(d), 1.5)
    assert B.gauge(np.array([0.75, 0.0, 0.0])) == pytest.approx(0.5)


def test_box_rho_hits_the_faces():
    K = box([1.0, 2.0])
    th = np.array([[1.0, 0.0], [0.0, 1.0], [np.sqrt(0.5), np.sqrt(0.5)]])
    assert np.allclose(K.rho(th), [1.0, 2.0, np.sqrt(2.0)])
    assert np.allclose(K.h(th), [1.0, 2.0, 3 * np.sqrt(0.5)])


def test_minkowski_of_balls_is_a_ball():
    M = minkowski_combine(ball(2, 1.0), ball(2, 3.0), 0.25)
    assert M.kind == "ball"
    assert M.max_radius() == pytest.approx(2.5)


def test_minkowski_of_boxes_adds_half_widths():
    M = minkowski_combine(box([1.0, 2.0]), box([3.0, 0.5]), 0.5)
    assert np.allclose(M.half_widths(), [2.0, 1.25])


def test_minkowski_support_is_linear():
    K, L = ellipsoid([1.0, 0.4]), polytope([[1, 1], [-1, 0.2], [0.3, -1]])
    M = minkowski_combine(K, L, 0.3)
    d = direction_grid(2).directions[::37]
    assert np.allclose(M.h(d), 0.3 * K.h(d) + 0.7 * L.h(d), atol=1e-9)


@pytest.mark.parametrize("spec", [
    {"kind": "interval", "half_width": 0.7},
    {"kind": "ball", "radius": 1.2, "dimension": 2},
    {"kind": "box", "half_widths": [1.0, 2.0, 0.5]},
    {"kind": "ellipsoid", "semi_axes": [1.0, 0.3]},
])
def test_body_spec_round_trip(spec):
    K = body_from_spec(spec)
    again = body_from_spec(K.to_spec())
    d = K.grid.directions[::7]
    assert np.allclose(K.rho(d), again.rho(d))


def test_support_functions_are_sublinear():
    for K in (ball(2, 1.0), box([1.0, 0.2]), ellipsoid([0.5, 1.0, 2.0])):
        assert sublinearity_defect(K) <= 1e-9


def test_whole_space_has_infinite_radius():
    assert np.isinf(whole_space(2).max_radius())


def test_sqrt_quadratic_profile_gives_the_disc():
    fam = sqrt_quadratic_profile(1, 1.0, 0.0, 1.0)
    assert (fam.t_lo, fam.t_hi) == pytest.approx((-1.0, 1.0))
    assert section_body(fam, 0.6).max_radius() == pytest.approx(0.8)
    assert fam.dradius(0.6) == pytest.approx(-0.75)
    with pytest.raises(LabError) as e:
        section_body(fam, 1.5)
    assert e.value.code == "OUT_OF_RANGE"


def test_minkowski_path_endpoints():
    fam = minkowski_path(interval(1.0), interval(3.0))
    assert section_body(fam, 1.0).max_radius() == pytest.approx(1.0)
    assert section_body(fam, 0.0).max_radius() == pytest.approx(3.0)


def test_quadratic_cap_values_and_derivatives():
    phi = quadratic_cap(2.0, np.eye(2), a=1.0, b=0.5)
    x = np.array([[0.3, -0.4]])
    assert phi.value(x, 0.2) == pytest.approx(2.0 + 0.1 - 0.04 - 0.25)
    assert np.allclose(phi.grad_x(x, 0.2), -2 * x)
    assert np.allclose(phi.hess_x(x, 0.2), -2 * np.eye(2))
    assert phi.d_t(x, 0.2) == pytest.approx(0.5 - 0.4)
    assert phi.d_tt(x, 0.2) == pytest.approx(-2.0)


def test_quadratic_cap_rejects_indefinite_forms():
    with pytest.raises(LabError) as e:
        quadratic_cap(1.0, [[1.0, 0.0], [0.0, -1.0]])
    assert e.value.code == "NOT_CONCAVE"


def test_concave_spec_round_trip_and_checks():
    for phi in (quadratic_cap(1.0, [[2.0, 0.3], [0.3, 1.0]]), power_cap(3.0, 1.5, n=2), constant(2.0, 2)):
        again = concave_from_spec(phi.to_spec())
        x = np.random.default_rng(0).uniform(-0.5, 0.5, (20, 2))
        assert np.allclose(phi.value(x), again.value(x))
        assert evenness_defect(phi, x) <= 1e-14
        assert concavity_defect(phi, -np.ones(2), np.ones(2)) <= 1e-12
