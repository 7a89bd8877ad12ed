import numpy as np
import pytest
from scipy.special import erf

from bmlab.errors import LabError
from bmlab.geometry import ball, box, interval, polytope, quadratic_cap, whole_space
from bmlab.integrate import QuadratureSpec, integrate_body, measure_body, weighted_power_mass
from bmlab.measures import measure

MC = QuadratureSpec(mode="mc", mc_samples=400_000, seed=3)


def test_gaussian_interval_mass():
    est = measure_body(interval(1.0), measure("gaussian", 1))
    assert est.value == pytest.approx(erf(1 / np.sqrt(2)), abs=1e-12)
    assert est.error_estimate < 1e-10


def test_gaussian_disc_mass():
    est = measure_body(ball(2, 1.0), measure("gaussian", 2))
    assert est.value == pytest.approx(1 - np.exp(-0.5), abs=1e-12)


@pytest.mark.parametrize("K, vol", [
    (box([1.0, 0.5]), 2.0),
    (ball(3, 2.0), 32 * np.pi / 3),
    (polytope([[1, 0], [0, 1], [-1, 0], [0, -1]]), 2.0),
])
def test_lebesgue_volumes(K, vol):
    assert measure_body(K, measure("lebesgue", K.n)).value == pytest.approx(vol, rel=1e-9)


def test_whole_space_gaussian_is_a_probability():
    for n in (1, 2, 3):
        est = integrate_body(whole_space(n), 1.0, measure("gaussian", n))
        assert est.value == pytest.approx(1.0, abs=1e-10)


def test_second_moment_over_whole_space():
    est = integrate_body(whole_space(2), lambda x: np.sum(x * x, axis=-1), measure("gaussian", 2))
    assert est.value == pytest.approx(2.0, abs=1e-10)


def test_power_mass_of_a_parabola():
    # int_{-1}^{1} (1 - x^2)^2 dx = 16/15
    est = weighted_power_mass(interval(1.0), quadratic_cap(1.0), 2.0)
    assert est.value == pytest.approx(16 / 15, rel=1e-13)


def test_fractional_power_uses_boundary_nodes():
    # int_{-1}^{1} (1 - x^2)^{1/2} dx = pi/2
    est = weighted_power_mass(interval(1.0), quadratic_cap(1.0), 0.5)
    assert est.value == pytest.approx(np.pi / 2, rel=1e-10)


def test_negative_phi_is_rejected():
    with pytest.raises(LabError) as e:
        weighted_power_mass(interval(2.0), quadratic_cap(1.0), 1.0)
    assert e.value.code == "NOT_NONNEGATIVE"


@pytest.mark.parametrize("K, mu", [
    (interval(1.0), measure("gaussian", 1)),
    (ball(2, 1.0), measure("gaussian", 2)),
    (box([1.0, 0.5, 0.7]), measure("power", 3, alpha=2.0)),
])
def test_polar_and_monte_carlo_agree(K, mu):
    a = measure_body(K, mu)
    b = measure_body(K, mu, MC)
    assert abs(a.value - b.value) <= 4 * (a.error_estimate + b.error_estimate)


def test_monte_carlo_is_reproducible():
    a = measure_body(ball(2, 1.0), measure("gaussian", 2), MC)
    b = measure_body(ball(2, 1.0), measure("gaussian", 2), MC)
    assert a.value == b.value


def test_bad_quadrature_mode():
    with pytest.raises(LabError):
        QuadratureSpec(mode="simpson")
