import json

import numpy as np
import pytest

from bmlab.errors import LabError
from bmlab.fields import asymmetry, field_from_spec, from_expression, half_square_norm, ridge_potential
from bmlab.reports import (CheckReport, ProfileReport, SearchReport, dumps, report_from_json, report_to_csv,
                           report_to_json)


def test_expression_derivatives():
    f = from_expression("x**2*y + sin(y)", 2)
    x = np.array([[0.5, 1.0]])
    assert np.allclose(f.grad(x), [[1.0, 0.25 + np.cos(1.0)]])
    assert np.allclose(f.hess(x), [[[2.0, 1.0], [1.0, -np.sin(1.0)]]])


def test_bad_expression():
    with pytest.raises(LabError) as e:
        from_expression("x + w", 1)
    assert e.value.code == "BAD_EXPRESSION"


def test_ridge_potential_is_even_and_convex():
    V = ridge_potential(2, [(1.0, np.eye(2))], [(0.5, [1.0, 1.0], 3.0, 0.0), (1.0, [0.0, 1.0], 1.5, 0.0)])
    pts = np.random.default_rng(1).normal(size=(200, 2))
    assert asymmetry(V, pts) <= 1e-12
    assert np.min(np.linalg.eigvalsh(V.hess(pts))) >= 0
    again = field_from_spec(V.spec)
    assert np.allclose(again.value(pts), V.value(pts))


def test_half_square_norm():
    f = half_square_norm(3)
    x = np.array([1.0, 2.0, 2.0])
    assert f(x) == pytest.approx(4.5)
    assert np.allclose(f.laplacian(x), 3.0)


def test_dumps_is_sorted_with_full_precision():
    text = dumps({"b": 0.1, "a": [1, 2.5], "c": float("inf")})
    assert text.index('"a"') < text.index('"b"')
    assert "0.10000000000000001" in text
    assert "Infinity" in text


def test_reports_round_trip():
    reps = [
        CheckReport("x", -0.25, 1e-10, "violated", {"K": [1.0]}, False, {"note": "n"}),
        ProfileReport("p", [0.0, 1.0, 2.0], [1.0, 1.0, 1.0], [None, 0.0, None], [None, 0.0, None],
                      [None, 1e-12, None], 0.0, 1.0, 0.0, "concave"),
        SearchReport("dim_bm", 3, 2, 1, True, 0.1, 1, {"target": "dim_bm"}, [1] * 64,
                     list(np.linspace(0, 1, 65)), [0.2, 0.1], 1e-10, "holds"),
    ]
    for r in reps:
        assert report_from_json(report_to_json(r)) == r
        json.loads(report_to_json(r))


def test_profile_csv_columns():
    r = ProfileReport("p", [0.0, 1.0, 2.0], [3.0, 3.0, 3.0], [None, 0.0, None], [None, 0.0, None],
                      [None, 1e-12, None], 0.0, 1.0, 0.0, "concave")
    lines = report_to_csv(r).splitlines()
    assert lines[0] == "t,value,d2,d2_half,tolerance"
    assert lines[2].split(",")[2] == "0.0"
