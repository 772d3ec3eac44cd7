import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tensorvi import (
    BudgetExceeded,
    Phase,
    PointZ,
    RunTrace,
    SolverParams,
    bregman,
    norm_z,
    weighted_average,
)
from tensorvi.core import ceil_tol

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def vec(k):
    return arrays(np.float64, k, elements=finite)


def test_point_construction_rejects_bad_input():
    with pytest.raises(ValueError):
        PointZ([], [1.0])
    with pytest.raises(ValueError):
        PointZ([np.nan], [1.0])
    with pytest.raises(ValueError):
        PointZ([1.0], [np.inf])


def test_point_arithmetic():
    a = PointZ([1.0, 2.0], [3.0])
    b = PointZ([0.5, -1.0], [1.0])
    assert (a + b).allclose(PointZ([1.5, 1.0], [4.0]))
    assert (a - b).allclose(PointZ([0.5, 3.0], [2.0]))
    assert (2 * a).allclose(PointZ([2.0, 4.0], [6.0]))
    assert (-a).allclose(PointZ([-1.0, -2.0], [-3.0]))
    with pytest.raises(ValueError):
        a + PointZ([1.0], [1.0, 2.0])


def test_norm_and_bregman_values():
    z = PointZ([3.0], [4.0])
    assert norm_z(z) == 5.0
    assert bregman(z, PointZ.zeros(1, 1)) == 12.5


@given(st.integers(1, 4), st.integers(1, 4), st.data())
def test_bregman_is_half_squared_distance(n, m, data):
    x1, x2 = data.draw(vec(n)), data.draw(vec(n))
    y1, y2 = data.draw(vec(m)), data.draw(vec(m))
    z1, z2 = PointZ(x1, y1), PointZ(x2, y2)
    d = bregman(z1, z2)
    assert d >= 0
    assert d == pytest.approx(0.5 * norm_z(z1 - z2) ** 2, rel=1e-12, abs=1e-9)
    assert d == pytest.approx(bregman(z2, z1), rel=1e-12, abs=1e-12)
    assert bregman(z1, z1) == 0.0


@given(st.integers(1, 3), st.integers(1, 3), st.data())
def test_stacked_roundtrip(n, m, data):
    z = PointZ(data.draw(vec(n)), data.draw(vec(m)))
    assert PointZ.from_stacked(z.stacked(), n).allclose(z, rtol=0)
    assert PointZ.from_dict(z.to_dict()).allclose(z, rtol=0)


def test_weighted_average_values_and_errors():
    pts = [PointZ([0.0], [0.0]), PointZ([3.0], [6.0])]
    avg = weighted_average(pts, [2.0, 1.0])
    assert avg.allclose(PointZ([1.0], [2.0]))
    with pytest.raises(ValueError):
        weighted_average([], [])
    with pytest.raises(ValueError):
        weighted_average(pts, [1.0])
    with pytest.raises(ValueError):
        weighted_average(pts, [1.0, 0.0])
    with pytest.raises(ValueError):
        weighted_average(pts, [1.0, np.inf])


@settings(max_examples=50)
@given(st.lists(st.tuples(finite, finite, st.floats(1e-3, 1e3)), min_size=1, max_size=6))
def test_weighted_average_is_a_convex_combination(items):
    pts = [PointZ([a], [b]) for a, b, _ in items]
    w = [c for _, _, c in items]
    avg = weighted_average(pts, w)
    xs = [a for a, _, _ in items]
    ys = [b for _, b, _ in items]
    tol = 1e-9 * (1 + max(map(abs, xs + ys)))
    assert min(xs) - tol <= avg.x[0] <= max(xs) + tol
    assert min(ys) - tol <= avg.y[0] <= max(ys) + tol


def test_solver_params_validation_and_derived_values():
    prm = SolverParams(mu=1.0, l1=3.0, l2=2.0)
    assert prm.xi == 3.0
    assert prm.crn_gamma_bar == pytest.approx(2.0 / 18.0)
    assert SolverParams(mu=2.0, l1=1.0).xi == 1.0
    assert prm.replace(gamma_bar=0.5).crn_gamma_bar == 0.5
    for bad in ({"mu": 0.0, "l1": 1.0}, {"mu": 1.0, "l1": -1.0}, {"mu": 1.0, "l1": 1.0, "rho": 1.0},
                {"mu": 1.0, "l1": 1.0, "alpha": 0.0}, {"mu": 1.0, "l1": 1.0, "p": 0},
                {"mu": 1.0, "l1": 1.0, "eps_gap": 0.0}):
        with pytest.raises(ValueError):
            SolverParams(**bad)


def test_trace_budget_and_snapshots():
    tr = RunTrace(reference=PointZ([0.0], [0.0]), max_records=2)
    tr.counts["F"] = 3
    rec = tr.log(Phase.HOMP, 1, 1, 0.5, 2.0, PointZ([3.0], [4.0]))
    tr.counts["F"] = 7
    assert rec.oracle_calls_cumulative["F"] == 3
    assert rec.dist_to_ref == 5.0
    tr.log(Phase.CRN, 0, 1, 0.1, 1.0)
    with pytest.raises(BudgetExceeded):
        tr.log(Phase.CRN, 0, 2, 0.1, 1.0)
    assert tr.iterations(Phase.HOMP) == 1
    assert rec.to_dict()["phase"] == "HOMP"


def test_ceil_tol_absorbs_rounding():
    assert ceil_tol(64 ** (2 / 3)) == 16
    assert ceil_tol(16.0000001) == 17
    assert ceil_tol(2.5) == 3
    assert ceil_tol(math.log2(8.0)) == 3
