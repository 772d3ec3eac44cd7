import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorvi import PointZ, SolverParams, find_gamma, homp_run, implicit_step
from tensorvi.core import bregman
from tensorvi.homp import _find_gamma_arrays, bracket_bounds
from tensorvi.problems import toy_quadratic

from conftest import instance

ONE_ONE = PointZ([1.0], [1.0])


def test_implicit_step_values_on_toy():
    q = toy_quadratic()
    # (I + J/2) d = -(1, 0)  ->  d = (-0.6, -0.2)
    assert implicit_step(q, ONE_ONE, 0.5, 2).allclose(PointZ([0.4], [0.8]))
    assert implicit_step(q, ONE_ONE, 0.25, 1).allclose(PointZ([0.5], [1.0]))
    with pytest.raises(ValueError):
        implicit_step(q, ONE_ONE, 0.0, 2)
    with pytest.raises(NotImplementedError):
        implicit_step(q, ONE_ONE, 0.1, 3)


def test_first_order_step_size_closed_form():
    prm = SolverParams(mu=1.0, l1=2.0, lp=2.0, p=1)
    gamma, z_hat = find_gamma(toy_quadratic(), ONE_ONE, prm)
    assert gamma == 1.0 / 32.0
    assert z_hat.allclose(PointZ([1 - 1.0 / 16.0], [1.0]))


def test_single_first_order_iteration_output():
    prm = SolverParams(mu=1.0, l1=2.0, lp=2.0, p=1)
    res = homp_run(toy_quadratic(), ONE_ONE, 1, 1, prm)
    assert res.point.allclose(PointZ([1 - 1.0 / 16.0], [1.0]))
    assert res.gamma_total == 1.0 / 32.0


def test_bracket_bounds():
    lo, hi = bracket_bounds(2, 4.0, 0.5)
    assert lo == pytest.approx(2 / (32 * 2.0)) and hi == pytest.approx(2 / (16 * 2.0))
    assert bracket_bounds(2, 1.0, 0.0) == (math.inf, math.inf)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.floats(1e-3, 10.0), st.integers(0, 10**6))
def test_second_order_gamma_satisfies_bracket(seed, scale, pseed):
    inst = instance("smooth", seed, 6)
    prm = inst.params_for(2)
    rng = np.random.default_rng(pseed)
    z = inst.reference_solution.stacked() + scale * rng.standard_normal(12)
    f = inst.oracle.operator(z)
    res = _find_gamma_arrays(z, f, inst.oracle.jacobian_f(z), prm, None)
    if res.degenerate is None:
        lo, hi = bracket_bounds(2, prm.lp, res.step_norm)
        assert lo * (1 - 1e-8) <= res.gamma <= hi * (1 + 1e-8)
    else:
        assert res.gamma == prm.gamma_max
    # the returned point solves the linearized implicit equation
    d = res.z_hat - z
    model = f + inst.oracle.jacobian_f(z) @ d
    assert np.linalg.norm(res.gamma * model + d) <= 1e-9 * (1 + res.gamma) * (1 + np.linalg.norm(f))


def test_fixed_point_stays_put():
    inst = instance("smooth", 0, 5)
    res = homp_run(inst.oracle, inst.reference_solution, 2, 5, inst.params_for(2))
    assert res.point.allclose(inst.reference_solution, atol=1e-12)


@pytest.mark.parametrize("family,p", [("smooth", 2), ("smooth", 1), ("quadratic", 1)])
def test_residual_bound_and_progress(family, p):
    inst = instance(family, 1, 6)
    prm = inst.params_for(p)
    zs = inst.reference_solution
    T = 25
    res = homp_run(inst.oracle, inst.z1, p, T, prm, reference=zs)
    bound = 16 * prm.lp / math.factorial(p) * (bregman(zs, inst.z1) / T) ** ((p + 1) / 2)
    assert res.weighted_residual <= bound + 1e-9
    assert len(res.gammas) == T
    assert bregman(res.point, zs) < bregman(inst.z1, zs)


def test_invalid_iteration_count():
    with pytest.raises(ValueError):
        homp_run(toy_quadratic(), ONE_ONE, 1, 0, SolverParams(mu=1.0, l1=2.0, lp=2.0, p=1))
