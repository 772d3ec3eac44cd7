import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorvi import BudgetExceeded, CubicSubproblem, PointZ, crn_run, crn_step, solve_cubic_subproblem
from tensorvi.core import RunTrace
from tensorvi.crn import CrnState, stationarity_residual
from tensorvi.problems import toy_quadratic

from conftest import instance


def test_zero_regularization_is_newton():
    q = toy_quadratic()
    sub = CubicSubproblem.build(q, PointZ([1.0], [1.0]), 0.0)
    # J d = -F: [[1, 1], [-1, 1]] d = -(2, 0)  ->  d = (-1, -1)
    assert solve_cubic_subproblem(sub).allclose(PointZ([-1.0], [-1.0]))


def test_zero_operator_gives_zero_step():
    q = toy_quadratic()
    sub = CubicSubproblem.build(q, PointZ([0.0], [0.0]), 3.0)
    d = solve_cubic_subproblem(sub)
    assert d.allclose(PointZ([0.0], [0.0]), atol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.floats(1e-3, 1e3), st.floats(1e-2, 10.0), st.integers(0, 10**6))
def test_cubic_subproblem_stationarity(seed, gamma, scale, pseed):
    inst = instance("smooth", seed, 5)
    z = inst.reference_solution + PointZ.from_stacked(
        scale * np.random.default_rng(pseed).standard_normal(10), 5)
    sub = CubicSubproblem.build(inst.oracle, z, gamma)
    d = solve_cubic_subproblem(sub).stacked()
    res = stationarity_residual(sub.f_k, sub.jac_k, gamma, d, 5)
    assert res <= 1e-12 * (1 + np.linalg.norm(sub.f_k))


def test_regularization_shortens_the_step():
    inst = instance("smooth", 2, 5)
    z = inst.z1
    lens = [np.linalg.norm(solve_cubic_subproblem(CubicSubproblem.build(inst.oracle, z, g)).stacked())
            for g in (0.0, 0.1, 1.0, 10.0)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(lens, lens[1:]))


def test_step_respects_backtracking_condition():
    inst = instance("smooth", 3, 5)
    prm = inst.params_for(2, gamma_bar=50.0)
    st_ = crn_step(inst.oracle, CrnState(inst.z1, 50.0), prm)
    assert st_.gamma_k < 50.0
    d = st_.z_k - inst.z1
    scale = 1.0 if not st_.damped else 1.0 / prm.alpha
    step = (np.linalg.norm(d.x) + np.linalg.norm(d.y)) * scale
    assert st_.gamma_k * step <= prm.mu * (1 + 1e-9)


def test_crn_quadratic_one_step():
    inst = instance("quadratic", 0, 6)
    prm = inst.params_for(2)
    tr = RunTrace(reference=inst.reference_solution)
    z = crn_run(inst.oracle, inst.z1, 1e-20, prm, tr)
    assert tr.records[0].dist_to_ref < 1e-10
    assert z.allclose(inst.reference_solution, atol=1e-10)


def test_crn_budget():
    inst = instance("smooth", 0, 5)
    with pytest.raises(BudgetExceeded):
        crn_run(inst.oracle, inst.z1 * 20.0, 1e-30, inst.params_for(2), max_iter=1)
    with pytest.raises(ValueError):
        crn_run(inst.oracle, inst.z1, 0.0, inst.params_for(2))


def test_crn_returns_immediately_at_solution():
    inst = instance("smooth", 0, 5)
    tr = RunTrace()
    z = crn_run(inst.oracle, inst.reference_solution, 1e-10, inst.params_for(2), tr)
    assert z is inst.reference_solution and not tr.records
