import json

import numpy as np
import pytest

from tensorvi import PointZ, QuadraticSaddle, estimate_r0, generate_instance, quadratic_exact_solution
from tensorvi.core import norm_z
from tensorvi.problems import (
    FaultyOracle,
    instance_from_json,
    instance_to_json,
    newton_reference,
    verify_instance,
)

from conftest import brute_gap, instance


def test_exact_solution_small_quadratic():
    # g = x^2/2 + xy - y^2/2 + x: F = (x + y + 1, y - x) = 0 at (-1/2, -1/2)
    q = QuadraticSaddle([[1.0]], [[1.0]], [[1.0]], [1.0], [0.0])
    assert quadratic_exact_solution(q).allclose(PointZ([-0.5], [-0.5]))


def test_generation_is_deterministic():
    a = generate_instance("quadratic", 11, 4, 3, 0.5)
    b = generate_instance("quadratic", 11, 4, 3, 0.5)
    np.testing.assert_array_equal(a.oracle.A, b.oracle.A)
    np.testing.assert_array_equal(a.z1.stacked(), b.z1.stacked())
    assert a.label == "quadratic-s11-n4-m3-mu0.5"


def test_quadratic_spectrum_attains_mu():
    inst = generate_instance("quadratic", 3, 6, 4, 0.25)
    assert inst.oracle.strong_convexity() == pytest.approx(0.25, rel=1e-10)
    assert inst.params.l1 == pytest.approx(np.linalg.norm(inst.oracle.jacobian_f(np.zeros(10)), 2))
    assert inst.params.l2 == 0.0


def test_smooth_declared_l2_dominates_samples():
    inst = instance("smooth", 0, 10)
    assert inst.params.l2 == pytest.approx(2.0)
    assert inst.meta["l2_sampled"] <= inst.params.l2


def test_reference_solutions_are_stationary():
    for family in ("quadratic", "smooth"):
        inst = instance(family, 4, 6)
        f = inst.oracle.operator(inst.reference_solution.stacked())
        assert np.linalg.norm(f) <= 1e-10


def test_newton_reference_matches_exact_on_quadratic():
    inst = instance("quadratic", 2, 5)
    assert newton_reference(inst.oracle).allclose(inst.reference_solution, atol=1e-10)


def test_quadratic_gap_matches_brute_force(rng):
    q = instance("quadratic", 1, 5).oracle
    for _ in range(10):
        z = rng.standard_normal(10)
        assert q.duality_gap(z) == pytest.approx(brute_gap(q, z), rel=1e-9, abs=1e-10)


def test_estimate_r0():
    inst = instance("quadratic", 0, 3)
    d = norm_z(inst.z1 - inst.reference_solution)
    assert estimate_r0(inst, inst.z1) == pytest.approx(1.1 * d)
    assert estimate_r0(inst, inst.z1, 5.0) == 5.0
    assert estimate_r0(inst, inst.reference_solution) == 1e-12
    with pytest.raises(ValueError):
        estimate_r0(inst, inst.z1, -1.0)


def test_params_for_picks_lp():
    inst = instance("smooth", 0, 4)
    assert inst.params_for(1).lp == inst.params.l1
    assert inst.params_for(2).lp == inst.params.l2
    assert instance("quadratic", 0, 4).params_for(2).lp == 1e-3


@pytest.mark.parametrize("family", ["quadratic", "smooth"])
def test_json_roundtrip(family):
    inst = instance(family, 5, 4)
    doc = json.loads(json.dumps(instance_to_json(inst)))
    back = instance_from_json(doc)
    z = np.linspace(-1, 1, 8)
    np.testing.assert_allclose(back.oracle.grad(z), inst.oracle.grad(z), rtol=1e-14)
    assert back.reference_solution.allclose(inst.reference_solution, atol=1e-12)
    with pytest.raises(ValueError):
        instance_from_json(dict(doc, bogus=1))


def test_verify_passes_on_generated_and_flags_faults():
    inst = instance("smooth", 1, 5)
    assert all(ok for ok, _ in verify_instance(inst, pairs=200).values())
    doc = instance_to_json(inst)
    doc["fault"] = {"kind": "grad_offset", "index": 2, "value": 1e-3}
    bad = instance_from_json(doc)
    assert isinstance(bad.oracle, FaultyOracle)
    res = verify_instance(bad, pairs=200)
    assert not res["fd_grad"][0]


def test_verify_flags_overstated_mu():
    doc = instance_to_json(instance("quadratic", 1, 4))
    doc["mu"] = 2.0
    with pytest.raises(ValueError):
        instance_from_json(doc)
    res = verify_instance(instance_from_json(doc, validate=False), pairs=200)
    assert not res["eigenvalues"][0]


def test_bad_generator_arguments():
    with pytest.raises(ValueError):
        generate_instance("cubic", 0, 2, 2, 1.0)
    with pytest.raises(ValueError):
        generate_instance("quadratic", 0, 0, 2, 1.0)
    with pytest.raises(ValueError):
        generate_instance("quadratic", 0, 2, 2, -1.0)
