import math

import numpy as np
import pytest

from core.errors import DomainError, OracleError, ShapeError
from numcore.schemas import Activation, RngPurpose
from numcore.service import SeededRng, activate, finite_diff_grad, gaussian_draw, matmul


def test_matmul_identity_and_hand_product():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)
    assert np.array_equal(matmul(m, np.array([[5.0], [6.0]])), np.array([[17.0], [39.0]]))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        matmul(np.ones((2, 3)), np.ones((2, 2)))
    assert "(2, 3)" in str(exc.value) and "(2, 2)" in str(exc.value)


def test_matmul_is_associative_on_random_triples():
    rng = SeededRng(7).substream("test")
    for _ in range(20):
        a, b, c = (rng.normal((4, 4)) for _ in range(3))
        assert np.allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), rtol=0, atol=1e-10)


def test_activation_fixed_points():
    assert activate(np.array([0.0]), "sigmoid")[0] == 0.5
    assert activate(np.array([0.0]), Activation.TANH)[0] == 0.0
    assert activate(np.array([-3.0]), "relu")[0] == 0.0


def test_sigmoid_symmetry_and_relu_idempotence():
    v = SeededRng(1).uniform(-10, 10, size=1000)
    total = activate(v, "sigmoid") + activate(-v, "sigmoid")
    assert np.max(np.abs(total - 1.0)) < 1e-12
    once = activate(v, "relu")
    assert np.array_equal(activate(once, "relu"), once)


def test_activation_rejects_non_finite_input():
    with pytest.raises(DomainError):
        activate(np.array([np.nan]), "tanh")


def test_gaussian_draw_is_deterministic_per_seed():
    a = gaussian_draw(SeededRng(42), 100)
    b = gaussian_draw(SeededRng(42), 100)
    assert np.array_equal(a, b)


def test_gaussian_draw_moments():
    draws = gaussian_draw(SeededRng(3), 1_000_000)
    assert abs(draws.mean()) < 0.01
    assert abs(draws.var() - 1.0) < 0.01


def test_substreams_are_independent_of_each_other():
    root = SeededRng(11)
    init_before = root.substream(RngPurpose.INIT).normal(5)
    root.substream(RngPurpose.SYNTH, 3).normal(1000)
    init_after = SeededRng(11).substream(RngPurpose.INIT).normal(5)
    assert np.array_equal(init_before, init_after)
    assert not np.array_equal(root.substream("synth", 1).normal(5), root.substream("synth", 2).normal(5))


def test_finite_difference_oracle_cases():
    g = finite_diff_grad(lambda t: t[0] ** 2, np.array([3.0]), 1e-5)
    assert g[0] == pytest.approx(6.0, abs=1e-8)
    g = finite_diff_grad(lambda t: math.sin(t[0]), np.array([0.0]), 1e-5)
    assert g[0] == pytest.approx(1.0, abs=1e-9)
    g = finite_diff_grad(lambda t: 4.2, np.array([1.0, -2.0, 0.5]))
    assert np.array_equal(g, np.zeros(3))


def test_finite_difference_subset_and_errors():
    g = finite_diff_grad(lambda t: float(t @ t), np.array([1.0, 2.0, 3.0]), indices=[2])
    assert g[0] == 0.0 and g[2] == pytest.approx(6.0)
    with pytest.raises(OracleError):
        finite_diff_grad(lambda t: float("nan"), np.array([1.0]))
    with pytest.raises(DomainError):
        finite_diff_grad(lambda t: 0.0, np.array([1.0]), h=0.0)
