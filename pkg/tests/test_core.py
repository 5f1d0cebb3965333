"""Parameter-tree utilities, pooled norms, the seeded RNG, and the finite-difference
gradient oracle."""

import numpy as np
import pytest

from kbeta.core import (
    RNG_ALGORITHM,
    Rng,
    finite_diff_grad,
    pooled_l2_norm,
    tree_copy,
    tree_items,
    tree_map,
    validate_same_structure,
)


def test_tree_items_sorted_by_path():
    tree = {"z": np.zeros(1), "a": np.zeros(2), "m": np.zeros(3)}
    assert [path for path, _ in tree_items(tree)] == ["a", "m", "z"]


def test_tree_map_applies_and_preserves_paths():
    tree = {"a": np.array([1.0, 2.0]), "b": np.array(3.0)}
    doubled = tree_map(lambda x: 2.0 * x, tree)
    assert set(doubled) == {"a", "b"}
    np.testing.assert_array_equal(doubled["a"], [2.0, 4.0])
    assert doubled["b"] == 6.0


def test_tree_copy_is_deep_for_arrays():
    tree = {"a": np.array([1.0, 2.0])}
    clone = tree_copy(tree)
    clone["a"][0] = 99.0
    assert tree["a"][0] == 1.0


def test_validate_same_structure_names_the_offending_path():
    a = {"w": np.zeros(3), "b": np.zeros(())}
    with pytest.raises(ValueError, match="extra"):
        validate_same_structure(a, {"w": np.zeros(3), "b": np.zeros(()), "extra": np.zeros(1)})
    with pytest.raises(ValueError, match="b"):
        validate_same_structure(a, {"w": np.zeros(3)})
    with pytest.raises(ValueError, match="w"):
        validate_same_structure(a, {"w": np.zeros(4), "b": np.zeros(())})


def test_pooled_l2_norm_concatenates_tensors():
    # sqrt(3^2 + 4^2) over two tensors = 5
    assert pooled_l2_norm([np.array([3.0]), np.array([[4.0]])]) == pytest.approx(5.0)


def test_pooled_l2_norm_accepts_float32_inputs():
    # accumulation happens in float64 whatever the input dtype
    x = np.full(1_000_000, 1e-4, dtype=np.float32)
    assert pooled_l2_norm([x]) == pytest.approx(0.1, rel=1e-5)
    mixed = [np.float32([3.0]), np.float64([4.0])]
    assert pooled_l2_norm(mixed) == pytest.approx(5.0)


def test_pooled_l2_norm_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        pooled_l2_norm([np.array([1.0, np.inf])])


def test_pooled_l2_norm_empty_is_zero():
    assert pooled_l2_norm([]) == 0.0


def test_rng_is_philox_and_reproducible():
    assert RNG_ALGORITHM == "philox4x64"
    assert Rng.algorithm == "philox4x64"
    a = Rng(7, 3).normal(5)
    b = Rng(7, 3).normal(5)
    np.testing.assert_array_equal(a, b)


def test_rng_streams_are_independent():
    base = Rng(7, 0).normal(5)
    other = Rng(7, 1).normal(5)
    assert not np.array_equal(base, other)
    np.testing.assert_array_equal(Rng.for_stream(7, 1).normal(5), Rng(7, 1).normal(5))


def test_rng_rejects_negative_identifiers():
    with pytest.raises(ValueError):
        Rng(-1, 0)
    with pytest.raises(ValueError):
        Rng(0, -2)


def test_uniform_int_bounds_are_inclusive():
    for seed in range(20):
        draws = Rng(seed, 0).uniform_int(3, 5, 400)
        assert draws.dtype == np.int64
        assert draws.min() >= 3 and draws.max() <= 5
    # with enough draws every value in the closed range appears
    draws = Rng(0, 0).uniform_int(3, 5, 400)
    assert set(np.unique(draws)) == {3, 4, 5}


def test_uniform_int_rejects_empty_range():
    with pytest.raises(ValueError):
        Rng(0, 0).uniform_int(5, 4, 1)


def test_uniform_lies_in_unit_interval():
    u = Rng(11, 2).uniform(1000)
    assert u.min() >= 0.0 and u.max() < 1.0


def test_finite_diff_matches_analytic_quadratic():
    # f(x) = sum(a * x^2) has gradient 2 a x
    a = np.array([1.0, -2.0, 0.5])

    def f(tree):
        return float(np.sum(a * tree["x"] ** 2))

    for seed in range(10):
        x = Rng(seed, 0).normal(3)
        got = finite_diff_grad(f, {"x": x})
        np.testing.assert_allclose(got["x"], 2.0 * a * x, rtol=1e-7, atol=1e-9)


def test_finite_diff_handles_scalar_leaves():
    def f(tree):
        return float(tree["b"] ** 3)

    got = finite_diff_grad(f, {"b": np.asarray(2.0)})
    assert got["b"] == pytest.approx(12.0, rel=1e-8)


def test_finite_diff_requires_float64():
    with pytest.raises(TypeError):
        finite_diff_grad(lambda t: 0.0, {"x": np.zeros(2, dtype=np.float32)})


def test_finite_diff_does_not_mutate_input():
    x = np.array([1.0, 2.0])
    finite_diff_grad(lambda t: float(t["x"].sum()), {"x": x})
    np.testing.assert_array_equal(x, [1.0, 2.0])
