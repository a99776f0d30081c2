import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kernelnmf import kernels as K
from kernelnmf.diagnostics import central_difference
from kernelnmf.kernels import KernelSpec

ALL = [KernelSpec.linear(), KernelSpec.polynomial(2, 0.44), KernelSpec.polynomial(3, 1.0), KernelSpec.gaussian(1.0)]


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec.polynomial(0, 1.0)
    with pytest.raises(ValueError):
        KernelSpec.polynomial(2, -0.1)
    with pytest.raises(ValueError):
        KernelSpec.gaussian(0.0)
    with pytest.raises(ValueError):
        KernelSpec("rbf")


def test_evaluate_examples():
    assert K.evaluate(KernelSpec.linear(), [1, 2], [3, 4]) == 11
    assert K.evaluate(KernelSpec.gaussian(1.0), [0.3, 0.7, 0.1], [0.3, 0.7, 0.1]) == 1.0
    assert K.evaluate(KernelSpec.polynomial(2, 1.0), [1, 0], [1, 0]) == 4


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        K.evaluate(KernelSpec.linear(), [1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        K.gradient(KernelSpec.gaussian(1.0), [1], [1, 2])
    with pytest.raises(ValueError):
        K.cross_gram(KernelSpec.linear(), np.ones((2, 2)), np.ones((3, 2)))


def test_gradient_examples():
    np.testing.assert_array_equal(K.gradient(KernelSpec.linear(), [9, 9], [3, 4]), [3, 4])
    np.testing.assert_array_equal(K.gradient(KernelSpec.gaussian(2.0), [0.2, 0.5], [0.2, 0.5]), [0, 0])
    np.testing.assert_allclose(K.gradient(KernelSpec.polynomial(2, 0.44), [1, 1], [2, 0]), [9.76, 0], rtol=1e-15)


def test_self_gradient_examples():
    np.testing.assert_array_equal(K.self_gradient(KernelSpec.gaussian(0.5), [0.1, 0.9, 0.4]), [0, 0, 0])
    np.testing.assert_array_equal(K.self_gradient(KernelSpec.linear(), [0.5, 0.5]), [0.5, 0.5])
    np.testing.assert_array_equal(K.self_gradient(KernelSpec.polynomial(2, 0.0), [1, 2]), [10, 20])


def test_gram_examples():
    np.testing.assert_array_equal(K.gram(KernelSpec.linear(), np.eye(2)), np.eye(2))
    G = K.gram(KernelSpec.gaussian(0.7), np.random.default_rng(0).uniform(size=(4, 5)))
    np.testing.assert_array_equal(np.diag(G), np.ones(5))
    np.testing.assert_array_equal(K.gram(KernelSpec.polynomial(2, 1.0), [[1.0], [0.0]]), [[4.0]])


def test_cross_gram_examples():
    np.testing.assert_array_equal(K.cross_gram(KernelSpec.linear(), np.eye(2), np.eye(2)), np.eye(2))
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(3, 4))
    E = np.column_stack([rng.uniform(size=3), X[:, 2]])
    assert K.cross_gram(KernelSpec.gaussian(1.3), E, X)[1, 2] == 1.0
    np.testing.assert_array_equal(
        K.cross_gram(KernelSpec.polynomial(2, 0.0), [[2.0], [0.0]], [[1.0, 3.0], [0.0, 0.0]]), [[4.0, 36.0]]
    )


@pytest.mark.parametrize("kernel", ALL, ids=str)
def test_cross_gram_matches_pointwise(kernel, rng):
    E = rng.uniform(size=(4, 3))
    X = rng.uniform(size=(4, 5))
    expected = np.array([[K.evaluate(kernel, E[:, n], X[:, t]) for t in range(5)] for n in range(3)])
    np.testing.assert_allclose(K.cross_gram(kernel, E, X), expected, rtol=1e-13)
    np.testing.assert_allclose(K.self_values(kernel, X), [K.evaluate(kernel, x, x) for x in X.T], rtol=1e-13)


vectors = st.integers(1, 8).flatmap(
    lambda L: st.tuples(
        arrays(np.float64, L, elements=st.floats(0, 1)),
        arrays(np.float64, L, elements=st.floats(0, 1)),
    )
)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_symmetry(pair):
    e, z = pair
    for kernel in ALL:
        assert K.evaluate(kernel, e, z) == pytest.approx(K.evaluate(kernel, z, e), rel=1e-14, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_linear_is_dot_product(pair):
    e, z = pair
    assert K.evaluate(KernelSpec.linear(), e, z) == float(z @ e)


@pytest.mark.parametrize("kernel", ALL, ids=str)
def test_gradient_matches_central_difference(kernel):
    rng = np.random.default_rng(7)
    for _ in range(20):
        e, z = rng.uniform(size=(2, 6))
        fd = central_difference(lambda v: K.evaluate(kernel, v, z), e, 1e-6)
        np.testing.assert_allclose(K.gradient(kernel, e, z), fd, rtol=1e-6)


@pytest.mark.parametrize("kernel", ALL, ids=str)
def test_gram_positive_semidefinite(kernel):
    rng = np.random.default_rng(3)
    for N in range(1, 9):
        G = K.gram(kernel, rng.uniform(size=(5, N)))
        np.testing.assert_array_equal(G, G.T)
        assert np.linalg.eigvalsh(G).min() >= -1e-10
